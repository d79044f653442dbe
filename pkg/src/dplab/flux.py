"""Pointwise algebra of the regularized two-phase flux.

The flux at a space-time point mixes two power-law growths,

    F(xi) = (a_eps w^{(p-2)/2} + b_eps w^{(q-2)/2}) xi,     w = eps^2 + |xi|^2,

with shifted coefficients a_eps = eps + a, b_eps = eps + b.  Everything
here is a pure function of plain numbers and small vectors; all
operations broadcast over leading batch dimensions so the sampling
suites can run millions of points at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEvaluation, DomainError


@dataclass(frozen=True)
class FluxPoint:
    """Exponents and shifted coefficients frozen at one point z.

    Fields may be scalars or broadcast-compatible arrays.  ``r`` is the
    integrability order used by the shifted-exponent weight variants.
    """

    p: float
    q: float
    a_eps: float
    b_eps: float
    eps: float
    r: float = 0.0


@dataclass
class FluxEval:
    value: np.ndarray
    jacobian: np.ndarray | None
    w_eps: np.ndarray
    degenerate: bool = False


def _w_eps(fp: FluxPoint, xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return np.asarray(fp.eps, dtype=float) ** 2 + np.sum(xi * xi, axis=-1)


def _power_term(coeff, w, exponent):
    """coeff * w^exponent with the zero-gradient singular case sent to 0.

    For w = 0 and a negative exponent the flux limit coeff*w^e*xi -> 0
    (any growth above 1), so the caller multiplies by xi = 0 anyway; we
    return 0 to keep nan out of the arithmetic and flag the event.
    """
    w = np.asarray(w, dtype=float)
    exponent = np.asarray(exponent, dtype=float)
    singular = (w == 0.0) & (exponent < 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = coeff * np.power(np.where(singular, 1.0, w), exponent)
    term = np.where(singular, 0.0, term)
    return term, bool(np.any(singular))


def flux_scalar(fp: FluxPoint, w) -> tuple:
    """Scalar multiplier a_eps w^{(p-2)/2} + b_eps w^{(q-2)/2} and flag."""
    term_a, sing_a = _power_term(fp.a_eps, w, (np.asarray(fp.p) - 2.0) / 2.0)
    term_b, sing_b = _power_term(fp.b_eps, w, (np.asarray(fp.q) - 2.0) / 2.0)
    return term_a + term_b, (sing_a or sing_b)


def flux_value(fp: FluxPoint, xi) -> FluxEval:
    """Regularized flux vector F(xi) xi; batched over leading axes of xi."""
    xi = np.asarray(xi, dtype=float)
    w = _w_eps(fp, xi)
    scalar, degenerate = flux_scalar(fp, w)
    value = scalar[..., None] * xi
    return FluxEval(value=value, jacobian=None, w_eps=w, degenerate=degenerate)


def flux_jacobian(fp: FluxPoint, xi) -> np.ndarray:
    """Derivative of the flux vector with respect to xi.

        J = sum_e c_e w^{(e-2)/2} [ I + (e-2) xi xi^T / w ],   e in {p, q},

    symmetric by the outer-product form and positive definite for
    eps > 0 with p, q > 1.
    """
    xi = np.asarray(xi, dtype=float)
    w = _w_eps(fp, xi)
    p = np.asarray(fp.p, dtype=float)
    q = np.asarray(fp.q, dtype=float)
    if np.any((w == 0.0) & (np.minimum(p, q) < 2.0)):
        raise DegenerateEvaluation(
            "flux jacobian undefined at eps = 0, xi = 0 with an exponent below 2"
        )
    n = xi.shape[-1]
    eye = np.eye(n)
    outer = xi[..., :, None] * xi[..., None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_w = np.where(w == 0.0, 0.0, 1.0 / w)
    jac = np.zeros(xi.shape + (n,))
    for coeff, e in ((fp.a_eps, p), (fp.b_eps, q)):
        term, _ = _power_term(coeff, w, (e - 2.0) / 2.0)
        aniso = (e - 2.0) * inv_w
        jac = jac + term[..., None, None] * (
            eye + aniso[..., None, None] * outer
        )
    return jac


def monotonicity_gap(fp: FluxPoint, xi, eta) -> np.ndarray:
    """(F(xi) xi - F(eta) eta) . (xi - eta); nonnegative by monotonicity."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    fx = flux_value(fp, xi).value
    fy = flux_value(fp, eta).value
    return np.sum((fx - fy) * (xi - eta), axis=-1)


def hessian_quadratic_form(H, eta, e, r) -> np.ndarray:
    """Quadratic form controlling the second-order energy from below.

        G_e(eta) = tr(H^2) + (e+r-4) |H eta|^2 + (e-2)(r-2) (eta . H eta)^2

    for symmetric H, |eta| <= 1, growth exponent e > 1 and order r >= 2.
    Contract (tested by sampling): G_e(eta) >= min(1, e-1) tr(H^2).
    """
    H = np.asarray(H, dtype=float)
    eta = np.asarray(eta, dtype=float)
    e = np.asarray(e, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(e <= 1.0):
        raise DomainError("growth exponent must exceed 1")
    if np.any(r < 2.0):
        raise DomainError("order r must be at least 2")
    norms = np.sum(eta * eta, axis=-1)
    if np.any(norms > 1.0 + 1e-12):
        raise DomainError("|eta| must not exceed 1")
    trace_h2 = np.sum(H * H, axis=(-2, -1))
    h_eta = np.einsum("...ij,...j->...i", H, eta)
    h_eta_sq = np.sum(h_eta * h_eta, axis=-1)
    eta_h_eta = np.sum(eta * h_eta, axis=-1)
    return trace_h2 + (e + r - 4.0) * h_eta_sq + (e - 2.0) * (r - 2.0) * eta_h_eta**2


def log_power_bound(xi_norm, lam, mu) -> tuple:
    """Pointwise bound s^lam |ln s| <= (1/(e mu)) (1 + s^(lam+mu)).

    The constant is the exact maximum of s^(+-mu) |ln s|, attained at
    s = exp(-+1/mu), so the bound is tight and testable.  Returns the
    (lhs, rhs) pair; lhs is 0 at s = 0 by the limit.
    """
    xi_norm = np.asarray(xi_norm, dtype=float)
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(lam <= 0):
        raise DomainError("lambda must be positive")
    if np.any((mu <= 0) | (mu >= lam)):
        raise DomainError("mu must lie in (0, lambda)")
    if np.any(xi_norm < 0):
        raise DomainError("xi_norm must be nonnegative")
    zero = xi_norm == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        lhs = np.where(
            zero, 0.0, np.power(np.where(zero, 1.0, xi_norm), lam)
            * np.abs(np.log(np.where(zero, 1.0, xi_norm)))
        )
    constant = 1.0 / (np.e * mu)
    rhs = constant * (1.0 + np.power(xi_norm, lam + mu))
    return lhs, rhs


def shifted_flux_weight(fp: FluxPoint, w, s1, s2) -> np.ndarray:
    """Shifted-exponent weight a_eps w^{(p+s1-2)/2} + b_eps w^{(q+s2-2)/2}."""
    term_a, _ = _power_term(fp.a_eps, w, (np.asarray(fp.p) + s1 - 2.0) / 2.0)
    term_b, _ = _power_term(fp.b_eps, w, (np.asarray(fp.q) + s2 - 2.0) / 2.0)
    return term_a + term_b


def flux_power_bounds(fp: FluxPoint, xi, s1, s2) -> tuple:
    """Sandwich for the shifted-exponent flux weight times w.

    Returns (lower, middle, upper) with

        lower  = a_eps |xi|^(p+s1) + b_eps |xi|^(q+s2)
        middle = (a_eps w^{(p+s1-2)/2} + b_eps w^{(q+s2-2)/2}) w
        upper  = C + 2 (a_eps w^{(p+s1-2)/2} + b_eps w^{(q+s2-2)/2}) |xi|^2
        C      = a_eps (2 eps^2)^{(p+s1)/2} + b_eps (2 eps^2)^{(q+s2)/2}

    and the chain lower <= middle <= upper holds for s1, s2 >= 0.
    """
    if np.any(np.asarray(s1) < 0) or np.any(np.asarray(s2) < 0):
        raise DomainError("shift exponents must be nonnegative")
    xi = np.asarray(xi, dtype=float)
    xi_sq = np.sum(xi * xi, axis=-1)
    xi_norm = np.sqrt(xi_sq)
    w = np.asarray(fp.eps, dtype=float) ** 2 + xi_sq
    p = np.asarray(fp.p, dtype=float)
    q = np.asarray(fp.q, dtype=float)
    lower = fp.a_eps * np.power(xi_norm, p + s1) + fp.b_eps * np.power(xi_norm, q + s2)
    weight = shifted_flux_weight(fp, w, s1, s2)
    middle = weight * w
    two_eps_sq = 2.0 * np.asarray(fp.eps, dtype=float) ** 2
    cap = fp.a_eps * np.power(two_eps_sq, (p + s1) / 2.0) + fp.b_eps * np.power(
        two_eps_sq, (q + s2) / 2.0
    )
    upper = cap + 2.0 * weight * xi_sq
    return lower, middle, upper

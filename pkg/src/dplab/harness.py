"""Regularity functionals, manufactured-solution runs and stability sweeps.

The theory behind the tracked quantities promises existence of bounding
constants but never their values, so every theorem-shaped check here is
a boundedness-under-refinement or monotone-decrease property with
fitted constants.  Hessian-weighted integrals exclude a one-cell margin
along the walls where the ghost stencil is only first order; the margin
is part of the report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InadmissibleR
from .flux import FluxPoint, shifted_flux_weight
from .grid import Grid, center_gradient, hessian, interior_mask
from .problem import ProblemSpec, admissible_r_interval, build_spec, mollify_coefficients
from .solver import NewtonConfig, energy_identity_residuals, solve_evolution
from .varexp import convergence_metrics


def default_s_values(dim: int) -> tuple:
    """Sample points in the open improvement interval (0, 4/(N+2))."""
    cap = 4.0 / (dim + 2.0)
    return tuple(f * cap for f in (0.2, 0.5, 0.8))


@dataclass(frozen=True)
class RegularityReport:
    r: float
    s_values: tuple
    sup_gradient_r_norm: float
    initial_gradient_r_norm: float
    improved_modulars: dict
    time_deriv_l2: float
    flux_power_l2h1: float
    energy_residual_max: float
    interpolation_ratio: float
    margin_cells: int = 1

    def functionals(self) -> dict:
        """Flat mapping of every reported quantity, for tables and tests."""
        out = {
            "sup_gradient_r_norm": self.sup_gradient_r_norm,
            "initial_gradient_r_norm": self.initial_gradient_r_norm,
            "time_deriv_l2": self.time_deriv_l2,
            "flux_power_l2h1": self.flux_power_l2h1,
            "energy_residual_max": self.energy_residual_max,
            "interpolation_ratio": self.interpolation_ratio,
        }
        for s, value in self.improved_modulars.items():
            out[f"improved_modular_s={s:.6g}"] = value
        return out

    def to_json_dict(self) -> dict:
        return {
            "r": self.r,
            "s_values": list(self.s_values),
            "margin_cells": self.margin_cells,
            "functionals": self.functionals(),
        }

    def to_rows(self, experiment: str, mesh: str) -> list:
        return [
            {"experiment": experiment, "mesh": mesh, "quantity": k, "value": v}
            for k, v in sorted(self.functionals().items())
        ]


def _hessian_sq(grid: Grid, u_slice: np.ndarray, margin: int) -> np.ndarray:
    H = hessian(u_slice, grid)
    h_sq = np.sum(H * H, axis=(-2, -1))
    mask = interior_mask(grid, margin)
    return np.where(mask, h_sq, 0.0)


def _flux_power_field(spec: ProblemSpec, n: int, mag: np.ndarray, r: float) -> np.ndarray:
    """a |grad u|^{(p+r-2)/2} + b |grad u|^{(q+r-2)/2} at cell centers."""
    return spec.a[n] * mag ** ((spec.p[n] + r - 2.0) / 2.0) + spec.b[n] * mag ** (
        (spec.q[n] + r - 2.0) / 2.0
    )


def _interior_face_grad_sq(grid: Grid, field_values: np.ndarray) -> float:
    """Integral of |grad field|^2 over interior faces (no wall ghosts)."""
    total = 0.0
    for axis in range(grid.dim):
        diff = np.diff(field_values, axis=axis) / grid.h[axis]
        total += float(np.sum(diff * diff)) * grid.cell_volume
    return total


def regularity_report(u, spec: ProblemSpec, eps: float, r: float,
                      s_list=None, margin: int = 1) -> RegularityReport:
    """Evaluate every tracked functional on a space-time solution."""
    grid = spec.grid
    u = np.asarray(u, dtype=float)
    interval = admissible_r_interval(
        grid.dim, spec.sigma, spec.exponents.p_minus, spec.exponents.q_minus,
        spec.exponents.p_plus, spec.exponents.q_plus)
    if not interval.contains(r):
        raise InadmissibleR(
            f"r = {r} outside admissible interval "
            f"[{interval.lower}, {interval.upper}]")
    s_values = tuple(s_list) if s_list is not None else default_s_values(grid.dim)
    cap = 4.0 / (grid.dim + 2.0)
    if any(not (0.0 < s < cap) for s in s_values):
        raise DomainError(f"improvement exponents must lie in (0, {cap})")

    tau = grid.tau
    vol = grid.cell_volume
    sup_r = -math.inf
    improved = {s: 0.0 for s in s_values}
    g_sq_total = 0.0
    interp_num = 0.0
    interp_den = 0.0
    s_mid = s_values[len(s_values) // 2]
    for n in range(grid.nt + 1):
        g = center_gradient(u[n], grid)
        mag = np.sqrt(np.sum(g * g, axis=-1))
        sup_r = max(sup_r, float(np.sum(mag**r) * vol))
        if n == 0:
            initial = float(np.sum(mag**r) * vol)
            continue
        s_under = spec.s_under[n]
        for s in s_values:
            improved[s] += tau * float(np.sum(mag ** (s_under + r + s)) * vol)
        g_field = _flux_power_field(spec, n, mag, r)
        g_sq_total += tau * (
            float(np.sum(g_field**2) * vol)
            + _interior_face_grad_sq(grid, g_field)
        )
        w_c = eps**2 + mag**2
        fp = FluxPoint(p=spec.p[n], q=spec.q[n], a_eps=eps + spec.a[n],
                       b_eps=eps + spec.b[n], eps=eps)
        weight = shifted_flux_weight(fp, w_c, r, r)
        h_sq = _hessian_sq(grid, u[n], margin)
        interp_num += tau * float(np.sum(mag ** (s_under + s_mid + r)) * vol)
        interp_den += tau * float(np.sum(weight * h_sq) * vol)

    dt_sq = 0.0
    for n in range(1, grid.nt + 1):
        dt_field = (u[n] - u[n - 1]) / tau
        dt_sq += tau * float(np.sum(dt_field**2) * vol)

    residuals = energy_identity_residuals(spec, eps, u)
    return RegularityReport(
        r=r,
        s_values=s_values,
        sup_gradient_r_norm=sup_r,
        initial_gradient_r_norm=initial,
        improved_modulars=improved,
        time_deriv_l2=float(np.sqrt(dt_sq)),
        flux_power_l2h1=float(np.sqrt(g_sq_total)),
        energy_residual_max=max(residuals) if residuals else 0.0,
        interpolation_ratio=spec.alpha * interp_num / (interp_den + 1.0),
        margin_cells=margin,
    )


@dataclass(frozen=True)
class PreservationVerdict:
    passed: bool
    fitted_constant: float
    worst_ratio: float
    margin: float


def preservation_check(report_chain, r: float,
                       exceedance: float = 0.05) -> PreservationVerdict:
    """Boundedness of sup_t of the gradient r-integral under refinement.

    The additive constant is fitted on the coarsest mesh and held fixed;
    finer meshes must stay within the allowed exceedance of the bound
    C + integral(|grad u0|^r).
    """
    reports = list(report_chain)
    if len(reports) < 3:
        raise DomainError("need at least 3 meshes for the preservation check")
    for rep in reports:
        if rep.r != r:
            raise DomainError("reports were computed for a different r")
    coarse = reports[0]
    fitted = max(0.0, coarse.sup_gradient_r_norm - coarse.initial_gradient_r_norm)
    worst = 0.0
    for rep in reports[1:]:
        bound = fitted + rep.initial_gradient_r_norm
        worst = max(worst, rep.sup_gradient_r_norm / bound)
    return PreservationVerdict(
        passed=worst <= 1.0 + exceedance,
        fitted_constant=fitted,
        worst_ratio=worst,
        margin=1.0 + exceedance - worst,
    )


def interpolation_diagnostic(u_slice, spec: ProblemSpec, eps: float, r: float,
                             s: float, step: int, margin: int = 1) -> float:
    """Slice-local ratio of the improved modular to the weighted Hessian.

    Tracked, never asserted: the bounding constants of the underlying
    inequality are not constructive, so the harness only records whether
    the ratio stays bounded under refinement.
    """
    grid = spec.grid
    cap = 4.0 / (grid.dim + 2.0)
    if not 0.0 < s < cap:
        raise DomainError(f"s must lie in (0, {cap})")
    values = np.asarray(u_slice, dtype=float)
    g = center_gradient(values, grid)
    mag = np.sqrt(np.sum(g * g, axis=-1))
    num = spec.alpha * float(
        np.sum(mag ** (spec.s_under[step] + s + r)) * grid.cell_volume)
    w_c = eps**2 + mag**2
    fp = FluxPoint(p=spec.p[step], q=spec.q[step], a_eps=eps + spec.a[step],
                   b_eps=eps + spec.b[step], eps=eps)
    weight = shifted_flux_weight(fp, w_c, r, r)
    h_sq = _hessian_sq(grid, values, margin)
    den = float(np.sum(weight * h_sq) * grid.cell_volume) + 1.0
    return num / den


# ---------------------------------------------------------------------------
# manufactured solutions


@dataclass(frozen=True)
class MMSCase:
    """Closed-form solution plus the data needed to reproduce it.

    ``forcing`` may be a closed-form callable; when None the source is
    produced by applying the continuous operator to the exact solution
    with nested centered differences on a locally refined stencil.
    """

    name: str
    dim: int
    expressions: dict  # p, q, a, b as expression strings
    alpha: float
    sigma: float
    r: float
    d: float
    u_exact: callable
    u_t: callable
    forcing: object = None
    eps: float = 0.0
    final_time: float = 0.04
    theta: float = 0.2  # tau = theta * h^2
    fd_fraction: float = 0.125  # operator stencil step = fd_fraction * h

    def grid_for(self, cells_per_axis: int) -> Grid:
        cells = (cells_per_axis,) * self.dim
        h = 1.0 / cells_per_axis
        tau_target = self.theta * h * h
        nt = max(1, int(math.ceil(self.final_time / tau_target)))
        return Grid(dim=self.dim, cells=cells, lengths=(1.0,) * self.dim,
                    nt=nt, final_time=self.final_time)


def _sample_exact(case: MMSCase, grid: Grid, t: float) -> np.ndarray:
    coords = grid.meshes()
    if case.dim == 1:
        return np.asarray(case.u_exact(coords[0], None, t), dtype=float)
    return np.asarray(case.u_exact(coords[0], coords[1], t), dtype=float)


def _numeric_forcing(case: MMSCase, exprs: dict, grid: Grid, eps: float,
                     t: float) -> np.ndarray:
    """u*_t - div F(grad u*) by nested centered differences of step delta."""
    delta = case.fd_fraction * min(grid.h)
    coords = grid.meshes()
    x = coords[0]
    y = coords[1] if case.dim == 2 else None

    def u_at(xx, yy):
        return np.asarray(case.u_exact(xx, yy, t), dtype=float)

    def grad_at(xx, yy):
        gx = (u_at(xx + delta, yy) - u_at(xx - delta, yy)) / (2 * delta)
        if case.dim == 1:
            return (gx,)
        gy = (u_at(xx, yy + delta) - u_at(xx, yy - delta)) / (2 * delta)
        return (gx, gy)

    def flux_at(xx, yy):
        g = grad_at(xx, yy)
        w = eps**2 + sum(c * c for c in g)
        kwargs = {"x": xx, "t": t}
        if case.dim == 2:
            kwargs["y"] = yy
        p = np.asarray(exprs["p"](**kwargs), dtype=float)
        q = np.asarray(exprs["q"](**kwargs), dtype=float)
        a = np.asarray(exprs["a"](**kwargs), dtype=float)
        b = np.asarray(exprs["b"](**kwargs), dtype=float)
        scalar = (eps + a) * w ** ((p - 2.0) / 2.0) + (eps + b) * w ** ((q - 2.0) / 2.0)
        return tuple(scalar * c for c in g)

    div = (flux_at(x + delta, y)[0] - flux_at(x - delta, y)[0]) / (2 * delta)
    if case.dim == 2:
        div = div + (flux_at(x, y + delta)[1] - flux_at(x, y - delta)[1]) / (2 * delta)
    ut = np.asarray(case.u_t(x, y, t), dtype=float)
    return np.broadcast_to(ut, grid.cells) - div


def build_mms_spec(case: MMSCase, grid: Grid) -> ProblemSpec:
    """Sample the case data on a grid, with the forcing matched to u*."""
    from .expressions import parse_expression
    from .problem import sample_expression

    exprs = {k: parse_expression(v) for k, v in case.expressions.items()}
    fields = {k: sample_expression(exprs[k], grid) for k in ("p", "q", "a", "b")}
    u0 = _sample_exact(case, grid, 0.0)
    forcing = np.zeros((grid.nt + 1,) + grid.cells)
    coords = grid.meshes()
    y = coords[1] if case.dim == 2 else None
    for n in range(grid.nt + 1):
        t = n * grid.tau
        if case.forcing is not None:
            forcing[n] = np.broadcast_to(
                np.asarray(case.forcing(coords[0], y, t), dtype=float), grid.cells)
        else:
            forcing[n] = _numeric_forcing(case, exprs, grid, case.eps, t)
    return build_spec(
        grid=grid, p=fields["p"], q=fields["q"], a=fields["a"], b=fields["b"],
        f=forcing, u0=u0, alpha=case.alpha, sigma=case.sigma, r=case.r,
        d=case.d, epsilon_schedule=(1e-1, 1e-2), sources=exprs,
    )


@dataclass(frozen=True)
class MMSRow:
    cells: int
    h: float
    tau: float
    l2_error: float
    grad_error: float
    order: float = math.nan
    grad_order: float = math.nan


def mms_convergence(case: MMSCase, meshes, config: NewtonConfig | None = None) -> list:
    """Solve the case on a mesh chain and report errors/observed orders."""
    rows = []
    config = config or NewtonConfig()
    for m in meshes:
        grid = case.grid_for(int(m))
        spec = build_mms_spec(case, grid)
        result = solve_evolution(spec, grid, case.eps, config)
        exact = _sample_exact(case, grid, grid.final_time)
        diff = result.u[-1] - exact
        l2 = float(np.sqrt(np.sum(diff**2) * grid.cell_volume))
        g_num = center_gradient(result.u[-1], grid)
        delta = case.fd_fraction * min(grid.h)
        coords = grid.meshes()
        x = coords[0]
        y = coords[1] if case.dim == 2 else None

        def u_at(xx, yy):
            return np.asarray(case.u_exact(xx, yy, grid.final_time), dtype=float)

        comps = [(u_at(x + delta, y) - u_at(x - delta, y)) / (2 * delta)]
        if case.dim == 2:
            comps.append((u_at(x, y + delta) - u_at(x, y - delta)) / (2 * delta))
        g_exact = np.stack(comps, axis=-1)
        g_err = float(np.sqrt(np.sum((g_num - g_exact) ** 2) * grid.cell_volume))
        rows.append(MMSRow(cells=int(m), h=min(grid.h), tau=grid.tau,
                           l2_error=l2, grad_error=g_err))
    out = []
    for i, row in enumerate(rows):
        if i == 0:
            out.append(row)
            continue
        prev = rows[i - 1]
        order = math.log(prev.l2_error / row.l2_error) / math.log(prev.h / row.h) \
            if row.l2_error > 0 and prev.l2_error > 0 else math.inf
        g_order = math.log(prev.grad_error / row.grad_error) / math.log(prev.h / row.h) \
            if row.grad_error > 0 and prev.grad_error > 0 else math.inf
        out.append(MMSRow(cells=row.cells, h=row.h, tau=row.tau,
                          l2_error=row.l2_error, grad_error=row.grad_error,
                          order=order, grad_order=g_order))
    return out


def heat_mms_case() -> MMSCase:
    """Linear diffusion with the separable decaying mode as exact solution."""

    def u_exact(x, y, t):
        return math.exp(-math.pi**2 * t) * np.sin(math.pi * x)

    def u_t(x, y, t):
        return -math.pi**2 * math.exp(-math.pi**2 * t) * np.sin(math.pi * x)

    return MMSCase(
        name="heat", dim=1,
        expressions={"p": "2", "q": "2", "a": "0.5", "b": "0.5"},
        alpha=1.0, sigma=4.0, r=2.0, d=12.0,
        u_exact=u_exact, u_t=u_t,
        forcing=lambda x, y, t: np.zeros_like(x),
        eps=0.0, final_time=0.04, theta=0.16,
    )


def double_phase_mms_case() -> MMSCase:
    """Two growth regimes, forcing produced by the fine-grid operator."""

    def u_exact(x, y, t):
        return np.sin(math.pi * x) * np.sin(math.pi * y) * (1.0 + t)

    def u_t(x, y, t):
        return np.sin(math.pi * x) * np.sin(math.pi * y)

    return MMSCase(
        name="double-phase", dim=2,
        expressions={"p": "3", "q": "2.9", "a": "0.5", "b": "0.5"},
        alpha=1.0, sigma=4.0, r=3.0, d=16.0,
        u_exact=u_exact, u_t=u_t, forcing=None,
        eps=1e-3, final_time=0.05, theta=0.5,
    )


def builtin_mms_cases() -> dict:
    return {"heat": heat_mms_case(), "double-phase": double_phase_mms_case()}


def zero_mms_case() -> MMSCase:
    """Identically zero solution; errors must vanish exactly."""

    def u_exact(x, y, t):
        return np.zeros_like(x)

    return MMSCase(
        name="zero", dim=1,
        expressions={"p": "2", "q": "2", "a": "0.5", "b": "0.5"},
        alpha=1.0, sigma=4.0, r=2.0, d=12.0,
        u_exact=u_exact, u_t=u_exact,
        forcing=lambda x, y, t: np.zeros_like(x),
        eps=0.0, final_time=0.04, theta=0.2,
    )


# ---------------------------------------------------------------------------
# data-mollification stability


@dataclass(frozen=True)
class StabilityRow:
    width: float
    flux_gap: float
    energy_modular: float
    min_exponent_modular: float


def mollification_stability(spec: ProblemSpec, widths, grid: Grid, eps: float,
                            config: NewtonConfig | None = None) -> list:
    """Distance between solves with mollified and raw data per width."""
    widths = [float(w) for w in widths]
    if any(widths[i + 1] >= widths[i] for i in range(len(widths) - 1)):
        raise DomainError("widths must be strictly decreasing")
    config = config or NewtonConfig()
    raw = solve_evolution(spec, grid, eps, config)
    rows = []
    for width in widths:
        smooth_spec = mollify_coefficients(spec, width)
        smooth = solve_evolution(smooth_spec, grid, eps, config)
        metrics = convergence_metrics(smooth.u, raw.u, spec, eps)
        rows.append(StabilityRow(
            width=width,
            flux_gap=metrics.flux_gap,
            energy_modular=metrics.energy_modular,
            min_exponent_modular=metrics.min_exponent_modular))
    return rows

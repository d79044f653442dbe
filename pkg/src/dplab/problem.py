"""Problem data, admissibility validation and data mollification.

Holds the exponents p, q, the modulating coefficients a, b, the source
f, the initial datum u0 and the structural constants (alpha, sigma, r,
d), all sampled on a common space-time grid.  ``validate`` measures
every structural assumption numerically and reports pass/fail with the
margin, instead of raising on the first violation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve1d

from .errors import ConfigError, GridMismatch, WidthTooLarge
from .expressions import Expression, parse_expression
from .grid import Grid


# ---------------------------------------------------------------------------
# data-field derivative estimates (centered interior, one-sided at the ends)


def _edge_diff(values: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    return np.gradient(values, spacing, axis=axis, edge_order=1)


def data_gradient_norm(values: np.ndarray, grid: Grid, order: float) -> float:
    """Discrete L^order norm over the cylinder of the spatial gradient."""
    mag_sq = np.zeros_like(values)
    for axis in range(grid.dim):
        diff = _edge_diff(values, axis + 1, grid.h[axis])
        mag_sq += diff * diff
    return _spacetime_norm(np.sqrt(mag_sq), grid, order)


def data_time_derivative_norm(values: np.ndarray, grid: Grid, order: float) -> float:
    diff = _edge_diff(values, 0, grid.tau)
    return _spacetime_norm(np.abs(diff), grid, order)


def _spacetime_norm(values: np.ndarray, grid: Grid, order: float) -> float:
    weights = np.full(grid.nt + 1, grid.tau)
    weights[0] *= 0.5
    weights[-1] *= 0.5
    slab = np.sum(np.abs(values) ** order, axis=tuple(range(1, values.ndim)))
    return float((np.sum(weights * slab) * grid.cell_volume) ** (1.0 / order))


def lipschitz_estimate(values: np.ndarray, grid: Grid) -> float:
    """Max nearest-neighbor difference quotient over space and time."""
    worst = 0.0
    spacings = (grid.tau,) + grid.h
    for axis, spacing in enumerate(spacings):
        if values.shape[axis] < 2:
            continue
        quotients = np.abs(np.diff(values, axis=axis)) / spacing
        if quotients.size:
            worst = max(worst, float(np.max(quotients)))
    return worst


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class ExponentField:
    p: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    p_minus: float = 0.0
    p_plus: float = 0.0
    q_minus: float = 0.0
    q_plus: float = 0.0
    lip_pq: float = 0.0
    s_under: np.ndarray = field(default=None, repr=False)
    s_over: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_arrays(cls, p, q, grid: Grid) -> "ExponentField":
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if p.shape != q.shape:
            raise GridMismatch("p and q must share the grid")
        lip = max(lipschitz_estimate(p, grid), lipschitz_estimate(q, grid))
        return cls(
            p=p,
            q=q,
            p_minus=float(p.min()),
            p_plus=float(p.max()),
            q_minus=float(q.min()),
            q_plus=float(q.max()),
            lip_pq=lip,
            s_under=np.minimum(p, q),
            s_over=np.maximum(p, q),
        )


@dataclass(frozen=True)
class CoefficientField:
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    alpha: float = 0.0
    d: float = 0.0
    grad_a_Ld: float = 0.0
    grad_b_Ld: float = 0.0
    at_Ld: float = 0.0
    bt_Ld: float = 0.0

    @classmethod
    def from_arrays(cls, a, b, alpha: float, d: float, grid: Grid) -> "CoefficientField":
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape != b.shape:
            raise GridMismatch("a and b must share the grid")
        return cls(
            a=a,
            b=b,
            alpha=float(alpha),
            d=float(d),
            grad_a_Ld=data_gradient_norm(a, grid, d),
            grad_b_Ld=data_gradient_norm(b, grid, d),
            at_Ld=data_time_derivative_norm(a, grid, d),
            bt_Ld=data_time_derivative_norm(b, grid, d),
        )


@dataclass(frozen=True)
class ProblemSpec:
    grid: Grid
    exponents: ExponentField
    coeffs: CoefficientField
    f: np.ndarray = field(repr=False)
    u0: np.ndarray = field(repr=False)
    sigma: float = 4.0
    r: float = 2.0
    epsilon_schedule: tuple = (1e-1, 1e-2, 1e-3)
    sources: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        expected = (self.grid.nt + 1,) + self.grid.cells
        for name, arr in (("p", self.exponents.p), ("q", self.exponents.q),
                          ("a", self.coeffs.a), ("b", self.coeffs.b),
                          ("f", self.f)):
            if arr.shape != expected:
                raise GridMismatch(f"field {name} has shape {arr.shape}, expected {expected}")
        if self.u0.shape != self.grid.cells:
            raise GridMismatch("u0 shape does not match grid")
        eps = tuple(float(e) for e in self.epsilon_schedule)
        if any(e <= 0 for e in eps) or any(
            eps[i + 1] >= eps[i] for i in range(len(eps) - 1)
        ):
            raise ConfigError("epsilon schedule must be positive and strictly decreasing")
        object.__setattr__(self, "epsilon_schedule", eps)
        for arr in (self.exponents.p, self.exponents.q, self.coeffs.a,
                    self.coeffs.b, self.f, self.u0):
            arr.setflags(write=False)

    # convenience views used throughout the solver and harness
    @property
    def p(self) -> np.ndarray:
        return self.exponents.p

    @property
    def q(self) -> np.ndarray:
        return self.exponents.q

    @property
    def a(self) -> np.ndarray:
        return self.coeffs.a

    @property
    def b(self) -> np.ndarray:
        return self.coeffs.b

    @property
    def alpha(self) -> float:
        return self.coeffs.alpha

    @property
    def d(self) -> float:
        return self.coeffs.d

    @property
    def s_under(self) -> np.ndarray:
        return self.exponents.s_under

    @property
    def s_over(self) -> np.ndarray:
        return self.exponents.s_over

    def swapped_phases(self) -> "ProblemSpec":
        """Relabel the two phases: (a, p) <-> (b, q)."""
        return build_spec(
            grid=self.grid,
            p=self.q.copy(), q=self.p.copy(),
            a=self.b.copy(), b=self.a.copy(),
            f=self.f.copy(), u0=self.u0.copy(),
            alpha=self.alpha, sigma=self.sigma, r=self.r, d=self.d,
            epsilon_schedule=self.epsilon_schedule,
            sources=dict(self.sources),
        )


def build_spec(grid: Grid, p, q, a, b, f, u0, alpha, sigma, r, d,
               epsilon_schedule=(1e-1, 1e-2, 1e-3), sources=None) -> ProblemSpec:
    """Assemble a ProblemSpec from raw arrays, computing derived statistics."""
    return ProblemSpec(
        grid=grid,
        exponents=ExponentField.from_arrays(p, q, grid),
        coeffs=CoefficientField.from_arrays(a, b, alpha, d, grid),
        f=np.asarray(f, dtype=float),
        u0=np.asarray(u0, dtype=float),
        sigma=float(sigma),
        r=float(r),
        epsilon_schedule=tuple(epsilon_schedule),
        sources=sources or {},
    )


# ---------------------------------------------------------------------------
# admissible interval for the gradient integrability order


@dataclass(frozen=True)
class RInterval:
    lower: float
    upper: float  # math.inf when unbounded

    @property
    def empty(self) -> bool:
        return self.lower > self.upper

    def contains(self, r: float) -> bool:
        return (not self.empty) and self.lower <= r <= self.upper


def admissible_r_interval(N: int, sigma: float, p_minus: float, q_minus: float,
                          p_plus: float, q_plus: float) -> RInterval:
    """Interval of gradient integrability orders compatible with the data.

    Unbounded above once the source integrability reaches sigma = N + 2;
    for sigma in (2, N+2) the upper end shrinks and the interval can be
    empty as sigma approaches 2.
    """
    from .errors import DomainError

    if sigma <= 2:
        raise DomainError("source integrability sigma must exceed 2")
    lower = max(p_plus, q_plus, 2.0)
    if sigma >= N + 2:
        return RInterval(lower=lower, upper=math.inf)
    s_min = min(p_minus, q_minus)
    upper = N * (s_min * (sigma - 1.0) - sigma + 2.0) / (N + 2.0 - sigma)
    return RInterval(lower=lower, upper=upper)


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationEntry:
    assumption: str
    passed: bool
    margin: float
    location: str = "-"


@dataclass(frozen=True)
class ValidationReport:
    entries: tuple

    @property
    def ok(self) -> bool:
        return all(e.passed for e in self.entries)

    def entry(self, name: str) -> ValidationEntry:
        for e in self.entries:
            if e.assumption == name:
                return e
        raise KeyError(name)

    def to_json(self, indent: int = 2) -> str:
        payload = [
            {"assumption": e.assumption, "pass": e.passed,
             "margin": e.margin, "location": e.location}
            for e in self.entries
        ]
        return json.dumps(payload, indent=indent, sort_keys=True)


def _locate(grid: Grid, flat_index: int, shape: tuple) -> str:
    idx = np.unravel_index(flat_index, shape)
    t = idx[0] * grid.tau
    coords = [f"t={t:.6g}"]
    names = ("x", "y")
    for axis in range(grid.dim):
        coords.append(f"{names[axis]}={(idx[1 + axis] + 0.5) * grid.h[axis]:.6g}")
    return ",".join(coords)


def _boundary_trace_estimate(spec: ProblemSpec) -> float:
    """Largest |u0| on the boundary.

    Uses the closed-form expression on the true boundary points when the
    spec carries one; otherwise extrapolates the cell values linearly to
    the wall, which is exact for affine data.
    """
    grid = spec.grid
    expr = spec.sources.get("u0")
    if isinstance(expr, Expression):
        worst = 0.0
        if grid.dim == 1:
            pts = np.array([0.0, grid.lengths[0]])
            worst = float(np.max(np.abs(expr(x=pts, t=0.0))))
        else:
            xc, yc = grid.centers(0), grid.centers(1)
            lx, ly = grid.lengths
            for xs, ys in (
                (np.zeros_like(yc), yc),
                (np.full_like(yc, lx), yc),
                (xc, np.zeros_like(xc)),
                (xc, np.full_like(xc, ly)),
            ):
                worst = max(worst, float(np.max(np.abs(expr(x=xs, y=ys, t=0.0)))))
        return worst
    u0 = spec.u0
    worst = 0.0
    for axis in range(grid.dim):
        first = np.take(u0, 0, axis=axis)
        second = np.take(u0, 1, axis=axis)
        worst = max(worst, float(np.max(np.abs(1.5 * first - 0.5 * second))))
        last = np.take(u0, -1, axis=axis)
        prev = np.take(u0, -2, axis=axis)
        worst = max(worst, float(np.max(np.abs(1.5 * last - 0.5 * prev))))
    return worst


def _boundary_trace_tolerance(spec: ProblemSpec) -> float:
    """Tolerance for the boundary-trace check.

    Expression-backed data is sampled on the true boundary, so only a
    round-off allowance is needed.  Gridded data is extrapolated to the
    wall; the extrapolation error of a smooth vanishing field is about
    (3/8) h^2 |u''|, so the tolerance scales with an estimate of the
    largest second derivative.
    """
    grid = spec.grid
    u0 = spec.u0
    scale = 1e-9 * (1.0 + float(np.max(np.abs(u0))))
    if isinstance(spec.sources.get("u0"), Expression):
        return scale
    curvature = 0.0
    for axis in range(grid.dim):
        if u0.shape[axis] >= 3:
            second = np.abs(np.diff(u0, n=2, axis=axis)) / grid.h[axis] ** 2
            if second.size:
                curvature = max(curvature, float(np.max(second)))
    h_max = max(grid.h)
    return max(scale, 0.5 * h_max**2 * curvature)


def validate(spec: ProblemSpec) -> ValidationReport:
    """Measure every structural assumption; pure and idempotent."""
    grid = spec.grid
    N = grid.dim
    exp = spec.exponents
    coef = spec.coeffs
    entries = []
    shape = spec.p.shape

    floor = 2.0 * N / (N + 2.0)
    low = min(exp.p_minus, exp.q_minus)
    which = spec.p if exp.p_minus <= exp.q_minus else spec.q
    entries.append(ValidationEntry(
        "exponent_lower_bound", low > floor, low - floor,
        _locate(grid, int(np.argmin(which)), shape)))

    entries.append(ValidationEntry(
        "exponent_lipschitz_finite", math.isfinite(exp.lip_pq), exp.lip_pq))

    gap = np.abs(spec.p - spec.q)
    gap_max = float(gap.max())
    gap_bound = 2.0 / (N + 2.0)
    entries.append(ValidationEntry(
        "balance_condition", gap_max < gap_bound, gap_bound - gap_max,
        _locate(grid, int(np.argmax(gap)), shape)))

    s_err = max(
        float(np.max(np.abs(exp.s_under - np.minimum(spec.p, spec.q)))),
        float(np.max(np.abs(exp.s_over - np.maximum(spec.p, spec.q)))),
    )
    entries.append(ValidationEntry(
        "exponent_extrema_consistent", s_err == 0.0, -s_err if s_err else 0.0))

    coeff_min = min(float(spec.a.min()), float(spec.b.min()))
    entries.append(ValidationEntry(
        "coefficients_nonnegative", coeff_min >= 0.0, coeff_min))

    sum_min = float((spec.a + spec.b).min())
    ok_alpha = coef.alpha > 0.0 and sum_min >= coef.alpha
    entries.append(ValidationEntry(
        "coefficient_sum_lower_bound", ok_alpha, sum_min - coef.alpha,
        _locate(grid, int(np.argmin(spec.a + spec.b)), shape)))

    entries.append(ValidationEntry(
        "source_integrability", spec.sigma > 2.0, spec.sigma - 2.0))

    if spec.sigma > 2.0:
        interval = admissible_r_interval(
            N, spec.sigma, exp.p_minus, exp.q_minus, exp.p_plus, exp.q_plus)
        entries.append(ValidationEntry(
            "r_lower_bound", spec.r >= interval.lower, spec.r - interval.lower))
        upper_margin = math.inf if math.isinf(interval.upper) else interval.upper - spec.r
        entries.append(ValidationEntry(
            "r_upper_bound", spec.r <= interval.upper, upper_margin))
    else:
        entries.append(ValidationEntry("r_lower_bound", False, -math.inf))
        entries.append(ValidationEntry("r_upper_bound", False, -math.inf))

    s_over_plus = float(exp.s_over.max())
    d_floor = 2.0 + (N + 2.0) / 2.0 * (s_over_plus + spec.r)
    entries.append(ValidationEntry(
        "data_derivative_order_d", coef.d > d_floor, coef.d - d_floor))

    trace = _boundary_trace_estimate(spec)
    tol = _boundary_trace_tolerance(spec)
    entries.append(ValidationEntry(
        "initial_datum_boundary", trace <= tol, tol - trace))

    return ValidationReport(entries=tuple(entries))


# ---------------------------------------------------------------------------
# mollification


def _bump_weights(radius: int, spacing: float, width: float) -> np.ndarray:
    offsets = np.arange(-radius, radius + 1) * spacing / width
    profile = np.where(np.abs(offsets) < 1.0,
                       np.exp(-1.0 / np.maximum(1.0 - offsets**2, 1e-300)), 0.0)
    return profile / profile.sum()


def _mollify_axis(values: np.ndarray, axis: int, spacing: float, width: float,
                  pad: str) -> np.ndarray:
    radius = int(math.floor(width / spacing))
    if radius == 0:
        return values
    weights = _bump_weights(radius, spacing, width)
    take_lo = [slice(None)] * values.ndim
    take_lo[axis] = slice(0, radius)
    take_hi = [slice(None)] * values.ndim
    take_hi[axis] = slice(values.shape[axis] - radius, None)
    lo = values[tuple(take_lo)]
    hi = values[tuple(take_hi)]
    if pad == "odd":
        lo_pad = -np.flip(lo, axis=axis)
        hi_pad = -np.flip(hi, axis=axis)
    else:
        lo_pad = np.flip(lo, axis=axis)
        hi_pad = np.flip(hi, axis=axis)
    padded = np.concatenate([lo_pad, values, hi_pad], axis=axis)
    smoothed = convolve1d(padded, weights, axis=axis, mode="constant")
    core = [slice(None)] * values.ndim
    core[axis] = slice(radius, radius + values.shape[axis])
    return smoothed[tuple(core)]


def mollify_coefficients(spec: ProblemSpec, width: float) -> ProblemSpec:
    """Replace a, b, f, u0 by discrete spatial mollifications.

    The kernel is the normalized compactly supported bump; the width is
    a spatial length and smoothing acts slice by slice.  a, b, f use
    edge replication, which preserves nonnegativity and the lower bound
    on a+b exactly up to rounding; u0 uses odd reflection so its
    boundary trace stays zero.  A width below the grid spacing
    degenerates to the identity.
    """
    if width <= 0:
        raise WidthTooLarge("mollifier width must be positive")
    grid = spec.grid
    if width >= min(grid.lengths):
        raise WidthTooLarge(
            f"mollifier width {width} does not fit inside the domain")

    def smooth_spacetime(values):
        out = np.asarray(values, dtype=float).copy()
        for axis in range(grid.dim):
            out = _mollify_axis(out, axis + 1, grid.h[axis], width, pad="edge")
        return out

    u0 = spec.u0.copy()
    for axis in range(grid.dim):
        u0 = _mollify_axis(u0, axis, grid.h[axis], width, pad="odd")

    sources = {k: v for k, v in spec.sources.items() if k in ("p", "q")}
    return build_spec(
        grid=grid,
        p=spec.p.copy(), q=spec.q.copy(),
        a=smooth_spacetime(spec.a), b=smooth_spacetime(spec.b),
        f=smooth_spacetime(spec.f), u0=u0,
        alpha=spec.alpha, sigma=spec.sigma, r=spec.r, d=spec.d,
        epsilon_schedule=spec.epsilon_schedule,
        sources=sources,
    )


# ---------------------------------------------------------------------------
# configuration files (flat text, dotted keys)

CONFIG_KEYS = {
    "dim", "nx", "ny", "nt", "T", "lx", "ly",
    "p.expr", "q.expr", "a.expr", "b.expr", "f.expr", "u0.expr",
    "alpha", "sigma", "r", "d",
    "eps.start", "eps.factor", "eps.count", "eps.list",
    "seed",
    "newton.abs_tol", "newton.rel_tol", "newton.max_iter",
    "newton.damping", "newton.max_backtracks",
    "newton.linear_solver", "newton.cg_tol", "newton.cg_max_iter",
    "sweep.rel_threshold", "s.list",
}

_REQUIRED_KEYS = (
    "dim", "nx", "nt", "T",
    "p.expr", "q.expr", "a.expr", "b.expr", "f.expr", "u0.expr",
    "alpha", "sigma", "r", "d", "seed",
)


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        values[key] = value
    missing = [k for k in _REQUIRED_KEYS if k not in values]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    if values.get("dim") == "2" and "ny" not in values:
        raise ConfigError("dim = 2 requires ny")
    has_geom = all(k in values for k in ("eps.start", "eps.factor", "eps.count"))
    if "eps.list" not in values and not has_geom:
        raise ConfigError("need eps.start/eps.factor/eps.count or eps.list")
    return values


def read_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def _epsilon_schedule_from(values: dict) -> tuple:
    if "eps.list" in values:
        try:
            schedule = tuple(float(tok) for tok in values["eps.list"].split(","))
        except ValueError as exc:
            raise ConfigError(f"bad eps.list: {exc}") from exc
    else:
        start = float(values["eps.start"])
        factor = float(values["eps.factor"])
        count = int(values["eps.count"])
        if not (0 < factor < 1) or count < 1 or start <= 0:
            raise ConfigError("need eps.start > 0, 0 < eps.factor < 1, eps.count >= 1")
        schedule = tuple(start * factor**k for k in range(count))
    return schedule


def grid_from_config(values: dict) -> Grid:
    try:
        dim = int(values["dim"])
        cells = (int(values["nx"]),) if dim == 1 else (int(values["nx"]), int(values["ny"]))
        lengths = (float(values.get("lx", 1.0)),)
        if dim == 2:
            lengths = lengths + (float(values.get("ly", 1.0)),)
        return Grid(dim=dim, cells=cells, lengths=lengths,
                    nt=int(values["nt"]), final_time=float(values["T"]))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad grid parameters: {exc}") from exc


def sample_expression(expr: Expression, grid: Grid, include_time: bool = True):
    """Evaluate an expression on all cell centers (and time slices)."""
    coords = grid.meshes()
    kwargs = {"x": coords[0]}
    if grid.dim == 2:
        kwargs["y"] = coords[1]
    if not include_time:
        value = expr(t=0.0, **kwargs)
        return np.broadcast_to(np.asarray(value, dtype=float), grid.cells).copy()
    slices = []
    for t in grid.times():
        value = np.asarray(expr(t=float(t), **kwargs), dtype=float)
        slices.append(np.broadcast_to(value, grid.cells).copy())
    return np.stack(slices, axis=0)


def spec_from_config(values: dict, grid: Grid | None = None) -> ProblemSpec:
    if grid is None:
        grid = grid_from_config(values)
    exprs = {}
    for name in ("p", "q", "a", "b", "f", "u0"):
        try:
            exprs[name] = parse_expression(values[f"{name}.expr"])
        except Exception as exc:
            raise ConfigError(f"bad expression for {name}: {exc}") from exc
        if grid.dim == 1 and "y" in exprs[name].variables:
            raise ConfigError(f"{name}.expr uses y on a 1D grid")
    try:
        return build_spec(
            grid=grid,
            p=sample_expression(exprs["p"], grid),
            q=sample_expression(exprs["q"], grid),
            a=sample_expression(exprs["a"], grid),
            b=sample_expression(exprs["b"], grid),
            f=sample_expression(exprs["f"], grid),
            u0=sample_expression(exprs["u0"], grid, include_time=False),
            alpha=float(values["alpha"]),
            sigma=float(values["sigma"]),
            r=float(values["r"]),
            d=float(values["d"]),
            epsilon_schedule=_epsilon_schedule_from(values),
            sources=exprs,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad numeric parameter: {exc}") from exc

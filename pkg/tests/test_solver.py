import math

import numpy as np
import pytest

from dplab.errors import ContinuationStalled, NewtonDiverged
from dplab.grid import Grid
from dplab.solver import (
    NewtonConfig,
    TimeStepState,
    _StepOperator,
    energy_identity_residuals,
    epsilon_continuation,
    newton_step,
    residual,
    solve_evolution,
)

from conftest import constant_spec, variable_spec


def test_residual_zero_for_zero_data(grid1d):
    spec = constant_spec(grid1d, f=0.0, u0=np.zeros(grid1d.cells))
    R = residual(np.zeros(grid1d.cells), np.zeros(grid1d.cells), spec, 0.1, 1)
    assert np.all(R == 0.0)


def test_residual_matches_linear_operator(grid1d):
    """For p=q=2 the diffusion term is the standard Dirichlet Laplacian."""
    spec = constant_spec(grid1d)
    u = np.sin(np.pi * grid1d.centers(0))
    R = residual(u, u, spec, 0.0, 1)
    h = grid1d.h[0]
    padded = np.concatenate([[-u[0]], u, [-u[-1]]])
    lap = (padded[2:] - 2 * u + padded[:-2]) / h**2
    assert np.allclose(R, -lap, atol=1e-11)


def test_manufactured_residual_truncation_decay():
    """Plugging a smooth exact solution leaves only truncation error."""
    errs = []
    for n in (16, 32, 64):
        g = Grid(dim=1, cells=(n,), lengths=(1.0,), nt=int(n * n / 16),
                 final_time=0.01)
        spec = constant_spec(g, f=0.0)
        x = g.centers(0)
        t1 = g.tau
        u_prev = np.sin(np.pi * x)
        u_next = math.exp(-math.pi**2 * t1) * np.sin(np.pi * x)
        R = residual(u_next, u_prev, spec, 0.0, 1)
        errs.append(np.max(np.abs(R)))
    assert errs[0] > errs[1] > errs[2]
    assert np.log2(errs[1] / errs[2]) > 0.9  # tau ~ h^2 so first order in tau


def test_residual_vanishes_at_steady_state(grid1d):
    """A forcing that matches the diffusion of u0 makes u0 stationary."""
    spec = constant_spec(grid1d)
    base = residual(spec.u0, spec.u0, spec, 0.0, 1)  # f = 0 here
    f = spec.f.copy()
    f[:] = base  # now f equals the diffusion term of u0 at every slice
    steady = type(spec)(grid=spec.grid, exponents=spec.exponents,
                        coeffs=spec.coeffs, f=f, u0=spec.u0,
                        sigma=spec.sigma, r=spec.r,
                        epsilon_schedule=spec.epsilon_schedule)
    R = residual(spec.u0, spec.u0, steady, 0.0, 1)
    assert np.max(np.abs(R)) <= 1e-14


def test_newton_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(damping=1.5)
    with pytest.raises(ValueError):
        NewtonConfig(abs_tol=0.0)
    with pytest.raises(ValueError):
        NewtonConfig(linear_solver="magic")


def test_rough_coefficients_small_eps_monotone(grid1d):
    """Damped steps keep the residual monotone even for rough data."""
    rng = np.random.default_rng(2024)
    shape = (grid1d.nt + 1,) + grid1d.cells
    a = rng.uniform(0.0, 1.0, shape)
    b = 1.0 - a + rng.uniform(0.0, 0.5, shape)
    from dplab.problem import build_spec

    spec = build_spec(grid1d, p=np.full(shape, 2.4), q=np.full(shape, 2.2),
                      a=a, b=b, f=np.ones(shape),
                      u0=np.sin(np.pi * grid1d.centers(0)),
                      alpha=1.0, sigma=4.0, r=2.5, d=16.0)
    state = TimeStepState(u_now=spec.u0.copy(), u_prev=spec.u0.copy(),
                          step=1, eps=1e-6)
    out = newton_step(state, NewtonConfig(), spec)
    hist = out.residual_history
    assert all(hist[i + 1] < hist[i] for i in range(len(hist) - 1))


def test_warm_start_iteration_tracking(grid1d, capsys):
    """Performance property: tracked, not asserted."""
    spec = variable_spec(grid1d, epsilon_schedule=(1e-1, 1e-2, 1e-3))
    warm = epsilon_continuation(spec, grid1d)
    cold_total = 0
    for eps in spec.epsilon_schedule:
        cold_total += solve_evolution(spec, grid1d, eps).newton_total
    warm_total = sum(lvl.newton_total for lvl in warm.levels)
    print(f"newton iterations warm-started {warm_total} vs cold {cold_total}")


def test_newton_single_iteration_for_linear_problem(grid1d):
    spec = constant_spec(grid1d, f=1.0)
    state = TimeStepState(u_now=spec.u0.copy(), u_prev=spec.u0.copy(),
                          step=1, eps=0.0)
    out = newton_step(state, NewtonConfig(), spec)
    assert out.newton_iters == 1
    assert out.residual_history[-1] < out.residual_history[0] * 1e-6


def test_newton_quadratic_tail_degenerate_case():
    g = Grid(dim=2, cells=(64, 64), lengths=(1.0, 1.0), nt=4, final_time=0.02)
    spec = constant_spec(g, p=4.0, q=4.0, d=30.0, r=4.0)
    state = TimeStepState(u_now=spec.u0.copy(), u_prev=spec.u0.copy(),
                          step=1, eps=1e-2)
    out = newton_step(state, NewtonConfig(abs_tol=1e-12, rel_tol=1e-12), spec)
    hist = out.residual_history
    assert all(hist[i + 1] < hist[i] for i in range(len(hist) - 1))
    ratios = [hist[i + 1] / hist[i] ** 2 for i in range(1, len(hist) - 1)
              if hist[i] > 1e-13]
    assert ratios and max(ratios) < 1e4


def test_newton_diverged_raises(grid1d):
    spec = constant_spec(grid1d, p=4.0, q=4.0, f=1.0, r=4.0, d=20.0)
    state = TimeStepState(u_now=spec.u0.copy(), u_prev=spec.u0.copy(),
                          step=1, eps=1e-2)
    with pytest.raises(NewtonDiverged):
        newton_step(state, NewtonConfig(max_iter=1, abs_tol=1e-14,
                                        rel_tol=1e-14), spec)


def test_zero_data_evolution_stays_zero(grid1d):
    spec = constant_spec(grid1d, f=0.0, u0=np.zeros(grid1d.cells))
    result = solve_evolution(spec, grid1d, 0.1)
    assert np.all(result.u == 0.0)
    assert result.newton_total == 0


def test_heat_equation_closed_form_decay():
    errs = []
    for n, nt in ((32, 64), (64, 256)):
        g = Grid(dim=1, cells=(n,), lengths=(1.0,), nt=nt, final_time=0.05)
        spec = constant_spec(g, f=0.0)
        result = solve_evolution(spec, g, 0.0)
        x = g.centers(0)
        exact = math.exp(-math.pi**2 * 0.05) * np.sin(np.pi * x)
        errs.append(np.sqrt(np.sum((result.u[-1] - exact) ** 2) * g.cell_volume))
    assert errs[1] < errs[0] / 3.0  # O(h^2 + tau) with tau ~ h^2


def test_heat_decay_on_rectangle_distinguishes_axes():
    """Unequal side lengths and cell counts expose any axis mix-up."""
    g = Grid(dim=2, cells=(24, 16), lengths=(2.0, 1.0), nt=64, final_time=0.02)
    spec = constant_spec(g, f=0.0)  # u0 is the first sine mode of the box
    result = solve_evolution(spec, g, 0.0)
    X, Y = g.meshes()
    rate = math.pi**2 * (0.25 + 1.0)
    exact = math.exp(-rate * 0.02) * np.sin(math.pi * X / 2.0) * np.sin(math.pi * Y)
    err = np.sqrt(np.sum((result.u[-1] - exact) ** 2) * g.cell_volume)
    assert err < 2.5e-3


def test_energy_identity_within_tolerance(grid2d):
    spec = variable_spec(grid2d)
    config = NewtonConfig()
    result = solve_evolution(spec, grid2d, 1e-2, config)
    for row in result.diagnostics:
        u_norm = np.sqrt(np.sum(result.u[row.step] ** 2) * grid2d.cell_volume)
        theta = config.abs_tol + config.rel_tol * row.residual
        # the identity residual is <R, u>, bounded by ||R|| ||u||
        assert row.energy_residual <= 10 * config.abs_tol * max(1.0, u_norm) \
            + 10 * theta


def test_energy_identity_recompute_matches(grid2d):
    spec = variable_spec(grid2d)
    result = solve_evolution(spec, grid2d, 1e-2)
    recomputed = energy_identity_residuals(spec, 1e-2, result.u)
    stored = [d.energy_residual for d in result.diagnostics]
    assert np.allclose(recomputed, stored, rtol=1e-12, atol=1e-15)


def test_jacobian_symmetry_and_fd_consistency(grid2d):
    spec = variable_spec(grid2d)
    op = _StepOperator.build(spec, eps=1e-3, step=2)
    rng = np.random.default_rng(17)
    u = rng.standard_normal(grid2d.cells)
    cache = op.jacobian_cache(u)
    x = rng.standard_normal(grid2d.cells)
    y = rng.standard_normal(grid2d.cells)
    lhs = np.sum(op.apply_jacobian(cache, x) * y)
    rhs = np.sum(x * op.apply_jacobian(cache, y))
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)

    h = 1e-7
    d = rng.standard_normal(grid2d.cells)
    R0 = op.residual(u, spec.u0, spec.f[2])
    R1 = op.residual(u + h * d, spec.u0, spec.f[2])
    fd = (R1 - R0) / h
    jd = op.apply_jacobian(cache, d)
    assert np.max(np.abs(fd - jd)) <= 1e-5 * np.max(np.abs(jd))


def test_direct_and_cg_paths_agree(grid1d):
    spec = variable_spec(grid1d)
    direct = solve_evolution(spec, grid1d, 1e-2,
                             NewtonConfig(linear_solver="direct"))
    cg = solve_evolution(spec, grid1d, 1e-2, NewtonConfig(linear_solver="cg"))
    assert np.max(np.abs(direct.u - cg.u)) < 1e-7


def test_continuation_near_constant_for_linear_flux(grid1d):
    """p = q = 2 keeps only the coefficient shift eps + a, so successive
    solutions differ at O(eps gap) and the metrics collapse geometrically."""
    spec = constant_spec(grid1d, f=0.0,
                         epsilon_schedule=(1e-1, 1e-2, 1e-3, 1e-4))
    trace = epsilon_continuation(spec, grid1d)
    assert trace.converged
    series = trace.metric_series
    assert all(series[i + 1] < 1e-1 * series[i] for i in range(len(series) - 1))
    sols = trace.solutions
    drift = [np.max(np.abs(s - sols[-1])) for s in sols]
    assert all(drift[i + 1] < drift[i] for i in range(len(drift) - 2))
    assert drift[1] < 25.0 * spec.epsilon_schedule[1]


def test_continuation_metrics_decrease(grid1d):
    spec = variable_spec(grid1d, epsilon_schedule=(1e-1, 1e-2, 1e-3, 1e-4, 1e-5))
    trace = epsilon_continuation(spec, grid1d)
    series = trace.metric_series
    assert all(series[i + 1] < series[i] for i in range(len(series) - 1))
    assert series[-1] <= 1e-3 * series[0]
    assert trace.converged


def test_continuation_stalls_on_widening_schedule(grid1d):
    schedule = (0.2, 0.1999, 0.197, 0.19, 0.17, 0.12, 0.05)
    spec = variable_spec(grid1d, epsilon_schedule=schedule)
    with pytest.raises(ContinuationStalled) as info:
        epsilon_continuation(spec, grid1d)
    assert info.value.trace is not None
    assert len(info.value.trace.levels) >= 4

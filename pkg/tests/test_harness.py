import math

import numpy as np
import pytest

from dplab.errors import DomainError, InadmissibleR, WidthTooLarge
from dplab.grid import Grid
from dplab.harness import (
    default_s_values,
    heat_mms_case,
    interpolation_diagnostic,
    mms_convergence,
    mollification_stability,
    preservation_check,
    regularity_report,
    zero_mms_case,
)
from dplab.problem import build_spec
from dplab.solver import solve_evolution
from dplab.varexp import spacetime_modular

from conftest import constant_spec, variable_spec


def heat_solution(grid):
    """Closed-form decaying mode sampled on the space-time grid."""
    x = grid.centers(0)
    t = grid.times()
    return np.exp(-math.pi**2 * t)[:, None] * np.sin(math.pi * x)[None, :]


class TestRegularityReport:
    def test_zero_solution_zero_report(self, grid1d):
        spec = constant_spec(grid1d, f=0.0, u0=np.zeros(grid1d.cells), d=11.0)
        u = np.zeros((grid1d.nt + 1,) + grid1d.cells)
        rep = regularity_report(u, spec, eps=0.0, r=2.0)
        assert rep.sup_gradient_r_norm == 0.0
        assert rep.time_deriv_l2 == 0.0
        assert rep.flux_power_l2h1 == 0.0
        assert rep.interpolation_ratio == 0.0
        assert all(v == 0.0 for v in rep.improved_modulars.values())

    def test_inadmissible_r_gate(self, grid2d):
        spec = constant_spec(grid2d, sigma=3.0, d=40.0)
        u = np.zeros((grid2d.nt + 1,) + grid2d.cells)
        with pytest.raises(InadmissibleR):
            regularity_report(u, spec, eps=0.0, r=7.0)  # upper bound is 6

    def test_s_outside_interval_rejected(self, grid1d):
        spec = constant_spec(grid1d, d=11.0)
        u = np.zeros((grid1d.nt + 1,) + grid1d.cells)
        with pytest.raises(DomainError):
            regularity_report(u, spec, eps=0.0, r=2.0, s_list=(2.0,))

    def test_heat_closed_form_functionals(self):
        g = Grid(dim=1, cells=(64,), lengths=(1.0,), nt=128, final_time=0.02)
        spec = constant_spec(g, f=0.0, d=11.0)
        result = solve_evolution(spec, g, 0.0)
        rep = regularity_report(result.u, spec, eps=0.0, r=2.0)

        # independent oracle: fine midpoint quadrature of the closed form
        xf = (np.arange(4096) + 0.5) / 4096
        cos2 = np.pi**2 * np.cos(np.pi * xf) ** 2
        grad_sq = float(np.mean(cos2))  # integral over (0,1)
        assert abs(rep.sup_gradient_r_norm - grad_sq) < 5e-3 * grad_sq

        t = g.times()[1:]
        ut_sq = float(np.sum(g.tau * np.pi**4 * np.exp(-2 * np.pi**2 * t))) / 2.0
        assert abs(rep.time_deriv_l2 - math.sqrt(ut_sq)) < 2e-2 * math.sqrt(ut_sq)

        # G reduces to |grad u| here, so the squared norm integrates
        # |grad u|^2 + |grad |grad u||^2
        gg = float(np.mean(np.pi**2 * np.cos(np.pi * xf) ** 2
                           + np.pi**4 * np.sin(np.pi * xf) ** 2))
        ref = math.sqrt(float(np.sum(g.tau * np.exp(-2 * np.pi**2 * t))) * gg)
        assert abs(rep.flux_power_l2h1 - ref) < 2e-2 * ref

    def test_constant_exponent_flux_power_reduction(self, grid1d):
        """For p = q = const and r -> p the tracked field is
        (a+b)|grad u|^{p-1}."""
        from dplab.harness import _flux_power_field
        from dplab.grid import center_gradient

        p0 = 2.6
        spec = constant_spec(grid1d, p=p0, q=p0, a=0.3, b=0.9, r=p0, d=16.0)
        rng = np.random.default_rng(4)
        u = rng.standard_normal(grid1d.cells)
        g = center_gradient(u, grid1d)
        mag = np.sqrt(np.sum(g * g, axis=-1))
        field = _flux_power_field(spec, 1, mag, p0)
        assert np.allclose(field, (0.3 + 0.9) * mag ** (p0 - 1.0), rtol=1e-12)

    def test_refinement_chain_is_cauchy(self):
        values = []
        for n, nt in ((16, 8), (32, 32), (64, 128)):
            g = Grid(dim=1, cells=(n,), lengths=(1.0,), nt=nt, final_time=0.02)
            spec = variable_spec(g)
            result = solve_evolution(spec, g, 1e-2)
            rep = regularity_report(result.u, spec, eps=1e-2, r=3.0)
            values.append(rep.sup_gradient_r_norm)
        assert abs(values[2] - values[1]) < abs(values[1] - values[0])

    def test_phase_swap_invariance(self, grid2d):
        spec = variable_spec(grid2d)
        swapped = spec.swapped_phases()
        result = solve_evolution(spec, grid2d, 1e-2)
        result_sw = solve_evolution(swapped, grid2d, 1e-2)
        rep = regularity_report(result.u, spec, eps=1e-2, r=3.0)
        rep_sw = regularity_report(result_sw.u, swapped, eps=1e-2, r=3.0)
        for key, value in rep.functionals().items():
            other = rep_sw.functionals()[key]
            assert abs(other - value) <= 1e-12 * max(1.0, abs(value))

    def test_time_partition_additivity(self, grid1d):
        """Step-weighted cylinder integrals split over time partitions."""
        rng = np.random.default_rng(8)
        u = rng.standard_normal((grid1d.nt + 1,) + grid1d.cells)
        full = spacetime_modular(u, 2.5, grid1d)
        k = 3
        g_a = Grid(dim=1, cells=grid1d.cells, lengths=grid1d.lengths,
                   nt=k, final_time=k * grid1d.tau)
        g_b = Grid(dim=1, cells=grid1d.cells, lengths=grid1d.lengths,
                   nt=grid1d.nt - k, final_time=(grid1d.nt - k) * grid1d.tau)
        part = spacetime_modular(u[: k + 1], 2.5, g_a) \
            + spacetime_modular(u[k:], 2.5, g_b)
        assert np.isclose(full, part, rtol=1e-12)


class TestPreservation:
    def test_heat_gradient_decay_passes_with_zero_constant(self):
        reports = []
        for n, nt in ((16, 8), (32, 32), (64, 128)):
            g = Grid(dim=1, cells=(n,), lengths=(1.0,), nt=nt, final_time=0.02)
            spec = constant_spec(g, f=0.0, d=11.0)
            result = solve_evolution(spec, g, 0.0)
            reports.append(regularity_report(result.u, spec, eps=0.0, r=2.0))
        verdict = preservation_check(reports, r=2.0)
        assert verdict.passed
        assert verdict.fitted_constant == 0.0

    def test_needs_three_meshes(self, grid1d):
        spec = constant_spec(grid1d, f=0.0, d=11.0)
        result = solve_evolution(spec, grid1d, 0.0)
        rep = regularity_report(result.u, spec, eps=0.0, r=2.0)
        with pytest.raises(DomainError):
            preservation_check([rep, rep], r=2.0)


class TestInterpolationDiagnostic:
    def test_zero_field(self, grid1d):
        spec = constant_spec(grid1d, d=11.0)
        ratio = interpolation_diagnostic(np.zeros(grid1d.cells), spec,
                                         eps=0.0, r=2.0, s=0.5, step=1)
        assert ratio == 0.0

    def test_heat_slice_mesh_stable(self):
        ratios = []
        for n in (64, 128):
            g = Grid(dim=1, cells=(n,), lengths=(1.0,), nt=8, final_time=0.02)
            spec = constant_spec(g, f=0.0, d=11.0)
            u = heat_solution(g)
            ratios.append(interpolation_diagnostic(u[4], spec, eps=0.0,
                                                   r=2.0, s=0.5, step=4))
        assert all(np.isfinite(r) and r > 0 for r in ratios)
        assert abs(ratios[1] - ratios[0]) <  0.1 * abs(ratios[0])


class TestMMS:
    def test_zero_case_exact(self):
        rows = mms_convergence(zero_mms_case(), [8, 16])
        assert all(r.l2_error == 0.0 for r in rows)

    def test_heat_case_order_two(self):
        rows = mms_convergence(heat_mms_case(), [16, 32])
        assert rows[-1].order > 1.9
        assert rows[-1].order < 2.1


class TestMollificationStability:
    def test_exactly_invariant_data_gives_zero_difference(self, grid1d):
        spec = constant_spec(grid1d, f=0.3, u0=np.zeros(grid1d.cells), d=11.0)
        rows = mollification_stability(spec, [0.2, 0.1], grid1d, eps=1e-2)
        for row in rows:
            assert row.min_exponent_modular <= 1e-20
            assert row.flux_gap <= 1e-20

    def test_kinked_coefficient_differences_decrease(self):
        g = Grid(dim=1, cells=(64,), lengths=(1.0,), nt=8, final_time=0.02)
        x = g.centers(0)
        shape = (g.nt + 1,) + g.cells
        a = np.broadcast_to(0.5 + 0.4 * np.abs(x - 0.5), shape).copy()
        spec = build_spec(g, p=np.full(shape, 2.3), q=np.full(shape, 2.2),
                          a=a, b=np.full(shape, 0.5),
                          f=np.broadcast_to(np.sin(np.pi * x), shape).copy(),
                          u0=np.sin(np.pi * x),
                          alpha=1.0, sigma=4.0, r=2.5, d=16.0)
        rows = mollification_stability(spec, [0.1, 0.05, 0.025], g, eps=1e-2)
        mods = [row.min_exponent_modular for row in rows]
        assert mods[0] > mods[1] > mods[2] > 0

    def test_width_gate_propagates(self, grid1d):
        spec = variable_spec(grid1d)
        with pytest.raises(WidthTooLarge):
            mollification_stability(spec, [1.5, 0.7], grid1d, eps=1e-2)

    def test_widths_must_decrease(self, grid1d):
        spec = variable_spec(grid1d)
        with pytest.raises(DomainError):
            mollification_stability(spec, [0.05, 0.1], grid1d, eps=1e-2)


def test_default_s_values_in_open_interval():
    for dim in (1, 2):
        cap = 4.0 / (dim + 2.0)
        values = default_s_values(dim)
        assert all(0.0 < s < cap for s in values)
        assert len(values) == 3

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dplab.errors import GridMismatch
from dplab.grid import Grid, GridFunction
from dplab.varexp import Modular, convergence_metrics, luxemburg_norm, modular

from conftest import constant_spec, variable_spec


class TestModular:
    def test_constant_field(self, grid1d):
        v = GridFunction(grid1d, np.full(grid1d.cells, 1.5))
        assert np.isclose(modular(v, 2.5), 1.5**2.5, rtol=1e-13)

    def test_zero_field(self, grid1d):
        assert modular(GridFunction(grid1d, np.zeros(grid1d.cells)), 3.0) == 0.0

    def test_quadratic_closed_form(self):
        g = Grid(dim=1, cells=(1024,), lengths=(1.0,), nt=2, final_time=0.1)
        v = GridFunction(g, g.centers(0))
        assert abs(modular(v, 2.0) - 1.0 / 3.0) < 1e-5

    def test_mismatch_raises(self, grid1d):
        with pytest.raises(GridMismatch):
            modular(np.zeros(7), 2.0, grid1d)

    def test_modular_record_invariants(self, grid1d):
        rng = np.random.default_rng(12)
        x = grid1d.centers(0)
        exp_field = 1.5 + np.sin(np.pi * x) ** 2
        v = rng.standard_normal(grid1d.cells)
        rec = Modular.compute(v, exp_field, grid1d)
        assert rec.value >= 0.0
        assert rec.exponent_min == exp_field.min()
        assert rec.exponent_max == exp_field.max()
        # zero exactly when the field vanishes at all quadrature nodes
        assert Modular.compute(np.zeros(grid1d.cells), exp_field, grid1d).value == 0.0
        one_node = np.zeros(grid1d.cells)
        one_node[5] = 1e-8
        assert Modular.compute(one_node, exp_field, grid1d).value > 0.0

    def test_quadrature_richardson_slope(self):
        vals = []
        for n in (32, 64, 128):
            g = Grid(dim=1, cells=(n,), lengths=(1.0,), nt=2, final_time=0.1)
            x = g.centers(0)
            vals.append(modular(GridFunction(g, np.exp(x)), 2.7))
        # midpoint rule converges at second order in the mesh width
        slope = np.log2(abs(vals[0] - vals[1]) / abs(vals[1] - vals[2]))
        assert slope > 1.9


class TestLuxemburg:
    def test_constant_exponent_closed_form(self, grid1d):
        rng = np.random.default_rng(21)
        for _ in range(20):
            p0 = rng.uniform(1.2, 6.0)
            v = GridFunction(grid1d, rng.standard_normal(grid1d.cells))
            lam = luxemburg_norm(v, p0, tol=1e-11)
            exact = modular(v, p0) ** (1.0 / p0)
            assert abs(lam - exact) <= 1e-8 * exact

    def test_unit_field_unit_norm(self, grid1d):
        x = grid1d.centers(0)
        exp_field = 2.0 + np.sin(np.pi * x)
        v = GridFunction(grid1d, np.ones(grid1d.cells))
        assert abs(luxemburg_norm(v, exp_field) - 1.0) < 1e-9

    def test_zero_field(self, grid1d):
        assert luxemburg_norm(GridFunction(grid1d, np.zeros(grid1d.cells)), 2.0) == 0.0

    def test_unit_ball_property(self, grid1d):
        rng = np.random.default_rng(33)
        x = grid1d.centers(0)
        exp_field = 2.2 + 0.7 * np.cos(np.pi * x)
        for _ in range(10):
            v = rng.standard_normal(grid1d.cells) * rng.uniform(1e-3, 1e3)
            lam = luxemburg_norm(v, exp_field, tol=1e-10, grid=grid1d)
            assert abs(modular(v / lam, exp_field, grid1d) - 1.0) <= 1e-9

    @settings(max_examples=50, deadline=None)
    @given(scale=st.floats(min_value=1e-3, max_value=1e3),
           seed=st.integers(min_value=0, max_value=2**31 - 1))
    def test_homogeneity(self, scale, seed):
        g = Grid(dim=1, cells=(16,), lengths=(1.0,), nt=2, final_time=0.1)
        rng = np.random.default_rng(seed)
        exp_field = 1.5 + rng.uniform(0, 2, g.cells)
        v = rng.standard_normal(g.cells)
        tol = 1e-10
        base = luxemburg_norm(v, exp_field, tol=tol, grid=g)
        scaled = luxemburg_norm(scale * v, exp_field, tol=tol, grid=g)
        if base > 0:
            assert abs(scaled - scale * base) <= 2e-8 * scale * base + 2 * tol

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**31 - 1))
    def test_monotone_in_absolute_value(self, seed):
        g = Grid(dim=1, cells=(16,), lengths=(1.0,), nt=2, final_time=0.1)
        rng = np.random.default_rng(seed)
        exp_field = 1.5 + rng.uniform(0, 2, g.cells)
        v = rng.standard_normal(g.cells)
        w = v * rng.uniform(1.0, 2.0, g.cells)  # |v| <= |w| pointwise
        nv = luxemburg_norm(v, exp_field, grid=g)
        nw = luxemburg_norm(w, exp_field, grid=g)
        assert nv <= nw * (1 + 1e-8) + 1e-12


class TestConvergenceMetrics:
    def test_equal_solutions_vanish(self, grid1d):
        spec = constant_spec(grid1d)
        u = np.random.default_rng(0).standard_normal((grid1d.nt + 1,) + grid1d.cells)
        m = convergence_metrics(u, u, spec, eps=0.1)
        assert m.flux_gap == 0.0
        assert m.energy_modular == 0.0
        assert m.min_exponent_modular == 0.0

    def test_linear_case_collapses(self, grid1d):
        spec = constant_spec(grid1d, p=2.0, q=2.0, a=0.5, b=0.5)
        rng = np.random.default_rng(1)
        shape = (grid1d.nt + 1,) + grid1d.cells
        u = rng.standard_normal(shape)
        v = rng.standard_normal(shape)
        m = convergence_metrics(u, v, spec, eps=0.0)
        assert np.isclose(m.flux_gap, m.energy_modular, rtol=1e-12)
        assert np.isclose(m.flux_gap, m.min_exponent_modular, rtol=1e-12)

    def test_flux_gap_symmetric_exact(self, grid2d):
        spec = variable_spec(grid2d)
        rng = np.random.default_rng(2)
        shape = (grid2d.nt + 1,) + grid2d.cells
        u = rng.standard_normal(shape)
        v = rng.standard_normal(shape)
        m1 = convergence_metrics(u, v, spec, eps=0.05)
        m2 = convergence_metrics(v, u, spec, eps=0.05)
        assert m1.flux_gap == m2.flux_gap

    def test_positive_gap_and_energy_chain(self, grid2d):
        """The energy modular is controlled by powers of the flux gap."""
        spec = variable_spec(grid2d)
        rng = np.random.default_rng(3)
        shape = (grid2d.nt + 1,) + grid2d.cells
        s_over_plus = float(spec.s_over.max())
        s_under_minus = float(spec.s_under.min())

        def family(seed, count=12):
            r = np.random.default_rng(seed)
            out = []
            for _ in range(count):
                u = r.standard_normal(shape) * r.uniform(0.1, 2.0)
                v = u + r.standard_normal(shape) * r.uniform(0.01, 1.0)
                out.append(convergence_metrics(u, v, spec, eps=1e-3))
            return out

        def chain_value(m):
            g = m.flux_gap
            return g ** (s_over_plus / 2) + g ** (s_under_minus / 2) + g

        fit = family(10)
        c_fit = max(m.energy_modular / chain_value(m) for m in fit)
        assert np.isfinite(c_fit) and c_fit > 0
        for m in family(11):
            assert m.flux_gap > 0
            assert m.energy_modular <= 1.5 * c_fit * chain_value(m)

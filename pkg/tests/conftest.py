import numpy as np
import pytest

from dplab.grid import Grid
from dplab.problem import build_spec


@pytest.fixture
def grid1d():
    return Grid(dim=1, cells=(32,), lengths=(1.0,), nt=8, final_time=0.02)


@pytest.fixture
def grid2d():
    return Grid(dim=2, cells=(12, 10), lengths=(1.0, 1.0), nt=6, final_time=0.02)


def constant_spec(grid, p=2.0, q=2.0, a=0.5, b=0.5, f=0.0, u0=None,
                  alpha=1.0, sigma=4.0, r=2.0, d=16.0,
                  epsilon_schedule=(1e-1, 1e-2, 1e-3)):
    """Spec with constant data; u0 defaults to the first sine mode."""
    shape = (grid.nt + 1,) + grid.cells
    coords = grid.meshes()
    if u0 is None:
        u0 = np.sin(np.pi * coords[0] / grid.lengths[0])
        if grid.dim == 2:
            u0 = u0 * np.sin(np.pi * coords[1] / grid.lengths[1])
    return build_spec(
        grid=grid,
        p=np.full(shape, p), q=np.full(shape, q),
        a=np.full(shape, a), b=np.full(shape, b),
        f=np.full(shape, f), u0=np.asarray(u0, dtype=float),
        alpha=alpha, sigma=sigma, r=r, d=d,
        epsilon_schedule=epsilon_schedule,
    )


def variable_spec(grid, sigma=4.0, r=3.0, d=16.0,
                  epsilon_schedule=(1e-1, 1e-2, 1e-3), f_amp=0.5):
    """Smooth variable-exponent two-phase spec satisfying every assumption."""
    coords = grid.meshes()
    x = coords[0] / grid.lengths[0]
    y = coords[1] / grid.lengths[1] if grid.dim == 2 else 0.0 * x
    shape = (grid.nt + 1,) + grid.cells
    p = np.broadcast_to(2.5 + 0.2 * x, grid.cells)
    q = np.broadcast_to(2.4 + 0.2 * y, grid.cells) if grid.dim == 2 \
        else np.broadcast_to(2.4 + 0.1 * x, grid.cells)
    a = 0.5 + 0.3 * np.sin(np.pi * x) * (np.sin(np.pi * y) if grid.dim == 2 else 1.0)
    b = 0.5 + 0.3 * x * (1.0 - x)
    u0 = np.sin(np.pi * x)
    if grid.dim == 2:
        u0 = u0 * np.sin(np.pi * y)
    return build_spec(
        grid=grid,
        p=np.broadcast_to(p, shape).copy(), q=np.broadcast_to(q, shape).copy(),
        a=np.broadcast_to(a, shape).copy(), b=np.broadcast_to(b, shape).copy(),
        f=np.full(shape, f_amp) * np.broadcast_to(u0, shape),
        u0=np.asarray(u0, dtype=float),
        alpha=1.0, sigma=sigma, r=r, d=d,
        epsilon_schedule=epsilon_schedule,
    )

"""Uniform tensor grids on a rectangle and the discrete operators.

The layout is cell-centered with face-staggered fluxes.  Homogeneous
Dirichlet boundaries are enforced through ghost cells reflected through
the wall (ghost = -interior), which makes the wall-face gradient
(2 u_0 / h) second-order accurate for fields vanishing on the boundary.

With face quadrature weights equal to the cell volume on interior faces
and half of it on wall faces, the divergence below is the exact negative
adjoint of the gradient:

    sum_cells div(F) v vol  =  - sum_faces F grad(v) w

for every grid function v.  That identity is what turns the continuous
energy balance into an exact discrete one, so the tests pin it to
round-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid on an axis-aligned box, plus time axis."""

    dim: int
    cells: tuple
    lengths: tuple
    nt: int
    final_time: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        cells = tuple(int(c) for c in self.cells)
        lengths = tuple(float(l) for l in self.lengths)
        if len(cells) != self.dim or len(lengths) != self.dim:
            raise ValueError("cells/lengths must match dim")
        if any(c < 4 for c in cells):
            raise ValueError("need at least 4 cells per axis")
        if any(l <= 0 for l in lengths):
            raise ValueError("side lengths must be positive")
        if self.nt < 1 or self.final_time <= 0:
            raise ValueError("need nt >= 1 and final_time > 0")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "lengths", lengths)

    @property
    def h(self) -> tuple:
        return tuple(l / c for l, c in zip(self.lengths, self.cells))

    @property
    def tau(self) -> float:
        return self.final_time / self.nt

    @property
    def cell_volume(self) -> float:
        vol = 1.0
        for spacing in self.h:
            vol *= spacing
        return vol

    def centers(self, axis: int) -> np.ndarray:
        h = self.h[axis]
        return (np.arange(self.cells[axis]) + 0.5) * h

    def faces(self, axis: int) -> np.ndarray:
        h = self.h[axis]
        return np.arange(self.cells[axis] + 1) * h

    def meshes(self) -> tuple:
        """Cell-center coordinate arrays broadcast to the full grid shape."""
        axes = [self.centers(k) for k in range(self.dim)]
        if self.dim == 1:
            return (axes[0],)
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.tau

    def face_weights(self, axis: int) -> np.ndarray:
        """Quadrature weight per face: cell volume, halved on the walls."""
        shape = list(self.cells)
        shape[axis] += 1
        w = np.full(shape, self.cell_volume)
        index_lo = [slice(None)] * self.dim
        index_lo[axis] = 0
        index_hi = [slice(None)] * self.dim
        index_hi[axis] = -1
        w[tuple(index_lo)] *= 0.5
        w[tuple(index_hi)] *= 0.5
        return w


@dataclass
class GridFunction:
    """Scalar field sampled at cell centers, zero Dirichlet boundary."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.cells:
            raise GridMismatch(
                f"values shape {values.shape} does not match grid {self.grid.cells}"
            )
        self.values = values

    @classmethod
    def from_callable(cls, grid: Grid, fn, t: float = 0.0) -> "GridFunction":
        coords = grid.meshes()
        if grid.dim == 1:
            return cls(grid, np.asarray(fn(coords[0], t), dtype=float))
        return cls(grid, np.asarray(fn(coords[0], coords[1], t), dtype=float))

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())


def _values(u) -> np.ndarray:
    if isinstance(u, GridFunction):
        return u.values
    return np.asarray(u, dtype=float)


def reflect_pad(values: np.ndarray, axis: int) -> np.ndarray:
    """Append one ghost layer on both ends of ``axis`` with ghost = -interior."""
    lo = [slice(None)] * values.ndim
    lo[axis] = slice(0, 1)
    hi = [slice(None)] * values.ndim
    hi[axis] = slice(-1, None)
    return np.concatenate(
        [-values[tuple(lo)], values, -values[tuple(hi)]], axis=axis
    )


def gradient(u, grid: Grid | None = None) -> tuple:
    """Two-point face gradients, one array per axis.

    Axis k result has shape cells with cells[k]+1 along axis k.  Wall
    faces use the ghost convention, so they evaluate to +-2 u_wall / h.
    """
    if isinstance(u, GridFunction):
        grid = u.grid
    values = _values(u)
    if grid is None:
        raise GridMismatch("gradient needs a grid")
    if values.shape != grid.cells:
        raise GridMismatch("field shape does not match grid")
    out = []
    for axis in range(grid.dim):
        padded = reflect_pad(values, axis)
        out.append(np.diff(padded, axis=axis) / grid.h[axis])
    return tuple(out)


def divergence(grid: Grid, faces) -> np.ndarray:
    """Flux difference per cell; exact negative adjoint of gradient."""
    if len(faces) != grid.dim:
        raise GridMismatch("one face array per axis required")
    out = np.zeros(grid.cells)
    for axis, face in enumerate(faces):
        face = np.asarray(face, dtype=float)
        expected = list(grid.cells)
        expected[axis] += 1
        if face.shape != tuple(expected):
            raise GridMismatch(f"face array on axis {axis} has wrong shape")
        out += np.diff(face, axis=axis) / grid.h[axis]
    return out


def center_gradient(u, grid: Grid | None = None) -> np.ndarray:
    """Face gradients averaged back to cell centers, shape (*cells, dim)."""
    if isinstance(u, GridFunction):
        grid = u.grid
    grads = gradient(u, grid)
    comps = []
    for axis, g in enumerate(grads):
        lo = [slice(None)] * grid.dim
        lo[axis] = slice(0, -1)
        hi = [slice(None)] * grid.dim
        hi[axis] = slice(1, None)
        comps.append(0.5 * (g[tuple(lo)] + g[tuple(hi)]))
    return np.stack(comps, axis=-1)


def hessian(u, grid: Grid | None = None) -> np.ndarray:
    """Centered second differences at cell centers, shape (*cells, dim, dim).

    Symmetric by construction.  Ghost reflection makes the result first
    order only in the single cell layer along the walls; integral users
    exclude that margin.
    """
    if isinstance(u, GridFunction):
        grid = u.grid
    values = _values(u)
    if values.shape != grid.cells:
        raise GridMismatch("field shape does not match grid")
    padded = values
    for axis in range(grid.dim):
        padded = reflect_pad(padded, axis)
    h = grid.h
    n = grid.dim
    out = np.zeros(values.shape + (n, n))
    core = tuple(slice(1, -1) for _ in range(n))

    def shifted(offsets):
        index = tuple(slice(1 + o, padded.shape[k] - 1 + o) for k, o in enumerate(offsets))
        return padded[index]

    for i in range(n):
        plus = [0] * n
        plus[i] = 1
        minus = [0] * n
        minus[i] = -1
        out[..., i, i] = (shifted(plus) - 2.0 * padded[core] + shifted(minus)) / h[i] ** 2
    if n == 2:
        cross = (
            shifted([1, 1]) - shifted([1, -1]) - shifted([-1, 1]) + shifted([-1, -1])
        ) / (4.0 * h[0] * h[1])
        out[..., 0, 1] = cross
        out[..., 1, 0] = cross
    return out


def interior_mask(grid: Grid, margin: int) -> np.ndarray:
    """Boolean mask that drops ``margin`` cell layers along every wall."""
    mask = np.zeros(grid.cells, dtype=bool)
    index = tuple(slice(margin, c - margin) for c in grid.cells)
    mask[index] = True
    return mask

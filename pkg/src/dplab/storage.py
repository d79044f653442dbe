"""Checkpoint serialization: one flat binary file per time slice.

Each slice ``<field>_<n>.bin`` holds little-endian float64 cell values in
C order next to a JSON header ``<field>_<n>.json`` with the dims,
spacing, time and field name.  A ``manifest.json`` ties the set
together so a reader can detect missing slices.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import IncompleteCheckpoints
from .grid import Grid

_SCHEMA = 1


def _slice_name(field: str, index: int) -> str:
    return f"{field}_{index:06d}"


def save_solution(directory, grid: Grid, u: np.ndarray, eps: float,
                  field: str = "u") -> None:
    os.makedirs(directory, exist_ok=True)
    u = np.asarray(u, dtype=float)
    expected = (grid.nt + 1,) + grid.cells
    if u.shape != expected:
        raise ValueError(f"solution shape {u.shape} != {expected}")
    manifest = {
        "schema": _SCHEMA,
        "dim": grid.dim,
        "cells": list(grid.cells),
        "lengths": list(grid.lengths),
        "nt": grid.nt,
        "final_time": grid.final_time,
        "eps": eps,
        "field": field,
        "count": grid.nt + 1,
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    for n in range(grid.nt + 1):
        base = _slice_name(field, n)
        header = {
            "dims": list(grid.cells),
            "spacing": list(grid.h),
            "time": n * grid.tau,
            "field-name": field,
        }
        with open(os.path.join(directory, base + ".json"), "w", encoding="utf-8") as fh:
            json.dump(header, fh, indent=2, sort_keys=True)
        with open(os.path.join(directory, base + ".bin"), "wb") as fh:
            fh.write(np.ascontiguousarray(u[n]).astype("<f8").tobytes())


def load_solution(directory):
    """Read a checkpoint set back; raises IncompleteCheckpoints on gaps."""
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise IncompleteCheckpoints(f"no manifest in {directory}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    grid = Grid(
        dim=int(manifest["dim"]),
        cells=tuple(manifest["cells"]),
        lengths=tuple(manifest["lengths"]),
        nt=int(manifest["nt"]),
        final_time=float(manifest["final_time"]),
    )
    field = manifest["field"]
    u = np.zeros((grid.nt + 1,) + grid.cells)
    for n in range(grid.nt + 1):
        base = os.path.join(directory, _slice_name(field, n))
        bin_path = base + ".bin"
        if not os.path.exists(bin_path) or not os.path.exists(base + ".json"):
            raise IncompleteCheckpoints(f"missing slice {n} in {directory}")
        raw = np.frombuffer(open(bin_path, "rb").read(), dtype="<f8")
        if raw.size != int(np.prod(grid.cells)):
            raise IncompleteCheckpoints(f"slice {n} has wrong size")
        u[n] = raw.reshape(grid.cells)
    return grid, u, float(manifest["eps"])

"""Builders for the small set of bounded cost primitives.

Terminal costs must be bounded with a declared sup bound (the smoothing
estimates use it), so the builtin family consists of saturating shapes:
constants, tanh of affine functionals, Gaussian bumps, and smoothed
indicators.  All returned callables are vectorized over (..., N) inputs.
"""

from __future__ import annotations

import numpy as np

from .hjb import Hamiltonian
from .ou import ProjectedTerminalCost


def constant_cost(value: float) -> ProjectedTerminalCost:
    return ProjectedTerminalCost(
        lambda y: np.full(np.asarray(y).shape[:-1], float(value)), abs(float(value))
    )


def tanh_cost(direction, offset: float = 0.0, scale: float = 1.0) -> ProjectedTerminalCost:
    """scale * tanh(<direction, y> + offset); bound |scale|."""
    a = np.asarray(direction, dtype=float)
    return ProjectedTerminalCost(
        lambda y: scale * np.tanh(np.asarray(y) @ a + offset), abs(scale)
    )


def gauss_bump_cost(center, width: float = 1.0, scale: float = 1.0) -> ProjectedTerminalCost:
    """scale * exp(-|y - center|^2 / width^2); bound |scale|."""
    c = np.asarray(center, dtype=float)
    return ProjectedTerminalCost(
        lambda y: scale
        * np.exp(-np.sum((np.asarray(y) - c) ** 2, axis=-1) / width**2),
        abs(scale),
    )


def smooth_indicator_cost(
    direction, threshold: float = 0.0, sharpness: float = 10.0, scale: float = 1.0
) -> ProjectedTerminalCost:
    """Sigmoid step scale / (1 + e^{-sharpness (<a, y> - threshold)})."""
    a = np.asarray(direction, dtype=float)

    def fn(y):
        z = sharpness * (np.asarray(y) @ a - threshold)
        return scale / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))

    return ProjectedTerminalCost(fn, abs(scale))


def constant_ell0(value: float):
    return lambda s: np.full(np.shape(s), float(value))


def table_ell0(times, values):
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    return lambda s: np.interp(np.asarray(s, dtype=float), t, v)


def grid_hamiltonian(points, ell1_values) -> Hamiltonian:
    """Hamiltonian from explicit control points and running-cost table."""
    return Hamiltonian(np.atleast_2d(points), np.asarray(ell1_values, dtype=float))


def box_hamiltonian(dim: int, lo: float, hi: float, points_per_dim: int, ell1_fn=None) -> Hamiltonian:
    """Tensor control grid over a box with ell1 evaluated on the grid."""
    axis = np.linspace(lo, hi, points_per_dim)
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    ell1 = np.zeros(pts.shape[0]) if ell1_fn is None else np.asarray(
        [float(ell1_fn(u)) for u in pts]
    )
    return Hamiltonian(pts, ell1)

"""Integrals of |x - y|^{-p} (p < 3) over axis-aligned boxes.

The divergence identity div((x - y)|x - y|^{-p}) = (3 - p)|x - y|^{-p} reduces the
volume integral to the six faces, int_C r^{-p} = sum_f d_f/(3 - p) int_f r^{-p} dA,
with d_f the signed distance from y to the plane of face f. Each face is split at the
foot of y so that any near-singularity sits at a corner of a Gauss-Legendre patch.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from blowup_lab.config import settings
from blowup_lab.numerics.grid import Grid


@lru_cache(maxsize=8)
def _gauss(m: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(m)


def _rectangle(d: float, u0: float, u1: float, v0: float, v1: float, p: float, m: int) -> float:
    if u1 - u0 <= 0.0 or v1 - v0 <= 0.0:
        return 0.0
    t, w = _gauss(m)
    u = 0.5 * (u1 - u0) * t + 0.5 * (u1 + u0)
    v = 0.5 * (v1 - v0) * t + 0.5 * (v1 + v0)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    vals = (d * d + uu * uu + vv * vv) ** (-0.5 * p)
    return float(0.25 * (u1 - u0) * (v1 - v0) * (w @ vals @ w))


def _face(d: float, lo_u: float, hi_u: float, lo_v: float, hi_v: float, p: float, m: int) -> float:
    # face coordinates are relative to the foot of y
    total = 0.0
    us = [lo_u, hi_u] if not (lo_u < 0.0 < hi_u) else [lo_u, 0.0, hi_u]
    vs = [lo_v, hi_v] if not (lo_v < 0.0 < hi_v) else [lo_v, 0.0, hi_v]
    for u0, u1 in zip(us[:-1], us[1:]):
        for v0, v1 in zip(vs[:-1], vs[1:]):
            total += _rectangle(d, u0, u1, v0, v1, p, m)
    return total


def box_inverse_power(lo: np.ndarray, hi: np.ndarray, y: np.ndarray, p: float, m: int | None = None) -> float:
    """int over [lo, hi] of |x - y|^{-p} dx."""
    m = settings.FACE_GAUSS_POINTS if m is None else m
    lo, hi, y = (np.asarray(v, dtype=float) for v in (lo, hi, y))
    total = 0.0
    for axis in range(3):
        others = [i for i in range(3) if i != axis]
        bounds = [(lo[i] - y[i], hi[i] - y[i]) for i in others]
        for plane, sign in ((hi[axis], 1.0), (lo[axis], -1.0)):
            d = sign * (plane - y[axis])
            if d == 0.0:
                continue
            total += d / (3.0 - p) * _face(abs(d), *bounds[0], *bounds[1], p, m)
    return total


def cell_average_inverse_distance(grid: Grid, node: tuple[int, int, int], y: np.ndarray) -> float:
    """Mean of 1/|x - y| over the dual cell of a node."""
    center = grid.nodes[node]
    half = 0.5 * grid.h
    return box_inverse_power(center - half, center + half, y, 1.0) / grid.cell_volume


def punctured_mask(grid: Grid, y: np.ndarray) -> np.ndarray:
    """Interior nodes that do not coincide with y."""
    r = np.linalg.norm(grid.nodes - np.asarray(y, dtype=float), axis=-1)
    return grid.interior & (r > 1e-12 * float(np.min(grid.h)))


def node_sum_correction(grid: Grid, y: np.ndarray, p: float) -> float:
    """Exact minus punctured node-sum integral of |x - y|^{-p} over the 3^3 dual-cell block at y.

    Adding s(y) times this to the punctured node sum of s(x)|x - y|^{-p} restores
    second-order accuracy for smooth s.
    """
    y = np.asarray(y, dtype=float)
    center = np.asarray(grid.nearest_index(y))
    start = np.clip(center - 1, 0, grid.n - 1)
    stop = np.clip(center + 1, 0, grid.n - 1)
    lo = grid.lo + start * grid.h - 0.5 * grid.h
    hi = grid.lo + stop * grid.h + 0.5 * grid.h
    exact = box_inverse_power(lo, hi, y, p)

    block = tuple(slice(int(a), int(b) + 1) for a, b in zip(start, stop))
    r = np.linalg.norm(grid.nodes[block] - y, axis=-1)
    r = r[r > 1e-12 * float(np.min(grid.h))]
    discrete = float(np.sum(r ** (-p))) * grid.cell_volume
    return exact - discrete

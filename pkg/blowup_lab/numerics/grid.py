"""Uniform node lattices over balls and boxes.

A ball is discretized on its bounding cube; nodes strictly inside the sphere are
unknowns, every other node is pinned. A box carries nodes on its faces, which are
the pinned ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from blowup_lab.models.domain import Ball, DomainSpec, PotentialSpec


@dataclass(frozen=True, eq=False)
class Grid:
    domain: DomainSpec
    lo: np.ndarray
    hi: np.ndarray
    n: int

    @classmethod
    def from_domain(cls, domain: DomainSpec) -> Grid:
        shape = domain.shape
        if isinstance(shape, Ball):
            c = np.asarray(shape.center, dtype=float)
            lo, hi = c - shape.radius, c + shape.radius
        else:
            lo, hi = np.asarray(shape.lo, dtype=float), np.asarray(shape.hi, dtype=float)
        return cls(domain=domain, lo=lo, hi=hi, n=int(domain.resolution))

    # ---------- geometry ----------

    @cached_property
    def h(self) -> np.ndarray:
        return (self.hi - self.lo) / (self.n - 1)

    @cached_property
    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.linspace(self.lo[i], self.hi[i], self.n) for i in range(3))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (n, n, n, 3)."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    @cached_property
    def interior(self) -> np.ndarray:
        shape = self.domain.shape
        if isinstance(shape, Ball):
            d = self.nodes - np.asarray(shape.center)
            return np.sum(d * d, axis=-1) < shape.radius**2
        mask = np.zeros((self.n,) * 3, dtype=bool)
        mask[1:-1, 1:-1, 1:-1] = True
        return mask

    def contains(self, x: np.ndarray) -> bool:
        return self.distance_to_boundary(x) > 0.0

    def distance_to_boundary(self, x: np.ndarray) -> float:
        """Signed distance, positive inside."""
        x = np.asarray(x, dtype=float)
        shape = self.domain.shape
        if isinstance(shape, Ball):
            return float(shape.radius - np.linalg.norm(x - np.asarray(shape.center)))
        return float(min(np.min(x - self.lo), np.min(self.hi - x)))

    def boundary_crossing(self, x: np.ndarray, axis: int, sign: int) -> float:
        """Distance from interior node x to the boundary along sign*e_axis."""
        shape = self.domain.shape
        if isinstance(shape, Ball):
            d = x - np.asarray(shape.center)
            disc = d[..., axis] ** 2 - np.sum(d * d, axis=-1) + shape.radius**2
            return -sign * d[..., axis] + np.sqrt(np.maximum(disc, 0.0))
        return np.full(np.shape(x)[:-1], self.h[axis])

    def nearest_index(self, x: np.ndarray) -> tuple[int, int, int]:
        idx = np.rint((np.asarray(x, dtype=float) - self.lo) / self.h).astype(int)
        return tuple(int(v) for v in np.clip(idx, 0, self.n - 1))

    # ---------- fields ----------

    def interpolator(self, values: np.ndarray) -> RegularGridInterpolator:
        return RegularGridInterpolator(self.axes, values, method="linear", bounds_error=False, fill_value=None)

    def potential_on_nodes(self, potential: PotentialSpec) -> np.ndarray:
        values = potential.polynomial_part(self.nodes)
        if potential.samples is not None:
            if potential.samples.shape != (self.n,) * 3:
                raise ValueError(
                    f"Grid samples have shape {potential.samples.shape}, expected {(self.n,) * 3}."
                )
            values = values + potential.samples
        return values

    def potential_at(self, potential: PotentialSpec, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        values = potential.polynomial_part(points)
        if potential.samples is not None:
            values = values + self.interpolator(potential.samples)(points)
        return values

    def integrate(self, values: np.ndarray) -> float:
        """Node-sum quadrature over the interior nodes."""
        return float(np.sum(np.where(self.interior, values, 0.0)) * self.cell_volume)

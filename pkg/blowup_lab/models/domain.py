from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

Point = tuple[float, float, float]


class ShapeKind(str, Enum):
    BALL = "ball"
    BOX = "box"


@dataclass(frozen=True)
class Ball:
    center: Point = (0.0, 0.0, 0.0)
    radius: float = 1.0
    kind: ShapeKind = ShapeKind.BALL


@dataclass(frozen=True)
class Box:
    lo: Point = (0.0, 0.0, 0.0)
    hi: Point = (1.0, 1.0, 1.0)
    kind: ShapeKind = ShapeKind.BOX


@dataclass(frozen=True)
class DomainSpec:
    shape: Ball | Box
    resolution: int = 32

    @property
    def diameter(self) -> float:
        if isinstance(self.shape, Ball):
            return 2.0 * self.shape.radius
        return float(np.linalg.norm(np.subtract(self.shape.hi, self.shape.lo)))

    def with_resolution(self, resolution: int) -> DomainSpec:
        return replace(self, resolution=resolution)


class PotentialKind(str, Enum):
    CONSTANT = "constant"
    POLYNOMIAL = "polynomial"
    GRID_SAMPLES = "grid_samples"


_ZERO3: Point = (0.0, 0.0, 0.0)
_ZERO33: tuple[Point, Point, Point] = (_ZERO3, _ZERO3, _ZERO3)


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """a(x) = constant + linear.x + x^T quadratic x (+ interpolated grid samples).

    Grid samples live on the nodes of the DomainSpec grid they were given for.
    """
    kind: PotentialKind
    constant: float = 0.0
    linear: Point = _ZERO3
    quadratic: tuple[Point, Point, Point] = _ZERO33
    samples: np.ndarray | None = field(default=None, repr=False)

    # ---------- constructors ----------

    @classmethod
    def const(cls, c: float) -> PotentialSpec:
        return cls(kind=PotentialKind.CONSTANT, constant=float(c))

    @classmethod
    def polynomial(
        cls,
        constant: float = 0.0,
        linear: Point = _ZERO3,
        quadratic: tuple[Point, Point, Point] = _ZERO33,
    ) -> PotentialSpec:
        return cls(
            kind=PotentialKind.POLYNOMIAL,
            constant=float(constant),
            linear=tuple(float(v) for v in linear),
            quadratic=tuple(tuple(float(v) for v in row) for row in quadratic),
        )

    @classmethod
    def grid(cls, samples: np.ndarray) -> PotentialSpec:
        return cls(kind=PotentialKind.GRID_SAMPLES, samples=np.asarray(samples, dtype=float))

    # ---------- algebra ----------

    def scaled(self, factor: float) -> PotentialSpec:
        return self.combined(None, factor, 0.0)

    def combined(self, other: PotentialSpec | None, w_self: float, w_other: float) -> PotentialSpec:
        """w_self * self + w_other * other, staying inside the three kinds."""
        parts = [(self, w_self)] + ([(other, w_other)] if other is not None else [])
        constant = sum(w * p.constant for p, w in parts)
        linear = np.sum([w * np.asarray(p.linear) for p, w in parts], axis=0)
        quadratic = np.sum([w * np.asarray(p.quadratic) for p, w in parts], axis=0)
        samples = None
        for p, w in parts:
            if p.samples is not None:
                samples = w * p.samples if samples is None else samples + w * p.samples
        if samples is not None:
            kind = PotentialKind.GRID_SAMPLES
        elif np.any(linear) or np.any(quadratic):
            kind = PotentialKind.POLYNOMIAL
        else:
            kind = PotentialKind.CONSTANT
        return PotentialSpec(
            kind=kind,
            constant=float(constant),
            linear=tuple(float(v) for v in linear),
            quadratic=tuple(tuple(float(v) for v in row) for row in quadratic),
            samples=samples,
        )

    # ---------- evaluation ----------

    def polynomial_part(self, points: np.ndarray) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        q = np.asarray(self.quadratic)
        return (
            self.constant
            + x @ np.asarray(self.linear)
            + np.einsum("...i,ij,...j->...", x, q, x)
        )

    @property
    def is_smooth_family(self) -> bool:
        return self.kind is not PotentialKind.GRID_SAMPLES

    @property
    def cache_key(self) -> tuple:
        digest = ""
        if self.samples is not None:
            digest = hashlib.sha256(np.ascontiguousarray(self.samples).tobytes()).hexdigest()
        return (self.kind.value, self.constant, self.linear, self.quadratic, digest)

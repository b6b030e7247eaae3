from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from blowup_lab.models.interaction import BubbleConfiguration
from blowup_lab.numerics.grid import Grid


class RateKind(str, Enum):
    FINITE = "finite"
    ZERO = "zero"
    INFINITE = "infinite"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class RateValue:
    """Limit of eps * u_eps(x_i)^2. Only FINITE carries a value; +infinity is never a float."""
    kind: RateKind
    value: float | None = None

    @classmethod
    def finite(cls, value: float) -> RateValue:
        return cls(RateKind.FINITE, float(value))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "value": self.value}


@dataclass(frozen=True, eq=False)
class LimitProfile:
    """4 pi sqrt(3) sum_i L_i G_a(x_i, .) on the grid nodes (+inf on a node at some x_i)."""
    grid: Grid
    values: np.ndarray
    coefficients: np.ndarray
    points: np.ndarray


@dataclass(frozen=True, eq=False)
class BlowupPrediction:
    config: BubbleConfiguration
    limit_profile_coefficients: np.ndarray
    qv_values: np.ndarray
    numerator: float
    denominator: float
    denominator_identity: float
    rates: tuple[RateValue, ...]
    sign_consistent: bool
    single_bubble: RateValue | None = None
    diagnostic: str = ""

    def scaled_rates(self) -> np.ndarray:
        """rate_i * L_i^2, constant in i for finite rates."""
        lam = np.asarray(self.config.weights, dtype=float)
        return np.array([
            r.value * lam[i] ** 2 if r.kind is RateKind.FINITE else np.nan
            for i, r in enumerate(self.rates)
        ])


@dataclass(frozen=True)
class SweepRow:
    eps: float
    residuals: tuple[float, ...]
    max_residual: float
    ratio: float


@dataclass(frozen=True)
class ExpansionSweep:
    rows: tuple[SweepRow, ...]
    ratio_passed: tuple[bool, ...]
    below_floor: tuple[bool, ...]
    floor: float

    @property
    def passed(self) -> bool:
        return all(r or f for r, f in zip(self.ratio_passed, self.below_floor))

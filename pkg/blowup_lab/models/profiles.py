from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np


class ProfileKind(str, Enum):
    BUBBLE = "bubble"
    CORRECTION_W = "correction_w"
    HOMOGENEOUS_V = "homogeneous_v"
    PSI_INTEGRAND = "psi_integrand"


class RadialWeight(str, Enum):
    ONE = "1"
    INV_R = "1/r"
    R = "r"


@dataclass(frozen=True)
class BubbleParams:
    """Scale and center of B_{mu,x0}(x) = mu^{1/2} / (mu^2 + |x - x0|^2/3)^{1/2}."""
    mu: float
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RadialProfile:
    kind: ProfileKind
    evaluate: Callable[[np.ndarray], np.ndarray]

    def __call__(self, r: np.ndarray | float) -> np.ndarray:
        return self.evaluate(np.asarray(r, dtype=float))


@dataclass(frozen=True)
class RadialIntegrand:
    """prod_k f_k(|x|)^{p_k} times the weight, integrated over R^3."""
    factors: tuple[tuple[ProfileKind, int], ...]
    weight: RadialWeight = RadialWeight.ONE
    scale: float = 1.0


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    cutoff: float
    tail: float
    tail_exponent: float
    abserr: float

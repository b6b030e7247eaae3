from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Branch(str, Enum):
    REGULAR = "regular"
    SINGULAR = "singular"


@dataclass(frozen=True, eq=False)
class LinearizedMode:
    """Radial factor of degree k of a solution of -Laplace v = N(N+2) B^{p-1} v in R^N.

    Samples are on a log-spaced grid that contains r = 1; `dv` is dv/dr.
    """
    N: int
    k: int
    branch: Branch
    r: np.ndarray
    v: np.ndarray
    dv: np.ndarray
    rescalings: int = 0

    @property
    def mu(self) -> float:
        return (self.N - 2) / 2 + self.k

    @property
    def ell(self) -> int:
        return self.k * (self.k + self.N - 2)


@dataclass(frozen=True)
class LogCoordinateReport:
    """psi(t) = r^{(N-2)/2} v(r), t = ln r."""
    residual: float
    inverse_error: float
    slope_minus: float
    r2_minus: float
    slope_plus: float
    r2_plus: float
    expected_minus: float
    expected_plus: float


@dataclass(frozen=True)
class GrowthReport:
    c_minus: float
    c_plus: float
    ratio: float
    sign_changes: int


@dataclass(frozen=True)
class WronskianReport:
    mean: float
    relative_variation: float


@dataclass(frozen=True)
class DegreeVerdict:
    k: int
    excluded: bool
    reason: str
    origin_exponent: float
    infinity_exponent: float


@dataclass(frozen=True)
class LiouvilleCertificate:
    N: int
    tau: float
    verdicts: tuple[DegreeVerdict, ...]

    @property
    def only_trivial(self) -> bool:
        return all(v.excluded for v in self.verdicts)

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from blowup_lab.config import settings


@dataclass(frozen=True, eq=False)
class BubbleConfiguration:
    """n distinct interior points, optionally weighted with Lambda_1 = 1."""
    points: np.ndarray
    weights: np.ndarray | None = None
    a_values: np.ndarray | None = None
    V_values: np.ndarray | None = None

    @property
    def n(self) -> int:
        return int(len(self.points))

    @property
    def min_separation(self) -> float:
        if self.n < 2:
            return float("inf")
        diff = self.points[:, None, :] - self.points[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        return float(np.min(dist[np.triu_indices(self.n, k=1)]))


@dataclass(frozen=True, eq=False)
class InteractionSpectrum:
    matrix: np.ndarray
    rho: float
    perron: np.ndarray
    perron_unit: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    spectral_gap: float
    asymmetry: float = 0.0
    gradient: np.ndarray | None = None

    def eigen_residual(self, scale: float = 1.0) -> float:
        """|M L - rho L| / |L| for L = scale * perron."""
        lam = scale * self.perron
        return float(np.linalg.norm(self.matrix @ lam - self.rho * lam) / np.linalg.norm(lam))


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    tau: float
    rho: float
    grad_norm: float
    step: float


@dataclass(frozen=True, eq=False)
class ConfigurationResult:
    tau: float
    config: BubbleConfiguration
    spectrum: InteractionSpectrum
    rho_residual: float
    gradient_residual: float
    iterations: int
    trace: tuple[TraceRow, ...] = field(default_factory=tuple)
    tau_fixed: bool = False

    @property
    def certified(self) -> bool:
        return self.rho_residual < settings.RHO_TOL and self.gradient_residual < settings.GRAD_RHO_TOL


@dataclass(frozen=True, eq=False)
class HessianReport:
    """Central-difference Hessian of rho_a in the 3n point coordinates."""
    matrix: np.ndarray
    eigenvalues: np.ndarray
    asymmetry: float
    step: float

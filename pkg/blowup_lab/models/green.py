from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from blowup_lab.numerics.grid import Grid


@dataclass(frozen=True, eq=False)
class GreenField:
    """G_a(., y) and H_a(., y) on the nodes of a grid.

    `values` is zero on pinned nodes and +inf on a node that coincides with the source.
    `regular_part` extends H by its boundary data 1/(4 pi |x - y|) on pinned nodes.
    Near the source H = phi(y) - a(y)|x - y|/(8 pi) + ...; interpolation works on the
    smooth remainder so that phi is not biased by the cone.
    """
    source: np.ndarray
    grid: Grid
    values: np.ndarray
    regular_part: np.ndarray
    robin_value: float
    robin_gradient: np.ndarray | None = None
    cone_coefficient: float = 0.0
    cg_iterations: int = 0

    def smooth_regular_part(self) -> np.ndarray:
        """H + a(y)|x - y|/(8 pi): H with its conical term at the source removed."""
        d = np.linalg.norm(self.grid.nodes - self.source, axis=-1)
        return self.regular_part + self.cone_coefficient * d


@dataclass(frozen=True)
class CoercivityReport:
    smallest_eigenvalue: float
    coercive: bool


@dataclass(frozen=True)
class ExpansionReport:
    c0: float
    c1: tuple[float, float, float]
    c2: float
    expected_c0: float
    expected_c1: tuple[float, float, float] | None
    expected_c2: float
    condition: float
    points: int


@dataclass(frozen=True)
class RecursionReport:
    """Finite-difference checks of -Laplace h_k against -a h_{k-1}."""
    max_relative_error: float
    h0_laplacian_sign: int
    per_degree: tuple[float, ...]


@dataclass(frozen=True)
class ResolventReport:
    eps: tuple[float, ...]
    slopes: tuple[float, ...]
    extrapolated_slope: float
    integral: float
    relative_discrepancy: float


@dataclass(frozen=True)
class ConvergenceReport:
    resolutions: tuple[int, ...]
    values: tuple[float, ...]
    errors: tuple[float, ...]
    observed_order: float
    oracle: float

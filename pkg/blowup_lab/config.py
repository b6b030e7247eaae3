from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class Settings:
    TEMPLATE_ROOT: Path = Path(__file__).resolve().parent / "templates"
    SCHEMA_VERSION: int = 1

    # ---------- grids ----------
    MIN_RESOLUTION: int = 16
    MAX_RESOLUTION: int = 128
    GHOST_MIN_FRACTION: float = 1e-3
    SOURCE_MARGIN_CELLS: float = 2.0
    SINGULAR_AVERAGE_CELLS: int = 2
    FACE_GAUSS_POINTS: int = 24

    # ---------- linear solves ----------
    CG_RTOL: float = 1e-10
    CG_ITERATION_FACTOR: int = 20
    COERCIVITY_ITERATIONS: int = 20
    COERCIVITY_MARGIN: float = 1e-8
    COERCIVITY_INNER_RTOL: float = 1e-8

    # ---------- green ----------
    GRADIENT_EXCLUSION_CELLS: float = 3.0
    SHELL_INNER_CELLS: float = 4.0
    SHELL_OUTER_CELLS: float = 12.0
    FIT_MAX_CONDITION: float = 1e8
    FIT_MIN_POINTS: int = 24

    # ---------- profiles ----------
    SQRT3_WINDOW: float = 1e-3
    TAYLOR_THRESHOLD: float = 1e-2
    TAIL_TOLERANCE: float = 1e-12
    QUAD_EPSREL: float = 1e-12
    QUAD_LIMIT: int = 200

    # ---------- interaction ----------
    SPECTRAL_GAP_TOL: float = 1e-10
    PSD_TOL: float = 1e-10
    MIN_SEPARATION_CELLS: float = 4.0
    POINT_ROUNDING: float = 1e-9
    RHO_TOL: float = 1e-8
    GRAD_RHO_TOL: float = 1e-6
    NEWTON_MAX_ITER: int = 30
    NEWTON_JACOBIAN_REUSE: int = 3
    NEWTON_MAX_HALVINGS: int = 12
    NEWTON_FD_STEP: float = 1e-5
    NEWTON_RCOND: float = 1e-8
    RESIDUAL_CACHE_SIZE: int = 256
    MAX_BUBBLES: int = 16

    # ---------- linearized ----------
    FROBENIUS_START: float = 1e-4
    MIN_R_MAX: float = 1e3
    ODE_RTOL: float = 1e-12
    ODE_ATOL: float = 1e-300
    FIT_FRACTION: float = 0.2
    OVERFLOW_THRESHOLD: float = 1e200
    MODE_SAMPLES: int = 401
    GROWTH_RATIO_BOUND: float = 100.0

    # ---------- predictor ----------
    RATE_ZERO_TOL: float = 1e-12
    EPS_SWEEP: tuple[float, ...] = (1e-2, 1e-3, 1e-4)
    EXPANSION_RATIO: float = 5.0
    SCALING_TOL: float = 1e-12


settings = Settings()

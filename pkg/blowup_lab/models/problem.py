"""JSON problem specification and run report.

Potentials are limited to constants, quadratic polynomials and grid samples; no expression
parsing.
"""

from __future__ import annotations

from enum import Enum
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, model_validator

from blowup_lab.config import settings
from blowup_lab.models.domain import Ball, Box, DomainSpec, PotentialSpec

Point = tuple[float, float, float]


class Task(str, Enum):
    ROBIN_MAP = "RobinMap"
    GREEN_EVAL = "GreenEval"
    FIND_CONFIG = "FindConfig"
    PREDICT = "Predict"
    LINEARIZED = "Linearized"
    VERIFY = "Verify"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BallDomain(_Strict):
    shape: Literal["ball"] = "ball"
    center: Point = (0.0, 0.0, 0.0)
    radius: PositiveFloat = 1.0
    resolution: int = Field(32, ge=settings.MIN_RESOLUTION, le=settings.MAX_RESOLUTION)

    def contains(self, p: Point) -> bool:
        return float(np.linalg.norm(np.subtract(p, self.center))) < self.radius

    def to_domain(self) -> DomainSpec:
        return DomainSpec(shape=Ball(center=self.center, radius=self.radius), resolution=self.resolution)


class BoxDomain(_Strict):
    shape: Literal["box"] = "box"
    lo: Point = (0.0, 0.0, 0.0)
    hi: Point = (1.0, 1.0, 1.0)
    resolution: int = Field(32, ge=settings.MIN_RESOLUTION, le=settings.MAX_RESOLUTION)

    @model_validator(mode="after")
    def _ordered(self) -> BoxDomain:
        if any(l >= h for l, h in zip(self.lo, self.hi)):
            raise ValueError("box needs lo < hi on every axis")
        return self

    def contains(self, p: Point) -> bool:
        return all(l < v < h for l, v, h in zip(self.lo, p, self.hi))

    def to_domain(self) -> DomainSpec:
        return DomainSpec(shape=Box(lo=self.lo, hi=self.hi), resolution=self.resolution)


class ConstantPotential(_Strict):
    kind: Literal["constant"] = "constant"
    value: float = 0.0

    def to_potential(self) -> PotentialSpec:
        return PotentialSpec.const(self.value)


class PolynomialPotential(_Strict):
    kind: Literal["polynomial"] = "polynomial"
    constant: float = 0.0
    linear: Point = (0.0, 0.0, 0.0)
    quadratic: tuple[Point, Point, Point] = ((0.0, 0.0, 0.0),) * 3

    def to_potential(self) -> PotentialSpec:
        return PotentialSpec.polynomial(self.constant, self.linear, self.quadratic)


class GridPotential(_Strict):
    kind: Literal["grid_samples"] = "grid_samples"
    samples: list[list[list[float]]]

    def to_potential(self) -> PotentialSpec:
        return PotentialSpec.grid(np.asarray(self.samples, dtype=float))


DomainModel = Annotated[Union[BallDomain, BoxDomain], Field(discriminator="shape")]
PotentialModel = Annotated[
    Union[ConstantPotential, PolynomialPotential, GridPotential], Field(discriminator="kind")
]


class TaskParameters(_Strict):
    # GreenEval
    sources: list[Point] = Field(default_factory=list)
    eval_points: list[Point] = Field(default_factory=list)
    # RobinMap
    probe_resolution: int = Field(17, ge=2, le=65)
    # FindConfig / Predict
    n: int = Field(1, ge=1, le=settings.MAX_BUBBLES)
    init_points: list[Point] = Field(default_factory=list)
    tau0: float = 1.0
    fix_tau: bool = False
    hessian: bool = False
    eps_sweep: list[PositiveFloat] = Field(default_factory=lambda: list(settings.EPS_SWEEP))
    # Linearized
    N: int = Field(3, ge=3)
    degrees: list[Annotated[int, Field(ge=0)]] = Field(default_factory=lambda: [0, 1, 2])
    tau: float | None = None
    r_max: float = Field(1e3, ge=settings.MIN_R_MAX)
    # Verify
    checks: list[str] | None = None
    # slices
    plane_axis: int = Field(2, ge=0, le=2)


class OutputSpec(_Strict):
    prefix: str = Field("", pattern=r"^[A-Za-z0-9_.-]*$")


class ProblemSpec(_Strict):
    schema_version: int
    domain: DomainModel
    potential_a: PotentialModel = ConstantPotential()
    potential_V: PotentialModel = ConstantPotential()
    task: Task
    parameters: TaskParameters = TaskParameters()
    outputs: OutputSpec = OutputSpec()

    @model_validator(mode="after")
    def _check(self) -> ProblemSpec:
        if self.schema_version != settings.SCHEMA_VERSION:
            raise ValueError(
                f"schema_version: version {self.schema_version} is not supported (expected {settings.SCHEMA_VERSION})"
            )
        params = self.parameters
        for label, points in (("sources", params.sources), ("eval_points", params.eval_points),
                              ("init_points", params.init_points)):
            for p in points:
                if not self.domain.contains(p):
                    raise ValueError(f"parameters.{label}: point {p} is not interior")
        if self.task in (Task.FIND_CONFIG, Task.PREDICT) and len(params.init_points) != params.n:
            raise ValueError(f"parameters.init_points: must hold n={params.n} points")
        n = self.domain.resolution
        for label, pot in (("potential_a", self.potential_a), ("potential_V", self.potential_V)):
            if isinstance(pot, GridPotential) and np.asarray(pot.samples).shape != (n, n, n):
                raise ValueError(f"{label}.samples: must have shape ({n}, {n}, {n})")
        return self

    def domain_spec(self) -> DomainSpec:
        return self.domain.to_domain()

    def a(self) -> PotentialSpec:
        return self.potential_a.to_potential()

    def V(self) -> PotentialSpec:
        return self.potential_V.to_potential()


class CheckResult(BaseModel):
    name: str
    module: str
    value: float | None
    expected: float | None
    tolerance: float | None
    passed: bool
    detail: str = ""


class ArtifactEntry(BaseModel):
    path: str
    sha256: str
    bytes: int


class RunReport(BaseModel):
    task: Task
    schema_version: int
    version: str
    status: str = "ok"
    residuals: dict[str, float] = Field(default_factory=dict)
    checks: list[CheckResult] = Field(default_factory=list)
    artifacts: list[ArtifactEntry] = Field(default_factory=list)
    timings: dict[str, float] = Field(default_factory=dict)

    @property
    def failed_checks(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

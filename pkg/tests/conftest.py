from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from blowup_lab.cli.dependencies import Services, build_services
from blowup_lab.models.domain import Ball, DomainSpec, PotentialSpec
from blowup_lab.models.interaction import BubbleConfiguration, ConfigurationResult

RESOLUTION = 32


@pytest.fixture(scope="session")
def services() -> Services:
    return build_services(threads=1)


@pytest.fixture(scope="session")
def unit_ball() -> DomainSpec:
    return DomainSpec(shape=Ball(), resolution=RESOLUTION)


@pytest.fixture(scope="session")
def threshold(services: Services, unit_ball: DomainSpec) -> ConfigurationResult:
    """n = 1 blow-up configuration of tau * (-1) on the unit ball."""
    init = BubbleConfiguration(points=np.array([[0.05, 0.02, 0.0]]))
    return services.interaction.find_blowup_configuration(
        unit_ball, PotentialSpec.const(-1.0), 1, init, tau0=2.0
    )


@pytest.fixture
def write_spec(tmp_path: Path):
    def _write(payload: dict, name: str = "spec.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    return _write

from __future__ import annotations

import math

import numpy as np
import pytest

from blowup_lab.models.profiles import BubbleParams, ProfileKind, RadialIntegrand, RadialWeight
from blowup_lab.service.profile_service import (
    SQRT3,
    InvalidParameterError,
    NonIntegrableError,
    ProfileService,
    beta_constants,
    bubble,
    correction_residual,
    correction_w,
    correction_w_prime,
    homogeneous_residual,
    homogeneous_v,
    psi,
    radial_profile,
)


@pytest.fixture(scope="module")
def profiles() -> ProfileService:
    return ProfileService()


@pytest.fixture(scope="module")
def log_radii() -> np.ndarray:
    return np.geomspace(1e-3, 1e3, 600)


def test_bubble_at_origin_and_at_sqrt3(profiles):
    p = BubbleParams(mu=1.0)
    assert profiles.eval_bubble(p, np.zeros(3)) == pytest.approx(1.0, abs=1e-15)
    assert profiles.eval_bubble(p, np.array([SQRT3, 0.0, 0.0])) == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-14)


def test_bubble_scaling_covariance(profiles):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(20, 3))
    for mu in (0.01, 0.5, 7.0):
        center = (0.3, -1.0, 2.0)
        scaled = profiles.eval_bubble(BubbleParams(mu=mu, center=center), x)
        unit = profiles.eval_bubble(BubbleParams(mu=1.0), (x - np.asarray(center)) / mu)
        np.testing.assert_allclose(scaled, mu**-0.5 * unit, rtol=1e-14)


@pytest.mark.parametrize("mu", [0.0, -1.0])
def test_bubble_rejects_non_positive_scale(profiles, mu):
    with pytest.raises(InvalidParameterError):
        profiles.eval_bubble(BubbleParams(mu=mu), np.zeros(3))


def test_bubble_laplacian_matches_fifth_power(profiles):
    points = np.random.default_rng(0).uniform(-1.0, 1.0, size=(10, 3))
    assert np.max(profiles.bubble_laplacian_residual(BubbleParams(mu=1.0), points)) < 1e-6


def test_bubble_is_decreasing():
    r = np.linspace(0.0, 50.0, 500)
    assert np.all(np.diff(bubble(r)) < 0.0)


def test_homogeneous_v_changes_sign_at_sqrt3():
    assert radial_profile(ProfileKind.HOMOGENEOUS_V)(SQRT3)[()] == pytest.approx(0.0, abs=1e-15)
    assert homogeneous_v(SQRT3 - 1e-6) > 0.0 > homogeneous_v(SQRT3 + 1e-6)


def test_correction_w_vanishes_at_origin(profiles):
    assert profiles.eval_correction_w(0.0) == 0.0
    assert correction_w_prime(0.0)[0] == 0.0
    assert abs(profiles.eval_correction_w(1e-3)) < 1e-5


def test_correction_w_rejects_negative_radius(profiles):
    with pytest.raises(InvalidParameterError):
        profiles.eval_correction_w(np.array([0.5, -0.1]))


def test_correction_w_asymptotics():
    def tail(R: float) -> float:
        return float(correction_w(R)[0]) - (SQRT3 / 2.0 * R - 3.0 * math.pi)

    # the remainder decays like log(R)/R, so the offset -3 pi is only resolved far out
    assert tail(1e5) == pytest.approx(0.0, abs=1e-2)
    for R in (1e3, 1e4, 1e5):
        assert 25.0 < tail(R) * R / math.log(R) < 45.0
    assert correction_w_prime(1e3)[0] == pytest.approx(SQRT3 / 2.0, abs=1e-3)


def test_correction_w_is_continuous_across_window():
    edges = SQRT3 + 1e-3 * np.array([-1.0, 1.0])
    for edge in edges:
        inside, outside = correction_w(np.array([edge - 1e-9, edge + 1e-9]))
        assert inside == pytest.approx(outside, abs=1e-7)
    centre = correction_w(np.array([SQRT3]))[0]
    assert np.isfinite(centre)


def test_correction_ode_residual(log_radii):
    residual = correction_residual(log_radii)
    assert np.max(np.abs(residual) / (1.0 + bubble(log_radii))) < 1e-7


def test_homogeneous_v_is_in_the_kernel(log_radii):
    assert np.max(np.abs(homogeneous_residual(log_radii))) < 1e-8


def test_psi_is_order_r_at_origin():
    r = np.geomspace(1e-8, 1e-2, 200)
    ratio = np.abs(psi(r)) / r
    assert psi(0.0)[()] == 0.0
    assert np.all(np.isfinite(ratio))
    assert np.max(ratio) < 1.0


def test_closed_form_constants(profiles):
    for name, (value, exact) in profiles.closed_form_constants().items():
        assert value == pytest.approx(exact, rel=1e-8), name


def test_beta_constants():
    for name, (value, exact) in beta_constants().items():
        assert value == pytest.approx(exact, rel=1e-12), name


def test_radial_integral_reports_tail(profiles):
    result = profiles.radial_integral(RadialIntegrand(((ProfileKind.BUBBLE, 5),), RadialWeight.INV_R))
    assert result.value == pytest.approx(4.0 * math.pi, rel=1e-8)
    assert result.tail_exponent == pytest.approx(4.0, abs=0.1)
    assert abs(result.tail) < 1e-10


def test_radial_integral_detects_divergence(profiles):
    with pytest.raises(NonIntegrableError) as excinfo:
        profiles.radial_integral(RadialIntegrand(((ProfileKind.BUBBLE, 1),)))
    assert excinfo.value.exponent < 1.0

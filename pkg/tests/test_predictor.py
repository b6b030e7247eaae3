from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from blowup_lab.models.domain import PotentialSpec
from blowup_lab.models.interaction import BubbleConfiguration, ConfigurationResult
from blowup_lab.models.prediction import RateKind, RateValue
from blowup_lab.service.predictor_service import (
    PROFILE_SCALE,
    RATE_SCALE,
    CertificationError,
    InvalidScalingError,
    PredictorService,
)

ZERO = PotentialSpec.const(0.0)
ONE = PotentialSpec.const(1.0)
MINUS_ONE = PotentialSpec.const(-1.0)


@pytest.fixture(scope="module")
def prediction(services, unit_ball, threshold):
    return services.predictor.blowup_rate(unit_ball, MINUS_ONE.scaled(threshold.tau), MINUS_ONE, threshold)


def test_single_bubble_constant():
    assert RATE_SCALE / PROFILE_SCALE**2 == pytest.approx(math.sqrt(3.0) / 4.0, rel=1e-12)


def test_qv_at_center_of_unit_ball(services, unit_ball):
    config = BubbleConfiguration(points=np.zeros((1, 3)), weights=np.ones(1))
    value = services.predictor.qv_functional(unit_ball, ZERO, ONE, config, (0.0, 0.0, 0.0))
    # 4 pi sqrt(3) * int G_0(0, .)^2 with int G_0(0, .)^2 = 1/(12 pi)
    assert value == pytest.approx(math.sqrt(3.0) / 3.0, rel=1e-2)


def test_qv_only_at_configuration_points(services, unit_ball):
    config = BubbleConfiguration(points=np.zeros((1, 3)), weights=np.ones(1))
    with pytest.raises(ValueError):
        services.predictor.qv_functional(unit_ball, ZERO, ONE, config, (0.1, 0.0, 0.0))


def test_qv_is_symmetric_for_mirror_pair(services, unit_ball):
    config = BubbleConfiguration(points=np.array([[0.3, 0.0, 0.0], [-0.3, 0.0, 0.0]]), weights=np.ones(2))
    first = services.predictor.qv_functional(unit_ball, ZERO, ONE, config, config.points[0])
    second = services.predictor.qv_functional(unit_ball, ZERO, ONE, config, config.points[1])
    assert first == pytest.approx(second, rel=1e-4)


def test_direct_square_integral_for_one_bubble(services, unit_ball):
    config = BubbleConfiguration(points=np.array([[0.1, 0.0, 0.0]]), weights=np.ones(1))
    direct = services.predictor.profile_square_integral(unit_ball, ZERO, ONE, config)
    field = services.green.solve_green(unit_ball, ZERO, config.points[0])
    assert direct == pytest.approx(PROFILE_SCALE**2 * services.green.green_square_integral(field, ONE), rel=1e-10)


def test_limit_profile_coefficients(services, unit_ball):
    config = BubbleConfiguration(points=np.array([[0.3, 0.0, 0.0], [-0.3, 0.0, 0.0]]), weights=np.array([1.0, 0.5]))
    profile = services.predictor.limit_profile(unit_ball, ZERO, config)
    np.testing.assert_allclose(profile.coefficients, PROFILE_SCALE * np.array([1.0, 0.5]))
    assert profile.values.shape == (unit_ball.resolution,) * 3


@pytest.mark.parametrize(
    "numerator, denominator, kind",
    [
        (0.0, 0.0, RateKind.INDETERMINATE),
        (1.0, 0.0, RateKind.INFINITE),
        (0.0, 1.0, RateKind.ZERO),
        (2.0, 4.0, RateKind.FINITE),
    ],
)
def test_rate_classification(numerator, denominator, kind):
    rate = PredictorService._classify(numerator, denominator, 3.0)
    assert rate.kind is kind
    if kind is RateKind.FINITE:
        assert rate.value == pytest.approx(1.5)


def test_rate_sentinel_serialization():
    assert RateValue(RateKind.INFINITE).to_dict() == {"kind": "infinite", "value": None}
    assert RateValue.finite(2).to_dict() == {"kind": "finite", "value": 2.0}


def test_rate_needs_certified_configuration(services, unit_ball, threshold):
    stale = replace(threshold, rho_residual=1.0)
    with pytest.raises(CertificationError) as excinfo:
        services.predictor.blowup_rate(unit_ball, MINUS_ONE.scaled(threshold.tau), MINUS_ONE, stale)
    assert excinfo.value.rho_residual == 1.0


def test_single_bubble_rate_agrees_with_general_formula(prediction):
    rate = prediction.rates[0]
    assert rate.kind is RateKind.FINITE
    assert rate.value > 0.0
    assert prediction.sign_consistent
    assert prediction.single_bubble.kind is RateKind.FINITE
    assert abs(rate.value) == pytest.approx(prediction.single_bubble.value, rel=1e-10)
    assert prediction.denominator == pytest.approx(prediction.denominator_identity, rel=1e-10)
    np.testing.assert_allclose(prediction.scaled_rates(), [rate.value])


def test_expansion_sweep_at_threshold(services, unit_ball, threshold, prediction):
    sweep = services.predictor.expansion_sweep(
        unit_ball, MINUS_ONE.scaled(threshold.tau), MINUS_ONE, prediction
    )
    assert [row.eps for row in sweep.rows] == [1e-2, 1e-3, 1e-4]
    assert sweep.floor == pytest.approx(PROFILE_SCALE * 1e-8)
    assert sweep.passed
    # a certified single bubble leaves only 4 pi sqrt(3) rho, below the floor at every decade
    assert all(sweep.below_floor)
    assert len(sweep.ratio_passed) == 2


def test_expansion_sweep_fails_for_wrong_rates(services, unit_ball, threshold, prediction):
    doubled = replace(prediction, rates=tuple(RateValue.finite(2.0 * r.value) for r in prediction.rates))
    sweep = services.predictor.expansion_sweep(unit_ball, MINUS_ONE.scaled(threshold.tau), MINUS_ONE, doubled)
    assert not any(sweep.ratio_passed)
    assert not any(sweep.below_floor)
    assert not sweep.passed


def test_expansion_residual_checks_scaling(services, unit_ball, threshold):
    a = MINUS_ONE.scaled(threshold.tau)
    pair = BubbleConfiguration(points=np.array([[0.3, 0.0, 0.0], [-0.3, 0.0, 0.0]]), weights=np.ones(2))
    predictor = services.predictor
    with pytest.raises(InvalidScalingError):
        predictor.expansion_residual(unit_ball, a, MINUS_ONE, pair, [1.0, 1.0], [1e-3, 4e-3], 1e-2)
    with pytest.raises(InvalidScalingError):
        predictor.expansion_residual(unit_ball, a, MINUS_ONE, pair, [1.0, 1.0], [1e-3, -1e-3], 1e-2)


def test_sweep_needs_positive_rates(services, unit_ball, threshold, prediction):
    flipped = replace(prediction, rates=(RateValue(RateKind.INFINITE),))
    with pytest.raises(InvalidScalingError):
        services.predictor.expansion_sweep(unit_ball, MINUS_ONE.scaled(threshold.tau), MINUS_ONE, flipped)


@pytest.fixture(scope="module")
def pair_result(services, unit_ball) -> ConfigurationResult:
    """Pair with Perron weights, marked certified so the rate formulas can be evaluated."""
    config = BubbleConfiguration(points=np.array([[0.3, 0.0, 0.0], [-0.2, 0.1, 0.0]]))
    spectrum = services.interaction.build_matrix(unit_ball, MINUS_ONE, config)
    weighted = services.interaction.annotate(unit_ball, MINUS_ONE, replace(config, weights=spectrum.perron))
    return ConfigurationResult(
        tau=1.0, config=weighted, spectrum=spectrum, rho_residual=0.0, gradient_residual=0.0, iterations=0
    )


def test_square_integral_paths_agree_for_pair(services, unit_ball, pair_result):
    direct, identity = services.predictor.square_integral_paths(unit_ball, MINUS_ONE, ONE, pair_result.config)
    assert direct > 0.0
    assert direct == pytest.approx(identity, rel=1e-3)


def test_pair_rates_scale_with_weights(services, unit_ball, pair_result):
    prediction = services.predictor.blowup_rate(unit_ball, MINUS_ONE, MINUS_ONE, pair_result)
    assert all(r.kind is RateKind.FINITE for r in prediction.rates)
    scaled = prediction.scaled_rates()
    assert np.max(np.abs(scaled - scaled[0])) < 1e-10 * abs(scaled[0])
    assert prediction.single_bubble is None


def test_qv_vanishes_without_perturbation(services, unit_ball, pair_result):
    for point in pair_result.config.points:
        assert services.predictor.qv_functional(unit_ball, MINUS_ONE, ZERO, pair_result.config, point) == 0.0

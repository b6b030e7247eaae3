from __future__ import annotations

import math

import numpy as np
import pytest

from blowup_lab.config import settings
from blowup_lab.models.domain import PotentialSpec
from blowup_lab.models.interaction import BubbleConfiguration, ConfigurationResult
from blowup_lab.numerics.grid import Grid
from blowup_lab.service import oracles
from blowup_lab.service.interaction_service import (
    ContinuationRangeError,
    DegenerateConfigurationError,
    InteractionService,
    PerronSignError,
    SpectralDegeneracyError,
    positive_semidefinite_check,
    rho_gradient,
    spectrum_from_matrix,
)

ZERO = PotentialSpec.const(0.0)
MINUS_ONE = PotentialSpec.const(-1.0)
PAIR = np.array([[0.3, 0.0, 0.0], [-0.3, 0.0, 0.0]])


def _config(points) -> BubbleConfiguration:
    return BubbleConfiguration(points=np.asarray(points, dtype=float))


# ---------- small matrices ----------

def test_spectrum_of_two_by_two():
    spectrum = spectrum_from_matrix(np.array([[2.0, -1.0], [-1.0, 2.0]]))
    assert spectrum.rho == pytest.approx(1.0)
    np.testing.assert_allclose(spectrum.perron, [1.0, 1.0], rtol=1e-14)
    assert spectrum.spectral_gap == pytest.approx(2.0)
    assert spectrum.eigen_residual() < 1e-14


def test_perron_sign_convention():
    spectrum = spectrum_from_matrix(np.array([[1.0, -0.2, -0.1], [-0.2, 2.0, -0.3], [-0.1, -0.3, 3.0]]))
    assert spectrum.perron[0] == 1.0
    assert np.all(spectrum.perron > 0.0)
    assert np.linalg.norm(spectrum.perron_unit) == pytest.approx(1.0)


def test_degenerate_lowest_eigenvalue_is_rejected():
    with pytest.raises(SpectralDegeneracyError) as excinfo:
        spectrum_from_matrix(np.eye(3))
    assert excinfo.value.gap == 0.0


def test_rho_gradient_layout():
    spectrum = spectrum_from_matrix(np.array([[2.0, -1.0], [-1.0, 3.0]]))
    mtildes = [np.eye(2), np.zeros((2, 2)), np.array([[0.0, 1.0], [0.0, 0.0]])]
    grad = rho_gradient(spectrum, mtildes)
    unit = spectrum.perron_unit
    assert grad.shape == (6,)
    np.testing.assert_allclose(grad[[0, 3]], unit**2)
    np.testing.assert_allclose(grad[[1, 4]], 0.0)
    assert grad[2] == pytest.approx(unit[0] * unit[1])
    assert grad[5] == 0.0


def test_psd_check():
    assert positive_semidefinite_check(spectrum_from_matrix(np.array([[0.5, -0.1], [-0.1, 1.0]])))
    assert not positive_semidefinite_check(spectrum_from_matrix(np.array([[-0.5, -0.1], [-0.1, 1.0]])))


def test_non_positive_perron_vector_is_rejected():
    # simple lowest eigenvalue, but its eigenvector is (1, 0)
    with pytest.raises(PerronSignError) as excinfo:
        spectrum_from_matrix(np.diag([1.0, 2.0]))
    assert excinfo.value.vector[1] == 0.0


def test_eigen_residual_ignores_weight_scaling():
    spectrum = spectrum_from_matrix(np.array([[1.0, -0.2, -0.1], [-0.2, 2.0, -0.3], [-0.1, -0.3, 3.0]]))
    residuals = [spectrum.eigen_residual(scale) for scale in (1.0, 3.0, 0.1)]
    assert max(residuals) < 1e-14
    np.testing.assert_allclose(residuals, residuals[0], atol=1e-15)


# ---------- configurations ----------

def test_coincident_points_are_rejected(services, unit_ball):
    with pytest.raises(DegenerateConfigurationError):
        services.interaction.build_matrix(unit_ball, ZERO, _config([[0.1, 0.0, 0.0], [0.1, 0.0, 0.0]]))


def test_close_points_are_rejected(services, unit_ball):
    h = float(np.max(Grid.from_domain(unit_ball).h))
    with pytest.raises(DegenerateConfigurationError):
        services.interaction.build_matrix(unit_ball, ZERO, _config([[0.0, 0.0, 0.0], [2.0 * h, 0.0, 0.0]]))


def test_too_many_points_are_rejected(services, unit_ball):
    points = np.random.default_rng(0).uniform(-0.5, 0.5, size=(settings.MAX_BUBBLES + 1, 3))
    with pytest.raises(DegenerateConfigurationError):
        services.interaction.validate_configuration(unit_ball, _config(points))


def test_weights_must_be_normalized(services, unit_ball):
    config = BubbleConfiguration(points=PAIR, weights=np.array([2.0, 1.0]))
    with pytest.raises(DegenerateConfigurationError):
        services.interaction.validate_configuration(unit_ball, config)


def test_pair_matrix_matches_images(services, unit_ball):
    spectrum = services.interaction.build_matrix(unit_ball, ZERO, _config(PAIR))
    p, q = PAIR
    expected = oracles.images_robin(p) - oracles.images_green(p, q)
    assert spectrum.rho == pytest.approx(expected, abs=5e-3)
    np.testing.assert_allclose(spectrum.perron, [1.0, 1.0], atol=1e-4)
    assert spectrum.asymmetry < 1e-3
    assert positive_semidefinite_check(spectrum)


def test_perron_vector_positive_on_random_configurations(services, unit_ball):
    rng = np.random.default_rng(11)
    h = float(np.max(Grid.from_domain(unit_ball).h))
    checked = 0
    while checked < 3:
        config = _config(rng.uniform(-0.45, 0.45, size=(3, 3)))
        if config.min_separation <= 8.0 * h:
            continue
        checked += 1
        spectrum = services.interaction.build_matrix(unit_ball, MINUS_ONE, config)
        assert np.all(spectrum.perron > 0.0)
        for j in range(1, 3):
            vec = spectrum.eigenvectors[:, j]
            assert np.any(vec > 0.0) and np.any(vec < 0.0)


def _hf_error(interaction, dom, a, config) -> float:
    spectrum = interaction.build_matrix(dom, a, config, with_gradient=True)
    fd = interaction.rho_difference_gradient(dom, a, config)
    return float(np.max(np.abs(spectrum.gradient - fd) / (1.0 + np.abs(fd))))


def test_hellmann_feynman_gradient_matches_differences(services, unit_ball):
    config = _config([[0.25, 0.05, 0.0], [-0.2, -0.1, 0.05]])
    assert _hf_error(services.interaction, unit_ball, MINUS_ONE, config) < 1e-4


@pytest.mark.slow
def test_hellmann_feynman_gradient_on_random_pairs(services, unit_ball):
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 10:
        points = rng.uniform(-0.5, 0.5, size=(2, 3))
        config = _config(points)
        if np.max(np.linalg.norm(points, axis=1)) > 0.5 or config.min_separation < 0.4:
            continue
        spectrum = services.interaction.build_matrix(unit_ball, MINUS_ONE, config)
        if spectrum.spectral_gap <= 1e-3:
            continue
        checked += 1
        assert _hf_error(services.interaction, unit_ball, MINUS_ONE, config) < 1e-4


def test_symmetric_pair_gradient_is_antisymmetric(services, unit_ball):
    gradient = services.interaction.build_matrix(unit_ball, MINUS_ONE, _config(PAIR), with_gradient=True).gradient
    assert gradient[0] == pytest.approx(-gradient[3], rel=1e-8, abs=1e-12)
    np.testing.assert_allclose(gradient[[1, 2, 4, 5]], 0.0, atol=1e-8)
    # rho grows as the pair separates
    assert gradient[0] > 0.0


@pytest.mark.parametrize("c", [0.0, -2.0])
def test_rho_grows_with_separation(services, unit_ball, c):
    a = PotentialSpec.const(c)
    rhos = [
        services.interaction.build_matrix(unit_ball, a, _config([[d, 0.0, 0.0], [-d, 0.0, 0.0]])).rho
        for d in np.linspace(0.15, 0.6, 7)
    ]
    assert np.all(np.diff(rhos) > 0.0)


def test_off_diagonal_entries_grow_with_separation(services, unit_ball):
    # M_12 = -G(x_1, x_2) increases as the points move apart
    entries = [
        services.interaction.build_matrix(unit_ball, ZERO, _config([[0.0, 0.0, 0.0], [d, 0.0, 0.0]])).matrix[0, 1]
        for d in (0.3, 0.4, 0.5, 0.6)
    ]
    assert np.all(np.diff(entries) > 0.0)


def test_eigen_residual_is_invariant_under_weight_scaling(services, unit_ball):
    spectrum = services.interaction.build_matrix(unit_ball, MINUS_ONE, _config(PAIR))
    residuals = [spectrum.eigen_residual(scale) for scale in (1.0, 3.0, 0.1)]
    assert residuals[0] < 1e-12
    np.testing.assert_allclose(residuals, residuals[0], atol=1e-12)


def test_rho_tau_derivative_matches_differences(services, unit_ball):
    interaction = services.interaction
    config = _config(PAIR)
    tau, step = 2.0, 1e-3
    exact = interaction.rho_tau_derivative(unit_ball, MINUS_ONE, tau, config)
    fd = (
        interaction.build_matrix(unit_ball, MINUS_ONE.scaled(tau + step), config).rho
        - interaction.build_matrix(unit_ball, MINUS_ONE.scaled(tau - step), config).rho
    ) / (2.0 * step)
    # rho decreases as the negative potential deepens
    assert exact < 0.0
    assert exact == pytest.approx(fd, rel=5e-2)


def test_residual_cache_is_bounded(services, unit_ball):
    interaction = InteractionService(services.green, max_residuals=2)
    for d in (0.1, 0.15, 0.2):
        interaction._evaluate(unit_ball, MINUS_ONE, np.array([1.0, d, 0.0, 0.0]), None)
    assert len(interaction._residuals) == 2


def test_mtilde_axis_is_checked(services, unit_ball):
    with pytest.raises(ValueError):
        services.interaction.build_mtilde(unit_ball, ZERO, _config(PAIR), 3)


def test_mtilde_diagonal_is_robin_gradient(services, unit_ball):
    mtilde = services.interaction.build_mtilde(unit_ball, ZERO, _config(PAIR), 0)
    expected = oracles.images_robin_gradient(PAIR[0])[0]
    assert mtilde[0, 0] == pytest.approx(expected, rel=5e-2)
    # mirror pair: the x-derivatives are opposite
    assert mtilde[1, 1] == pytest.approx(-mtilde[0, 0], rel=1e-3)


# ---------- blow-up configurations ----------

def test_single_bubble_threshold(threshold: ConfigurationResult):
    assert threshold.certified
    assert threshold.tau == pytest.approx(math.pi**2 / 4.0, rel=1e-2)
    assert np.linalg.norm(threshold.config.points[0]) < 1e-3
    np.testing.assert_allclose(threshold.config.weights, [1.0])
    assert threshold.config.a_values[0] == pytest.approx(-threshold.tau)
    assert threshold.trace[0].iteration == 0
    assert threshold.trace[-1].grad_norm < settings.GRAD_RHO_TOL


def test_fixed_tau_solves_only_the_gradient(services, unit_ball):
    init = _config([[0.05, 0.02, 0.0]])
    result = services.interaction.find_blowup_configuration(unit_ball, MINUS_ONE, 1, init, tau0=2.0, fix_tau=True)
    assert result.tau_fixed
    assert result.tau == 2.0
    assert result.gradient_residual < settings.GRAD_RHO_TOL
    # phi_{-2} at the center is positive, so this is not a blow-up configuration
    assert result.rho_residual > 1e-3
    assert not result.certified


def test_start_outside_coercive_range(services, unit_ball):
    init = _config([[0.05, 0.0, 0.0]])
    with pytest.raises(ContinuationRangeError) as excinfo:
        services.interaction.find_blowup_configuration(unit_ball, MINUS_ONE, 1, init, tau0=12.0)
    assert excinfo.value.tau == 12.0


def test_initial_point_count_must_match(services, unit_ball):
    with pytest.raises(DegenerateConfigurationError):
        services.interaction.find_blowup_configuration(unit_ball, MINUS_ONE, 2, _config([[0.0, 0.0, 0.0]]))


def test_hessian_of_robin_function_at_center(services, unit_ball):
    # phi_0(y) = 1/(4 pi (1 - |y|^2)) has Hessian I/(2 pi) at the origin
    report = services.interaction.hessian_report(unit_ball, ZERO, _config([[0.0, 0.0, 0.0]]))
    assert report.matrix.shape == (3, 3)
    np.testing.assert_allclose(report.eigenvalues, 1.0 / (2.0 * math.pi), rtol=0.1)
    assert report.asymmetry < 1e-2


@pytest.mark.slow
def test_perron_suite_on_fifty_configurations(services, unit_ball):
    rng = np.random.default_rng(2024)
    h = float(np.max(Grid.from_domain(unit_ball).h))
    passed = 0
    trials = 0
    while trials < 50:
        n = (2, 3, 4)[trials % 3]
        a = (ZERO, MINUS_ONE)[trials % 2]
        config = _config(rng.uniform(-0.45, 0.45, size=(n, 3)))
        if config.min_separation <= 6.0 * h:
            continue
        trials += 1
        spectrum = services.interaction.build_matrix(unit_ball, a, config)
        others_mixed = all(
            np.any(spectrum.eigenvectors[:, j] > 0.0) and np.any(spectrum.eigenvectors[:, j] < 0.0)
            for j in range(1, n)
        )
        passed += bool(np.all(spectrum.perron > 0.0) and others_mixed)
    assert passed == trials

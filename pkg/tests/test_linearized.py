from __future__ import annotations

import numpy as np
import pytest

from blowup_lab.config import settings
from blowup_lab.models.linearized import Branch
from blowup_lab.service.linearized_service import (
    IntegerExponentError,
    LinearizedService,
    exact_mode,
    exact_residual,
)
from blowup_lab.service.profile_service import InvalidParameterError

HIGHER_DEGREES = (2, 3, 4)


@pytest.fixture(scope="module")
def linearized() -> LinearizedService:
    return LinearizedService()


@pytest.fixture(scope="module")
def regular_modes(linearized):
    return {k: linearized.solve_mode(3, k, Branch.REGULAR) for k in (0, 1) + HIGHER_DEGREES}


@pytest.mark.parametrize("N", [3, 4, 5, 6])
@pytest.mark.parametrize("k", [0, 1])
def test_exact_modes_solve_the_equation(N, k):
    assert exact_residual(N, k, np.geomspace(1e-3, 1e3, 500)) < 1e-9


def test_exact_mode_needs_low_degree():
    with pytest.raises(InvalidParameterError):
        exact_mode(3, 2, np.array([1.0]))


def test_sample_grid_contains_one_and_increases(regular_modes):
    r = regular_modes[2].r
    assert np.all(np.diff(r) > 0.0)
    assert np.any(r == 1.0)
    assert r[0] == pytest.approx(settings.FROBENIUS_START)


def test_ground_mode_matches_closed_form(regular_modes):
    mode = regular_modes[0]
    v, dv, _ = exact_mode(3, 0, mode.r)
    one = int(np.argmin(np.abs(mode.r - 1.0)))
    # v(1) = 0, so the mode is normalized by r v'(r) at r = 1
    expected = v / dv[one]
    window = mode.r <= 10.0
    np.testing.assert_allclose(mode.v[window], expected[window], atol=1e-7)


def test_translation_mode_matches_closed_form(regular_modes):
    mode = regular_modes[1]
    v, _, _ = exact_mode(3, 1, mode.r)
    one = int(np.argmin(np.abs(mode.r - 1.0)))
    window = mode.r <= 10.0
    np.testing.assert_allclose(mode.v[window], (v / v[one])[window], rtol=1e-7, atol=1e-10)


@pytest.mark.parametrize("k", HIGHER_DEGREES)
def test_regular_branch_grows_like_r_to_the_k(linearized, regular_modes, k):
    report = linearized.growth_report(regular_modes[k])
    assert report.c_minus > 0.0
    assert report.ratio < settings.GROWTH_RATIO_BOUND
    assert report.sign_changes == 0


@pytest.mark.parametrize("k", HIGHER_DEGREES)
def test_log_coordinate_slopes(linearized, regular_modes, k):
    mode = regular_modes[k]
    report = linearized.log_coordinate_check(mode)
    assert report.slope_minus == pytest.approx(mode.mu, rel=1e-2)
    assert report.slope_plus == pytest.approx(mode.mu, rel=1e-2)
    assert report.r2_minus > 0.999
    assert report.residual < 1e-3
    assert report.inverse_error < 1e-12


def test_singular_branch_decays_at_origin(linearized):
    mode = linearized.solve_mode(3, 2, Branch.SINGULAR)
    report = linearized.log_coordinate_check(mode)
    assert report.expected_minus == -mode.mu
    assert report.slope_minus == pytest.approx(-mode.mu, rel=1e-2)
    assert report.slope_plus == pytest.approx(-mode.mu, rel=1e-2)


@pytest.mark.parametrize("k", [0, 1])
def test_low_degree_singular_branch_blows_up_at_origin(linearized, regular_modes, k):
    mode = linearized.solve_mode(3, k, Branch.SINGULAR)
    report = linearized.log_coordinate_check(mode)
    assert report.slope_minus == pytest.approx(-mode.mu, rel=1e-2)
    assert report.expected_plus == mode.mu
    assert report.slope_plus > 0.0
    assert abs(mode.v[0]) > 1e2 * abs(regular_modes[k].v[0])


@pytest.mark.parametrize("k", [0, 1, 2])
def test_wronskian_is_constant(linearized, k):
    report = linearized.wronskian_report(3, k)
    assert report.mean != 0.0
    assert report.relative_variation < 1e-6


def test_higher_dimension_mode(linearized):
    mode = linearized.solve_mode(5, 2, "regular")
    assert mode.mu == 3.5
    assert mode.ell == 10
    report = linearized.log_coordinate_check(mode)
    assert report.slope_plus == pytest.approx(3.5, rel=1e-2)


def test_threaded_modes_match_serial(linearized):
    requests = [(3, k, Branch.REGULAR) for k in HIGHER_DEGREES]
    serial = linearized.solve_modes(requests)
    threaded = LinearizedService(threads=3).solve_modes(requests)
    for a, b in zip(serial, threaded):
        np.testing.assert_array_equal(a.v, b.v)


@pytest.mark.parametrize("N, k, r_max", [(2, 0, 1e3), (3, -1, 1e3), (3, 0, 10.0)])
def test_invalid_parameters(linearized, N, k, r_max):
    with pytest.raises(InvalidParameterError):
        linearized.solve_mode(N, k, Branch.REGULAR, r_max)


def test_liouville_certificate_at_non_integer_exponent(linearized):
    certificate = linearized.liouville_certificate(3, 2.5, range(0, 5))
    assert certificate.only_trivial
    by_degree = {v.k: v for v in certificate.verdicts}
    # low degrees fail the bound at the origin, high degrees at infinity
    assert "at 0" in by_degree[2].reason
    assert "infinity" in by_degree[3].reason
    assert by_degree[4].infinity_exponent == pytest.approx(4.0, rel=1e-2)


def test_liouville_integer_exponent_has_counterexample(linearized):
    with pytest.raises(IntegerExponentError) as excinfo:
        linearized.liouville_certificate(3, 2.0, range(0, 4))
    assert "degree-2" in str(excinfo.value)


def test_liouville_exponent_must_exceed_one(linearized):
    with pytest.raises(InvalidParameterError):
        linearized.liouville_certificate(3, 0.5, range(0, 3))

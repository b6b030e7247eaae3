from __future__ import annotations

import math

import numpy as np
import pytest

from blowup_lab.models.domain import Ball, Box, DomainSpec, PotentialSpec
from blowup_lab.service import oracles
from blowup_lab.service.green_service import (
    GeometryError,
    GreenService,
    NearSingularityError,
    NotCoerciveError,
    hk_recursion_check,
    hk_series_partial_sum,
    hk_term,
)

ZERO = PotentialSpec.const(0.0)
HELMHOLTZ = PotentialSpec.const(-4.0)
OFF_CENTER = np.array([0.3, 0.0, 0.0])
GRID_TOL = 5e-3


@pytest.fixture(scope="module")
def green() -> GreenService:
    return GreenService()


@pytest.fixture(scope="module")
def off_center_field(green, unit_ball):
    return green.solve_green(unit_ball, ZERO, OFF_CENTER)


def test_robin_at_center_matches_images(green, unit_ball):
    value = green.robin_function(unit_ball, ZERO, (0.0, 0.0, 0.0))
    assert value == pytest.approx(1.0 / (4.0 * math.pi), abs=GRID_TOL)


def test_regular_part_is_constant_for_centred_source(green, unit_ball):
    # boundary data 1/(4 pi) and a = 0: H is the constant 1/(4 pi) on every node
    field = green.solve_green(unit_ball, ZERO, (0.0, 0.0, 0.0))
    interior = field.grid.interior
    np.testing.assert_allclose(field.regular_part[interior], 1.0 / (4.0 * math.pi), atol=1e-6)
    assert field.robin_value == pytest.approx(1.0 / (4.0 * math.pi), abs=1e-6)


def test_robin_at_center_matches_helmholtz(green, unit_ball):
    value = green.robin_function(unit_ball, HELMHOLTZ, (0.0, 0.0, 0.0))
    assert value == pytest.approx(oracles.radial_robin(-4.0), abs=GRID_TOL)


def test_off_center_values_match_images(green, off_center_field):
    for x in ([-0.2, 0.2, 0.1], [0.0, -0.4, 0.3], [0.6, 0.1, 0.0]):
        x = np.asarray(x)
        assert green.green_value(off_center_field, x) == pytest.approx(
            oracles.images_green(x, OFF_CENTER), abs=GRID_TOL
        )
    assert off_center_field.robin_value == pytest.approx(oracles.images_robin(OFF_CENTER), abs=GRID_TOL)


def test_green_is_symmetric(green, unit_ball, off_center_field):
    x = np.array([-0.2, 0.25, 0.1])
    other = green.solve_green(unit_ball, ZERO, x)
    assert green.green_value(off_center_field, x) == pytest.approx(
        green.green_value(other, OFF_CENTER), abs=GRID_TOL
    )


def test_green_is_positive_and_zero_outside(green, off_center_field):
    values = off_center_field.values
    interior = off_center_field.grid.interior
    finite = np.isfinite(values)
    assert np.min(values[interior & finite]) > 0.0
    assert np.all(values[~interior] == 0.0)
    assert green.green_value(off_center_field, np.array([1.5, 0.0, 0.0])) == 0.0


def test_green_decreases_as_potential_grows(green, unit_ball):
    y = np.array([0.2, -0.1, 0.0])
    fields = [green.solve_green(unit_ball, PotentialSpec.const(c), y) for c in (-4.0, 0.0, 4.0)]
    interior = fields[0].grid.interior & np.isfinite(fields[0].values)
    for lower, higher in zip(fields, fields[1:]):
        assert np.all(lower.values[interior] >= higher.values[interior] - 1e-10)
        assert lower.robin_value < higher.robin_value


@pytest.mark.slow
def test_green_is_symmetric_on_random_pairs():
    dom = DomainSpec(shape=Ball(), resolution=64)
    service = GreenService()
    rng = np.random.default_rng(7)
    pairs = []
    while len(pairs) < 20:
        x, y = rng.uniform(-0.6, 0.6, size=(2, 3))
        if max(np.linalg.norm(x), np.linalg.norm(y)) < 0.6 and np.linalg.norm(x - y) > 0.2:
            pairs.append((x, y))
    for x, y in pairs:
        forward = service.green_value(service.solve_green(dom, ZERO, y), x)
        backward = service.green_value(service.solve_green(dom, ZERO, x), y)
        assert abs(forward - backward) / forward < 5e-3


def test_green_value_is_singular_at_source(green, off_center_field):
    with pytest.raises(NearSingularityError):
        green.green_value(off_center_field, OFF_CENTER)


def test_robin_gradient_matches_images(green, unit_ball):
    y = np.array([0.2, -0.1, 0.15])
    np.testing.assert_allclose(
        green.robin_gradient(unit_ball, ZERO, y), oracles.images_robin_gradient(y), rtol=5e-2, atol=5e-3
    )


def test_green_gradient_matches_images(green, off_center_field):
    x = np.array([-0.1, 0.3, 0.1])
    np.testing.assert_allclose(
        green.green_gradient_x(off_center_field, x),
        oracles.images_green_gradient_x(x, OFF_CENTER),
        rtol=5e-2,
        atol=5e-3,
    )


def test_green_gradient_refuses_points_near_source(green, off_center_field):
    with pytest.raises(NearSingularityError):
        green.green_gradient_x(off_center_field, OFF_CENTER + np.array([0.05, 0.0, 0.0]))


def test_source_near_boundary_is_rejected(green, unit_ball):
    with pytest.raises(GeometryError):
        green.solve_green(unit_ball, ZERO, (0.95, 0.0, 0.0))


def test_non_coercive_potential_is_rejected(green, unit_ball):
    # the first Dirichlet eigenvalue of the unit ball is pi^2
    with pytest.raises(NotCoerciveError) as excinfo:
        green.solve_green(unit_ball, PotentialSpec.const(-12.0), (0.0, 0.0, 0.0))
    assert excinfo.value.smallest_eigenvalue < 0.0


def test_coercivity_estimate_tracks_first_eigenvalue(green, unit_ball):
    report = green.check_coercivity(unit_ball, HELMHOLTZ)
    assert report.coercive
    assert report.smallest_eigenvalue == pytest.approx(math.pi**2 - 4.0, rel=5e-2)


def test_fields_are_cached(green, unit_ball, off_center_field):
    assert green.solve_green(unit_ball, ZERO, OFF_CENTER) is off_center_field


def test_threaded_solves_match_serial(unit_ball):
    sources = [(0.1, 0.0, 0.0), (-0.2, 0.1, 0.0), (0.0, 0.0, 0.3)]
    serial = [f.robin_value for f in GreenService(threads=1).solve_many(unit_ball, HELMHOLTZ, sources)]
    threaded = [f.robin_value for f in GreenService(threads=3).solve_many(unit_ball, HELMHOLTZ, sources)]
    np.testing.assert_allclose(threaded, serial, rtol=1e-12)


def test_box_domain_solve():
    box = DomainSpec(shape=Box(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)), resolution=24)
    service = GreenService()
    centre = service.robin_function(box, ZERO, (0.5, 0.5, 0.5))
    corner = service.robin_function(box, ZERO, (0.3, 0.3, 0.3))
    assert centre > 0.0
    # phi blows up towards the boundary
    assert corner > centre


def test_robin_map_marks_inadmissible_probes(green, unit_ball):
    probes, values = green.robin_map(unit_ball, ZERO, probe_resolution=5)
    assert probes.shape == (125, 3)
    centre = int(np.argmin(np.linalg.norm(probes, axis=1)))
    assert values[centre] == pytest.approx(1.0 / (4.0 * math.pi), abs=GRID_TOL)
    assert np.isnan(values[0])


def test_local_expansion_of_regular_part(green, unit_ball):
    report = green.ha_local_expansion_check(
        unit_ball, PotentialSpec.const(-1.0), (0.0, 0.0, 0.0), with_gradient=False
    )
    assert report.c0 == pytest.approx(report.expected_c0, abs=1e-3)
    assert report.c0 == pytest.approx(-oracles.radial_robin(-1.0), abs=GRID_TOL)
    assert report.expected_c2 == pytest.approx(-1.0 / (8.0 * math.pi))
    assert report.c2 == pytest.approx(report.expected_c2, abs=5e-3)
    np.testing.assert_allclose(report.c1, 0.0, atol=1e-3)


def test_gradient_follows_local_model(green, unit_ball):
    # the neglected term is O(|x - y|), about 3e-2 at this distance
    numerical, model = green.gradient_expansion_check(unit_ball, HELMHOLTZ, (0.0, 0.0, 0.0), (0.3, 0.0, 0.0))
    np.testing.assert_allclose(numerical, model, atol=5e-2)
    assert abs(numerical[1]) < 1e-2


def test_local_expansion_needs_smooth_potential(green, unit_ball):
    samples = np.zeros((unit_ball.resolution,) * 3)
    with pytest.raises(ValueError):
        green.ha_local_expansion_check(unit_ball, PotentialSpec.grid(samples), (0.0, 0.0, 0.0))


def test_hk_recursion():
    report = hk_recursion_check(-4.0, 4)
    assert report.max_relative_error < 1e-4
    assert report.h0_laplacian_sign == -1
    assert len(report.per_degree) == 4


def test_hk_partial_sum():
    x, y = np.array([0.3, 0.0, 0.0]), np.zeros(3)
    expected = sum(float(hk_term(2.0, 0.3, k)) for k in range(3))
    assert hk_series_partial_sum(2.0, x, y, 2) == pytest.approx(expected, rel=1e-14)
    with pytest.raises(ValueError):
        hk_series_partial_sum(2.0, x, y, -1)


def test_series_remainder_is_finite_inside(green, unit_ball):
    field = green.solve_green(unit_ball, HELMHOLTZ, (0.0, 0.0, 0.0))
    eta = green.series_remainder(field, -4.0, 3)
    interior = field.grid.interior
    assert np.all(np.isfinite(eta[interior]))
    assert np.all(np.isnan(eta[~interior]))


def test_green_square_integral_at_center(green, unit_ball):
    field = green.solve_green(unit_ball, ZERO, (0.0, 0.0, 0.0))
    assert oracles.radial_green_square_integral(0.0) == pytest.approx(1.0 / (12.0 * math.pi), rel=1e-10)
    assert green.green_square_integral(field, PotentialSpec.const(1.0)) == pytest.approx(
        1.0 / (12.0 * math.pi), rel=1e-2
    )


def test_resolvent_slope_matches_square_integral(green, unit_ball):
    report = green.resolvent_perturbation_check(unit_ball, ZERO, PotentialSpec.const(1.0), (0.0, 0.0, 0.0))
    assert report.integral > 0.0
    assert report.relative_discrepancy < 5e-2


def test_resolvent_slope_vanishes_without_perturbation(green, unit_ball):
    report = green.resolvent_perturbation_check(unit_ball, ZERO, ZERO, (0.1, 0.0, 0.0))
    assert report.slopes == (0.0, 0.0)
    assert report.integral == 0.0
    assert report.relative_discrepancy == 0.0


@pytest.mark.slow
def test_convergence_order_at_center():
    dom = DomainSpec(shape=Ball(), resolution=64)
    report = GreenService().convergence_study(dom, ZERO, (0.0, 0.0, 0.0), 1.0 / (4.0 * math.pi))
    assert report.errors[-1] < 2e-3
    assert report.observed_order >= 1.8

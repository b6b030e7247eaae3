"""Identity suite run by the Verify task.

Every check is named `<module>.<what>` and yields CheckResult rows. The grid checks run
on the unit ball at the resolution of the problem's domain, so their tolerances scale with
h^2 from the values that hold at 64^3.
"""

from __future__ import annotations

import logging
import math
from dataclasses import replace
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

from blowup_lab.cli.dependencies import Services
from blowup_lab.config import settings
from blowup_lab.models.domain import Ball, DomainSpec, PotentialSpec
from blowup_lab.models.interaction import BubbleConfiguration, ConfigurationResult
from blowup_lab.models.linearized import Branch
from blowup_lab.models.problem import CheckResult
from blowup_lab.models.profiles import BubbleParams
from blowup_lab.models.prediction import BlowupPrediction, RateKind
from blowup_lab.numerics.errors import NumericalError
from blowup_lab.numerics.grid import Grid
from blowup_lab.service import oracles
from blowup_lab.service.green_service import hk_recursion_check
from blowup_lab.service.interaction_service import positive_semidefinite_check, spectrum_from_matrix
from blowup_lab.service.linearized_service import exact_residual
from blowup_lab.service.predictor_service import PROFILE_SCALE, RATE_SCALE
from blowup_lab.service.profile_service import (
    beta_constants,
    bubble,
    correction_residual,
    correction_w,
    homogeneous_residual,
)

logger = logging.getLogger(__name__)

HELMHOLTZ_LAMBDA = 4.0
PAIR_OFFSET = 0.3
PERRON_TRIALS = 50
PERRON_COUNTS = (2, 3, 4)
PERRON_POTENTIALS = (0.0, -1.0)
HF_TRIALS = 10


def _check(
    name: str,
    module: str,
    value: float,
    expected: float,
    tolerance: float,
    relative: bool = False,
    detail: str = "",
) -> CheckResult:
    scale = abs(expected) if relative and expected != 0.0 else 1.0
    passed = bool(np.isfinite(value)) and abs(value - expected) <= tolerance * scale
    return CheckResult(
        name=name,
        module=module,
        value=float(value) if np.isfinite(value) else None,
        expected=float(expected),
        tolerance=float(tolerance),
        passed=passed,
        detail=detail,
    )


def _flag(name: str, module: str, ok: bool, detail: str = "") -> CheckResult:
    return CheckResult(
        name=name, module=module, value=float(ok), expected=1.0, tolerance=0.0, passed=bool(ok), detail=detail
    )


class VerificationSuite:

    def __init__(self, services: Services, resolution: int):
        self.services = services
        self.dom = DomainSpec(shape=Ball(), resolution=resolution)
        self._checks: dict[str, Callable[[], list[CheckResult]]] = {
            "profiles.closed_form_constants": self.profile_constants,
            "profiles.beta_constants": self.profile_beta,
            "profiles.ode_residuals": self.profile_residuals,
            "profiles.w_asymptote": self.profile_asymptote,
            "profiles.bubble_laplacian": self.profile_laplacian,
            "green.robin_center": self.green_robin_center,
            "green.helmholtz_center": self.green_helmholtz,
            "green.images_off_center": self.green_images,
            "green.hk_recursion": self.green_recursion,
            "green.coercivity": self.green_coercivity,
            "interaction.pair_images": self.interaction_pair,
            "interaction.perron": self.interaction_perron,
            "interaction.hellmann_feynman": self.interaction_hellmann_feynman,
            "interaction.positive_semidefinite": self.interaction_psd,
            "linearized.exact_modes": self.linearized_exact,
            "linearized.growth": self.linearized_growth,
            "linearized.log_slopes": self.linearized_slopes,
            "linearized.wronskian": self.linearized_wronskian,
            "linearized.liouville": self.linearized_liouville,
            "predictor.rate_identity": self.predictor_rate_identity,
            "predictor.qv_center": self.predictor_qv_center,
            "predictor.threshold": self.predictor_threshold,
            "predictor.single_bubble": self.predictor_single_bubble,
            "predictor.square_integral_paths": self.predictor_square_integral_paths,
            "predictor.expansion": self.predictor_expansion,
        }

    @property
    def names(self) -> list[str]:
        return list(self._checks)

    def _tolerance(self, at_64: float) -> float:
        return at_64 * max(1.0, (63.0 / (self.dom.resolution - 1)) ** 2)

    def run(self, names: Iterable[str] | None = None) -> list[CheckResult]:
        selected = self.names if names is None else list(names)
        unknown = [n for n in selected if n not in self._checks]
        if unknown:
            raise KeyError(f"Unknown checks: {', '.join(unknown)}")
        results: list[CheckResult] = []
        for name in selected:
            module = name.split(".", 1)[0]
            try:
                rows = self._checks[name]()
            except NumericalError as e:
                rows = [_flag(name, module, False, detail=f"{type(e).__name__}: {e}")]
            for row in rows:
                logger.info("check %s: %s", row.name, "pass" if row.passed else "FAIL")
            results.extend(rows)
        return results

    # ---------- profiles ----------

    def profile_constants(self) -> list[CheckResult]:
        return [
            _check(f"profiles.{key}", "profiles", value, exact, 1e-8, relative=True)
            for key, (value, exact) in self.services.profiles.closed_form_constants().items()
        ]

    def profile_beta(self) -> list[CheckResult]:
        return [
            _check(f"profiles.beta.{key}", "profiles", value, exact, 1e-12, relative=True)
            for key, (value, exact) in beta_constants().items()
        ]

    def profile_residuals(self) -> list[CheckResult]:
        r = np.geomspace(1e-3, 1e3, 400)
        w_res = float(np.max(np.abs(correction_residual(r)) / (1.0 + bubble(r))))
        v_res = float(np.max(np.abs(homogeneous_residual(r))))
        return [
            _check("profiles.correction_residual", "profiles", w_res, 0.0, 1e-7),
            _check("profiles.homogeneous_residual", "profiles", v_res, 0.0, 1e-8),
        ]

    def profile_asymptote(self) -> list[CheckResult]:
        # the remainder decays like log(R)/R; at R = 1e3 it is still about 0.23
        R = 1e5
        value = float(correction_w(R)[0]) - (math.sqrt(3.0) / 2.0 * R - 3.0 * math.pi)
        return [_check("profiles.w_asymptote", "profiles", value, 0.0, 1e-2)]

    def profile_laplacian(self) -> list[CheckResult]:
        points = np.random.default_rng(0).uniform(-1.0, 1.0, size=(8, 3))
        worst = float(np.max(self.services.profiles.bubble_laplacian_residual(BubbleParams(mu=1.0), points)))
        return [_check("profiles.bubble_laplacian", "profiles", worst, 0.0, 1e-6)]

    # ---------- green ----------

    def green_robin_center(self) -> list[CheckResult]:
        value = self.services.green.robin_function(self.dom, PotentialSpec.const(0.0), (0.0, 0.0, 0.0))
        return [_check("green.robin_center", "green", value, 1.0 / (4.0 * math.pi), self._tolerance(2e-3))]

    def green_helmholtz(self) -> list[CheckResult]:
        a = -HELMHOLTZ_LAMBDA
        value = self.services.green.robin_function(self.dom, PotentialSpec.const(a), (0.0, 0.0, 0.0))
        return [_check("green.helmholtz_center", "green", value, oracles.radial_robin(a), self._tolerance(2e-3))]

    def green_images(self) -> list[CheckResult]:
        y = np.array([PAIR_OFFSET, 0.0, 0.0])
        x = np.array([-0.2, 0.2, 0.1])
        green = self.services.green
        field = green.solve_green(self.dom, PotentialSpec.const(0.0), y)
        return [
            _check("green.images_value", "green", green.green_value(field, x),
                   oracles.images_green(x, y), self._tolerance(2e-3)),
            _check("green.images_robin", "green", field.robin_value,
                   oracles.images_robin(y), self._tolerance(2e-3)),
        ]

    def green_recursion(self) -> list[CheckResult]:
        report = hk_recursion_check(-HELMHOLTZ_LAMBDA, 4)
        return [
            _check("green.hk_recursion", "green", report.max_relative_error, 0.0, 1e-4),
            _check("green.h0_laplacian_sign", "green", float(report.h0_laplacian_sign), -1.0, 0.0),
        ]

    def green_coercivity(self) -> list[CheckResult]:
        report = self.services.green.check_coercivity(self.dom, PotentialSpec.const(-HELMHOLTZ_LAMBDA))
        return [
            _check("green.smallest_eigenvalue", "green", report.smallest_eigenvalue,
                   math.pi**2 - HELMHOLTZ_LAMBDA, 5e-2, relative=True)
        ]

    # ---------- interaction ----------

    def _pair(self) -> BubbleConfiguration:
        return BubbleConfiguration(points=np.array([[PAIR_OFFSET, 0.0, 0.0], [-PAIR_OFFSET, 0.0, 0.0]]))

    def interaction_pair(self) -> list[CheckResult]:
        config = self._pair()
        spectrum = self.services.interaction.build_matrix(self.dom, PotentialSpec.const(0.0), config)
        p, q = config.points
        expected = oracles.images_robin(p) - oracles.images_green(p, q)
        return [_check("interaction.pair_rho", "interaction", spectrum.rho, expected, self._tolerance(2e-3))]

    def interaction_perron(self) -> list[CheckResult]:
        rng = np.random.default_rng(1)
        grid = Grid.from_domain(self.dom)
        need = 2.0 * 4.0 * float(np.max(grid.h))
        passed, tried = 0, 0
        while tried < PERRON_TRIALS:
            n = PERRON_COUNTS[tried % len(PERRON_COUNTS)]
            a = PotentialSpec.const(PERRON_POTENTIALS[tried % len(PERRON_POTENTIALS)])
            points = rng.uniform(-0.45, 0.45, size=(n, 3))
            config = BubbleConfiguration(points=points)
            if config.min_separation <= need:
                continue
            tried += 1
            spectrum = self.services.interaction.build_matrix(self.dom, a, config)
            positive = bool(np.all(spectrum.perron_unit > 0.0))
            mixed = all(
                np.any(spectrum.eigenvectors[:, j] > 0.0) and np.any(spectrum.eigenvectors[:, j] < 0.0)
                for j in range(1, config.n)
            )
            passed += positive and mixed
        return [_check("interaction.perron", "interaction", float(passed), float(tried), 0.0)]

    def interaction_hellmann_feynman(self) -> list[CheckResult]:
        interaction = self.services.interaction
        a = PotentialSpec.const(-1.0)
        rng = np.random.default_rng(5)
        worst, tried = 0.0, 0
        while tried < HF_TRIALS:
            points = rng.uniform(-0.5, 0.5, size=(2, 3))
            config = BubbleConfiguration(points=points)
            if np.max(np.linalg.norm(points, axis=1)) > 0.5 or config.min_separation < 0.4:
                continue
            spectrum = interaction.build_matrix(self.dom, a, config, with_gradient=True)
            if spectrum.spectral_gap <= 1e-3:
                continue
            tried += 1
            fd = interaction.rho_difference_gradient(self.dom, a, config)
            worst = max(worst, float(np.max(np.abs(spectrum.gradient - fd) / (1.0 + np.abs(fd)))))
        return [_check("interaction.hellmann_feynman", "interaction", worst, 0.0, 1e-4,
                       detail=f"{HF_TRIALS} pairs, Richardson differences of rho")]

    def interaction_psd(self) -> list[CheckResult]:
        spectrum = self.services.interaction.build_matrix(self.dom, PotentialSpec.const(0.0), self._pair())
        identity = spectrum_from_matrix(np.array([[2.0, -1.0], [-1.0, 3.0]]))
        return [
            _flag("interaction.psd_zero_potential", "interaction", positive_semidefinite_check(spectrum)),
            _check("interaction.perron_normalization", "interaction", float(identity.perron[0]), 1.0, 1e-14),
        ]

    # ---------- linearized ----------

    def linearized_exact(self) -> list[CheckResult]:
        r = np.geomspace(1e-3, 1e3, 400)
        worst = max(exact_residual(N, k, r) for N in range(3, 7) for k in (0, 1))
        return [_check("linearized.exact_modes", "linearized", worst, 0.0, 1e-9)]

    def linearized_growth(self) -> list[CheckResult]:
        linearized = self.services.linearized
        modes = linearized.solve_modes([(3, k, Branch.REGULAR) for k in (2, 3, 4)])
        out = []
        for mode in modes:
            report = linearized.growth_report(mode)
            out.append(
                CheckResult(
                    name=f"linearized.growth_k{mode.k}",
                    module="linearized",
                    value=report.ratio if np.isfinite(report.ratio) else None,
                    expected=None,
                    tolerance=settings.GROWTH_RATIO_BOUND,
                    passed=bool(report.ratio < settings.GROWTH_RATIO_BOUND and report.sign_changes == 0),
                    detail=f"c-={report.c_minus:.4g}, c+={report.c_plus:.4g}",
                )
            )
        return out

    def linearized_slopes(self) -> list[CheckResult]:
        linearized = self.services.linearized
        out = []
        for mode in linearized.solve_modes([(3, k, Branch.REGULAR) for k in (2, 3, 4)]):
            report = linearized.log_coordinate_check(mode)
            out.append(_check(f"linearized.slope_origin_k{mode.k}", "linearized",
                              report.slope_minus, report.expected_minus, 1e-2, relative=True))
            out.append(_check(f"linearized.slope_infinity_k{mode.k}", "linearized",
                              report.slope_plus, report.expected_plus, 1e-2, relative=True))
        return out

    def linearized_wronskian(self) -> list[CheckResult]:
        linearized = self.services.linearized
        return [
            _check(f"linearized.wronskian_k{k}", "linearized",
                   linearized.wronskian_report(3, k).relative_variation, 0.0, 1e-6)
            for k in (0, 1, 2)
        ]

    def linearized_liouville(self) -> list[CheckResult]:
        certificate = self.services.linearized.liouville_certificate(3, 2.5, range(0, 5))
        return [_flag("linearized.liouville", "linearized", certificate.only_trivial)]

    # ---------- predictor ----------

    def predictor_rate_identity(self) -> list[CheckResult]:
        # n = 1: RATE_SCALE / PROFILE_SCALE^2 is the single-bubble constant
        value = RATE_SCALE / PROFILE_SCALE**2
        return [_check("predictor.rate_identity", "predictor", value, math.sqrt(3.0) / 4.0, 1e-10, relative=True)]

    def predictor_qv_center(self) -> list[CheckResult]:
        config = BubbleConfiguration(points=np.zeros((1, 3)), weights=np.ones(1))
        value = self.services.predictor.qv_functional(
            self.dom, PotentialSpec.const(0.0), PotentialSpec.const(1.0), config, (0.0, 0.0, 0.0)
        )
        return [_check("predictor.qv_center", "predictor", value, math.sqrt(3.0) / 3.0,
                       self._tolerance(5e-3), relative=True)]

    @cached_property
    def _threshold(self) -> ConfigurationResult:
        init = BubbleConfiguration(points=np.array([[0.05, 0.02, 0.0]]))
        return self.services.interaction.find_blowup_configuration(
            self.dom, PotentialSpec.const(-1.0), 1, init, tau0=2.0
        )

    @cached_property
    def _prediction(self) -> BlowupPrediction:
        result = self._threshold
        return self.services.predictor.blowup_rate(
            self.dom, PotentialSpec.const(-result.tau), PotentialSpec.const(-1.0), result
        )

    def predictor_threshold(self) -> list[CheckResult]:
        result = self._threshold
        offset = float(np.linalg.norm(result.config.points[0]))
        return [
            _check("predictor.threshold_tau", "predictor", result.tau, math.pi**2 / 4.0,
                   self._tolerance(1e-3), relative=True),
            _check("predictor.threshold_point", "predictor", offset, 0.0, 1e-3),
            _flag("predictor.threshold_certified", "predictor", result.certified),
        ]

    def predictor_single_bubble(self) -> list[CheckResult]:
        prediction = self._prediction
        rate = prediction.rates[0]
        single = prediction.single_bubble
        if rate.kind is not RateKind.FINITE or single is None or single.kind is not RateKind.FINITE:
            return [_flag("predictor.single_bubble", "predictor", False, detail="rate is not finite")]
        return [
            _check("predictor.single_bubble", "predictor", abs(rate.value), single.value, 1e-10, relative=True),
        ]

    def predictor_square_integral_paths(self) -> list[CheckResult]:
        # at n = 1 both paths are the same expression; a pair tells them apart
        a = PotentialSpec.const(-1.0)
        interaction = self.services.interaction
        config = BubbleConfiguration(points=np.array([[0.3, 0.0, 0.0], [-0.2, 0.1, 0.0]]))
        spectrum = interaction.build_matrix(self.dom, a, config)
        weighted = interaction.annotate(self.dom, a, replace(config, weights=spectrum.perron))
        direct, identity = self.services.predictor.square_integral_paths(
            self.dom, a, PotentialSpec.const(1.0), weighted
        )
        return [_check("predictor.square_integral_paths", "predictor", direct, identity,
                       self._tolerance(1e-3), relative=True)]

    def predictor_expansion(self) -> list[CheckResult]:
        prediction = self._prediction
        sweep = self.services.predictor.expansion_sweep(
            self.dom, PotentialSpec.const(-self._threshold.tau), PotentialSpec.const(-1.0), prediction
        )
        ratios = ", ".join(f"{row.eps:g}: {row.ratio:.3e}" for row in sweep.rows)
        detail = f"{ratios}; ratio test {list(sweep.ratio_passed)}, below floor {list(sweep.below_floor)}"
        return [_flag("predictor.expansion_sweep", "predictor", sweep.passed, detail=detail)]


def describe(results: Sequence[CheckResult]) -> str:
    passed = sum(r.passed for r in results)
    return f"{passed}/{len(results)} checks passed"

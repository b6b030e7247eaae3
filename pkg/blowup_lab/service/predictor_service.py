from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from blowup_lab.config import settings
from blowup_lab.models.domain import DomainSpec, PotentialSpec
from blowup_lab.models.interaction import BubbleConfiguration, ConfigurationResult
from blowup_lab.models.prediction import (
    BlowupPrediction,
    ExpansionSweep,
    LimitProfile,
    RateKind,
    RateValue,
    SweepRow,
)
from blowup_lab.numerics.errors import NumericalError
from blowup_lab.numerics.singular import node_sum_correction, punctured_mask
from blowup_lab.service.green_service import FOUR_PI, GreenService
from blowup_lab.service.interaction_service import InteractionService

logger = logging.getLogger(__name__)

PROFILE_SCALE = 4.0 * math.pi * math.sqrt(3.0)
RATE_SCALE = 12.0 * math.pi**2 * math.sqrt(3.0)


class CertificationError(NumericalError):
    def __init__(self, message: str, rho_residual: float, gradient_residual: float):
        super().__init__(message)
        self.rho_residual = rho_residual
        self.gradient_residual = gradient_residual


class InvalidScalingError(ValueError):
    pass


def _weights(config: BubbleConfiguration) -> np.ndarray:
    if config.weights is None:
        raise ValueError("The configuration carries no Perron weights.")
    return np.asarray(config.weights, dtype=float)


class PredictorService:

    def __init__(self, green_service: GreenService, interaction_service: InteractionService):
        self.green = green_service
        self.interaction = interaction_service

    def limit_profile(self, dom: DomainSpec, a: PotentialSpec, config: BubbleConfiguration) -> LimitProfile:
        lam = _weights(config)
        fields = self.green.solve_many(dom, a, config.points)
        coefficients = PROFILE_SCALE * lam
        with np.errstate(invalid="ignore"):
            values = sum(c * f.values for c, f in zip(coefficients, fields))
        return LimitProfile(
            grid=fields[0].grid,
            values=values,
            coefficients=coefficients,
            points=np.asarray(config.points, dtype=float),
        )

    def qv_functional(
        self, dom: DomainSpec, a: PotentialSpec, V: PotentialSpec, config: BubbleConfiguration, y: Sequence[float]
    ) -> float:
        """Q_V(y) = int V G_a(., y) times the limit profile, for y one of the configuration points."""
        lam = _weights(config)
        y = np.asarray(y, dtype=float)
        points = np.asarray(config.points, dtype=float)
        distances = np.linalg.norm(points - y, axis=1)
        i = int(np.argmin(distances))
        if distances[i] > settings.POINT_ROUNDING:
            raise ValueError(f"Q_V is evaluated at configuration points only; {tuple(y)} is not one.")
        fields = self.green.solve_many(dom, a, points)
        total = lam[i] * self.green.green_square_integral(fields[i], V)
        for j, field in enumerate(fields):
            if j != i:
                total += lam[j] * self.green.green_product_integral(fields[i], field, V)
        return PROFILE_SCALE * total

    def _qv_values(self, dom: DomainSpec, a: PotentialSpec, V: PotentialSpec, config: BubbleConfiguration) -> np.ndarray:
        points = np.asarray(config.points, dtype=float)
        if self.green.threads > 1 and len(points) > 1:
            with ThreadPoolExecutor(max_workers=self.green.threads) as pool:
                return np.array(list(pool.map(lambda p: self.qv_functional(dom, a, V, config, p), points)))
        return np.array([self.qv_functional(dom, a, V, config, p) for p in points])

    def profile_square_integral(
        self, dom: DomainSpec, a: PotentialSpec, V: PotentialSpec, config: BubbleConfiguration
    ) -> float:
        """int V (limit profile)^2 by a node sum over the profile field.

        Near each x_i the profile is c_i/(4 pi r) + s_i; s_i is read off the field by
        interpolating profile - c_i/(4 pi r) at x_i.
        """
        profile = self.limit_profile(dom, a, config)
        grid = profile.grid
        v_nodes = grid.potential_on_nodes(V)
        mask = grid.interior.copy()
        for p in profile.points:
            mask &= punctured_mask(grid, p)
        with np.errstate(invalid="ignore", over="ignore"):
            body = float(np.sum(np.where(mask, v_nodes * profile.values**2, 0.0))) * grid.cell_volume

        fields = self.green.solve_many(dom, a, profile.points)
        correction = 0.0
        for i, p in enumerate(profile.points):
            v_i = float(grid.potential_at(V, p)[0])
            if v_i == 0.0:
                continue
            c_i = profile.coefficients[i]
            smooth = -c_i * fields[i].robin_value + sum(
                profile.coefficients[j] * self.green.green_value(fields[j], p)
                for j in range(len(fields)) if j != i
            )
            correction += v_i * (
                c_i**2 * node_sum_correction(grid, p, 2.0) / FOUR_PI**2
                + 2.0 * c_i * smooth * node_sum_correction(grid, p, 1.0) / FOUR_PI
            )
        return body + correction

    def square_integral_paths(
        self,
        dom: DomainSpec,
        a: PotentialSpec,
        V: PotentialSpec,
        config: BubbleConfiguration,
        qv: np.ndarray | None = None,
    ) -> tuple[float, float]:
        """int V (limit profile)^2 as a node sum of the squared profile and as 4 pi sqrt(3) sum_i L_i Q_V(x_i)."""
        lam = _weights(config)
        if qv is None:
            qv = self._qv_values(dom, a, V, config)
        direct = self.profile_square_integral(dom, a, V, config)
        return direct, float(PROFILE_SCALE * np.sum(lam * qv))

    def single_bubble_rate(self, dom: DomainSpec, a: PotentialSpec, V: PotentialSpec, x0: Sequence[float]) -> RateValue:
        """sqrt(3)/4 |a(x0)| / |int V G_a(x0, .)^2|, with the absolute values of the one-bubble formula."""
        x0 = np.asarray(x0, dtype=float)
        field = self.green.solve_green(dom, a, x0)
        integral = self.green.green_square_integral(field, V)
        a0 = float(field.grid.potential_at(a, x0)[0])
        return self._classify(abs(a0), abs(integral), math.sqrt(3.0) / 4.0)

    @staticmethod
    def _classify(numerator: float, denominator: float, factor: float) -> RateValue:
        num_zero = abs(numerator) <= settings.RATE_ZERO_TOL
        den_zero = abs(denominator) <= settings.RATE_ZERO_TOL
        if num_zero and den_zero:
            return RateValue(RateKind.INDETERMINATE)
        if den_zero:
            return RateValue(RateKind.INFINITE)
        if num_zero:
            return RateValue(RateKind.ZERO, 0.0)
        return RateValue.finite(factor * numerator / denominator)

    def blowup_rate(
        self, dom: DomainSpec, a: PotentialSpec, V: PotentialSpec, result: ConfigurationResult
    ) -> BlowupPrediction:
        """Per-point limits of eps u_eps(x_i)^2 at a certified configuration."""
        if not result.certified:
            raise CertificationError(
                f"Configuration is not certified (|rho|={result.rho_residual:.3e}, "
                f"|grad rho|={result.gradient_residual:.3e}).",
                rho_residual=result.rho_residual,
                gradient_residual=result.gradient_residual,
            )
        config = result.config
        if config.weights is None:
            config = self.interaction.annotate(dom, a, BubbleConfiguration(points=config.points, weights=result.spectrum.perron))
        lam = _weights(config)
        grid_a = np.asarray(
            config.a_values if config.a_values is not None
            else self.interaction.annotate(dom, a, config).a_values,
            dtype=float,
        )

        qv = self._qv_values(dom, a, V, config)
        numerator = float(np.sum(grid_a * lam**4))
        denominator, identity = self.square_integral_paths(dom, a, V, config, qv=qv)

        base = self._classify(numerator, denominator, RATE_SCALE)
        diagnostic = ""
        if base.kind is RateKind.FINITE:
            rates = tuple(RateValue.finite(base.value / l**2) for l in lam)
        else:
            rates = tuple(base for _ in lam)
            if base.kind is RateKind.INDETERMINATE:
                diagnostic = (
                    f"numerator {numerator:.3e} and denominator {denominator:.3e} both vanish "
                    f"within {settings.RATE_ZERO_TOL:g}"
                )
        sign_consistent = base.kind is not RateKind.FINITE or numerator * denominator > 0.0
        if not sign_consistent:
            logger.warning("numerator and denominator have opposite signs; the signed rate is negative")

        single = None
        if config.n == 1:
            single = self.single_bubble_rate(dom, a, V, config.points[0])
        prediction = BlowupPrediction(
            config=config,
            limit_profile_coefficients=PROFILE_SCALE * lam,
            qv_values=qv,
            numerator=numerator,
            denominator=denominator,
            denominator_identity=identity,
            rates=rates,
            sign_consistent=sign_consistent,
            single_bubble=single,
            diagnostic=diagnostic,
        )
        logger.info("blow-up rate: numerator=%.6g denominator=%.6g kind=%s", numerator, denominator, base.kind.value)
        return prediction

    def expansion_residual(
        self,
        dom: DomainSpec,
        a: PotentialSpec,
        V: PotentialSpec,
        config: BubbleConfiguration,
        lambda_eps: Sequence[float],
        mu_eps: Sequence[float],
        eps: float,
        qv: np.ndarray | None = None,
    ) -> np.ndarray:
        """eps Q_V(x_i) + 4 pi sqrt(3) (M lambda)_i - 3 pi a(x_i) lambda_i mu_i, with the o(1) terms dropped.

        The cross term is the full matrix row, sum over j != i included.
        """
        lam = np.asarray(lambda_eps, dtype=float)
        mu = np.asarray(mu_eps, dtype=float)
        if np.any(mu <= 0.0):
            raise InvalidScalingError("mu must be positive.")
        expected = np.sqrt(mu / mu[0])
        if abs(lam[0] - 1.0) > settings.SCALING_TOL or np.any(np.abs(lam - expected) > settings.SCALING_TOL):
            raise InvalidScalingError(
                f"lambda must equal (mu_i/mu_1)^(1/2); max deviation {float(np.max(np.abs(lam - expected))):.3e}."
            )
        spectrum = self.interaction.build_matrix(dom, a, BubbleConfiguration(points=config.points))
        if qv is None:
            qv = self._qv_values(dom, a, V, config)
        a_values = self.interaction.annotate(dom, a, config).a_values
        return eps * qv + PROFILE_SCALE * (spectrum.matrix @ lam) - 3.0 * math.pi * a_values * lam * mu

    def expansion_sweep(
        self,
        dom: DomainSpec,
        a: PotentialSpec,
        V: PotentialSpec,
        prediction: BlowupPrediction,
        eps_list: Sequence[float] = settings.EPS_SWEEP,
    ) -> ExpansionSweep:
        """Residual of the expansion along mu_i = eps / rate_i for decreasing eps.

        Each decade reports two flags: whether max|residual|/eps shrank by the expansion ratio,
        and whether the residual is below the certification floor 4 pi sqrt(3) * RHO_TOL,
        where the ratio carries no information.
        """
        if any(r.kind is not RateKind.FINITE or r.value <= 0.0 for r in prediction.rates):
            raise InvalidScalingError("The sweep needs finite positive rates.")
        rates = np.array([r.value for r in prediction.rates])
        config = prediction.config
        floor = PROFILE_SCALE * settings.RHO_TOL
        rows = []
        for eps in sorted(eps_list, reverse=True):
            mu = eps / rates
            lam = np.sqrt(mu / mu[0])
            residual = self.expansion_residual(dom, a, V, config, lam, mu, eps, qv=prediction.qv_values)
            peak = float(np.max(np.abs(residual)))
            rows.append(SweepRow(eps=eps, residuals=tuple(float(r) for r in residual), max_residual=peak, ratio=peak / eps))
        decades = list(zip(rows, rows[1:]))
        return ExpansionSweep(
            rows=tuple(rows),
            ratio_passed=tuple(prev.ratio >= settings.EXPANSION_RATIO * nxt.ratio for prev, nxt in decades),
            below_floor=tuple(nxt.max_residual <= floor for _, nxt in decades),
            floor=floor,
        )

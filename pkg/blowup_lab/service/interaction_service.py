from __future__ import annotations

import logging
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Sequence

import numpy as np
from scipy import linalg

from blowup_lab.config import settings
from blowup_lab.models.domain import DomainSpec, PotentialSpec
from blowup_lab.models.interaction import (
    BubbleConfiguration,
    ConfigurationResult,
    HessianReport,
    InteractionSpectrum,
    TraceRow,
)
from blowup_lab.numerics.errors import NumericalError
from blowup_lab.numerics.grid import Grid
from blowup_lab.service.green_service import (
    GeometryError,
    GreenField,
    GreenService,
    NotCoerciveError,
    richardson_slope,
    stencil_offsets,
)

logger = logging.getLogger(__name__)


class DegenerateConfigurationError(NumericalError):
    pass


class SpectralDegeneracyError(NumericalError):
    def __init__(self, message: str, gap: float):
        super().__init__(message)
        self.gap = gap


class PerronSignError(NumericalError):
    def __init__(self, message: str, vector: np.ndarray):
        super().__init__(message)
        self.vector = vector


class NoConvergenceError(NumericalError):
    def __init__(self, message: str, trace: Sequence[TraceRow]):
        super().__init__(message)
        self.trace = tuple(trace)


class ContinuationRangeError(NumericalError):
    def __init__(self, message: str, tau: float, trace: Sequence[TraceRow] = ()):
        super().__init__(message)
        self.tau = tau
        self.trace = tuple(trace)


def spectrum_from_matrix(matrix: np.ndarray, asymmetry: float = 0.0) -> InteractionSpectrum:
    """Lowest eigenpair of a symmetric matrix with the Perron vector scaled to L_1 = 1.

    The lowest eigenvector must be simple and entrywise positive after the sign fix.
    """
    matrix = np.asarray(matrix, dtype=float)
    n = matrix.shape[0]
    eigenvalues, eigenvectors = linalg.eigh(matrix)
    gap = float(eigenvalues[1] - eigenvalues[0]) if n > 1 else float("inf")
    if gap < settings.SPECTRAL_GAP_TOL:
        raise SpectralDegeneracyError(
            f"Lowest eigenvalue is not simple (gap {gap:.3e}).", gap=gap
        )
    unit = eigenvectors[:, 0].copy()
    if unit[int(np.argmax(np.abs(unit)))] < 0.0:
        unit = -unit
    if np.any(unit <= 0.0):
        raise PerronSignError(f"Lowest eigenvector has non-positive entries: {unit}.", vector=unit)
    return InteractionSpectrum(
        matrix=matrix,
        rho=float(eigenvalues[0]),
        perron=unit / unit[0],
        perron_unit=unit,
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        spectral_gap=gap,
        asymmetry=asymmetry,
    )


def rho_gradient(spectrum: InteractionSpectrum, mtildes: Sequence[np.ndarray]) -> np.ndarray:
    """d rho / d x_i^l = L_i (Mt^l L)_i for the unit Perron vector L, ordered (x_1, y_1, z_1, x_2, ...)."""
    if spectrum.spectral_gap < settings.SPECTRAL_GAP_TOL:
        raise SpectralDegeneracyError(
            f"Gradient needs a simple lowest eigenvalue (gap {spectrum.spectral_gap:.3e}).",
            gap=spectrum.spectral_gap,
        )
    unit = spectrum.perron_unit
    columns = [unit * (np.asarray(m) @ unit) for m in mtildes]
    return np.column_stack(columns).reshape(-1)


def positive_semidefinite_check(spectrum: InteractionSpectrum) -> bool:
    return spectrum.rho >= -settings.PSD_TOL


class InteractionService:

    def __init__(self, green_service: GreenService, max_residuals: int = settings.RESIDUAL_CACHE_SIZE):
        self.green = green_service
        self.max_residuals = max_residuals
        self._lock = threading.RLock()
        self._residuals: OrderedDict[tuple, tuple[np.ndarray, InteractionSpectrum]] = OrderedDict()

    # ---------- configuration ----------

    def validate_configuration(self, dom: DomainSpec, config: BubbleConfiguration) -> None:
        if config.n < 1 or config.n > settings.MAX_BUBBLES:
            raise DegenerateConfigurationError(
                f"Configurations need between 1 and {settings.MAX_BUBBLES} points, got {config.n}."
            )
        if config.min_separation <= 0.0:
            raise DegenerateConfigurationError("Configuration has coincident points.")
        grid = Grid.from_domain(dom)
        need = settings.MIN_SEPARATION_CELLS * float(np.max(grid.h))
        if config.min_separation <= need:
            raise DegenerateConfigurationError(
                f"Points are {config.min_separation:.4f} apart; at least {need:.4f} "
                f"({settings.MIN_SEPARATION_CELLS:g} cells) is required."
            )
        if config.weights is not None:
            w = np.asarray(config.weights, dtype=float)
            if len(w) != config.n or np.any(w <= 0.0) or abs(w[0] - 1.0) > 1e-12:
                raise DegenerateConfigurationError("Weights must be positive with first entry 1.")

    def annotate(
        self, dom: DomainSpec, a: PotentialSpec, config: BubbleConfiguration, V: PotentialSpec | None = None
    ) -> BubbleConfiguration:
        """Fill a(x_i) and, when V is given, V(x_i)."""
        grid = Grid.from_domain(dom)
        return replace(
            config,
            a_values=grid.potential_at(a, config.points),
            V_values=None if V is None else grid.potential_at(V, config.points),
        )

    # ---------- matrices ----------

    def build_matrix(
        self, dom: DomainSpec, a: PotentialSpec, config: BubbleConfiguration, with_gradient: bool = False
    ) -> InteractionSpectrum:
        self.validate_configuration(dom, config)
        points = np.asarray(config.points, dtype=float)
        fields = self.green.solve_many(dom, a, points)
        n = config.n
        raw = np.empty((n, n))
        for i in range(n):
            raw[i, i] = fields[i].robin_value
            for j in range(n):
                if i != j:
                    raw[i, j] = -self.green.green_value(fields[j], points[i])
        asymmetry = float(np.max(np.abs(raw - raw.T))) / 2.0 if n > 1 else 0.0
        if asymmetry > 1e-3 * float(np.max(np.abs(raw))):
            logger.warning("interaction matrix asymmetry %.3e before symmetrization", asymmetry)
        spectrum = spectrum_from_matrix(0.5 * (raw + raw.T), asymmetry=asymmetry)
        if with_gradient:
            mtildes = self._mtildes(dom, a, points, fields)
            spectrum = replace(spectrum, gradient=rho_gradient(spectrum, mtildes))
        return spectrum

    def _mtildes(
        self, dom: DomainSpec, a: PotentialSpec, points: np.ndarray, fields: Sequence[GreenField]
    ) -> list[np.ndarray]:
        """Richardson differences of the entries of M under the source stencil of each x_i.

        The diagonal is d_l phi_a(x_i). Off the diagonal, twice the derivative of the symmetrized
        entry -(G_a(x_i, x_j) + G_a(x_j, x_i))/2 in x_i^l, the discrete form of -2 d_l^x G_a(x_i, x_j).
        The stencil moves x_i exactly as `rho_difference_gradient` does.
        """
        n = len(points)
        mtildes = [np.empty((n, n)) for _ in range(3)]
        for i in range(n):
            steps, stencil = self.green.source_stencil(dom, a, points[i])
            for axis in range(3):
                block = stencil[4 * axis: 4 * axis + 4]
                mtildes[axis][i, i] = richardson_slope([f.robin_value for f in block], steps[axis])
                for j in range(n):
                    if j == i:
                        continue
                    entries = []
                    for moved, offset in zip(block, stencil_offsets(steps[axis])):
                        x = points[i].copy()
                        x[axis] += offset
                        entries.append(
                            -0.5 * (self.green.green_value(fields[j], x) + self.green.green_value(moved, points[j]))
                        )
                    mtildes[axis][i, j] = 2.0 * richardson_slope(entries, steps[axis])
        return mtildes

    def build_mtilde(self, dom: DomainSpec, a: PotentialSpec, config: BubbleConfiguration, l: int) -> np.ndarray:
        """Mt^l: d_l phi_a(x_i) on the diagonal, -2 d_l^x G_a(x_i, x_j) off it. Not symmetric."""
        if l not in (0, 1, 2):
            raise ValueError(f"Axis index must be 0, 1 or 2, got {l}.")
        self.validate_configuration(dom, config)
        points = np.asarray(config.points, dtype=float)
        fields = self.green.solve_many(dom, a, points)
        return self._mtildes(dom, a, points, fields)[l]

    def rho_difference_gradient(self, dom: DomainSpec, a: PotentialSpec, config: BubbleConfiguration) -> np.ndarray:
        """Richardson differences of rho itself, moving one coordinate at a time by the source stencil."""
        points = np.asarray(config.points, dtype=float)
        steps = 2.0 * Grid.from_domain(dom).h
        gradient = np.empty(points.size)
        for i in range(len(points)):
            for axis in range(3):
                rhos = []
                for offset in stencil_offsets(steps[axis]):
                    shifted = points.copy()
                    shifted[i, axis] += offset
                    rhos.append(self.build_matrix(dom, a, BubbleConfiguration(points=shifted)).rho)
                gradient[3 * i + axis] = richardson_slope(rhos, steps[axis])
        return gradient

    def rho_tau_derivative(
        self, dom: DomainSpec, a_base: PotentialSpec, tau: float, config: BubbleConfiguration
    ) -> float:
        """d rho_{tau a} / d tau = L.K L with K_ij = int a G_a(x_i, .) G_a(x_j, .), L the unit Perron vector."""
        a_tau = a_base.scaled(tau)
        spectrum = self.build_matrix(dom, a_tau, config)
        fields = self.green.solve_many(dom, a_tau, config.points)
        n = config.n
        kernel = np.empty((n, n))
        for i in range(n):
            kernel[i, i] = self.green.green_square_integral(fields[i], a_base)
            for j in range(i + 1, n):
                kernel[i, j] = kernel[j, i] = self.green.green_product_integral(fields[i], fields[j], a_base)
        unit = spectrum.perron_unit
        return float(unit @ kernel @ unit)

    # ---------- blow-up configurations ----------

    def _evaluate(
        self, dom: DomainSpec, a_base: PotentialSpec, z: np.ndarray, tau_fixed: float | None
    ) -> tuple[np.ndarray, InteractionSpectrum]:
        step = settings.POINT_ROUNDING
        key = (dom, a_base.cache_key, tau_fixed) + tuple(int(round(v / step)) for v in z)
        with self._lock:
            cached = self._residuals.get(key)
            if cached is not None:
                self._residuals.move_to_end(key)
                return cached
        if tau_fixed is None:
            tau, flat = float(z[0]), z[1:]
        else:
            tau, flat = tau_fixed, z
        a_tau = a_base.scaled(tau)
        self.green.require_coercive(dom, a_tau)
        spectrum = self.build_matrix(dom, a_tau, BubbleConfiguration(points=flat.reshape(-1, 3)), with_gradient=True)
        if tau_fixed is None:
            residual = np.concatenate([[spectrum.rho], spectrum.gradient])
        else:
            residual = spectrum.gradient.copy()
        with self._lock:
            self._residuals[key] = (residual, spectrum)
            while len(self._residuals) > self.max_residuals:
                self._residuals.popitem(last=False)
        return residual, spectrum

    def _jacobian(
        self, dom: DomainSpec, a_base: PotentialSpec, z: np.ndarray, f0: np.ndarray, tau_fixed: float | None
    ) -> np.ndarray:
        """Forward differences for the gradient rows; the rho row is exact."""
        diameter = dom.diameter
        steps = np.full(len(z), settings.NEWTON_FD_STEP * diameter)
        if tau_fixed is None:
            steps[0] = settings.NEWTON_FD_STEP * max(abs(z[0]), 1.0)

        def column(k: int) -> np.ndarray:
            shifted = z.copy()
            shifted[k] += steps[k]
            return (self._evaluate(dom, a_base, shifted, tau_fixed)[0] - f0) / steps[k]

        threads = self.green.threads
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                columns = list(pool.map(column, range(len(z))))
        else:
            columns = [column(k) for k in range(len(z))]
        jac = np.column_stack(columns)
        if tau_fixed is None:
            config = BubbleConfiguration(points=z[1:].reshape(-1, 3))
            jac[0, 0] = self.rho_tau_derivative(dom, a_base, float(z[0]), config)
            jac[0, 1:] = f0[1:]
        return jac

    def find_blowup_configuration(
        self,
        dom: DomainSpec,
        a_base: PotentialSpec,
        n: int,
        init: BubbleConfiguration,
        tau0: float = 1.0,
        fix_tau: bool = False,
    ) -> ConfigurationResult:
        """Damped Newton on rho_{tau a}(x) = 0, grad rho_{tau a}(x) = 0 in the unknowns (tau, x).

        With fix_tau the potential tau0 * a_base is kept and only grad rho = 0 is solved;
        the rho residual is then reported as is.
        """
        if init.n != n:
            raise DegenerateConfigurationError(f"Initial configuration has {init.n} points, expected {n}.")
        self.validate_configuration(dom, init)
        tau_fixed = float(tau0) if fix_tau else None
        flat = np.asarray(init.points, dtype=float).reshape(-1)
        z = flat.copy() if fix_tau else np.concatenate([[float(tau0)], flat])

        try:
            f, spectrum = self._evaluate(dom, a_base, z, tau_fixed)
        except NotCoerciveError as exc:
            raise ContinuationRangeError(
                f"Initial tau={tau0:g} is outside the coercive range.", tau=float(tau0)
            ) from exc

        trace: list[TraceRow] = []
        jac: np.ndarray | None = None
        age = 0
        iteration = 0

        def record(step_length: float) -> None:
            tau = tau_fixed if fix_tau else float(z[0])
            row = TraceRow(
                iteration=iteration,
                tau=tau,
                rho=spectrum.rho,
                grad_norm=float(np.linalg.norm(spectrum.gradient)),
                step=step_length,
            )
            trace.append(row)
            logger.info(
                "newton %d: tau=%.10f rho=%.3e |grad rho|=%.3e step=%.3g",
                row.iteration, row.tau, row.rho, row.grad_norm, row.step,
            )

        def converged() -> bool:
            grad_ok = float(np.linalg.norm(spectrum.gradient)) < settings.GRAD_RHO_TOL
            return grad_ok if fix_tau else grad_ok and abs(spectrum.rho) < settings.RHO_TOL

        record(0.0)
        while not converged():
            if iteration >= settings.NEWTON_MAX_ITER:
                raise NoConvergenceError(
                    f"Newton did not converge in {settings.NEWTON_MAX_ITER} iterations.", trace
                )
            if jac is None or age >= settings.NEWTON_JACOBIAN_REUSE:
                jac = self._jacobian(dom, a_base, z, f, tau_fixed)
                age = 0
            direction, *_ = np.linalg.lstsq(jac, -f, rcond=settings.NEWTON_RCOND)

            merit = float(np.linalg.norm(f))
            t = 1.0
            accepted = None
            left_range = None
            for _ in range(settings.NEWTON_MAX_HALVINGS + 1):
                trial = z + t * direction
                try:
                    f_trial, s_trial = self._evaluate(dom, a_base, trial, tau_fixed)
                except NotCoerciveError:
                    left_range = tau_fixed if fix_tau else float(trial[0])
                    t *= 0.5
                    continue
                except (GeometryError, DegenerateConfigurationError):
                    t *= 0.5
                    continue
                if float(np.linalg.norm(f_trial)) <= (1.0 - 1e-4 * t) * merit:
                    accepted = (trial, f_trial, s_trial)
                    break
                t *= 0.5

            iteration += 1
            if accepted is None:
                if age > 0:
                    # stale Jacobian; rebuild before giving up
                    jac = None
                    continue
                if left_range is not None:
                    raise ContinuationRangeError(
                        f"Newton steps leave the coercive range of tau (trial tau={left_range:g}).",
                        tau=left_range,
                        trace=trace,
                    )
                raise NoConvergenceError("Newton stagnated: no step decreases the residual.", trace)

            z, f, spectrum = accepted
            age += 1
            record(t * float(np.linalg.norm(direction)))

        tau = tau_fixed if fix_tau else float(z[0])
        points = (z if fix_tau else z[1:]).reshape(-1, 3)
        config = self.annotate(
            dom, a_base.scaled(tau), BubbleConfiguration(points=points, weights=spectrum.perron)
        )
        return ConfigurationResult(
            tau=tau,
            config=config,
            spectrum=spectrum,
            rho_residual=abs(spectrum.rho),
            gradient_residual=float(np.linalg.norm(spectrum.gradient)),
            iterations=iteration,
            trace=tuple(trace),
            tau_fixed=fix_tau,
        )

    # ---------- second derivatives ----------

    def hessian_report(
        self, dom: DomainSpec, a: PotentialSpec, config: BubbleConfiguration, step: float | None = None
    ) -> HessianReport:
        """Central differences of the Hellmann-Feynman gradient; step defaults to one grid cell."""
        if step is None:
            step = float(np.max(Grid.from_domain(dom).h))
        flat = np.asarray(config.points, dtype=float).reshape(-1)
        size = len(flat)
        hessian = np.empty((size, size))
        for k in range(size):
            grads = []
            for sign in (1.0, -1.0):
                shifted = flat.copy()
                shifted[k] += sign * step
                spectrum = self.build_matrix(
                    dom, a, BubbleConfiguration(points=shifted.reshape(-1, 3)), with_gradient=True
                )
                grads.append(spectrum.gradient)
            hessian[:, k] = (grads[0] - grads[1]) / (2.0 * step)
        asymmetry = float(np.max(np.abs(hessian - hessian.T))) / 2.0
        symmetric = 0.5 * (hessian + hessian.T)
        return HessianReport(
            matrix=symmetric,
            eigenvalues=linalg.eigvalsh(symmetric),
            asymmetry=asymmetry,
            step=step,
        )

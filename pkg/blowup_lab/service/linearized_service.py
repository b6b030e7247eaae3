"""Radial modes of the equation linearized at the standard bubble in R^N.

Each spherical-harmonic degree k reduces to
    v'' + (N-1)/r v' + (N(N+2)(1+r^2)^{-2} - k(k+N-2)/r^2) v = 0,
integrated in s = ln r for the state (v, r v').
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Sequence

import numpy as np
from scipy import stats
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from blowup_lab.config import settings
from blowup_lab.models.linearized import (
    Branch,
    DegreeVerdict,
    GrowthReport,
    LiouvilleCertificate,
    LinearizedMode,
    LogCoordinateReport,
    WronskianReport,
)
from blowup_lab.numerics.errors import NumericalError
from blowup_lab.service.profile_service import InvalidParameterError

logger = logging.getLogger(__name__)


class StiffnessError(NumericalError):
    def __init__(self, message: str, r: float):
        super().__init__(message)
        self.r = r


class IntegerExponentError(ValueError):
    pass


def _potential(N: int, r: np.ndarray) -> np.ndarray:
    return N * (N + 2) / (1.0 + r**2) ** 2


def mode_residual(N: int, k: int, r: np.ndarray, v: np.ndarray, dv: np.ndarray, d2v: np.ndarray) -> np.ndarray:
    ell = k * (k + N - 2)
    return d2v + (N - 1) / r * dv + (_potential(N, r) - ell / r**2) * v


def exact_mode(N: int, k: int, r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(v, v', v'') of the closed-form solutions (1 - r^2)(1 + r^2)^{-N/2} (k = 0) and r(1 + r^2)^{-N/2} (k = 1)."""
    r = np.asarray(r, dtype=float)
    a = N / 2
    u = 1.0 + r**2
    if k == 0:
        v = (1.0 - r**2) * u**-a
        dv = -2.0 * r * u**-a - 2.0 * a * r * (1.0 - r**2) * u ** (-a - 1)
        d2v = (
            -2.0 * u**-a
            + 4.0 * a * r**2 * u ** (-a - 1)
            - 2.0 * a * (1.0 - 3.0 * r**2) * u ** (-a - 1)
            + 4.0 * a * (a + 1) * r**2 * (1.0 - r**2) * u ** (-a - 2)
        )
        return v, dv, d2v
    if k == 1:
        v = r * u**-a
        dv = u**-a - 2.0 * a * r**2 * u ** (-a - 1)
        d2v = -6.0 * a * r * u ** (-a - 1) + 4.0 * a * (a + 1) * r**3 * u ** (-a - 2)
        return v, dv, d2v
    raise InvalidParameterError(f"Closed forms exist for k = 0 and k = 1 only, got k={k}.")


def exact_residual(N: int, k: int, r: np.ndarray) -> float:
    v, dv, d2v = exact_mode(N, k, r)
    return float(np.max(np.abs(mode_residual(N, k, np.asarray(r, dtype=float), v, dv, d2v))))


def _fit_window(t: np.ndarray, y: np.ndarray, upper: bool) -> tuple[float, float]:
    """Slope and R^2 of y against t on the outer fraction of the range at one end."""
    span = t[-1] - t[0]
    cut = settings.FIT_FRACTION * span
    mask = t >= t[-1] - cut if upper else t <= t[0] + cut
    fit = stats.linregress(t[mask], y[mask])
    return float(fit.slope), float(fit.rvalue**2)


class LinearizedService:

    def __init__(self, threads: int = 1):
        self.threads = max(1, int(threads))

    # ---------- integration ----------

    @staticmethod
    def _validate(N: int, k: int, r_max: float) -> None:
        if int(N) != N or N < 3:
            raise InvalidParameterError(f"Dimension must be an integer >= 3, got N={N}.")
        if int(k) != k or k < 0:
            raise InvalidParameterError(f"Degree must be a non-negative integer, got k={k}.")
        if r_max < settings.MIN_R_MAX:
            raise InvalidParameterError(f"r_max must be at least {settings.MIN_R_MAX:g}, got {r_max:g}.")

    def _sample_radii(self, r_max: float) -> np.ndarray:
        r = np.geomspace(settings.FROBENIUS_START, r_max, settings.MODE_SAMPLES)
        return np.unique(np.concatenate([r, [1.0]]))

    def _integrate(
        self, N: int, k: int, s_span: tuple[float, float], y0: np.ndarray, s_eval: np.ndarray
    ) -> tuple[np.ndarray, int]:
        """Integrate from s_span[0] to s_span[1], sampling at s_eval (ordered in the direction of travel).

        The state is rescaled whenever it exceeds the overflow threshold; earlier samples are
        rescaled with it so the returned samples describe a single solution.
        """
        ell = k * (k + N - 2)

        def rhs(s: float, y: np.ndarray) -> np.ndarray:
            r2 = math.exp(2.0 * s)
            q = N * (N + 2) / (1.0 + r2) ** 2
            return np.array([y[1], -(N - 2) * y[1] - (q * r2 - ell) * y[0]])

        def overflow(s: float, y: np.ndarray) -> float:
            return settings.OVERFLOW_THRESHOLD - float(np.max(np.abs(y)))

        overflow.terminal = True

        samples = np.empty((2, 0))
        start, end = s_span
        state = np.asarray(y0, dtype=float)
        remaining = s_eval
        rescalings = 0
        while True:
            sol = solve_ivp(
                rhs,
                (start, end),
                state,
                method="DOP853",
                t_eval=remaining,
                events=overflow,
                rtol=settings.ODE_RTOL,
                atol=settings.ODE_ATOL,
            )
            if sol.status == -1:
                r_fail = math.exp(sol.t[-1] if sol.t.size else start)
                raise StiffnessError(
                    f"Integration of degree {k} (N={N}) failed near r={r_fail:.4g}: {sol.message}",
                    r=r_fail,
                )
            samples = np.concatenate([samples, sol.y], axis=1)
            if sol.status != 1:
                break
            s_event = float(sol.t_events[0][0])
            y_event = sol.y_events[0][0]
            scale = float(np.max(np.abs(y_event)))
            samples = samples / scale
            state = y_event / scale
            remaining = remaining[len(sol.t):]
            start = s_event
            rescalings += 1
            logger.warning("degree %d (N=%d): rescaled by %.3g at r=%.4g", k, N, scale, math.exp(s_event))
        return samples, rescalings

    def solve_mode(self, N: int, k: int, branch: Branch | str, r_max: float = 1e3) -> LinearizedMode:
        self._validate(N, k, r_max)
        branch = Branch(branch)
        r = self._sample_radii(r_max)
        s = np.log(r)

        if branch is Branch.REGULAR:
            r0 = r[0]
            c1 = -N * (N + 2) / (2.0 * (2 * k + N))
            y0 = np.array([r0**k * (1.0 + c1 * r0**2), k * r0**k + c1 * (k + 2) * r0 ** (k + 2)])
            samples, rescalings = self._integrate(N, k, (s[0], s[-1]), y0, s)
            v, w = samples
        elif k < 2:
            # for k < 2 the singular branch grows at infinity: shoot it outward from its
            # Frobenius start, where r^-m dominates
            m = N - 2 + k
            r0 = r[0]
            resonance = 2 * k + N - 4
            d = N * (N + 2) / (2.0 * resonance) if resonance else 0.0
            y0 = np.array([r0**-m * (1.0 + d * r0**2), -m * r0**-m + (2 - m) * d * r0 ** (2 - m)])
            samples, rescalings = self._integrate(N, k, (s[0], s[-1]), y0, s)
            v, w = samples
        else:
            m = N - 2 + k
            d = -N * (N + 2) / (2.0 * N + 4.0 * k)
            r1 = r[-1]
            y0 = np.array([r1**-m * (1.0 + d * r1**-2), -m * r1**-m - (m + 2) * d * r1 ** (-m - 2)])
            samples, rescalings = self._integrate(N, k, (s[-1], s[0]), y0, s[::-1])
            v, w = samples[:, ::-1]

        one = int(np.argmin(np.abs(r - 1.0)))
        if abs(v[one]) > 1e-8 * float(np.max(np.abs(v))):
            norm = v[one]
        else:
            # ground mode vanishes at r = 1
            norm = w[one]
        v, w = v / norm, w / norm
        logger.debug("mode N=%d k=%d %s: %d samples, %d rescalings", N, k, branch.value, len(r), rescalings)
        return LinearizedMode(N=N, k=k, branch=branch, r=r, v=v, dv=w / r, rescalings=rescalings)

    def solve_modes(self, requests: Iterable[tuple[int, int, Branch | str]], r_max: float = 1e3) -> list[LinearizedMode]:
        requests = list(requests)
        if self.threads == 1 or len(requests) < 2:
            return [self.solve_mode(N, k, b, r_max) for N, k, b in requests]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(lambda req: self.solve_mode(req[0], req[1], req[2], r_max), requests))

    # ---------- reports ----------

    def log_coordinate_check(self, mode: LinearizedMode) -> LogCoordinateReport:
        """Residual of psi'' - mu^2 psi + g psi with g(t) = N(N+2)/(4 cosh^2 t), and end-point growth rates."""
        N, mu = mode.N, mode.mu
        t = np.log(mode.r)
        half = (N - 2) / 2
        psi = mode.r**half * mode.v
        dpsi = mode.r**half * (half * mode.v + mode.r * mode.dv)
        d2psi = CubicSpline(t, dpsi).derivative()(t)
        g = N * (N + 2) / (4.0 * np.cosh(t) ** 2)
        residual = d2psi - mu**2 * psi + g * psi
        scale = np.abs(d2psi) + mu**2 * np.abs(psi) + np.abs(g * psi)
        inner = slice(3, -3)
        relative = float(np.max(np.abs(residual[inner]) / np.maximum(scale[inner], 1e-300)))

        recovered = np.exp(-half * t) * psi
        inverse_error = float(np.max(np.abs(recovered - mode.v) / np.maximum(np.abs(mode.v), 1e-300)))

        logs = np.log(np.maximum(np.abs(psi), 1e-300))
        slope_minus, r2_minus = _fit_window(t, logs, upper=False)
        slope_plus, r2_plus = _fit_window(t, logs, upper=True)
        if mode.branch is Branch.REGULAR:
            expected_minus = mu
            expected_plus = mu if mode.k >= 2 else -mu
        else:
            expected_minus = -mu
            expected_plus = -mu if mode.k >= 2 else mu
        return LogCoordinateReport(
            residual=relative,
            inverse_error=inverse_error,
            slope_minus=slope_minus,
            r2_minus=r2_minus,
            slope_plus=slope_plus,
            r2_plus=r2_plus,
            expected_minus=expected_minus,
            expected_plus=expected_plus,
        )

    def growth_report(self, mode: LinearizedMode, r_range: tuple[float, float] = (1e-3, 1e3)) -> GrowthReport:
        """Two-sided bounds of v / r^k over r_range."""
        mask = (mode.r >= r_range[0]) & (mode.r <= r_range[1])
        ratio = np.abs(mode.v[mask]) / mode.r[mask] ** mode.k
        signs = np.sign(mode.v[mask])
        changes = int(np.count_nonzero(signs[1:] * signs[:-1] < 0))
        c_minus, c_plus = float(np.min(ratio)), float(np.max(ratio))
        return GrowthReport(
            c_minus=c_minus,
            c_plus=c_plus,
            ratio=c_plus / c_minus if c_minus > 0.0 else float("inf"),
            sign_changes=changes,
        )

    def wronskian_report(self, N: int, k: int, r_max: float = 1e3) -> WronskianReport:
        """r^{N-1}(v- v+' - v-' v+) along the common sample grid."""
        regular, singular = self.solve_modes([(N, k, Branch.REGULAR), (N, k, Branch.SINGULAR)], r_max)
        r = regular.r
        w = r ** (N - 1) * (regular.v * singular.dv - regular.dv * singular.v)
        mean = float(np.mean(w))
        return WronskianReport(mean=mean, relative_variation=float(np.max(np.abs(w - mean)) / abs(mean)))

    def liouville_certificate(self, N: int, tau: float, k_range: Sequence[int]) -> LiouvilleCertificate:
        """Per-degree exclusion of solutions with |v(x)| <~ |x|^tau on R^N.

        A bounded-at-0 solution of degree k has no singular component, so it is a multiple of
        the regular branch; that branch grows like r^k at 0 and, for k >= 2, at infinity.
        """
        if tau <= 1.0:
            raise InvalidParameterError(f"tau must exceed 1, got {tau:g}.")
        if float(tau).is_integer():
            t = int(tau)
            raise IntegerExponentError(
                f"tau={t} is an integer: the regular degree-{t} mode times a degree-{t} harmonic "
                f"satisfies |v| <~ |x|^{t}, so no Liouville statement holds."
            )
        degrees = sorted(set(int(k) for k in k_range))
        modes = self.solve_modes([(N, k, Branch.REGULAR) for k in degrees], settings.MIN_R_MAX)
        verdicts = []
        for k, mode in zip(degrees, modes):
            logs = np.log(np.maximum(np.abs(mode.v), 1e-300))
            logr = np.log(mode.r)
            origin, _ = _fit_window(logr, logs, upper=False)
            infinity, _ = _fit_window(logr, logs, upper=True)
            singular = f"singular branch ~ r^-{N - 2 + k} at 0 is excluded by the bound; "
            if origin < tau:
                verdict = DegreeVerdict(
                    k=k,
                    excluded=True,
                    reason=singular + f"regular branch ~ r^{origin:.3f} at 0, so |v|/|x|^tau is unbounded at 0",
                    origin_exponent=origin,
                    infinity_exponent=infinity,
                )
            elif infinity > tau:
                verdict = DegreeVerdict(
                    k=k,
                    excluded=True,
                    reason=singular + f"regular branch ~ r^{infinity:.3f} at infinity outgrows |x|^tau",
                    origin_exponent=origin,
                    infinity_exponent=infinity,
                )
            else:
                verdict = DegreeVerdict(
                    k=k,
                    excluded=False,
                    reason="regular branch is compatible with the bound at both ends",
                    origin_exponent=origin,
                    infinity_exponent=infinity,
                )
            verdicts.append(verdict)
        certificate = LiouvilleCertificate(N=N, tau=float(tau), verdicts=tuple(verdicts))
        logger.info("Liouville certificate N=%d tau=%g: only trivial=%s", N, tau, certificate.only_trivial)
        return certificate

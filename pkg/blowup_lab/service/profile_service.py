"""Closed-form radial profiles of the three-dimensional critical problem.

Normalization: B(r) = (1 + r^2/3)^{-1/2}, so that -Laplace B = B^5 on R^3.
The correction W solves -Laplace W - 5 W B^4 = -B with W(0) = W'(0) = 0 and is
W = v * phi, where v = (3 - r^2)/(3 + r^2)^{3/2} spans the radial kernel of the
linearized operator and phi is an antiderivative of psi.
"""

from __future__ import annotations

import logging
import math
from typing import Callable

import numpy as np
from scipy import integrate, special

from blowup_lab.config import settings
from blowup_lab.models.profiles import (
    BubbleParams,
    ProfileKind,
    QuadratureResult,
    RadialIntegrand,
    RadialProfile,
    RadialWeight,
)

logger = logging.getLogger(__name__)

SQRT3 = math.sqrt(3.0)
ArrayLike = np.ndarray | float


class InvalidParameterError(ValueError):
    pass


class NonIntegrableError(Exception):
    def __init__(self, message: str, exponent: float):
        super().__init__(message)
        self.exponent = exponent


# ---------- bubble ----------

def bubble(r: ArrayLike) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return 1.0 / np.sqrt(1.0 + r * r / 3.0)


def bubble_prime(r: ArrayLike) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return -(r / 3.0) * (1.0 + r * r / 3.0) ** -1.5


# ---------- homogeneous solution v ----------

def homogeneous_v(r: ArrayLike) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return (3.0 - r * r) / (3.0 + r * r) ** 1.5


def homogeneous_v_prime(r: ArrayLike) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return r * (r * r - 15.0) / (3.0 + r * r) ** 2.5


def homogeneous_v_second(r: ArrayLike) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    r2 = r * r
    return (-2.0 * r2 * r2 + 69.0 * r2 - 45.0) / (3.0 + r2) ** 3.5


# ---------- psi and its antiderivative phi ----------

def _h_taylor(r: np.ndarray) -> np.ndarray:
    # h = sqrt(3) * sum_{m>=1} (-1)^{m+1} (2m-1)/(2m+1) t^{2m+1}, t = r/sqrt(3)
    t = r / SQRT3
    t2 = t * t
    total = np.zeros_like(t)
    power = t * t2
    for m in range(1, 6):
        total = total + (-1.0) ** (m + 1) * (2 * m - 1) / (2 * m + 1) * power
        power = power * t2
    return SQRT3 * total


def h_function(r: ArrayLike) -> np.ndarray:
    """h(r) = -r + 2 sqrt(3) arctan(r/sqrt(3)) - 3r/(r^2 + 3); O(r^3) at the origin."""
    r = np.asarray(r, dtype=float)
    closed = -r + 2.0 * SQRT3 * np.arctan(r / SQRT3) - 3.0 * r / (r * r + 3.0)
    return np.where(r < settings.TAYLOR_THRESHOLD, _h_taylor(r), closed)


def h_prime(r: ArrayLike) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    r2 = r * r
    return r2 * (3.0 - r2) / (3.0 + r2) ** 2


def _rational(r: np.ndarray) -> np.ndarray:
    # sqrt(3) (3 + r^2)^3 / (r^2 (3 - r^2)^2)
    return SQRT3 + 3.0 * SQRT3 / r**2 + 6.0 * SQRT3 * ((r - SQRT3) ** -2 + (r + SQRT3) ** -2)


def _rational_prime(r: np.ndarray) -> np.ndarray:
    return -6.0 * SQRT3 / r**3 - 12.0 * SQRT3 * ((r - SQRT3) ** -3 + (r + SQRT3) ** -3)


def _safe(r: np.ndarray) -> np.ndarray:
    return np.where(r > 0.0, r, 1.0)


def psi(r: ArrayLike) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    s = _safe(r)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = h_function(s) * _rational(s)
    return np.where(r > 0.0, value, 0.0)


def psi_prime(r: ArrayLike) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    s = _safe(r)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = h_prime(s) * _rational(s) + h_function(s) * _rational_prime(s)
    return np.where(r > 0.0, value, 1.0 / SQRT3)


def _log_part(r: np.ndarray) -> np.ndarray:
    r2 = r * r
    return r2 - 24.0 * np.log1p(r2 / 3.0) + 24.0 * r2 / (3.0 + r2)


def phi_antiderivative(r: ArrayLike) -> np.ndarray:
    """phi(r) = int_0^r psi, continued across sqrt(3) as a finite part.

    Integration by parts against Q, the rational antiderivative of psi/h, gives
    phi = h Q + (sqrt(3)/2) (r^2 - 24 log(1 + r^2/3) + 24 r^2/(3 + r^2)).
    """
    r = np.asarray(r, dtype=float)
    s = _safe(r)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = SQRT3 * s - 3.0 * SQRT3 / s - 12.0 * SQRT3 * s / (s * s - 3.0)
        value = h_function(s) * q + 0.5 * SQRT3 * _log_part(s)
    return np.where(r > 0.0, value, 0.0)


# ---------- correction W ----------

def _w_cancelled(r: np.ndarray) -> np.ndarray:
    # v * h * Q with the pole of Q at sqrt(3) cancelled against the zero of v
    s = _safe(r)
    r2 = s * s
    poly = 12.0 * r2 - (3.0 - r2) ** 2
    value = SQRT3 * (h_function(s) / s) * poly / (3.0 + r2) ** 1.5
    value = value + 0.5 * SQRT3 * homogeneous_v(s) * _log_part(s)
    return np.where(r > 0.0, value, 0.0)


def _w_prime_product(r: np.ndarray) -> np.ndarray:
    s = _safe(r)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = homogeneous_v_prime(s) * phi_antiderivative(s) + homogeneous_v(s) * psi(s)
    return np.where(r > 0.0, value, 0.0)


def _w_second_product(r: np.ndarray) -> np.ndarray:
    s = _safe(r)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = (
            homogeneous_v_second(s) * phi_antiderivative(s)
            + 2.0 * homogeneous_v_prime(s) * psi(s)
            + homogeneous_v(s) * psi_prime(s)
        )
    return np.where(r > 0.0, value, 1.0 / 3.0)


def _window_interpolated(fn: Callable[[np.ndarray], np.ndarray], r: np.ndarray) -> np.ndarray:
    """Replace values with |r - sqrt(3)| < delta by a cubic through nodes outside the window."""
    delta = settings.SQRT3_WINDOW
    inside = np.abs(r - SQRT3) < delta
    out = np.asarray(fn(r), dtype=float)
    if not np.any(inside):
        return out
    nodes = SQRT3 + delta * np.array([-2.0, -1.0, 1.0, 2.0])
    values = fn(nodes)
    x = r[inside]
    acc = np.zeros_like(x)
    for i, xi in enumerate(nodes):
        basis = np.ones_like(x)
        for j, xj in enumerate(nodes):
            if j != i:
                basis = basis * (x - xj) / (xi - xj)
        acc = acc + values[i] * basis
    out = out.copy()
    out[inside] = acc
    return out


def correction_w(r: ArrayLike) -> np.ndarray:
    r = np.atleast_1d(np.asarray(r, dtype=float))
    return _window_interpolated(_w_cancelled, r)


def correction_w_prime(r: ArrayLike) -> np.ndarray:
    r = np.atleast_1d(np.asarray(r, dtype=float))
    return _window_interpolated(_w_prime_product, r)


def correction_w_second(r: ArrayLike) -> np.ndarray:
    r = np.atleast_1d(np.asarray(r, dtype=float))
    return _window_interpolated(_w_second_product, r)


# ---------- residuals ----------

def correction_residual(r: ArrayLike) -> np.ndarray:
    """-Laplace W - 5 W B^4 + B on r > 0."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    lap = correction_w_second(r) + 2.0 * correction_w_prime(r) / r
    b = bubble(r)
    return -lap - 5.0 * correction_w(r) * b**4 + b


def homogeneous_residual(r: ArrayLike) -> np.ndarray:
    r = np.atleast_1d(np.asarray(r, dtype=float))
    lap = homogeneous_v_second(r) + 2.0 * homogeneous_v_prime(r) / r
    return -lap - 5.0 * homogeneous_v(r) * bubble(r) ** 4


_PROFILES: dict[ProfileKind, Callable[[ArrayLike], np.ndarray]] = {
    ProfileKind.BUBBLE: bubble,
    ProfileKind.CORRECTION_W: correction_w,
    ProfileKind.HOMOGENEOUS_V: homogeneous_v,
    ProfileKind.PSI_INTEGRAND: psi,
}


def radial_profile(kind: ProfileKind) -> RadialProfile:
    return RadialProfile(kind=kind, evaluate=_PROFILES[kind])


def beta_constants() -> dict[str, tuple[float, float]]:
    """Beta-function evaluations of the three bubble moments, paired with their closed values."""
    return {
        "int_B5": (6.0 * math.pi * SQRT3 * special.beta(1.5, 1.0), 4.0 * math.pi * SQRT3),
        "int_B5_over_r": (6.0 * math.pi * special.beta(1.0, 1.5), 4.0 * math.pi),
        "int_r_B5": (18.0 * math.pi * special.beta(2.0, 0.5), 24.0 * math.pi),
    }


class ProfileService:

    # ---------- pointwise ----------

    def eval_bubble(self, p: BubbleParams, x: ArrayLike) -> np.ndarray:
        if not p.mu > 0.0:
            raise InvalidParameterError(f"Bubble scale must be positive, got mu={p.mu}.")
        x = np.asarray(x, dtype=float)
        d2 = np.sum((x - np.asarray(p.center, dtype=float)) ** 2, axis=-1)
        return math.sqrt(p.mu) / np.sqrt(p.mu * p.mu + d2 / 3.0)

    def eval_correction_w(self, r: ArrayLike) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if np.any(r < 0.0):
            raise InvalidParameterError("W is defined for r >= 0 only.")
        out = correction_w(r)
        return out if r.ndim else out[0]

    def bubble_laplacian_residual(self, p: BubbleParams, x: ArrayLike, step: float = 1e-4) -> np.ndarray:
        """|-Laplace_h B - B^5| / B^5 at the rows of x, seven-point stencil of width step."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        center = self.eval_bubble(p, x)
        lap = -6.0 * center
        for axis in range(3):
            offset = np.zeros(3)
            offset[axis] = step
            lap = lap + self.eval_bubble(p, x + offset) + self.eval_bubble(p, x - offset)
        lap /= step * step
        return np.abs(-lap - center**5) / center**5

    # ---------- quadrature ----------

    def integrand(self, spec: RadialIntegrand) -> Callable[[float], float]:
        funcs = [(_PROFILES[kind], power) for kind, power in spec.factors]

        def radial(r: float) -> float:
            value = spec.scale * 4.0 * math.pi * r * r
            for fn, power in funcs:
                value *= float(np.asarray(fn(r)).reshape(-1)[0]) ** power
            if spec.weight is RadialWeight.INV_R:
                value = value / r if r > 0.0 else 0.0
            elif spec.weight is RadialWeight.R:
                value *= r
            return value

        return radial

    def radial_integral(self, spec: RadialIntegrand) -> QuadratureResult:
        """int_{R^3} f(|x|) w(|x|) dx as 4 pi int_0^R f w r^2 dr plus a power-law tail."""
        g = self.integrand(spec)

        cutoff = 1e2
        while True:
            g1, g2 = abs(g(cutoff)), abs(g(2.0 * cutoff))
            if g1 == 0.0 or g2 == 0.0:
                exponent, tail = math.inf, 0.0
                break
            exponent = math.log(g1 / g2) / math.log(2.0)
            if exponent <= 1.0 + 1e-2:
                raise NonIntegrableError(
                    f"Radial integrand decays like r^-{exponent:.3f}; the integral diverges.",
                    exponent=exponent,
                )
            tail = g(cutoff) * cutoff / (exponent - 1.0)
            if abs(tail) < settings.TAIL_TOLERANCE or cutoff >= 1e16:
                break
            cutoff *= 10.0

        edges = [0.0, 1.0]
        while edges[-1] < cutoff:
            edges.append(min(edges[-1] * 10.0, cutoff))

        total, abserr = 0.0, 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            points = [SQRT3] if lo < SQRT3 < hi else None
            val, err = integrate.quad(
                g, lo, hi, epsabs=0.0, epsrel=settings.QUAD_EPSREL,
                limit=settings.QUAD_LIMIT, points=points,
            )
            total += val
            abserr += err

        logger.debug("radial integral %s: %.16g (tail %.3e, p=%.3f, R=%.1e)",
                     spec.factors, total + tail, tail, exponent, cutoff)
        return QuadratureResult(
            value=total + tail, cutoff=cutoff, tail=tail, tail_exponent=exponent, abserr=abserr
        )

    def closed_form_constants(self) -> dict[str, tuple[float, float]]:
        """Quadrature value and exact value for the four bubble integrals."""
        cases = {
            "int_B5": (RadialIntegrand(((ProfileKind.BUBBLE, 5),)), 4.0 * math.pi * SQRT3),
            "int_B5_over_r": (
                RadialIntegrand(((ProfileKind.BUBBLE, 5),), RadialWeight.INV_R), 4.0 * math.pi
            ),
            "int_r_B5": (RadialIntegrand(((ProfileKind.BUBBLE, 5),), RadialWeight.R), 24.0 * math.pi),
            "five_int_W_B4_over_r": (
                RadialIntegrand(
                    ((ProfileKind.CORRECTION_W, 1), (ProfileKind.BUBBLE, 4)), RadialWeight.INV_R, 5.0
                ),
                12.0 * math.pi * (math.pi - 1.0),
            ),
        }
        return {name: (self.radial_integral(spec).value, exact) for name, (spec, exact) in cases.items()}

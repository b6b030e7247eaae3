"""Closed-form Green's functions on a ball centered at the origin.

Images formula for a = 0 (any source), radial Helmholtz forms for constant a with
the source at the center. Used by the verification suite and by tests.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate


def images_green(x: np.ndarray, y: np.ndarray, radius: float = 1.0) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    direct = 1.0 / np.linalg.norm(x - y)
    ny = np.linalg.norm(y)
    if ny == 0.0:
        return float((direct - 1.0 / radius) / (4.0 * math.pi))
    image = radius**2 * y / ny**2
    return float((direct - radius / (ny * np.linalg.norm(x - image))) / (4.0 * math.pi))


def images_green_gradient_x(x: np.ndarray, y: np.ndarray, radius: float = 1.0) -> np.ndarray:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    d = x - y
    grad = -d / (4.0 * math.pi * np.linalg.norm(d) ** 3)
    ny = np.linalg.norm(y)
    if ny > 0.0:
        e = x - radius**2 * y / ny**2
        grad = grad + (radius / ny) * e / (4.0 * math.pi * np.linalg.norm(e) ** 3)
    return grad


def images_robin(y: np.ndarray, radius: float = 1.0) -> float:
    s = float(np.sum(np.asarray(y, dtype=float) ** 2))
    return radius / (4.0 * math.pi * (radius**2 - s))


def images_robin_gradient(y: np.ndarray, radius: float = 1.0) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    s = float(np.sum(y**2))
    return radius * y / (2.0 * math.pi * (radius**2 - s) ** 2)


def radial_green(r: np.ndarray | float, a: float, radius: float = 1.0) -> np.ndarray:
    """G_a(x, 0) for constant a on the ball, |x| = r."""
    r = np.asarray(r, dtype=float)
    if a < 0.0:
        k = math.sqrt(-a)
        return (np.cos(k * r) - np.sin(k * r) / math.tan(k * radius)) / (4.0 * math.pi * r)
    if a > 0.0:
        k = math.sqrt(a)
        return (np.cosh(k * r) - np.sinh(k * r) / math.tanh(k * radius)) / (4.0 * math.pi * r)
    return (1.0 / r - 1.0 / radius) / (4.0 * math.pi)


def radial_robin(a: float, radius: float = 1.0) -> float:
    """phi_a(0): sqrt(lambda) cot(sqrt(lambda) R)/(4 pi) for a = -lambda."""
    if a < 0.0:
        k = math.sqrt(-a)
        return k / math.tan(k * radius) / (4.0 * math.pi)
    if a > 0.0:
        k = math.sqrt(a)
        return k / math.tanh(k * radius) / (4.0 * math.pi)
    return 1.0 / (4.0 * math.pi * radius)


def radial_green_square_integral(a: float, radius: float = 1.0) -> float:
    """int over the ball of G_a(0, z)^2 dz; equals 1/(12 pi) for a = 0 on the unit ball."""
    def integrand(r: float) -> float:
        return float(4.0 * math.pi * (r * radial_green(r, a, radius)) ** 2)

    value, _ = integrate.quad(integrand, 0.0, radius, epsabs=0.0, epsrel=1e-12)
    return value

"""Dirichlet Green's function of -Laplace + a on balls and boxes.

G is never solved against a discrete delta. The regular part H(., y) solves
-Laplace H + a H = a/(4 pi |x - y|) with H = 1/(4 pi |x - y|) on the boundary, and
G = 1/(4 pi |x - y|) - H. The Robin function is phi_a(y) = H(y, y).
"""

from __future__ import annotations

import logging
import math
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Iterable, Sequence

import numpy as np

from blowup_lab.config import settings
from blowup_lab.models.domain import DomainSpec, PotentialSpec
from blowup_lab.models.green import (
    CoercivityReport,
    ConvergenceReport,
    ExpansionReport,
    GreenField,
    RecursionReport,
    ResolventReport,
)
from blowup_lab.numerics.errors import NumericalError
from blowup_lab.numerics.grid import Grid
from blowup_lab.numerics.krylov import iteration_cap, pcg_solve, smallest_eigenvalue
from blowup_lab.numerics.operator import DirichletOperator, assemble_operator
from blowup_lab.numerics.singular import (
    cell_average_inverse_distance,
    node_sum_correction,
    punctured_mask,
)

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi


class NotCoerciveError(NumericalError):
    def __init__(self, message: str, smallest_eigenvalue: float, eps: float | None = None):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue
        self.eps = eps


class GeometryError(NumericalError):
    pass


class NearSingularityError(NumericalError):
    pass


class FitDegenerateError(NumericalError):
    pass


# ---------- h_k series for constant a ----------

def hk_term(a: float, d: float | np.ndarray, k: int) -> np.ndarray:
    """h_k = a^{k+1} d^{2k+1} / (4 pi (2k+2)!)."""
    return a ** (k + 1) * np.asarray(d, dtype=float) ** (2 * k + 1) / (FOUR_PI * math.factorial(2 * k + 2))


def hk_series_partial_sum(a_const: float, x: np.ndarray, y: np.ndarray, K: int) -> float:
    if K < 0:
        raise ValueError("K must be non-negative.")
    d = float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))
    return float(sum(hk_term(a_const, d, k) for k in range(K + 1)))


def _radial_laplacian(fn, r: np.ndarray) -> np.ndarray:
    step = 1e-3 * r
    f0, fp, fm = fn(r), fn(r + step), fn(r - step)
    second = (fp - 2.0 * f0 + fm) / step**2
    first = (fp - fm) / (2.0 * step)
    return second + 2.0 * first / r


def hk_recursion_check(a_const: float, K: int, radii: Sequence[float] = (0.3, 0.6, 0.9)) -> RecursionReport:
    """-Laplace h_k = -a h_{k-1} for k >= 1; reports the sign of -Laplace h_0 against a/(4 pi r)."""
    r = np.asarray(radii, dtype=float)
    errors = []
    for k in range(1, K + 1):
        lhs = -_radial_laplacian(lambda s, k=k: hk_term(a_const, s, k), r)
        rhs = -a_const * hk_term(a_const, r, k - 1)
        errors.append(float(np.max(np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1e-300))))
    lap0 = -_radial_laplacian(lambda s: hk_term(a_const, s, 0), r)
    sign = int(np.sign(np.mean(lap0 / (a_const / (FOUR_PI * r))))) if a_const != 0.0 else 0
    return RecursionReport(
        max_relative_error=max(errors) if errors else 0.0,
        h0_laplacian_sign=sign,
        per_degree=tuple(errors),
    )


# ---------- source differences ----------

def stencil_offsets(step: float) -> tuple[float, float, float, float]:
    return step, -step, 0.5 * step, -0.5 * step


def richardson_slope(values: Sequence[float], step: float) -> float:
    """Derivative from samples at the `stencil_offsets` of step; the O(step^2) term cancels."""
    p, m, ph, mh = values
    coarse = (p - m) / (2.0 * step)
    fine = (ph - mh) / step
    return (4.0 * fine - coarse) / 3.0


class GreenService:

    def __init__(self, threads: int = 1, max_fields: int = 48):
        self.threads = max(1, int(threads))
        self.max_fields = max_fields
        self._lock = threading.RLock()
        self._operators: dict[tuple, DirichletOperator] = {}
        self._coercivity: dict[tuple, CoercivityReport] = {}
        self._fields: OrderedDict[tuple, GreenField] = OrderedDict()
        self._robin: dict[tuple, float] = {}
        self._gradients: dict[tuple, np.ndarray] = {}

    # ---------- keys ----------

    @staticmethod
    def _point_key(y: np.ndarray) -> tuple[int, int, int]:
        step = settings.POINT_ROUNDING
        return tuple(int(round(float(v) / step)) for v in np.asarray(y, dtype=float))

    def _key(self, dom: DomainSpec, a: PotentialSpec, y: np.ndarray | None = None) -> tuple:
        base = (dom, a.cache_key)
        return base if y is None else base + (self._point_key(y),)

    # ---------- operator and coercivity ----------

    def operator(self, dom: DomainSpec, a: PotentialSpec) -> DirichletOperator:
        key = self._key(dom, a)
        with self._lock:
            op = self._operators.get(key)
        if op is None:
            op = assemble_operator(Grid.from_domain(dom), a)
            with self._lock:
                self._operators[key] = op
        return op

    def check_coercivity(self, dom: DomainSpec, a: PotentialSpec) -> CoercivityReport:
        key = self._key(dom, a)
        with self._lock:
            report = self._coercivity.get(key)
        if report is None:
            estimate = smallest_eigenvalue(self.operator(dom, a))
            report = CoercivityReport(
                smallest_eigenvalue=estimate.smallest_eigenvalue, coercive=estimate.coercive
            )
            with self._lock:
                self._coercivity[key] = report
        return report

    def require_coercive(self, dom: DomainSpec, a: PotentialSpec, eps: float | None = None) -> None:
        report = self.check_coercivity(dom, a)
        if not report.coercive:
            where = "" if eps is None else f" at eps={eps:g}"
            raise NotCoerciveError(
                f"-Laplace + a is not coercive on the grid{where} "
                f"(smallest eigenvalue estimate {report.smallest_eigenvalue:.3e}).",
                smallest_eigenvalue=report.smallest_eigenvalue,
                eps=eps,
            )

    # ---------- solves ----------

    def _check_source(self, grid: Grid, y: np.ndarray, margin_cells: float) -> None:
        dist = grid.distance_to_boundary(y)
        need = margin_cells * float(np.max(grid.h))
        if dist <= need:
            raise GeometryError(
                f"Source {tuple(np.round(y, 6))} lies {dist:.4f} from the boundary; "
                f"at least {need:.4f} is required."
            )

    def solve_green(
        self, dom: DomainSpec, a: PotentialSpec, y: Sequence[float], with_gradient: bool = False
    ) -> GreenField:
        y = np.asarray(y, dtype=float)
        key = self._key(dom, a, y)
        with self._lock:
            field = self._fields.get(key)
            if field is not None:
                self._fields.move_to_end(key)
        if field is None:
            field = self._solve(dom, a, y)
            with self._lock:
                self._fields[key] = field
                self._robin[key] = field.robin_value
                while len(self._fields) > self.max_fields:
                    self._fields.popitem(last=False)
        if with_gradient and field.robin_gradient is None:
            field = replace(field, robin_gradient=self.robin_gradient(dom, a, y))
        return field

    def _solve(self, dom: DomainSpec, a: PotentialSpec, y: np.ndarray) -> GreenField:
        op = self.operator(dom, a)
        grid = op.grid
        self._check_source(grid, y, settings.SOURCE_MARGIN_CELLS)
        self.require_coercive(dom, a)

        coords = grid.nodes[tuple(op.unknown_nodes.T)]
        with np.errstate(divide="ignore"):
            singular = 1.0 / (FOUR_PI * np.linalg.norm(coords - y, axis=1))

        # cell averages replace nodal values around the source, blended out
        # between reach - 1/2 and reach + 1/2 cells so the data move smoothly with y
        reach = settings.SINGULAR_AVERAGE_CELLS
        t = np.max(np.abs(coords - y) / grid.h, axis=1)
        s = np.clip(reach + 0.5 - t, 0.0, 1.0)
        blend = s * s * (3.0 - 2.0 * s)
        for row in np.flatnonzero(blend > 0.0):
            node = tuple(int(v) for v in op.unknown_nodes[row])
            average = cell_average_inverse_distance(grid, node, y) / FOUR_PI
            nodal = singular[row] if np.isfinite(singular[row]) else average
            singular[row] = blend[row] * average + (1.0 - blend[row]) * nodal

        a_nodes = grid.potential_on_nodes(a)[tuple(op.unknown_nodes.T)]
        boundary = 1.0 / (FOUR_PI * np.linalg.norm(op.arm_points - y, axis=1))
        rhs = a_nodes * singular + op.boundary_rhs(boundary)

        h_unknown, stats = pcg_solve(op.matrix, op.diagonal, rhs, maxiter=iteration_cap(op))

        with np.errstate(divide="ignore"):
            direct = 1.0 / (FOUR_PI * np.linalg.norm(grid.nodes - y, axis=-1))
        regular = op.scatter(h_unknown, fill=np.where(np.isfinite(direct), direct, 0.0))
        values = np.where(grid.interior, direct - regular, 0.0)

        field = GreenField(
            source=y,
            grid=grid,
            values=values,
            regular_part=regular,
            robin_value=0.0,
            cone_coefficient=float(grid.potential_at(a, y)[0]) / (8.0 * math.pi),
            cg_iterations=stats.iterations,
        )
        robin = float(grid.interpolator(field.smooth_regular_part())(y[None, :])[0])
        logger.debug("green solve at %s: phi=%.8f (%d CG iterations)", y, robin, stats.iterations)
        return replace(field, robin_value=robin)

    def solve_many(
        self, dom: DomainSpec, a: PotentialSpec, sources: Iterable[Sequence[float]]
    ) -> list[GreenField]:
        sources = [np.asarray(s, dtype=float) for s in sources]
        if self.threads == 1 or len(sources) < 2:
            return [self.solve_green(dom, a, s) for s in sources]
        # operator and coercivity are built once before the workers share them
        self.require_coercive(dom, a)
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(lambda s: self.solve_green(dom, a, s), sources))

    # ---------- Robin function ----------

    def robin_function(self, dom: DomainSpec, a: PotentialSpec, y: Sequence[float]) -> float:
        key = self._key(dom, a, np.asarray(y, dtype=float))
        with self._lock:
            value = self._robin.get(key)
        if value is None:
            value = self.solve_green(dom, a, y).robin_value
        return value

    def source_stencil(
        self, dom: DomainSpec, a: PotentialSpec, y: Sequence[float]
    ) -> tuple[np.ndarray, list[GreenField]]:
        """Fields at y + o e_l for the offsets of `stencil_offsets`, axis by axis.

        Returns the per-axis steps 2h_l and the 12 fields. Offsets are whole grid cells, so
        every stencil source sits at the same position relative to its cell.
        """
        y = np.asarray(y, dtype=float)
        grid = Grid.from_domain(dom)
        self._check_source(grid, y, settings.SOURCE_MARGIN_CELLS + 2.0)
        steps = 2.0 * grid.h
        stencil = []
        for axis in range(3):
            for offset in stencil_offsets(steps[axis]):
                shifted = y.copy()
                shifted[axis] += offset
                stencil.append(shifted)
        return steps, self.solve_many(dom, a, stencil)

    def robin_gradient(self, dom: DomainSpec, a: PotentialSpec, y: Sequence[float]) -> np.ndarray:
        """Central differences in the source with step 2h, Richardson-extrapolated once.

        Each stencil point costs one linear solve (12 per gradient).
        """
        y = np.asarray(y, dtype=float)
        key = self._key(dom, a, y)
        with self._lock:
            cached = self._gradients.get(key)
        if cached is not None:
            return cached.copy()

        steps, fields = self.source_stencil(dom, a, y)
        values = [f.robin_value for f in fields]
        gradient = np.array([richardson_slope(values[4 * axis: 4 * axis + 4], steps[axis]) for axis in range(3)])
        with self._lock:
            self._gradients[key] = gradient
        return gradient.copy()

    def robin_map(
        self, dom: DomainSpec, a: PotentialSpec, probe_resolution: int = 17
    ) -> tuple[np.ndarray, np.ndarray]:
        """phi_a on a probe lattice over the grid's bounding box; NaN where a probe is inadmissible."""
        grid = Grid.from_domain(dom)
        axes = [np.linspace(grid.lo[i], grid.hi[i], probe_resolution) for i in range(3)]
        probes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        margin = settings.SOURCE_MARGIN_CELLS * float(np.max(grid.h))
        admissible = [p for p in probes if grid.distance_to_boundary(p) > margin]
        fields = self.solve_many(dom, a, admissible)
        values = np.full(len(probes), np.nan)
        lookup = {self._point_key(f.source): f.robin_value for f in fields}
        for i, p in enumerate(probes):
            values[i] = lookup.get(self._point_key(p), np.nan)
        return probes, values

    # ---------- evaluation of a solved field ----------

    def green_value(self, field: GreenField, x: Sequence[float]) -> float:
        x = np.asarray(x, dtype=float)
        if not field.grid.contains(x):
            return 0.0
        r = float(np.linalg.norm(x - field.source))
        if r == 0.0:
            raise NearSingularityError("G_a(x, y) is singular at x = y.")
        smooth = float(field.grid.interpolator(field.smooth_regular_part())(x[None, :])[0])
        return 1.0 / (FOUR_PI * r) - smooth + field.cone_coefficient * r

    def regular_part_gradient(self, field: GreenField, x: np.ndarray) -> np.ndarray:
        grads = np.gradient(field.smooth_regular_part(), *field.grid.axes, edge_order=2)
        smooth = np.array([float(field.grid.interpolator(g)(x[None, :])[0]) for g in grads])
        d = x - field.source
        return smooth - field.cone_coefficient * d / np.linalg.norm(d)

    def green_gradient_x(self, field: GreenField, x: Sequence[float]) -> np.ndarray:
        """grad_x G(x, y): singular part differentiated exactly, H interpolant numerically."""
        x = np.asarray(x, dtype=float)
        d = x - field.source
        r = float(np.linalg.norm(d))
        exclusion = settings.GRADIENT_EXCLUSION_CELLS * float(np.max(field.grid.h))
        if r <= exclusion:
            raise NearSingularityError(
                f"|x - y| = {r:.4f} is inside the exclusion radius {exclusion:.4f}."
            )
        return -d / (FOUR_PI * r**3) - self.regular_part_gradient(field, x)

    # ---------- expansion checks ----------

    def ha_local_expansion_check(
        self, dom: DomainSpec, a: PotentialSpec, y: Sequence[float], with_gradient: bool = True
    ) -> ExpansionReport:
        """Fit c0 + c1.(z-y) + c2|z-y| (+ |z-y|^2 and |z-y|^3 terms) to G - 1/(4 pi |z-y|) on a shell."""
        if not a.is_smooth_family:
            raise ValueError("The local expansion check needs a constant or polynomial potential.")
        y = np.asarray(y, dtype=float)
        field = self.solve_green(dom, a, y)
        grid = field.grid
        hmax = float(np.max(grid.h))
        r = np.linalg.norm(grid.nodes - y, axis=-1)
        shell = (
            grid.interior
            & (r >= settings.SHELL_INNER_CELLS * hmax)
            & (r <= settings.SHELL_OUTER_CELLS * hmax)
        )
        pts = grid.nodes[shell] - y
        rr = r[shell]
        target = -field.regular_part[shell]
        if len(rr) < settings.FIT_MIN_POINTS:
            raise FitDegenerateError(f"Only {len(rr)} shell nodes available for the fit.")

        design = np.column_stack([np.ones_like(rr), pts, rr, rr**2, rr**3])
        scale = np.max(np.abs(design), axis=0)
        condition = float(np.linalg.cond(design / scale))
        if not np.isfinite(condition) or condition > settings.FIT_MAX_CONDITION:
            raise FitDegenerateError(f"Shell fit is ill-conditioned (condition {condition:.2e}).")
        coef, *_ = np.linalg.lstsq(design / scale, target, rcond=None)
        coef = coef / scale

        expected_c1 = None
        if with_gradient:
            expected_c1 = tuple(float(v) for v in -0.5 * self.robin_gradient(dom, a, y))
        a_y = float(grid.potential_at(a, y)[0])
        return ExpansionReport(
            c0=float(coef[0]),
            c1=tuple(float(v) for v in coef[1:4]),
            c2=float(coef[4]),
            expected_c0=-field.robin_value,
            expected_c1=expected_c1,
            expected_c2=a_y / (8.0 * math.pi),
            condition=condition,
            points=int(len(rr)),
        )

    def gradient_expansion_check(
        self, dom: DomainSpec, a: PotentialSpec, y: Sequence[float], x: Sequence[float]
    ) -> tuple[np.ndarray, np.ndarray]:
        """Numerical grad_x G(x, y) next to its local model
        -(x-y)/(4 pi r^3) - grad(phi)(y)/2 + a(y)(x-y)/(8 pi r).
        """
        y, x = np.asarray(y, dtype=float), np.asarray(x, dtype=float)
        field = self.solve_green(dom, a, y)
        numerical = self.green_gradient_x(field, x)
        d = x - y
        r = float(np.linalg.norm(d))
        a_y = float(field.grid.potential_at(a, y)[0])
        model = -d / (FOUR_PI * r**3) - 0.5 * self.robin_gradient(dom, a, y) + a_y * d / (8.0 * math.pi * r)
        return numerical, model

    def series_remainder(self, field: GreenField, a_const: float, K: int) -> np.ndarray:
        """eta = H_a + sum_{k<=K} h_k on the interior nodes (H_a = eta - sum h_k)."""
        d = np.linalg.norm(field.grid.nodes - field.source, axis=-1)
        partial = sum(hk_term(a_const, d, k) for k in range(K + 1))
        return np.where(field.grid.interior, field.regular_part + partial, np.nan)

    # ---------- integrals ----------

    def green_square_integral(self, field: GreenField, V: PotentialSpec) -> float:
        """int V G_a(., y)^2 with the r^-2 and r^-1 parts at y corrected on the 3^3 block."""
        grid = field.grid
        y = field.source
        v_nodes = grid.potential_on_nodes(V)
        mask = punctured_mask(grid, y)
        with np.errstate(invalid="ignore", over="ignore"):
            body = float(np.sum(np.where(mask, v_nodes * field.values**2, 0.0))) * grid.cell_volume
        v_y = float(grid.potential_at(V, y)[0])
        correction = v_y * (
            node_sum_correction(grid, y, 2.0) / FOUR_PI**2
            - 2.0 * field.robin_value * node_sum_correction(grid, y, 1.0) / FOUR_PI
        )
        return body + correction

    def green_product_integral(self, first: GreenField, second: GreenField, V: PotentialSpec) -> float:
        """int V G_a(., y1) G_a(., y2) for distinct sources, r^-1 parts corrected at both."""
        grid = first.grid
        v_nodes = grid.potential_on_nodes(V)
        mask = punctured_mask(grid, first.source) & punctured_mask(grid, second.source)
        with np.errstate(invalid="ignore", over="ignore"):
            body = float(np.sum(np.where(mask, v_nodes * first.values * second.values, 0.0))) * grid.cell_volume
        correction = 0.0
        for singular, smooth in ((first, second), (second, first)):
            y = singular.source
            v_y = float(grid.potential_at(V, y)[0])
            if v_y != 0.0:
                correction += v_y * self.green_value(smooth, y) * node_sum_correction(grid, y, 1.0) / FOUR_PI
        return body + correction

    def resolvent_perturbation_check(
        self,
        dom: DomainSpec,
        a: PotentialSpec,
        V: PotentialSpec,
        y: Sequence[float],
        eps_list: Sequence[float] = (1e-2, 5e-3),
    ) -> ResolventReport:
        y = np.asarray(y, dtype=float)
        base = self.solve_green(dom, a, y)
        for eps in eps_list:
            self.require_coercive(dom, a.combined(V, 1.0, eps), eps=eps)
        slopes = []
        for eps in eps_list:
            perturbed = self.robin_function(dom, a.combined(V, 1.0, eps), y)
            slopes.append((perturbed - base.robin_value) / eps)

        if len(eps_list) >= 2:
            (e1, s1), (e2, s2) = sorted(zip(eps_list, slopes))[:2]
            extrapolated = (e2 * s1 - e1 * s2) / (e2 - e1)
        else:
            extrapolated = slopes[0]
        integral = self.green_square_integral(base, V)
        denom = max(abs(integral), 1e-300)
        return ResolventReport(
            eps=tuple(float(e) for e in eps_list),
            slopes=tuple(float(s) for s in slopes),
            extrapolated_slope=float(extrapolated),
            integral=float(integral),
            relative_discrepancy=abs(extrapolated - integral) / denom if integral != 0.0 else abs(extrapolated),
        )

    # ---------- convergence ----------

    def convergence_study(
        self,
        dom: DomainSpec,
        a: PotentialSpec,
        y: Sequence[float],
        oracle: float,
        resolutions: Sequence[int] = (32, 48, 64),
    ) -> ConvergenceReport:
        values, errors, spacings = [], [], []
        for n in resolutions:
            refined = dom.with_resolution(n)
            values.append(self.robin_function(refined, a, y))
            errors.append(abs(values[-1] - oracle))
            spacings.append(float(np.max(Grid.from_domain(refined).h)))
        slope = float(np.polyfit(np.log(spacings), np.log(np.maximum(errors, 1e-300)), 1)[0])
        logger.info("convergence study: errors %s, observed order %.2f", errors, slope)
        return ConvergenceReport(
            resolutions=tuple(resolutions),
            values=tuple(values),
            errors=tuple(errors),
            observed_order=slope,
            oracle=oracle,
        )

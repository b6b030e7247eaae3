from __future__ import annotations

import logging
import math
from dataclasses import asdict
from pathlib import Path
from time import perf_counter
from typing import Any

import numpy as np

from blowup_lab import __version__
from blowup_lab.cli.dependencies import Services
from blowup_lab.cli.verify import VerificationSuite, describe
from blowup_lab.data.artifact_repo import ArtifactRepo
from blowup_lab.data.spec_repo import SpecError
from blowup_lab.models.interaction import BubbleConfiguration, ConfigurationResult, TraceRow
from blowup_lab.models.linearized import Branch
from blowup_lab.models.prediction import RateKind
from blowup_lab.models.problem import ProblemSpec, RunReport, Task
from blowup_lab.numerics.grid import Grid
from blowup_lab.service.interaction_service import ContinuationRangeError, NoConvergenceError
from blowup_lab.service.linearized_service import IntegerExponentError
from blowup_lab.service.profile_service import InvalidParameterError

logger = logging.getLogger(__name__)

_AXES = "xyz"


def _clean(value: Any) -> Any:
    """JSON-ready copy: numpy scalars and arrays to Python, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value) if math.isfinite(value) else None
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def _plane(grid: Grid, values: np.ndarray, axis: int, index: int) -> tuple[list[str], list[np.ndarray]]:
    """The n^2 nodes of the lattice plane `index` normal to `axis`."""
    u_axis, v_axis = [i for i in range(3) if i != axis]
    u, v = np.meshgrid(grid.axes[u_axis], grid.axes[v_axis], indexing="ij")
    slab = np.take(values, index, axis=axis)
    slab = np.where(np.isfinite(slab), slab, np.nan)
    return [_AXES[u_axis], _AXES[v_axis], "value"], [u.ravel(), v.ravel(), slab.ravel()]


def _trace_columns(trace: tuple[TraceRow, ...]) -> list[np.ndarray]:
    return [
        np.array([row.iteration for row in trace], dtype=float),
        np.array([row.tau for row in trace]),
        np.array([row.rho for row in trace]),
        np.array([row.grad_norm for row in trace]),
        np.array([row.step for row in trace]),
    ]


class TaskRunner:
    """Runs one ProblemSpec and writes its artifacts, manifest, report and summary."""

    def __init__(self, services: Services, out_dir: Path):
        self.services = services
        self.out_dir = Path(out_dir)

    def run(self, spec: ProblemSpec) -> RunReport:
        repo = ArtifactRepo(self.out_dir, prefix=spec.outputs.prefix)
        report = RunReport(task=spec.task, schema_version=spec.schema_version, version=__version__)
        handlers = {
            Task.ROBIN_MAP: self._robin_map,
            Task.GREEN_EVAL: self._green_eval,
            Task.FIND_CONFIG: self._find_config,
            Task.PREDICT: self._predict,
            Task.LINEARIZED: self._linearized,
            Task.VERIFY: self._verify,
        }
        logger.info("task %s started", spec.task.value)
        started = perf_counter()
        handlers[spec.task](spec, repo, report)
        report.timings["task"] = perf_counter() - started
        if report.failed_checks:
            report.status = "failed"
        report.artifacts = repo.entries
        repo.write_manifest()
        repo.write_report(report)
        repo.write_summary(report)
        logger.info("task %s finished in %.2f s (%s)", spec.task.value, report.timings["task"], report.status)
        return report

    # ---------- green ----------

    def _robin_map(self, spec: ProblemSpec, repo: ArtifactRepo, report: RunReport) -> None:
        dom, a = spec.domain_spec(), spec.a()
        m = spec.parameters.probe_resolution
        probes, values = self.services.green.robin_map(dom, a, m)
        repo.write_csv("robin_map.csv", ["x", "y", "z", "phi"], [probes[:, 0], probes[:, 1], probes[:, 2], values])

        axis = spec.parameters.plane_axis
        lattice = probes.reshape(m, m, m, 3)
        grid_values = values.reshape(m, m, m)
        u_axis, v_axis = [i for i in range(3) if i != axis]
        middle = m // 2
        coords = np.take(lattice, middle, axis=axis).reshape(-1, 3)
        repo.write_csv(
            "robin_plane.csv",
            [_AXES[u_axis], _AXES[v_axis], "phi"],
            [coords[:, u_axis], coords[:, v_axis], np.take(grid_values, middle, axis=axis).ravel()],
        )

        finite = values[np.isfinite(values)]
        grid = Grid.from_domain(dom)
        center = 0.5 * (grid.lo + grid.hi)
        nearest = int(np.argmin(np.linalg.norm(probes - center, axis=1)))
        summary = {
            "probe_resolution": m,
            "admissible": int(finite.size),
            "phi_min": float(np.min(finite)) if finite.size else None,
            "phi_max": float(np.max(finite)) if finite.size else None,
            "phi_center": values[nearest],
            "center_probe": probes[nearest],
        }
        repo.write_json("robin_map.json", _clean(summary))
        if np.isfinite(values[nearest]):
            report.residuals["phi_center"] = float(values[nearest])

    def _green_eval(self, spec: ProblemSpec, repo: ArtifactRepo, report: RunReport) -> None:
        dom, a = spec.domain_spec(), spec.a()
        params = spec.parameters
        if not params.sources:
            raise SpecError("parameters.sources: GreenEval needs at least one source", "parameters.sources")
        green = self.services.green
        fields = green.solve_many(dom, a, params.sources)
        rows = []
        for i, field in enumerate(fields):
            values = [green.green_value(field, x) for x in params.eval_points]
            rows.append({
                "source": field.source,
                "robin": field.robin_value,
                "cg_iterations": field.cg_iterations,
                "values": values,
            })
            index = field.grid.nearest_index(field.source)[params.plane_axis]
            header, columns = _plane(field.grid, field.values, params.plane_axis, index)
            repo.write_csv(f"green_plane_{i}.csv", header, columns)
        repo.write_json("green_eval.json", _clean({"eval_points": params.eval_points, "sources": rows}))
        report.residuals["max_cg_iterations"] = float(max(f.cg_iterations for f in fields))

    # ---------- configurations ----------

    def _configuration(self, spec: ProblemSpec, repo: ArtifactRepo) -> ConfigurationResult:
        params = spec.parameters
        init = BubbleConfiguration(points=np.asarray(params.init_points, dtype=float))
        try:
            result = self.services.interaction.find_blowup_configuration(
                spec.domain_spec(), spec.a(), params.n, init, tau0=params.tau0, fix_tau=params.fix_tau
            )
        except (NoConvergenceError, ContinuationRangeError) as e:
            if e.trace:
                repo.write_csv("continuation_trace.csv", ["iteration", "tau", "rho", "grad_norm", "step"],
                               _trace_columns(e.trace))
            raise
        repo.write_csv("continuation_trace.csv", ["iteration", "tau", "rho", "grad_norm", "step"],
                       _trace_columns(result.trace))
        return result

    def _configuration_payload(self, spec: ProblemSpec, result: ConfigurationResult) -> dict:
        spectrum = result.spectrum
        payload = {
            "tau": result.tau,
            "tau_fixed": result.tau_fixed,
            "points": result.config.points,
            "weights": result.config.weights,
            "a_values": result.config.a_values,
            "rho": spectrum.rho,
            "rho_residual": result.rho_residual,
            "gradient_residual": result.gradient_residual,
            "certified": result.certified,
            "iterations": result.iterations,
            "eigenvalues": spectrum.eigenvalues,
            "spectral_gap": spectrum.spectral_gap,
            "asymmetry": spectrum.asymmetry,
        }
        if spec.parameters.hessian:
            hessian = self.services.interaction.hessian_report(
                spec.domain_spec(), spec.a().scaled(result.tau), result.config
            )
            payload["hessian"] = asdict(hessian)
        return payload

    def _find_config(self, spec: ProblemSpec, repo: ArtifactRepo, report: RunReport) -> None:
        result = self._configuration(spec, repo)
        repo.write_json("configuration.json", _clean(self._configuration_payload(spec, result)))
        report.residuals["rho"] = result.rho_residual
        report.residuals["grad_rho"] = result.gradient_residual
        report.residuals["tau"] = result.tau

    def _predict(self, spec: ProblemSpec, repo: ArtifactRepo, report: RunReport) -> None:
        dom, V = spec.domain_spec(), spec.V()
        result = self._configuration(spec, repo)
        a_tau = spec.a().scaled(result.tau)
        predictor = self.services.predictor
        prediction = predictor.blowup_rate(dom, a_tau, V, result)

        payload = {
            "configuration": self._configuration_payload(spec, result),
            "rates": [r.to_dict() for r in prediction.rates],
            "scaled_rates": prediction.scaled_rates(),
            "numerator": prediction.numerator,
            "denominator": prediction.denominator,
            "denominator_identity": prediction.denominator_identity,
            "qv_values": prediction.qv_values,
            "limit_profile_coefficients": prediction.limit_profile_coefficients,
            "sign_consistent": prediction.sign_consistent,
            "single_bubble": prediction.single_bubble.to_dict() if prediction.single_bubble else None,
            "diagnostic": prediction.diagnostic,
        }
        if all(r.kind is RateKind.FINITE and r.value > 0.0 for r in prediction.rates):
            sweep = predictor.expansion_sweep(dom, a_tau, V, prediction, spec.parameters.eps_sweep)
            payload["expansion_sweep"] = {
                "rows": [asdict(row) for row in sweep.rows],
                "ratio_passed": sweep.ratio_passed,
                "below_floor": sweep.below_floor,
                "floor": sweep.floor,
                "passed": sweep.passed,
            }
        else:
            payload["expansion_sweep"] = None
            logger.warning("expansion sweep skipped: rates are not all finite and positive")
        repo.write_json("prediction.json", _clean(payload))

        profile = predictor.limit_profile(dom, a_tau, prediction.config)
        axis = spec.parameters.plane_axis
        index = profile.grid.nearest_index(profile.points[0])[axis]
        header, columns = _plane(profile.grid, profile.values, axis, index)
        repo.write_csv("limit_profile_plane.csv", header, columns)

        report.residuals["rho"] = result.rho_residual
        report.residuals["grad_rho"] = result.gradient_residual
        if prediction.denominator != 0.0:
            report.residuals["denominator_paths"] = abs(
                prediction.denominator - prediction.denominator_identity
            ) / abs(prediction.denominator)

    # ---------- linearized ----------

    def _linearized(self, spec: ProblemSpec, repo: ArtifactRepo, report: RunReport) -> None:
        params = spec.parameters
        linearized = self.services.linearized
        degrees = sorted(set(params.degrees))
        requests = [(params.N, k, b) for k in degrees for b in (Branch.REGULAR, Branch.SINGULAR)]
        try:
            modes = linearized.solve_modes(requests, params.r_max)
        except InvalidParameterError as e:
            raise SpecError(f"parameters: {e}", "parameters") from e

        per_degree: dict[int, dict] = {k: {} for k in degrees}
        for mode in modes:
            repo.write_csv(
                f"mode_N{mode.N}_k{mode.k}_{mode.branch.value}.csv", ["r", "v", "dv"], [mode.r, mode.v, mode.dv]
            )
            entry = per_degree[mode.k]
            entry[mode.branch.value] = {
                "log_coordinates": asdict(linearized.log_coordinate_check(mode)),
                "rescalings": mode.rescalings,
            }
            if mode.branch is Branch.REGULAR:
                entry["growth"] = asdict(linearized.growth_report(mode))
        for k in degrees:
            wronskian = linearized.wronskian_report(params.N, k, params.r_max)
            per_degree[k]["wronskian"] = asdict(wronskian)
            report.residuals[f"wronskian_variation_k{k}"] = wronskian.relative_variation

        payload: dict[str, Any] = {"N": params.N, "r_max": params.r_max, "degrees": per_degree}
        if params.tau is not None:
            try:
                certificate = linearized.liouville_certificate(params.N, params.tau, degrees)
            except (IntegerExponentError, InvalidParameterError) as e:
                raise SpecError(f"parameters.tau: {e}", "parameters.tau") from e
            payload["liouville"] = {
                "tau": certificate.tau,
                "only_trivial": certificate.only_trivial,
                "verdicts": [asdict(v) for v in certificate.verdicts],
            }
        repo.write_json("linearized.json", _clean(payload))

    # ---------- verification ----------

    def _verify(self, spec: ProblemSpec, repo: ArtifactRepo, report: RunReport) -> None:
        suite = VerificationSuite(self.services, spec.domain.resolution)
        try:
            checks = suite.run(spec.parameters.checks)
        except KeyError as e:
            raise SpecError(f"parameters.checks: {e.args[0]}", "parameters.checks") from e
        report.checks = checks
        repo.write_json("verify.json", _clean([c.model_dump() for c in checks]))
        logger.info("verification: %s", describe(checks))

"""
End-to-end runs: the accelerated metamodel pipeline, the sparse-grid collocation baseline and their comparison.

Every run is a sequence of named stages. A failing stage raises :class:`~rbfuq.errors.StageError` with the stage's
exit code; outputs written by earlier stages, and a run report naming the failed stage, are left in place.
"""

import contextlib
import functools
import json
import logging
import os
import threading
import time
from typing import Dict, Optional

import cachetools
import numpy as np

from .collocation import CollocationSolution, build_sparse_grid, cubature_stats, interpolate, save_collocation
from .config import PipelineConfig
from .errors import MeshMismatch, RbfUqError, ShapeMismatch, StageError, TooManySimulations
from .fem import BoundaryConditions, solve_deterministic
from .mesh import Mesh, build_lshape_mesh, build_rectangle_mesh, read_mesh, write_mesh
from .metamodel import Metamodel, build_metamodel
from .quantiles import FieldDiff, field_diff, stream_statistics
from .randomfield import DistributionSpec, PiecewiseField
from .rbf import mean_nearest_neighbor_distance
from .sampling import DesignMatrix, cross_doe, low_discrepancy_samples, run_doe, save_design, star_doe
from .screening import (
    Reduction,
    full_hessian_and_D,
    local_nonlinearity_map,
    reduce_parameters,
    screen_star,
)
from .writers import CsvFieldWriter, VtkFieldWriter

__all__ = (
    "ModelProblem",
    "SimulationContext",
    "RunReport",
    "STAGE_EXIT_CODES",
    "build_mesh",
    "run_screening",
    "run_accelerated_pipeline",
    "run_collocation_baseline",
    "solve_collocation",
    "compare",
    "check_refinement",
    "validate_heldout",
    "evaluate_scenario",
    "read_fields",
)

log = logging.getLogger(__name__)

STAGE_EXIT_CODES = {
    "mesh": 3,
    "doe": 4,
    "screening": 5,
    "metamodel": 6,
    "evaluation": 7,
    "collocation": 8,
    "compare": 9,
}

FIELDS_FILE = "fields.csv"
MESH_FILE = "mesh.txt"
METAMODEL_DIR = "metamodel"


# ===== model problem =====
class ModelProblem:
    """
    The nonlinear diffusion problem on a mesh as a function of one normalized parameter point.

    Coordinates ``0..field_dim-1`` are the KL variables of the three fields. With a random Dirichlet value the last
    coordinate is the extra variable and the top boundary value is ``dirichlet_top + dirichlet_sigma * y_D``.
    """

    def __init__(
        self,
        mesh: Mesh,
        field: PiecewiseField,
        dist: DistributionSpec,
        gamma: float = 1.0,
        source: float = 1.0,
        dirichlet_top: float = 1.0,
        dirichlet_sigma: float = 0.0,
        newton_tol: float = 1e-10,
        max_iter: int = 50,
    ):
        self.mesh = mesh
        self.field = field
        self.dist = dist
        self.gamma = gamma
        self.source = source
        self.dirichlet_top = dirichlet_top
        self.dirichlet_sigma = dirichlet_sigma
        self.newton_tol = newton_tol
        self.max_iter = max_iter
        if dist.dim != self.dim:
            raise ShapeMismatch(f"Distribution has {dist.dim} variables, the problem has {self.dim}.")

    @classmethod
    def from_config(cls, config: PipelineConfig, mesh: Mesh) -> "ModelProblem":
        return cls(
            mesh,
            PiecewiseField(config.field_specs()),
            config.distribution(),
            gamma=config["model.gamma"],
            source=config["model.source"],
            dirichlet_top=config["model.dirichlet_top"],
            dirichlet_sigma=config["model.dirichlet_sigma"],
            newton_tol=config["model.newton_tol"],
            max_iter=config["model.max_iter"],
        )

    @property
    def dim(self) -> int:
        return self.field.dim + int(self.dirichlet_sigma > 0)

    @property
    def M(self) -> int:
        return self.mesh.num_nodes

    def solve(self, point) -> np.ndarray:
        """Solves at one normalized parameter point and returns the nodal solution."""
        y = self.dist.to_physical(np.asarray(point, dtype=float).reshape(-1))
        top = self.dirichlet_top
        if self.dirichlet_sigma > 0:
            top += self.dirichlet_sigma * y[-1]
            y = y[:-1]
        report = solve_deterministic(
            self.mesh,
            self.field.bind(y),
            BoundaryConditions.model_problem(top),
            source=self.source,
            gamma=self.gamma,
            newton_tol=self.newton_tol,
            max_iter=self.max_iter,
        )
        return report.solution

    def __repr__(self):
        return f"<ModelProblem M={self.M} L={self.dim} gamma={self.gamma}>"


# ===== simulation bookkeeping =====
class SimulationContext:
    """
    Tracks deterministic solves so a run halts if it dispatches too many, and caches snapshots by exact parameter
    point so coincident design points are solved once.

    ``solves`` counts real solver invocations (cache misses) since the last :meth:`reset`.
    """

    def __init__(self, max_solves: int = 100000, cache_size: int = 4096):
        self.max_solves = max_solves
        self.solves = 0
        self.total_solves = 0
        self._cache = cachetools.LRUCache(maxsize=cache_size)
        self._lock = threading.Lock()
        self._pending = {}
        self.reset()

    def reset(self):
        """Called at the start of each stage; the snapshot cache is kept."""
        with self._lock:
            self.solves = 0

    def clear(self):
        with self._lock:
            self._cache.clear()

    def count_solve(self, n: int = 1):
        """
        Called each time a solve is about to be made.

        :param int n: The number of solves about to be made.
        :raises TooManySimulations: if the budget is exhausted.
        """
        with self._lock:
            self.solves += n
            self.total_solves += n
            if self.solves > self.max_solves:
                raise TooManySimulations(f"More than {self.max_solves} solves dispatched.")

    def solve(self, problem: ModelProblem, point) -> np.ndarray:
        """
        The solution at ``point``, from the cache if present. Concurrent calls with the same point share one solve:
        the first caller solves, the others wait on the point's lock and then read the cache.
        """
        key = (id(problem), tuple(float(v) for v in np.asarray(point).reshape(-1)))
        with self._lock:
            if key in self._cache:
                return self._cache[key]
            key_lock = self._pending.setdefault(key, threading.Lock())
        with key_lock:
            with self._lock:
                if key in self._cache:
                    return self._cache[key]
            try:
                self.count_solve()
                solution = problem.solve(point)
                solution.flags.writeable = False
                with self._lock:
                    self._cache[key] = solution
            finally:
                with self._lock:
                    if self._pending.get(key) is key_lock:
                        del self._pending[key]
        return solution

    def solve_many(self, problem: ModelProblem, points, workers: int = 1) -> DesignMatrix:
        """Solves at every point, in order, through the cache."""
        return run_doe(points, functools.partial(self.solve, problem), workers=workers)

    def __repr__(self):
        return f"<SimulationContext solves={self.solves} total={self.total_solves} cached={len(self._cache)}>"


# ===== reports =====
class RunReport:
    """
    What a run did: per-stage wall time and solve counts, the retained parameters and SVD rank, the files written and
    the resolved config. Computed fields are attached in ``fields`` but not serialized.
    """

    def __init__(self, kind: str, config: PipelineConfig):
        self.kind = kind
        self.config = config
        self.stages: Dict[str, dict] = {}
        self.retained = None
        self.svd_rank = None
        self.outputs = []
        self.details = {}
        self.failed_stage = None
        self.fields: Dict[str, np.ndarray] = {}
        self.metamodel: Optional[Metamodel] = None
        self.mesh: Optional[Mesh] = None

    @property
    def total_solves(self) -> int:
        return sum(s["solves"] for s in self.stages.values())

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "stages": self.stages,
            "total_solves": self.total_solves,
            "retained": self.retained,
            "svd_rank": self.svd_rank,
            "outputs": self.outputs,
            "details": self.details,
            "failed_stage": self.failed_stage,
            "config": self.config.as_dict(),
        }

    def save(self, directory) -> str:
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, "run_report.json")
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True, default=_json_default)
        return path

    def __repr__(self):
        return f"<RunReport kind={self.kind} solves={self.total_solves} retained={self.retained}>"


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Cannot serialize {type(value).__name__}")


@contextlib.contextmanager
def _stage(report: RunReport, name: str, context: SimulationContext):
    context.reset()
    start = time.perf_counter()
    log.info("Stage %s started", name)
    try:
        yield
    except StageError:
        raise
    except (RbfUqError, ValueError, ArithmeticError, OSError) as e:
        report.failed_stage = name
        raise StageError(name, STAGE_EXIT_CODES[name], e) from e
    finally:
        elapsed = time.perf_counter() - start
        report.stages[name] = {"seconds": elapsed, "solves": context.solves}
        log.info("Stage %s: %d solves in %.2f s", name, context.solves, elapsed)


class _Outputs:
    """Writes field files and CSV products into a run directory and records them in the report."""

    def __init__(self, directory, report: RunReport, vtk: bool = False):
        self.directory = directory
        self.report = report
        self.vtk = vtk
        os.makedirs(directory, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    def record(self, path: str) -> str:
        self.report.outputs.append(os.path.relpath(path, self.directory))
        return path

    def fields(self, mesh: Mesh, fields: Dict[str, np.ndarray], stem: str = "fields"):
        self.record(CsvFieldWriter().write(mesh, fields, self.path(stem)))
        if self.vtk:
            self.record(VtkFieldWriter().write(mesh, fields, self.path(stem)))

    def table(self, name: str, header, rows):
        path = self.path(name)
        with open(path, "w", newline="\n") as f:
            f.write(",".join(header) + "\n")
            for row in rows:
                f.write(",".join(_cell(v) for v in row) + "\n")
        self.record(path)


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


# ===== shared stages =====
def build_mesh(config: PipelineConfig) -> Mesh:
    if config["mesh.geometry"] == "square":
        return build_rectangle_mesh(config["mesh.h"])
    return build_lshape_mesh(config["mesh.h"])


def _mesh_stage(config, report, context, out: _Outputs) -> ModelProblem:
    with _stage(report, "mesh", context):
        mesh = build_mesh(config)
        write_mesh(mesh, out.record(out.path(MESH_FILE)))
        problem = ModelProblem.from_config(config, mesh)
        for i, basis in enumerate(problem.field.bases, start=1):
            out.table(
                f"kl_basis_{i}.csv", ["term", "eigenvalue", "mode_x", "mode_y", "root_x", "root_y"], basis.rows()
            )
        report.mesh = mesh
        report.details["mesh"] = mesh.describe()
    return problem


def _field_ranking_monotone(config: PipelineConfig, S: np.ndarray):
    """Whether, within each field, sensitivities do not increase with the KL mode index."""
    verdicts = []
    start = 0
    for spec in config.field_specs():
        block = S[start : start + spec.term_count]
        verdicts.append(bool(np.all(np.diff(block) <= 1e-12 * max(block.max(initial=0.0), 1.0))))
        start += spec.term_count
    return verdicts


def _screening_stages(config, report, context, problem: ModelProblem, out: _Outputs) -> Reduction:
    dist = problem.dist
    workers = config["run.workers"]
    with _stage(report, "doe", context):
        star = context.solve_many(problem, star_doe(problem.dim), workers)
        save_design(star, out.path("design_star"))
        cross = None
        if config["screening.full_hessian"] and problem.dim > 1:
            cross = context.solve_many(problem, cross_doe(problem.dim), workers)
    with _stage(report, "screening", context):
        # the star points sit at +-scale in physical units; c stays in normalized units
        steps = dist.scales
        sensitivity = screen_star(star, steps, config["screening.c"])
        reduction = reduce_parameters(sensitivity, config.reduction_policy())
        out.table(
            "screening.csv",
            ["parameter", "S", "S2", "rank", "global_nonlinear", "local_nonlinear_count"],
            sensitivity.rows(),
        )
        out.fields(problem.mesh, {"local_nonlinear_count": local_nonlinearity_map(sensitivity)}, "nonlinearity")
        details = {
            "S": sensitivity.S,
            "S2": sensitivity.S2,
            "ranking": (sensitivity.ranking + 1).tolist(),
            "global_nonlinear": (np.flatnonzero(sensitivity.nonlinear_flags_global) + 1).tolist(),
            "field_ranking_monotone": _field_ranking_monotone(config, sensitivity.S),
        }
        if cross is not None:
            linearity = full_hessian_and_D(star, cross, steps, sigma=float(np.max(steps)))
            details.update(alpha_max=linearity.alpha_max, D=linearity.D, sigma=linearity.sigma)
            if not linearity.is_linear:
                log.warning("Linearity measure D = %.6g is negative; the solution is not close to linear.", linearity.D)
        report.details["screening"] = details
        report.retained = (reduction.retained + 1).tolist()
    return reduction


def _evaluation_samples(config: PipelineConfig, construction: DistributionSpec) -> np.ndarray:
    """Halton samples under the evaluation distribution, in the construction distribution's normalized coordinates."""
    dist = config.evaluation_distribution()
    physical = low_discrepancy_samples(config["evaluation.l_add"], dist.dim, dist, config["evaluation.skip"])
    return construction.to_normalized(physical)


def _quantile_fields(quantiles: Dict[float, np.ndarray], moments) -> Dict[str, np.ndarray]:
    fields = {f"quantile_{q:g}": field for q, field in quantiles.items()}
    fields["mean"] = moments.mean
    fields["variance"] = moments.variance()
    return fields


def _finish(report: RunReport, out: _Outputs):
    report.details["workers"] = report.config["run.workers"]
    out.record(report.save(out.directory))


def _run(report: RunReport, out: _Outputs, body):
    try:
        body()
    except StageError:
        report.save(out.directory)
        raise
    _finish(report, out)
    return report


# ===== operations =====
def run_screening(config: PipelineConfig, context: Optional[SimulationContext] = None, out_dir=None) -> RunReport:
    """Runs the mesh, design and screening stages only, writing ``screening.csv`` and the run report."""
    context = context or SimulationContext(config["run.max_solves"])
    report = RunReport("screen", config)
    out = _Outputs(out_dir or config["run.output_dir"], report, config["run.vtk"])

    def body():
        problem = _mesh_stage(config, report, context, out)
        _screening_stages(config, report, context, problem, out)

    return _run(report, out, body)


def run_accelerated_pipeline(
    config: PipelineConfig, context: Optional[SimulationContext] = None, out_dir=None
) -> RunReport:
    """
    Star design over all parameters, screening, reduction, a star design over the retained parameters (coincident
    points come from the cache), the RBF fit and truncated SVD, then quantile, mean and variance fields of the
    accelerated metamodel over ``evaluation.l_add`` Halton samples.

    :rtype: RunReport
    :raises StageError: if a stage fails.
    """
    context = context or SimulationContext(config["run.max_solves"])
    report = RunReport("metamodel", config)
    out = _Outputs(out_dir or config["run.output_dir"], report, config["run.vtk"])

    def body():
        problem = _mesh_stage(config, report, context, out)
        reduction = _screening_stages(config, report, context, problem, out)

        with _stage(report, "metamodel", context):
            reduced_points = star_doe(reduction.reduced_dim)
            full = context.solve_many(problem, reduction.embed(reduced_points), config["run.workers"])
            design = DesignMatrix(full.snapshots, reduced_points)
            kernel = config.kernel(mean_nearest_neighbor_distance(reduced_points))
            metamodel = build_metamodel(
                design, reduction, kernel, config.detrend, dist=problem.dist, **config.svd_options()
            )
            metamodel.save(out.path(METAMODEL_DIR))
            out.record(out.path(METAMODEL_DIR))
            curve = metamodel.svd.energy_curve()
            spectrum = np.append(metamodel.svd.spectrum, 0.0)
            out.table(
                "svd_energy.csv", ["k", "singular_value", "discarded_energy"], zip(range(len(curve)), spectrum, curve)
            )
            report.svd_rank = metamodel.svd.k
            report.metamodel = metamodel
            report.details["metamodel"] = {
                "kernel": kernel.spec(),
                "detrend": config.detrend,
                "construction_points": design.N,
                "condition": metamodel.model.condition,
                "discarded_energy": metamodel.svd.discarded_energy,
            }

        with _stage(report, "evaluation", context):
            samples = _evaluation_samples(config, problem.dist)
            quantiles, moments = stream_statistics(
                metamodel, samples, config["evaluation.quantiles"], config["run.workers"]
            )
            report.fields = _quantile_fields(quantiles, moments)
            out.fields(problem.mesh, report.fields)

    return _run(report, out, body)


def solve_collocation(
    problem: ModelProblem, grid, reduction: Reduction, context: SimulationContext, workers: int = 1
) -> CollocationSolution:
    """Solves at every grid point, embedded into the full parameter space; nested grids reuse cached snapshots."""
    design = context.solve_many(problem, reduction.embed(grid.points), workers)
    return CollocationSolution(grid, design.snapshots)


def run_collocation_baseline(
    config: PipelineConfig,
    context: Optional[SimulationContext] = None,
    out_dir=None,
    reduction: Optional[Reduction] = None,
) -> RunReport:
    """
    The sparse-grid baseline: optionally screens and reduces the parameters first (``baseline.reduced``), builds the
    configured grid, solves at every point and computes cubature mean and variance and quantile fields over the same
    Halton stream as the metamodel run.

    :param reduction: A reduction to use instead of screening again.
    :rtype: RunReport
    :raises StageError: if a stage fails.
    """
    context = context or SimulationContext(config["run.max_solves"])
    report = RunReport("collocation", config)
    out = _Outputs(out_dir or config["run.output_dir"], report, config["run.vtk"])

    def body():
        nonlocal reduction
        problem = _mesh_stage(config, report, context, out)
        if reduction is None:
            if config["baseline.reduced"]:
                reduction = _screening_stages(config, report, context, problem, out)
            else:
                reduction = Reduction.identity(problem.dim)
        report.retained = (reduction.retained + 1).tolist()

        with _stage(report, "collocation", context):
            dist = problem.dist.subset(reduction.retained)
            rule = config.baseline_rule(dist)
            grid = build_sparse_grid(reduction.reduced_dim, config["baseline.level"], rule, dist)
            solution = solve_collocation(problem, grid, reduction, context, config["run.workers"])
            save_collocation(solution, out.path("collocation"))
            out.record(out.path("collocation"))
            mean, variance = cubature_stats(solution)
            report.details["collocation"] = {"rule": rule.value, "level": grid.level, "points": grid.size}

        with _stage(report, "evaluation", context):
            samples = reduction.project(_evaluation_samples(config, problem.dist))
            quantiles, _ = stream_statistics(
                functools.partial(interpolate, solution), samples, config["evaluation.quantiles"], config["run.workers"]
            )
            report.fields = _quantile_fields(quantiles, _Moments(mean, variance))
            out.fields(problem.mesh, report.fields)

    return _run(report, out, body)


class _Moments:
    __slots__ = ("mean", "_variance")

    def __init__(self, mean, variance):
        self.mean = mean
        self._variance = variance

    def variance(self):
        return self._variance


def read_fields(directory):
    """Reads ``fields.csv`` of a run: ``(coordinates (M, 2), {name: values})``."""
    path = os.path.join(directory, FIELDS_FILE)
    with open(path) as f:
        header = f.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1:3], {name: data[:, i] for i, name in enumerate(header) if i >= 3}


def compare(run_a, run_b, out_dir=None, floor_fraction: float = 0.01) -> Dict[str, FieldDiff]:
    """
    Differences of every field two runs share, with ``run_b`` as the reference. Writes a ``diff`` field file and
    ``diff_summary.json`` into ``out_dir`` when given.

    :raises MeshMismatch: if the runs were computed on different meshes.
    """
    coords_a, fields_a = read_fields(run_a)
    coords_b, fields_b = read_fields(run_b)
    if coords_a.shape != coords_b.shape or not np.array_equal(coords_a, coords_b):
        raise MeshMismatch(f"Runs {run_a} and {run_b} use different meshes.")
    diffs = {name: field_diff(fields_a[name], fields_b[name], floor_fraction) for name in fields_a if name in fields_b}
    if not diffs:
        log.warning("Runs %s and %s share no fields.", run_a, run_b)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        mesh = read_mesh(os.path.join(run_a, MESH_FILE))
        fields = {}
        for name, diff in diffs.items():
            fields[f"abs_{name}"] = diff.abs_diff
            fields[f"rel_{name}"] = np.where(diff.mask, diff.rel_diff, 0.0)
        if fields:
            CsvFieldWriter().write(mesh, fields, os.path.join(out_dir, "diff"))
        with open(os.path.join(out_dir, "diff_summary.json"), "w") as f:
            json.dump({name: d.summary() for name, d in diffs.items()}, f, indent=2, sort_keys=True)
    for name, diff in diffs.items():
        s = diff.summary()
        log.info("%s: max abs %.3e, max rel %.3e", name, s["max_abs"], s["max_rel"])
    return diffs


def check_refinement(run, coarse_ref, fine_ref) -> bool:
    """
    Soft check that ``run`` is no further from the finer reference than from the coarser one, field by field (by
    masked max relative difference). Failures are logged, not raised.

    :returns: Whether every shared field passed.
    """
    coarse = compare(run, coarse_ref)
    fine = compare(run, fine_ref)
    passed = True
    for name in sorted(set(coarse) & set(fine)):
        err_coarse = coarse[name].summary()["max_rel"]
        err_fine = fine[name].summary()["max_rel"]
        if err_fine > err_coarse:
            passed = False
            log.warning(
                "%s: %.3e against the finer reference exceeds %.3e against the coarser.", name, err_fine, err_coarse
            )
    return passed


def validate_heldout(
    config: PipelineConfig,
    point,
    metamodel: Metamodel,
    problem: Optional[ModelProblem] = None,
    context: Optional[SimulationContext] = None,
) -> FieldDiff:
    """
    Solves once at a normalized point that was not a design point and compares the metamodel against the solve.
    """
    context = context or SimulationContext(config["run.max_solves"])
    problem = problem or ModelProblem.from_config(config, build_mesh(config))
    reference = context.solve(problem, point)
    diff = field_diff(metamodel(np.asarray(point, dtype=float)), reference)
    log.info("Held-out check: %r", diff)
    return diff


def evaluate_scenario(run_dir, config: PipelineConfig, out_dir=None) -> RunReport:
    """
    Re-evaluates a persisted metamodel under the configured evaluation distribution. No solves are made.
    """
    context = SimulationContext(0)
    report = RunReport("scenario", config)
    out = _Outputs(out_dir or config["run.output_dir"], report, config["run.vtk"])

    def body():
        with _stage(report, "mesh", context):
            mesh = read_mesh(os.path.join(run_dir, MESH_FILE))
            report.mesh = mesh
        with _stage(report, "metamodel", context):
            metamodel = Metamodel.load(os.path.join(run_dir, METAMODEL_DIR))
            if metamodel.full_dim != config.dim:
                raise ShapeMismatch(f"Metamodel has {metamodel.full_dim} parameters, config has {config.dim}.")
            report.metamodel = metamodel
            report.svd_rank = metamodel.svd.k
            report.retained = (metamodel.reduction.retained + 1).tolist()
        with _stage(report, "evaluation", context):
            samples = _evaluation_samples(config, metamodel.dist)
            quantiles, moments = stream_statistics(
                metamodel, samples, config["evaluation.quantiles"], config["run.workers"]
            )
            report.fields = _quantile_fields(quantiles, moments)
            out.fields(mesh, report.fields)

    return _run(report, out, body)

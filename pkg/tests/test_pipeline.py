import json
import os
import threading
import time

import numpy as np
import pytest

from rbfuq import *

SMALL = {
    "mesh.h": 0.5,
    "field1.terms": 2,
    "field2.terms": 2,
    "field3.terms": 1,
    "screening.top_k": 2,
    "metamodel.energy_fraction": 1.0,
    "evaluation.l_add": 100,
    "baseline.level": 1,
}

FIELD_NAMES = {"quantile_0.5", "quantile_0.68", "quantile_0.9", "mean", "variance"}


@pytest.fixture(scope="module")
def small_config():
    return PipelineConfig(SMALL)


@pytest.fixture(scope="module")
def meta_run(tmp_path_factory, small_config):
    out = tmp_path_factory.mktemp("meta")
    context = SimulationContext()
    report = run_accelerated_pipeline(small_config, context, out)
    return out, report, context


class _Counting:
    def __init__(self):
        self.calls = 0

    def solve(self, point):
        self.calls += 1
        return np.asarray(point, dtype=float) * 2.0


# ===== simulation context =====
def test_context_cache():
    context = SimulationContext()
    problem = _Counting()
    first = context.solve(problem, [1.0, 0.0])
    second = context.solve(problem, np.array([1.0, 0.0]))
    assert first is second
    assert problem.calls == 1
    assert context.solves == 1
    with pytest.raises(ValueError):
        first[0] = 3.0

    context.reset()
    assert context.solves == 0
    context.solve(problem, [1.0, 0.0])
    assert context.solves == 0
    assert context.total_solves == 1

    context.clear()
    context.solve(problem, [1.0, 0.0])
    assert problem.calls == 2


def test_context_solve_many():
    context = SimulationContext()
    problem = _Counting()
    design = context.solve_many(problem, np.vstack([star_doe(2), star_doe(2)]))
    assert design.N == 10
    assert problem.calls == 5
    assert np.array_equal(design.snapshots[:, :5], design.snapshots[:, 5:])


def test_context_threads_share_solves():
    class Slow(_Counting):
        def __init__(self):
            super().__init__()
            self.lock = threading.Lock()

        def solve(self, point):
            with self.lock:
                self.calls += 1
            time.sleep(0.05)
            return np.asarray(point, dtype=float) * 2.0

    context = SimulationContext()
    problem = Slow()
    points = np.vstack([star_doe(2)] * 4)
    design = context.solve_many(problem, points, workers=4)
    assert design.N == 20
    assert problem.calls == 5
    assert context.solves == 5
    assert np.array_equal(design.snapshots, 2.0 * points.T)


def test_too_many_simulations():
    context = SimulationContext(max_solves=3)
    problem = _Counting()
    for i in range(3):
        context.solve(problem, [float(i)])
    with pytest.raises(TooManySimulations):
        context.solve(problem, [5.0])
    # cached points are free
    context.solve(problem, [0.0])


def test_model_problem(small_config):
    mesh = build_mesh(small_config)
    problem = ModelProblem.from_config(small_config, mesh)
    assert problem.dim == 5
    assert problem.M == 21
    u = problem.solve(np.zeros(5))
    assert u.shape == (21,)
    assert np.all(u[mesh.tagged_nodes(BoundaryTag.DIRICHLET_LEFT)] == 1.0)

    config = small_config.replace(model__dirichlet_sigma=0.5)
    problem = ModelProblem.from_config(config, mesh)
    assert problem.dim == 6
    point = np.zeros(6)
    point[-1] = 1.0
    u = problem.solve(point)
    assert u[mesh.tagged_nodes(BoundaryTag.DIRICHLET_LEFT)] == pytest.approx(1.0 + 0.5 * SQRT3)

    with pytest.raises(ShapeMismatch):
        ModelProblem(mesh, problem.field, DistributionSpec.uniform(3))


# ===== accelerated pipeline =====
@pytest.mark.slow
def test_accelerated_solve_counts(meta_run):
    _, report, context = meta_run
    assert report.stages["doe"]["solves"] == 11
    assert report.stages["screening"]["solves"] == 0
    # the reduced star points all coincide with full star points
    assert report.stages["metamodel"]["solves"] == 0
    assert report.stages["evaluation"]["solves"] == 0
    assert report.total_solves == 11
    assert context.total_solves == 11
    assert len(report.retained) == 2
    assert 1 <= report.svd_rank <= 5
    assert report.failed_stage is None


@pytest.mark.slow
def test_accelerated_outputs(meta_run):
    out, report, _ = meta_run
    for name in ("fields.csv", "mesh.txt", "screening.csv", "svd_energy.csv", "run_report.json", "kl_basis_1.csv"):
        assert os.path.exists(out / name), name
    assert os.path.exists(out / "metamodel" / BUNDLE_MANIFEST)
    assert os.path.exists(out / "design_star" / "snapshots.csv")

    saved = json.loads((out / "run_report.json").read_text())
    assert saved["kind"] == "metamodel"
    assert saved["total_solves"] == 11
    assert saved["retained"] == report.retained
    assert saved["details"]["mesh"]["nodes"] == 21
    assert saved["config"]["mesh.h"] == 0.5

    assert set(report.fields) == FIELD_NAMES
    _, fields = read_fields(out)
    assert set(fields) == FIELD_NAMES
    for name, values in fields.items():
        assert np.array_equal(values, report.fields[name])

    lines = (out / "screening.csv").read_text().splitlines()
    assert lines[0] == "parameter,S,S2,rank,global_nonlinear,local_nonlinear_count"
    assert len(lines) == 6


@pytest.mark.slow
def test_accelerated_boundary_values(meta_run):
    _, report, _ = meta_run
    top = report.mesh.tagged_nodes(BoundaryTag.DIRICHLET_LEFT)
    right = report.mesh.tagged_nodes(BoundaryTag.DIRICHLET_RIGHT)
    for name in ("quantile_0.5", "quantile_0.9", "mean"):
        assert report.fields[name][top] == pytest.approx(1.0, abs=1e-6)
        assert report.fields[name][right] == pytest.approx(0.0, abs=1e-6)
    assert np.all(report.fields["variance"] >= 0)
    assert np.max(report.fields["variance"]) > 0


@pytest.mark.slow
def test_validate_heldout(meta_run, small_config):
    _, report, _ = meta_run
    context = SimulationContext()
    # the origin is a design point, so the metamodel reproduces the solve there
    diff = validate_heldout(small_config, np.zeros(5), report.metamodel, context=context)
    assert diff.summary()["max_abs"] <= 1e-8
    assert context.total_solves == 1

    point = np.zeros(5)
    point[report.metamodel.reduction.retained[0]] = 0.5
    diff = validate_heldout(small_config, point, report.metamodel)
    assert diff.summary()["max_rel"] < 0.05


@pytest.mark.slow
def test_scenario_reuse(meta_run, small_config, tmp_path):
    out, report, _ = meta_run
    same = evaluate_scenario(out, small_config, tmp_path / "same")
    assert same.total_solves == 0
    assert same.svd_rank == report.svd_rank
    assert same.retained == report.retained
    for name in FIELD_NAMES:
        assert np.allclose(same.fields[name], report.fields[name], atol=1e-10)

    diffs = compare(out, tmp_path / "same", tmp_path / "diff")
    assert set(diffs) == FIELD_NAMES
    assert all(d.summary()["max_abs"] <= 1e-10 for d in diffs.values())
    assert os.path.exists(tmp_path / "diff" / "diff.csv")
    summary = json.loads((tmp_path / "diff" / "diff_summary.json").read_text())
    assert set(summary) == FIELD_NAMES

    normal = evaluate_scenario(out, small_config.replace(evaluation__distribution="normal"), tmp_path / "normal")
    assert normal.total_solves == 0
    assert set(normal.fields) == FIELD_NAMES


@pytest.mark.slow
def test_scenario_dimension_mismatch(meta_run, small_config, tmp_path):
    out, _, _ = meta_run
    with pytest.raises(StageError) as e:
        evaluate_scenario(out, small_config.replace(field3__terms=2), tmp_path)
    assert e.value.stage == "metamodel"
    assert e.value.exit_code == 6


@pytest.mark.slow
def test_compare_self(meta_run):
    out, _, _ = meta_run
    diffs = compare(out, out)
    for diff in diffs.values():
        summary = diff.summary()
        assert summary["max_abs"] == 0.0
        assert summary["max_rel"] == 0.0
    assert check_refinement(out, out, out)


def test_compare_mesh_mismatch(tmp_path):
    for name, h in (("a", 0.5), ("b", 0.25)):
        mesh = build_lshape_mesh(h)
        CsvFieldWriter().write(mesh, {"mean": np.ones(mesh.num_nodes)}, tmp_path / name / "fields")
    with pytest.raises(MeshMismatch):
        compare(tmp_path / "a", tmp_path / "b")


# ===== screening and baseline =====
@pytest.mark.slow
def test_run_screening_full_hessian(small_config, tmp_path):
    report = run_screening(small_config.replace(screening__full_hessian=True), out_dir=tmp_path)
    assert list(report.stages) == ["mesh", "doe", "screening"]
    assert report.stages["doe"]["solves"] == 11 + 2 * 5 * 4
    details = report.details["screening"]
    assert sorted(details["ranking"]) == [1, 2, 3, 4, 5]
    assert len(details["field_ranking_monotone"]) == 3
    assert details["alpha_max"] >= 0
    assert details["sigma"] == pytest.approx(SQRT3)
    assert "D" in details
    assert os.path.exists(tmp_path / "nonlinearity.csv")


@pytest.mark.slow
def test_collocation_baseline(small_config, tmp_path):
    report = run_collocation_baseline(small_config, out_dir=tmp_path)
    assert report.stages["doe"]["solves"] == 11
    # the origin is shared with the screening design and comes from the cache
    assert report.stages["collocation"]["solves"] == 4
    assert report.stages["evaluation"]["solves"] == 0
    assert report.details["collocation"] == {"rule": "gauss_legendre", "level": 1, "points": 5}
    assert set(report.fields) == FIELD_NAMES
    top = report.mesh.tagged_nodes(BoundaryTag.DIRICHLET_LEFT)
    assert report.fields["mean"][top] == pytest.approx(1.0)
    assert os.path.exists(tmp_path / "collocation" / "grid.csv")


@pytest.mark.slow
def test_collocation_given_reduction(small_config, tmp_path):
    config = small_config.replace(baseline__rule="cc")
    report = run_collocation_baseline(config, out_dir=tmp_path, reduction=Reduction([0, 4], 5))
    assert "doe" not in report.stages
    assert report.retained == [1, 5]
    assert report.stages["collocation"]["solves"] == 5
    assert report.details["collocation"]["rule"] == "cc"


# ===== failures =====
@pytest.mark.slow
def test_stage_failure_keeps_outputs(small_config, tmp_path):
    with pytest.raises(StageError) as e:
        run_accelerated_pipeline(small_config.replace(model__max_iter=1), out_dir=tmp_path)
    assert e.value.stage == "doe"
    assert e.value.exit_code == 4
    assert isinstance(e.value.cause, SolverFailure)
    assert isinstance(e.value.cause.cause, NonConvergence)
    assert os.path.exists(tmp_path / "mesh.txt")
    saved = json.loads((tmp_path / "run_report.json").read_text())
    assert saved["failed_stage"] == "doe"
    assert "screening" not in saved["stages"]


@pytest.mark.slow
def test_solve_budget(small_config, tmp_path):
    with pytest.raises(StageError) as e:
        run_screening(small_config.replace(run__max_solves=3), out_dir=tmp_path)
    assert e.value.exit_code == STAGE_EXIT_CODES["doe"]
    assert isinstance(e.value.cause.cause, TooManySimulations)


# ===== model problem at h = 0.1 =====
NORMAL_GAMMA100 = {
    "field.distribution": "normal",
    "model.gamma": 100.0,
    "screening.top_k": 3,
    "evaluation.l_add": 2000,
    "baseline.rule": "gauss",
    "baseline.level": 2,
}


@pytest.fixture(scope="module")
def normal_runs(tmp_path_factory):
    config = PipelineConfig(NORMAL_GAMMA100)
    out = tmp_path_factory.mktemp("normal")
    context = SimulationContext()
    meta = run_accelerated_pipeline(config, context, out / "meta")
    sg = run_collocation_baseline(config, context, out / "sg", reduction=meta.metamodel.reduction)
    return config, out, context, meta, sg


@pytest.mark.slow
def test_screening_verdicts(tmp_path):
    weak = run_screening(PipelineConfig({"screening.full_hessian": True}), out_dir=tmp_path / "weak")
    strong = run_screening(PipelineConfig({"model.gamma": 100.0}), out_dir=tmp_path / "strong")
    weak_details = weak.details["screening"]
    assert weak_details["sigma"] == pytest.approx(SQRT3)
    assert weak_details["D"] > 0

    # within each field the leading KL mode dominates
    start = 0
    for spec in PipelineConfig().field_specs():
        for details in (weak_details, strong.details["screening"]):
            block = np.asarray(details["S"][start : start + spec.term_count])
            assert block[0] == block.max()
        start += spec.term_count

    assert set(strong.details["screening"]["ranking"][:3]) <= set(weak_details["ranking"][:6])


@pytest.mark.slow
def test_metamodel_matches_gauss_level2(normal_runs):
    _, out, _, meta, sg = normal_runs
    assert len(meta.retained) == 3
    assert sg.retained == meta.retained
    assert sg.details["collocation"]["points"] == 37
    diff = compare(out / "meta", out / "sg")["quantile_0.68"]
    assert diff.summary()["max_rel"] <= 0.05


@pytest.mark.slow
def test_heldout_random_point(normal_runs):
    config, _, context, meta, _ = normal_runs
    reduction = meta.metamodel.reduction
    point = reduction.embed(np.random.default_rng(2024).uniform(-1.0, 1.0, reduction.reduced_dim))[0]
    diff = validate_heldout(config, point, meta.metamodel, context=context)
    assert diff.summary()["max_rel"] <= 0.01

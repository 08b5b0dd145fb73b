import numpy as np
import pytest

from rbfuq import *
from rbfuq.collocation import _rule_1d

RULES = {
    "cc": (QuadratureRule.CLENSHAW_CURTIS, DistributionSpec.uniform),
    "legendre": (QuadratureRule.GAUSS_LEGENDRE, DistributionSpec.uniform),
    "hermite": (QuadratureRule.GAUSS_HERMITE, DistributionSpec.normal),
}


def _grid(name, dim, level):
    rule, dist = RULES[name]
    return build_sparse_grid(dim, level, rule, dist(dim))


@pytest.mark.parametrize(
    "name,level,dim,count",
    [
        ("cc", 1, 3, 7),
        ("cc", 1, 6, 13),
        ("cc", 1, 18, 37),
        ("cc", 2, 3, 25),
        ("cc", 2, 6, 85),
        ("cc", 2, 18, 685),
        ("hermite", 1, 3, 7),
        ("hermite", 1, 6, 13),
        ("hermite", 1, 18, 37),
        ("hermite", 2, 3, 37),
        ("hermite", 2, 6, 109),
        ("hermite", 2, 18, 757),
    ],
)
def test_point_counts(name, level, dim, count):
    grid = _grid(name, dim, level)
    assert grid.size == count
    assert expected_point_count(grid.rule, level, dim) == count
    assert grid.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_one_dimensional_rules():
    assert [len(_rule_1d(QuadratureRule.CLENSHAW_CURTIS, i)[0]) for i in (1, 2, 3)] == [1, 3, 5]
    assert [len(_rule_1d(QuadratureRule.GAUSS_HERMITE, i)[0]) for i in (1, 2, 3)] == [1, 3, 7]
    nodes, weights = _rule_1d(QuadratureRule.CLENSHAW_CURTIS, 3)
    assert nodes.tolist() == [-1.0, -nodes[3], 0.0, nodes[3], 1.0]
    assert weights.sum() == pytest.approx(1.0)
    grid = _grid("legendre", 1, 2)
    assert grid.size == 7
    assert grid.points[:, 0].tolist() == sorted(grid.points[:, 0].tolist())


@pytest.mark.parametrize("name", ["cc", "legendre"])
def test_uniform_moments(name):
    grid = _grid(name, 3, 2)
    z, w = grid.points, grid.weights
    assert w @ z[:, 0] == pytest.approx(0.0, abs=1e-14)
    assert w @ z[:, 1] ** 2 == pytest.approx(1 / 3)
    assert w @ z[:, 2] ** 4 == pytest.approx(1 / 5)
    assert w @ (z[:, 0] ** 2 * z[:, 1] ** 2) == pytest.approx(1 / 9)
    assert _grid(name, 4, 1).weights @ _grid(name, 4, 1).points[:, 3] ** 2 == pytest.approx(1 / 3)


def test_normal_moments():
    grid = _grid("hermite", 3, 2)
    z, w = grid.points, grid.weights
    assert w @ z[:, 0] ** 2 == pytest.approx(1.0)
    assert w @ z[:, 1] ** 4 == pytest.approx(3.0)
    assert w @ (z[:, 0] ** 2 * z[:, 2] ** 2) == pytest.approx(1.0)


def test_delta_property():
    grid = _grid("cc", 3, 2)
    assert np.allclose(grid.lagrange_weights(grid.points), np.eye(grid.size), atol=1e-12)
    assert np.allclose(grid.lagrange_weights(grid.points[4]), np.eye(grid.size)[4], atol=1e-12)


@pytest.mark.parametrize("name", ["cc", "legendre", "hermite"])
def test_polynomial_exactness(name, rng):
    grid = _grid(name, 3, 2)

    def f(z):
        z = np.atleast_2d(z)
        return np.stack([z[:, 0] * z[:, 1] + z[:, 2] ** 2 - 0.5 * z[:, 0], np.ones(len(z))])

    sol = CollocationSolution(grid, f(grid.points))
    query = rng.uniform(-1, 1, size=(10, 3))
    assert np.allclose(interpolate(sol, query), f(query).T, atol=1e-10)


def test_cubature_stats():
    grid = _grid("cc", 2, 2)
    z = grid.points[:, 0]
    sol = CollocationSolution(grid, np.stack([z, z**2, np.full_like(z, 3.0)]))
    mean, variance = cubature_stats(sol)
    assert mean == pytest.approx([0.0, 1 / 3, 3.0], abs=1e-12)
    assert variance == pytest.approx([1 / 3, 1 / 5 - 1 / 9, 0.0], abs=1e-12)
    assert np.all(variance >= 0)


def test_collocation_quantile():
    dist = DistributionSpec.uniform(2)
    grid = build_sparse_grid(2, 1, QuadratureRule.CLENSHAW_CURTIS, dist)
    z = grid.points
    sol = CollocationSolution(grid, np.stack([z[:, 0], 2.0 + z[:, 1]]))
    quantiles, moments = collocation_quantile(sol, dist, qs=(0.5, 0.9), l_add=2000)
    assert quantiles[0.5] == pytest.approx([0.0, 2.0], abs=0.05)
    assert quantiles[0.9] == pytest.approx([0.8, 2.8], abs=0.05)
    assert moments.count == 2000
    assert moments.mean == pytest.approx([0.0, 2.0], abs=0.01)
    assert moments.variance() == pytest.approx([1 / 3, 1 / 3], abs=0.01)


def test_rule_from_name():
    uniform, normal = DistributionSpec.uniform(2), DistributionSpec.normal(2)
    assert QuadratureRule.from_name("gauss", normal) is QuadratureRule.GAUSS_HERMITE
    assert QuadratureRule.from_name("gauss", uniform) is QuadratureRule.GAUSS_LEGENDRE
    assert QuadratureRule.from_name("Clenshaw-Curtis", uniform) is QuadratureRule.CLENSHAW_CURTIS
    assert QuadratureRule.from_name("cc", uniform) is QuadratureRule.CLENSHAW_CURTIS
    assert QuadratureRule.from_name("gauss_hermite", uniform) is QuadratureRule.GAUSS_HERMITE
    with pytest.raises(RuleDistributionMismatch):
        QuadratureRule.from_name("gauss", DistributionSpec([Marginal.UNIFORM, Marginal.NORMAL]))
    with pytest.raises(ValueError):
        QuadratureRule.from_name("simpson", uniform)


def test_grid_errors():
    with pytest.raises(UnsupportedLevel):
        build_sparse_grid(2, 3, QuadratureRule.CLENSHAW_CURTIS, DistributionSpec.uniform(2))
    with pytest.raises(UnsupportedLevel):
        build_sparse_grid(2, 0, QuadratureRule.CLENSHAW_CURTIS, DistributionSpec.uniform(2))
    with pytest.raises(RuleDistributionMismatch):
        build_sparse_grid(2, 1, QuadratureRule.CLENSHAW_CURTIS, DistributionSpec.normal(2))
    with pytest.raises(RuleDistributionMismatch):
        build_sparse_grid(2, 1, QuadratureRule.GAUSS_HERMITE, DistributionSpec.uniform(2))
    with pytest.raises(ShapeMismatch):
        build_sparse_grid(3, 1, QuadratureRule.CLENSHAW_CURTIS, DistributionSpec.uniform(2))
    with pytest.raises(ValueError):
        build_sparse_grid(0, 1, QuadratureRule.CLENSHAW_CURTIS, DistributionSpec.uniform(1))

    grid = _grid("cc", 2, 1)
    with pytest.raises(ShapeMismatch):
        CollocationSolution(grid, np.zeros((3, grid.size + 1)))
    with pytest.raises(ShapeMismatch):
        grid.lagrange_weights(np.zeros(3))


def test_save(tmp_path):
    grid = _grid("cc", 2, 1)
    sol = CollocationSolution(grid, np.arange(2.0 * grid.size).reshape(2, grid.size))
    save_collocation(sol, tmp_path / "colloc")
    lines = (tmp_path / "colloc" / "grid.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,weight"
    assert len(lines) == grid.size + 1
    table = np.loadtxt(tmp_path / "colloc" / "grid.csv", delimiter=",", skiprows=1)
    assert np.array_equal(table[:, :2], grid.points)
    assert np.array_equal(table[:, 2], grid.weights)
    assert np.array_equal(np.loadtxt(tmp_path / "colloc" / "snapshots.csv", delimiter=","), sol.snapshots)

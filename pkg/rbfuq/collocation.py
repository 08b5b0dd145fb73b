"""
Smolyak sparse-grid stochastic collocation.

A level-``l`` grid in ``L`` dimensions is the combination

    A(q, L) = sum_{max(L, q-L+1) <= |i| <= q} (-1)^(q-|i|) C(L-1, q-|i|) (U^i1 x ... x U^iL),   q = L + l

of tensor products of one-dimensional rules ``U^i``. Clenshaw-Curtis rules are nested with 1, 3, 5 points; Gauss
rules have 1, 3, 7 points and share only the origin. Points are stored in normalized coordinates, where +-1 is the
uniform endpoint or one standard deviation.
"""

import enum
import functools
import itertools
import logging
import math
import os
from typing import Dict, List, Sequence, Tuple

import numpy as np
from numpy.polynomial import hermite_e, legendre

from .errors import RuleDistributionMismatch, ShapeMismatch, UnsupportedLevel
from .quantiles import DEFAULT_QUANTILES, stream_statistics
from .randomfield import DistributionSpec, Marginal
from .sampling import CSV_FORMAT, low_discrepancy_samples

__all__ = (
    "QuadratureRule",
    "SparseGrid",
    "CollocationSolution",
    "build_sparse_grid",
    "interpolate",
    "cubature_stats",
    "collocation_quantile",
    "expected_point_count",
    "save_collocation",
    "SUPPORTED_LEVELS",
)

log = logging.getLogger(__name__)

SUPPORTED_LEVELS = (1, 2)


class QuadratureRule(enum.Enum):
    CLENSHAW_CURTIS = "cc"
    GAUSS_LEGENDRE = "gauss_legendre"
    GAUSS_HERMITE = "gauss_hermite"

    @property
    def nested(self) -> bool:
        return self is QuadratureRule.CLENSHAW_CURTIS

    @property
    def marginal(self) -> Marginal:
        return Marginal.NORMAL if self is QuadratureRule.GAUSS_HERMITE else Marginal.UNIFORM

    @classmethod
    def from_name(cls, name: str, dist: DistributionSpec) -> "QuadratureRule":
        """
        Resolves a rule name. ``gauss`` picks Legendre or Hermite from the distribution.

        :raises RuleDistributionMismatch: if ``gauss`` is asked for with mixed marginals.
        """
        name = name.strip().lower().replace("-", "_")
        if name in ("cc", "clenshaw_curtis"):
            return cls.CLENSHAW_CURTIS
        if name == "gauss":
            kinds = set(dist.kinds)
            if kinds == {Marginal.NORMAL}:
                return cls.GAUSS_HERMITE
            if kinds == {Marginal.UNIFORM}:
                return cls.GAUSS_LEGENDRE
            raise RuleDistributionMismatch("A Gauss rule needs all variables to share one marginal.")
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"Unknown quadrature rule {name!r}.") from None


def _symmetrize(nodes: np.ndarray) -> np.ndarray:
    # odd rules are symmetric about the origin; make that exact so coincident points merge
    nodes = 0.5 * (nodes - nodes[::-1])
    if len(nodes) % 2:
        nodes[len(nodes) // 2] = 0.0
    return nodes


@functools.lru_cache(maxsize=None)
def _rule_1d(rule: QuadratureRule, index: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and probability weights of the one-dimensional rule with index ``index >= 1``."""
    if rule is QuadratureRule.CLENSHAW_CURTIS:
        m = 1 if index == 1 else 2 ** (index - 1) + 1
        if m == 1:
            return np.zeros(1), np.ones(1)
        nodes = _symmetrize(-np.cos(np.pi * np.arange(m) / (m - 1)))
        # weights reproduce the moments of the uniform density 1/2 on [-1, 1]
        powers = np.arange(m)
        moments = np.where(powers % 2 == 0, 1.0 / (powers + 1), 0.0)
        weights = np.linalg.solve(np.vander(nodes, m, increasing=True).T, moments)
        return nodes, weights
    m = 2**index - 1
    if rule is QuadratureRule.GAUSS_LEGENDRE:
        nodes, weights = legendre.leggauss(m)
        return _symmetrize(nodes), weights / 2.0
    nodes, weights = hermite_e.hermegauss(m)
    return _symmetrize(nodes), weights / math.sqrt(2.0 * math.pi)


def _lagrange_basis(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(n, m) values of the Lagrange polynomials on ``nodes`` at ``x``; exact Kronecker deltas at the nodes."""
    m = len(nodes)
    if m == 1:
        return np.ones((len(x), 1))
    gaps = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(gaps, 1.0)
    ratios = (x[:, None, None] - nodes[None, None, :]) / gaps[None, :, :]
    ratios[:, np.arange(m), np.arange(m)] = 1.0
    return np.prod(ratios, axis=2)


def _multi_indices(dim: int, total: int, cap: int):
    """Multi-indices ``i >= 1`` with ``|i| = total`` and every entry at most ``cap``, lexicographic."""
    if dim == 1:
        if 1 <= total <= cap:
            yield (total,)
        return
    for first in range(1, min(cap, total - dim + 1) + 1):
        for rest in _multi_indices(dim - 1, total - first, cap):
            yield (first,) + rest


def expected_point_count(rule: QuadratureRule, level: int, dim: int) -> int:
    """
    Closed-form grid sizes for ``dim >= 2``.

    >>> expected_point_count(QuadratureRule.GAUSS_HERMITE, 2, 6)
    109
    """
    if level == 1:
        return 2 * dim + 1
    if rule.nested:
        return 2 * dim**2 + 2 * dim + 1
    return 2 * dim**2 + 6 * dim + 1


class _TensorTerm:
    __slots__ = ("coefficient", "index", "members")

    def __init__(self, coefficient: int, index: Tuple[int, ...], members: np.ndarray):
        self.coefficient = coefficient
        self.index = index
        self.members = members  # merged-point index of every tensor point, last dimension fastest


class SparseGrid:
    """
    A Smolyak grid: merged points with their probability cubature weights, and the tensor terms of the combination
    for interpolation.
    """

    __slots__ = ("points", "weights", "rule", "level", "dim", "terms")

    def __init__(self, points, weights, rule: QuadratureRule, level: int, terms: List[_TensorTerm]):
        self.points = points
        self.weights = weights
        self.rule = rule
        self.level = level
        self.dim = points.shape[1]
        self.terms = terms

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def index_sets(self) -> List[Tuple[int, ...]]:
        return [t.index for t in self.terms]

    def lagrange_weights(self, query) -> np.ndarray:
        """
        The combination of tensor Lagrange polynomials at one query (returns ``(size,)``) or several (``(n, size)``).
        """
        query = np.asarray(query, dtype=float)
        single = query.ndim == 1
        query = np.atleast_2d(query)
        if query.shape[1] != self.dim:
            raise ShapeMismatch(f"Query has dimension {query.shape[1]}, grid has {self.dim}.")
        out = np.zeros((len(query), self.size))
        bases = {}
        for term in self.terms:
            values = np.ones((len(query), 1))
            for d, i in enumerate(term.index):
                if i == 1:
                    continue
                if (d, i) not in bases:
                    bases[d, i] = _lagrange_basis(_rule_1d(self.rule, i)[0], query[:, d])
                basis = bases[d, i]
                values = (values[:, :, None] * basis[:, None, :]).reshape(len(query), -1)
            np.add.at(out, (slice(None), term.members), term.coefficient * values)
        return out[0] if single else out

    def save(self, path):
        """Writes ``x1..xL,weight`` rows."""
        header = ",".join([f"x{d + 1}" for d in range(self.dim)] + ["weight"])
        table = np.column_stack([self.points, self.weights])
        np.savetxt(path, table, delimiter=",", fmt=CSV_FORMAT, header=header, comments="")

    def __repr__(self):
        return f"<SparseGrid rule={self.rule.value} level={self.level} dim={self.dim} points={self.size}>"


def build_sparse_grid(dim: int, level: int, rule: QuadratureRule, dist: DistributionSpec) -> SparseGrid:
    """
    Builds the Smolyak grid of a rule.

    :param int dim: The number of variables L.
    :param int level: 1 or 2.
    :param QuadratureRule rule: The one-dimensional rule family.
    :param DistributionSpec dist: The marginals; they must match the rule.
    :rtype: SparseGrid
    :raises UnsupportedLevel: for levels other than 1 and 2.
    :raises RuleDistributionMismatch: e.g. Clenshaw-Curtis or Legendre with normal variables.
    """
    if level not in SUPPORTED_LEVELS:
        raise UnsupportedLevel(f"Sparse grid level {level} is not supported; use one of {SUPPORTED_LEVELS}.")
    if dim < 1:
        raise ValueError("dim must be at least 1.")
    if dist.dim != dim:
        raise ShapeMismatch(f"Distribution has {dist.dim} variables, expected {dim}.")
    if any(kind != rule.marginal for kind in dist.kinds):
        raise RuleDistributionMismatch(f"Rule {rule.value} does not match marginals {[k.name for k in dist.kinds]}.")

    q = dim + level
    lookup: Dict[Tuple[float, ...], int] = {}
    points: List[Tuple[float, ...]] = []
    weights: List[float] = []
    terms = []
    for total in range(max(dim, q - dim + 1), q + 1):
        coefficient = (-1) ** (q - total) * math.comb(dim - 1, q - total)
        if coefficient == 0:
            continue
        for index in _multi_indices(dim, total, level + 1):
            rules = [_rule_1d(rule, i) for i in index]
            members = []
            for combo in itertools.product(*(range(len(nodes)) for nodes, _ in rules)):
                point = tuple(float(rules[d][0][j]) for d, j in enumerate(combo))
                weight = coefficient * math.prod(rules[d][1][j] for d, j in enumerate(combo))
                if point not in lookup:
                    lookup[point] = len(points)
                    points.append(point)
                    weights.append(0.0)
                weights[lookup[point]] += weight
                members.append(lookup[point])
            terms.append(_TensorTerm(coefficient, index, np.array(members, dtype=np.int64)))

    grid = SparseGrid(np.array(points), np.array(weights), rule, level, terms)
    log.info("Built %r from %d tensor terms", grid, len(terms))
    return grid


class CollocationSolution:
    """Snapshots at every point of a sparse grid, column ``k`` belonging to ``grid.points[k]``."""

    __slots__ = ("grid", "snapshots")

    def __init__(self, grid: SparseGrid, snapshots):
        snapshots = np.asarray(snapshots, dtype=float)
        if snapshots.ndim != 2 or snapshots.shape[1] != grid.size:
            raise ShapeMismatch(f"Expected {grid.size} snapshot columns, got shape {snapshots.shape}.")
        self.grid = grid
        self.snapshots = snapshots

    @property
    def M(self) -> int:
        return self.snapshots.shape[0]

    def __repr__(self):
        return f"<CollocationSolution {self.grid!r} M={self.M}>"


def interpolate(sol: CollocationSolution, query) -> np.ndarray:
    """
    The Smolyak interpolant at normalized ``query`` points: an (M,) field for one point, (n, M) for several.

    For nested (Clenshaw-Curtis) grids the interpolant reproduces every snapshot at its grid point.
    """
    return sol.grid.lagrange_weights(query) @ sol.snapshots.T


def cubature_stats(sol: CollocationSolution) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean and variance fields by cubature. The variance is clamped at 0 from below.

    :returns: ``(mean, variance)``, both (M,).
    """
    w = sol.grid.weights
    mean = sol.snapshots @ w
    variance = (sol.snapshots**2) @ w - mean**2
    return mean, np.maximum(variance, 0.0)


def collocation_quantile(
    sol: CollocationSolution,
    dist: DistributionSpec,
    qs: Sequence[float] = DEFAULT_QUANTILES,
    l_add: int = 2000,
    skip: int = 20,
    workers: int = 1,
):
    """
    Quantile fields of the interpolant, sampled at ``l_add`` Halton points under ``dist`` and streamed through the
    shared P-squared estimators.

    :returns: ``({q: field}, RunningMoments)``.
    """
    samples = dist.to_normalized(low_discrepancy_samples(l_add, sol.grid.dim, dist, skip))
    return stream_statistics(functools.partial(interpolate, sol), samples, qs, workers)


def save_collocation(sol: CollocationSolution, directory):
    """Writes ``grid.csv`` and ``snapshots.csv``."""
    os.makedirs(directory, exist_ok=True)
    sol.grid.save(os.path.join(directory, "grid.csv"))
    np.savetxt(os.path.join(directory, "snapshots.csv"), sol.snapshots, delimiter=",", fmt=CSV_FORMAT)

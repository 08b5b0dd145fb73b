import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .errors import DimensionTooLarge, ShapeMismatch, SolverFailure
from .randomfield import DistributionSpec

__all__ = (
    "DesignMatrix",
    "star_doe",
    "cross_doe",
    "low_discrepancy_samples",
    "run_doe",
    "save_design",
    "load_design",
    "MAX_HALTON_DIM",
)

log = logging.getLogger(__name__)

MAX_HALTON_DIM = 100
CSV_FORMAT = "%.17g"

Solver = Callable[[np.ndarray], np.ndarray]


class DesignMatrix:
    """
    The snapshot database: an (M, N) matrix whose column ``j`` is the solution at design point ``j``.
    """

    __slots__ = ("snapshots", "points")

    def __init__(self, snapshots, points):
        """
        :param snapshots: (M, N) solution matrix.
        :param points: (N, L) design points in normalized coordinates, in column order.
        """
        self.snapshots = np.asarray(snapshots, dtype=float)
        self.points = np.asarray(points, dtype=float)
        if self.snapshots.ndim != 2 or self.points.ndim != 2 or self.snapshots.shape[1] != len(self.points):
            raise ShapeMismatch("The number of snapshot columns must equal the number of points.")

    @property
    def M(self) -> int:
        return self.snapshots.shape[0]

    @property
    def N(self) -> int:
        return self.snapshots.shape[1]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __repr__(self):
        return f"<DesignMatrix M={self.M} N={self.N} dim={self.dim}>"


def star_doe(dim: int) -> np.ndarray:
    """
    The 2L+1 point star design: the origin, then ``+e_1, -e_1, +e_2, -e_2, ...`` in normalized coordinates.

    >>> star_doe(1).tolist()
    [[0.0], [1.0], [-1.0]]

    :param int dim: The number of parameters L.
    :returns: (2L+1, L) array.
    """
    if dim < 1:
        raise ValueError("Star design needs dim >= 1.")
    points = np.zeros((2 * dim + 1, dim))
    for j in range(dim):
        points[1 + 2 * j, j] = 1.0
        points[2 + 2 * j, j] = -1.0
    return points


def cross_doe(dim: int) -> np.ndarray:
    """
    The 4 L(L-1)/2 point design for mixed second derivatives: for each pair ``j < l`` (lexicographic), the four
    points with signs ``(+,+), (+,-), (-,+), (-,-)`` in coordinates ``j`` and ``l``.

    :param int dim: The number of parameters L.
    :returns: (2L(L-1), L) array.
    """
    if dim < 2:
        raise ValueError("Cross design needs dim >= 2.")
    rows = []
    for j in range(dim):
        for l in range(j + 1, dim):  # noqa: E741
            for sj, sl in ((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)):
                p = np.zeros(dim)
                p[j], p[l] = sj, sl
                rows.append(p)
    return np.array(rows)


def low_discrepancy_samples(count: int, dim: int, dist: DistributionSpec, skip: int = 20) -> np.ndarray:
    """
    Deterministic Halton samples (bases are the first ``dim`` primes, unscrambled) mapped through each marginal's
    inverse CDF.

    :param int count: The number of samples.
    :param int dim: The dimension.
    :param DistributionSpec dist: The marginals.
    :param int skip: Number of leading Halton points to discard.
    :returns: (count, dim) physical samples.
    :raises DimensionTooLarge: if ``dim > 100``.
    """
    if count < 1:
        raise ValueError("count must be at least 1.")
    if skip < 1:
        raise ValueError("skip must be at least 1; the first Halton point lies on the cube corner.")
    if dim > MAX_HALTON_DIM:
        raise DimensionTooLarge(f"Halton sequences are limited to {MAX_HALTON_DIM} dimensions, got {dim}.")
    if dist.dim != dim:
        raise ShapeMismatch(f"Distribution has {dist.dim} variables, expected {dim}.")
    sampler = qmc.Halton(d=dim, scramble=False)
    sampler.fast_forward(skip)
    return dist.ppf(sampler.random(count))


def run_doe(points, solver: Solver, workers: int = 1, executor: Optional[ThreadPoolExecutor] = None) -> DesignMatrix:
    """
    Solves at every design point and collects the snapshots column by column in point order.

    :param points: (N, L) design points.
    :param solver: Maps one point to a length-M solution vector.
    :param int workers: The number of worker threads.
    :param executor: An existing executor to use instead of creating one.
    :rtype: DesignMatrix
    :raises SolverFailure: for the first point (in order) whose solve failed.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))

    def attempt(p):
        try:
            return np.asarray(solver(p), dtype=float), None
        except Exception as e:  # recorded per column, re-raised below in point order
            return None, e

    if executor is not None:
        results = list(executor.map(attempt, points))
    elif workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(attempt, points))
    else:
        results = [attempt(p) for p in points]

    failures = [j for j, (_, err) in enumerate(results) if err is not None]
    if failures:
        log.warning("%d of %d design points failed: %s", len(failures), len(points), failures)
        raise SolverFailure(failures[0], results[failures[0]][1])
    columns = [col for col, _ in results]
    if len({len(c) for c in columns}) > 1:
        raise ShapeMismatch("Solver returned vectors of different lengths.")
    return DesignMatrix(np.column_stack(columns), points)


def save_design(design: DesignMatrix, directory):
    """Writes ``points.csv`` and ``snapshots.csv`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    np.savetxt(os.path.join(directory, "points.csv"), design.points, delimiter=",", fmt=CSV_FORMAT)
    np.savetxt(os.path.join(directory, "snapshots.csv"), design.snapshots, delimiter=",", fmt=CSV_FORMAT)


def load_design(directory) -> DesignMatrix:
    """Reads a design written by :func:`save_design`."""
    points = np.loadtxt(os.path.join(directory, "points.csv"), delimiter=",", ndmin=2)
    snapshots = np.loadtxt(os.path.join(directory, "snapshots.csv"), delimiter=",", ndmin=2)
    return DesignMatrix(snapshots, points)

"""
Streaming statistics of solution fields.

Quantiles are estimated per spatial node with the five-marker P-squared procedure of Jain and Chlamtac, so memory
does not grow with the number of samples. All estimators of one field advance together as numpy arrays.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyEstimator, EvaluationError, ShapeMismatch

__all__ = (
    "QuantileEstimator",
    "RunningMoments",
    "FieldDiff",
    "p2_update",
    "p2_estimate",
    "field_quantiles",
    "stream_statistics",
    "field_diff",
    "DEFAULT_QUANTILES",
    "DEFAULT_FLOOR_FRACTION",
)

log = logging.getLogger(__name__)

DEFAULT_QUANTILES = (0.5, 0.68, 0.9)
DEFAULT_FLOOR_FRACTION = 0.01


class QuantileEstimator:
    """
    P-squared estimators of the ``q``-quantile for ``size`` independent streams (one per node).

    The five markers track the minimum, the ``q/2``-, ``q``- and ``(1+q)/2``-quantiles and the maximum. Until five
    samples have been seen the samples are buffered and the estimate is the lower order statistic
    ``sorted[ceil(q n) - 1]``.
    """

    __slots__ = ("q", "size", "count", "heights", "positions", "_increments", "_buffer")

    def __init__(self, q: float, size: int = 1):
        if not 0 < q < 1:
            raise ValueError(f"Quantile probability must lie in (0, 1), got {q}.")
        self.q = float(q)
        self.size = int(size)
        self.count = 0
        self.heights = np.zeros((self.size, 5))
        self.positions = np.tile(np.arange(1, 6), (self.size, 1))
        self._increments = np.array([0.0, q / 2.0, q, (1.0 + q) / 2.0, 1.0])
        self._buffer = []

    @property
    def desired_positions(self) -> np.ndarray:
        """Where the markers should sit after ``count`` samples (1-based)."""
        return 1.0 + (max(self.count, 5) - 1) * self._increments

    def update(self, sample) -> "QuantileEstimator":
        """
        Streams one sample (a scalar, or one value per stream) into the estimators.

        :raises ValueError: if the sample is not finite or has the wrong length.
        """
        x = np.broadcast_to(np.asarray(sample, dtype=float), (self.size,))
        if not np.all(np.isfinite(x)):
            raise ValueError("P2 estimators only accept finite samples.")
        self.count += 1
        if self.count <= 5:
            self._buffer.append(x.copy())
            if self.count == 5:
                self.heights = np.sort(np.array(self._buffer).T, axis=1)
                self._buffer = []
            return self

        q, n = self.heights, self.positions
        cell = np.sum(x[:, None] >= q[:, 1:4], axis=1)
        q[:, 0] = np.minimum(q[:, 0], x)
        q[:, 4] = np.maximum(q[:, 4], x)
        n += np.arange(5)[None, :] > cell[:, None]
        desired = self.desired_positions

        rows = np.arange(self.size)
        for i in (1, 2, 3):
            d = desired[i] - n[:, i]
            move = ((d >= 1) & (n[:, i + 1] - n[:, i] > 1)) | ((d <= -1) & (n[:, i - 1] - n[:, i] < -1))
            if not np.any(move):
                continue
            r = rows[move]
            step = np.sign(d[move]).astype(np.int64)
            qi, qm, qp = q[r, i], q[r, i - 1], q[r, i + 1]
            ni, nm, np_ = n[r, i], n[r, i - 1], n[r, i + 1]
            parabolic = qi + step / (np_ - nm) * (
                (ni - nm + step) * (qp - qi) / (np_ - ni) + (np_ - ni - step) * (qi - qm) / (ni - nm)
            )
            inside = (qm < parabolic) & (parabolic < qp)
            neighbor = i + step
            linear = qi + step * (q[r, neighbor] - qi) / (n[r, neighbor] - ni)
            q[r, i] = np.where(inside, parabolic, linear)
            n[r, i] += step
        return self

    def estimate(self) -> np.ndarray:
        """
        The current estimate per stream.

        :raises EmptyEstimator: if no sample has been seen.
        """
        if self.count == 0:
            raise EmptyEstimator("No samples have been streamed.")
        if self.count < 5:
            ordered = np.sort(np.array(self._buffer), axis=0)
            index = max(math.ceil(self.q * self.count) - 1, 0)
            return ordered[index].copy()
        return self.heights[:, 2].copy()

    def __repr__(self):
        return f"<QuantileEstimator q={self.q} size={self.size} count={self.count}>"


def p2_update(est: QuantileEstimator, sample) -> QuantileEstimator:
    return est.update(sample)


def p2_estimate(est: QuantileEstimator):
    """The ``q``-marker height; a float for a single stream."""
    value = est.estimate()
    return float(value[0]) if est.size == 1 else value


class RunningMoments:
    """Per-node mean and variance by Welford's update."""

    __slots__ = ("count", "mean", "_m2")

    def __init__(self, size: int):
        self.count = 0
        self.mean = np.zeros(size)
        self._m2 = np.zeros(size)

    def update(self, values) -> "RunningMoments":
        values = np.asarray(values, dtype=float)
        self.count += 1
        delta = values - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (values - self.mean)
        return self

    def variance(self, ddof: int = 0) -> np.ndarray:
        if self.count - ddof <= 0:
            raise EmptyEstimator("Not enough samples for a variance.")
        return self._m2 / (self.count - ddof)


def stream_statistics(
    evaluator: Callable[[np.ndarray], np.ndarray],
    samples: Iterable,
    qs: Sequence[float] = DEFAULT_QUANTILES,
    workers: int = 1,
) -> Tuple[Dict[float, np.ndarray], RunningMoments]:
    """
    Evaluates every sample and streams the resulting fields, in sample order, into one P-squared estimator per
    quantile and a :class:`RunningMoments`. Memory is ``O(M |qs|)``.

    :param evaluator: Maps one sample to an (M,) field.
    :param samples: The samples, streamed in order.
    :param qs: Quantile probabilities.
    :param int workers: Threads used to evaluate samples; results are still consumed in order.
    :returns: ``({q: field}, moments)``.
    :raises EvaluationError: if the evaluator fails, carrying the number of samples already streamed.
    """
    estimators: Optional[Dict[float, QuantileEstimator]] = None
    moments: Optional[RunningMoments] = None
    completed = 0

    def consume(fields):
        nonlocal estimators, moments, completed
        for field in fields:
            field = np.asarray(field, dtype=float)
            if estimators is None:
                estimators = {q: QuantileEstimator(q, field.size) for q in qs}
                moments = RunningMoments(field.size)
            elif field.size != moments.mean.size:
                raise ShapeMismatch(f"Evaluator returned {field.size} values, expected {moments.mean.size}.")
            for est in estimators.values():
                est.update(field)
            moments.update(field)
            completed += 1

    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                consume(pool.map(evaluator, samples))
        else:
            consume(evaluator(s) for s in samples)
    except Exception as e:
        log.error("Evaluation failed after %d samples: %s", completed, e)
        raise EvaluationError(completed, e) from e

    if estimators is None:
        raise EmptyEstimator("No samples were given.")
    log.debug("Streamed %d samples into %d quantile estimators", completed, len(estimators))
    return {q: est.estimate() for q, est in estimators.items()}, moments


def field_quantiles(evaluator, samples, qs: Sequence[float] = DEFAULT_QUANTILES, workers: int = 1):
    """Per-quantile fields of ``evaluator`` over ``samples``; see :func:`stream_statistics`."""
    quantiles, _ = stream_statistics(evaluator, samples, qs, workers)
    return quantiles


class FieldDiff:
    """
    Nodal differences between a test field and a reference field. ``rel_diff`` is NaN outside ``mask``.
    """

    __slots__ = ("abs_diff", "rel_diff", "mask")

    def __init__(self, abs_diff, rel_diff, mask):
        self.abs_diff = abs_diff
        self.rel_diff = rel_diff
        self.mask = mask

    def summary(self) -> dict:
        masked = self.rel_diff[self.mask]
        return {
            "max_abs": float(np.max(self.abs_diff)),
            "mean_abs": float(np.mean(self.abs_diff)),
            "max_rel": float(np.max(masked)) if masked.size else 0.0,
            "mean_rel": float(np.mean(masked)) if masked.size else 0.0,
            "masked_nodes": int(np.count_nonzero(self.mask)),
        }

    def __repr__(self):
        s = self.summary()
        return f"<FieldDiff max_abs={s['max_abs']:.3e} max_rel={s['max_rel']:.3e}>"


def field_diff(u_test, u_ref, floor_fraction: float = DEFAULT_FLOOR_FRACTION) -> FieldDiff:
    """
    Absolute and relative nodal differences. Relative differences are only taken where ``|u_ref|`` is at least
    ``floor_fraction`` times its maximum, since they blow up where the reference is close to zero.

    >>> field_diff([1.01, 2.02], [1.0, 2.0]).rel_diff.round(12).tolist()
    [0.01, 0.01]

    :raises ShapeMismatch: if the fields differ in length.
    """
    u_test = np.asarray(u_test, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    if u_test.shape != u_ref.shape:
        raise ShapeMismatch(f"Fields have different shapes {u_test.shape} and {u_ref.shape}.")
    abs_diff = np.abs(u_test - u_ref)
    magnitude = np.abs(u_ref)
    mask = (magnitude >= floor_fraction * magnitude.max(initial=0.0)) & (magnitude > 0)
    rel_diff = np.full(u_ref.shape, np.nan)
    rel_diff[mask] = abs_diff[mask] / magnitude[mask]
    return FieldDiff(abs_diff, rel_diff, mask)

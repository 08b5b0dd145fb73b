import logging
from typing import Iterable, Optional

import numpy as np
from scipy import linalg

from .errors import NegativeEigenvalueBeyondTolerance, ShapeMismatch
from .sampling import DesignMatrix

__all__ = ("TruncatedSvd", "fast_svd", "DEFAULT_ENERGY_FRACTION", "RELATIVE_CUTOFF")

log = logging.getLogger(__name__)

DEFAULT_ENERGY_FRACTION = 1.0 - 1e-10
RELATIVE_CUTOFF = 1e-12
DEFAULT_BLOCK_ROWS = 4096


class TruncatedSvd:
    """
    A rank-``k`` factorization ``X_k = F diag(singular_values) Vt`` of a snapshot matrix.

    ``F`` is (M, k) with orthonormal columns, ``Vt`` is (k, N), and ``discarded_energy`` is the squared Frobenius
    norm of ``X - X_k``. The full spectrum is kept in ``spectrum`` for energy reports.
    """

    __slots__ = ("F", "singular_values", "Vt", "discarded_energy", "spectrum")

    def __init__(self, F, singular_values, Vt, discarded_energy, spectrum=None):
        self.F = np.asarray(F, dtype=float)
        self.singular_values = np.asarray(singular_values, dtype=float)
        self.Vt = np.asarray(Vt, dtype=float)
        self.discarded_energy = float(discarded_energy)
        self.spectrum = self.singular_values if spectrum is None else np.asarray(spectrum, dtype=float)
        if self.F.shape[1] != self.k or self.Vt.shape[0] != self.k:
            raise ShapeMismatch("F, singular values and Vt disagree on the rank.")

    @property
    def k(self) -> int:
        return len(self.singular_values)

    @property
    def M(self) -> int:
        return self.F.shape[0]

    @property
    def N(self) -> int:
        return self.Vt.shape[1]

    @property
    def total_energy(self) -> float:
        return float(np.sum(self.spectrum**2))

    def energy_curve(self) -> np.ndarray:
        """Discarded energy for every rank ``0..len(spectrum)``; entry ``k`` is ``sum_{l >= k} lambda_l^2``."""
        energies = self.spectrum**2
        return np.append(np.cumsum(energies[::-1])[::-1], 0.0)

    def reconstruct(self) -> np.ndarray:
        """The (M, N) matrix ``X_k``."""
        return (self.F * self.singular_values) @ self.Vt

    def __repr__(self):
        return f"<TruncatedSvd M={self.M} N={self.N} k={self.k} discarded={self.discarded_energy:.3e}>"


def _row_blocks(X: np.ndarray, block_rows: int) -> Iterable[np.ndarray]:
    for start in range(0, X.shape[0], block_rows):
        yield X[start : start + block_rows]


def _rank_for(tail: np.ndarray, usable: int, energy_fraction, abs_error, rank) -> int:
    if rank is not None:
        return min(int(rank), usable)
    if abs_error is not None:
        limit = float(abs_error) ** 2
    else:
        limit = (1.0 - energy_fraction) * tail[0]
    # tail[k] is non-increasing, so the first k meeting the limit is the smallest
    k = int(np.argmax(tail <= limit))
    return min(k, usable)


def fast_svd(
    X,
    energy_fraction: Optional[float] = None,
    abs_error: Optional[float] = None,
    rank: Optional[int] = None,
    block_rows: int = DEFAULT_BLOCK_ROWS,
) -> TruncatedSvd:
    """
    Truncated SVD through the N x N Gram matrix, for tall snapshot matrices.

    ``X^T X`` is accumulated over row blocks, then eigendecomposed; singular values are the square roots of its
    eigenvalues and the retained left vectors are formed in a second pass over the row blocks as ``F_i = X v_i /
    lambda_i``. Singular values at or below ``1e-12 * lambda_1`` are always dropped.

    At most one of ``energy_fraction``, ``abs_error`` and ``rank`` may be given. With ``energy_fraction`` (the
    default, ``1 - 1e-10``) the smallest ``k`` whose discarded energy is at most ``(1 - fraction) * total`` is
    kept; with ``abs_error`` the smallest ``k`` with ``||X - X_k||_F <= abs_error``.

    :param X: (M, N) snapshots, or a :class:`~rbfuq.sampling.DesignMatrix`.
    :param int block_rows: The number of rows per streamed block.
    :rtype: TruncatedSvd
    :raises NegativeEigenvalueBeyondTolerance: if the Gram matrix has a clearly negative eigenvalue.
    """
    if isinstance(X, DesignMatrix):
        X = X.snapshots
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ShapeMismatch("fast_svd needs a 2D matrix.")
    if not np.all(np.isfinite(X)):
        raise ValueError("Snapshot matrix has non-finite entries.")
    if sum(opt is not None for opt in (energy_fraction, abs_error, rank)) > 1:
        raise ValueError("Give at most one of energy_fraction, abs_error and rank.")
    if energy_fraction is None and abs_error is None and rank is None:
        energy_fraction = DEFAULT_ENERGY_FRACTION
    if energy_fraction is not None and not 0 < energy_fraction <= 1:
        raise ValueError("energy_fraction must lie in (0, 1].")
    if X.shape[0] < X.shape[1]:
        log.warning("Snapshot matrix is wide (%d x %d); the Gram route is meant for M >= N.", *X.shape)

    n = X.shape[1]
    gram = np.zeros((n, n))
    for block in _row_blocks(X, block_rows):
        gram += block.T @ block

    eigenvalues, eigenvectors = linalg.eigh(gram)
    eigenvalues, eigenvectors = eigenvalues[::-1], eigenvectors[:, ::-1]
    top = max(eigenvalues[0], 0.0) if n else 0.0
    tolerance = 10.0 * n * np.finfo(float).eps * top
    if n and eigenvalues[-1] < -tolerance:
        raise NegativeEigenvalueBeyondTolerance(
            f"Gram matrix eigenvalue {eigenvalues[-1]:.3e} is below the roundoff tolerance {-tolerance:.3e}."
        )
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    spectrum = np.sqrt(eigenvalues)

    usable = int(np.count_nonzero(spectrum > RELATIVE_CUTOFF * spectrum[0])) if n and spectrum[0] > 0 else 0
    tail = np.append(np.cumsum(eigenvalues[::-1])[::-1], 0.0)
    k = _rank_for(tail, usable, energy_fraction, abs_error, rank)

    V = eigenvectors[:, :k]
    sigma = spectrum[:k]
    F = np.vstack([block @ V for block in _row_blocks(X, block_rows)]) / sigma if k else np.zeros((X.shape[0], 0))
    log.info("fastSVD: kept rank %d of %d, discarded energy %.3e of %.3e", k, n, tail[k], tail[0])
    return TruncatedSvd(F, sigma, V.T, tail[k], spectrum)

"""
Radial basis function interpolation over the normalized parameter space.

The interpolant is ``s(z) = sum_i a_i phi(|z - z_i|) + P(z)`` where ``P`` is an optional polynomial trend of degree 0
or 1 and the coefficients satisfy the orthogonality side conditions ``sum_i a_i p(z_i) = 0`` for every trend monomial
``p``. Because the system only depends on the centers, the interpolant can be written as a weighted sum of the data,
``s(z) = sum_i w_i(z) u_i``, with the trend folded into the weights. This is what lets one model interpolate every
node of a snapshot matrix at once.
"""

import abc
import logging
import warnings
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import ConditioningWarning, ShapeMismatch, SingularInterpolationMatrix

__all__ = (
    "RbfKernel",
    "Linear",
    "ThinPlate",
    "Gaussian",
    "Multiquadric",
    "Triharmonic",
    "InverseMultiquadric",
    "RbfModel",
    "fit_rbf",
    "rbf_weights",
    "kernel_from_spec",
    "mean_nearest_neighbor_distance",
    "CONDITION_WARN",
)

log = logging.getLogger(__name__)

CONDITION_WARN = 1e12


class RbfKernel(abc.ABC):
    """
    A radial function ``phi(r)``. Subclasses with a shape parameter store it as ``shape``.
    """

    name = None
    shape = None

    @abc.abstractmethod
    def __call__(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> str:
        """A text form that :func:`kernel_from_spec` reads back."""
        if self.shape is None:
            return self.name
        return f"{self.name}:{self.shape!r}"

    def __eq__(self, other):
        return type(self) is type(other) and self.shape == other.shape

    def __hash__(self):
        return hash((self.name, self.shape))

    def __repr__(self):
        return f"<{type(self).__name__} {self.spec()}>"


class _ShapedKernel(RbfKernel, abc.ABC):
    def __init__(self, shape: float):
        shape = float(shape)
        if not shape > 0:
            raise ValueError(f"{type(self).__name__} needs a positive shape parameter, got {shape}.")
        self.shape = shape


class Linear(RbfKernel):
    name = "linear"

    def __call__(self, r):
        return np.asarray(r, dtype=float)


class ThinPlate(RbfKernel):
    """``r^2 log r``, with the limit value 0 at ``r = 0``."""

    name = "thin_plate"

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        pos = r > 0
        out[pos] = r[pos] ** 2 * np.log(r[pos])
        return out


class Gaussian(_ShapedKernel):
    """``exp(-gamma r^2)``."""

    name = "gaussian"

    def __init__(self, gamma: float = 1.0):
        super().__init__(gamma)

    def __call__(self, r):
        return np.exp(-self.shape * np.asarray(r, dtype=float) ** 2)


class Multiquadric(_ShapedKernel):
    """``sqrt(r^2 + c^2)``."""

    name = "multiquadric"

    def __init__(self, c: float = 1.0):
        super().__init__(c)

    def __call__(self, r):
        return np.sqrt(np.asarray(r, dtype=float) ** 2 + self.shape**2)


class Triharmonic(RbfKernel):
    name = "triharmonic"

    def __call__(self, r):
        return np.asarray(r, dtype=float) ** 3


class InverseMultiquadric(_ShapedKernel):
    """``(r^2 + c^2)^(-1/2)``."""

    name = "inverse_multiquadric"

    def __init__(self, c: float = 1.0):
        super().__init__(c)

    def __call__(self, r):
        return 1.0 / np.sqrt(np.asarray(r, dtype=float) ** 2 + self.shape**2)


KERNELS = {k.name: k for k in (Linear, ThinPlate, Gaussian, Multiquadric, Triharmonic, InverseMultiquadric)}


def kernel_from_spec(text: str, default_shape: Optional[float] = None) -> RbfKernel:
    """
    Parses ``name`` or ``name:shape``, e.g. ``multiquadric:0.5``. Shaped kernels without a shape use
    ``default_shape`` if given, else 1.

    >>> kernel_from_spec("gaussian:2")
    <Gaussian gaussian:2.0>
    """
    name, _, shape = text.strip().partition(":")
    name = name.strip().lower().replace("-", "_")
    if name not in KERNELS:
        raise ValueError(f"Unknown kernel {name!r}; expected one of {sorted(KERNELS)}.")
    cls = KERNELS[name]
    if not issubclass(cls, _ShapedKernel):
        if shape:
            raise ValueError(f"Kernel {name!r} takes no shape parameter.")
        return cls()
    if shape:
        return cls(float(shape))
    return cls(default_shape) if default_shape is not None else cls()


def mean_nearest_neighbor_distance(points) -> float:
    """The mean distance from each point to its nearest other point; 1 for a single point."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) < 2:
        return 1.0
    dist, _ = cKDTree(points).query(points, k=2)
    return float(np.mean(dist[:, 1]))


def _trend_basis(points: np.ndarray, degree: Optional[int]) -> np.ndarray:
    if degree is None:
        return np.empty((len(points), 0))
    if degree == 0:
        return np.ones((len(points), 1))
    return np.hstack([np.ones((len(points), 1)), points])


class RbfModel:
    """
    A fitted RBF interpolation system. Immutable after construction; :meth:`weights` is safe to call concurrently.
    """

    __slots__ = ("kernel", "centers", "detrend", "condition", "_lu")

    def __init__(self, kernel: RbfKernel, centers, detrend: Optional[int], condition: float, lu):
        self.kernel = kernel
        self.centers = centers
        self.detrend = detrend
        self.condition = condition
        self._lu = lu

    @property
    def N(self) -> int:
        return len(self.centers)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def weights(self, query) -> np.ndarray:
        """
        The data weights ``w(z)`` at one query (returns ``(N,)``) or several (returns ``(n, N)``).

        :raises ShapeMismatch: if the query dimension differs from the centers'.
        """
        query = np.asarray(query, dtype=float)
        single = query.ndim == 1
        query = np.atleast_2d(query)
        if query.shape[1] != self.dim:
            raise ShapeMismatch(f"Query has dimension {query.shape[1]}, model has {self.dim}.")
        rhs = np.hstack([self.kernel(cdist(query, self.centers)), _trend_basis(query, self.detrend)])
        w = linalg.lu_solve(self._lu, rhs.T).T[:, : self.N]
        return w[0] if single else w

    def evaluate(self, values, query) -> np.ndarray:
        """
        Interpolates data ``values`` (length N, or (M, N) with one column per center) at ``query``.
        """
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.N:
            raise ShapeMismatch(f"Expected {self.N} values per row, got {values.shape[-1]}.")
        return values @ self.weights(query).T

    def __repr__(self):
        return f"<RbfModel kernel={self.kernel.spec()} N={self.N} dim={self.dim} detrend={self.detrend}>"


def fit_rbf(points, kernel: Optional[RbfKernel] = None, detrend: Optional[int] = 1) -> RbfModel:
    """
    Factorizes the interpolation system for a set of centers.

    :param points: (N, L) pairwise distinct centers, normalized coordinates.
    :param kernel: The radial function; defaults to a multiquadric whose ``c`` is the mean nearest-neighbor distance.
    :param detrend: ``None`` for no trend, 0 for a constant, 1 for an affine trend.
    :rtype: RbfModel
    :raises SingularInterpolationMatrix: for duplicate or affinely degenerate centers, or an ill-suited kernel.
    """
    centers = np.atleast_2d(np.asarray(points, dtype=float))
    n, dim = centers.shape
    if n < 1:
        raise ValueError("At least one center is needed.")
    if detrend not in (None, 0, 1):
        raise ValueError(f"Detrending degree must be None, 0 or 1, got {detrend!r}.")
    if kernel is None:
        kernel = Multiquadric(mean_nearest_neighbor_distance(centers))
    if n > 1 and np.min(pdist(centers)) == 0:
        raise SingularInterpolationMatrix("Duplicate centers.")
    trend = _trend_basis(centers, detrend)
    if trend.shape[1] > n:
        raise SingularInterpolationMatrix(f"{n} centers cannot determine an affine trend in {dim} dimensions.")

    phi = kernel(squareform(pdist(centers))) if n > 1 else kernel(np.zeros((1, 1)))
    m = trend.shape[1]
    system = np.zeros((n + m, n + m))
    system[:n, :n] = phi
    system[:n, n:] = trend
    system[n:, :n] = trend.T

    condition = float(np.linalg.cond(system)) if np.all(np.isfinite(system)) else np.inf
    if not np.isfinite(condition) or condition >= 1.0 / np.finfo(float).eps:
        raise SingularInterpolationMatrix(f"Interpolation matrix is singular (condition number {condition:.3e}).")
    if condition > CONDITION_WARN:
        warnings.warn(f"Interpolation matrix condition number is {condition:.3e}.", ConditioningWarning)
    log.debug("Fitted %s on %d centers, condition number %.3e", kernel.spec(), n, condition)
    return RbfModel(kernel, centers, detrend, condition, linalg.lu_factor(system))


def rbf_weights(model: RbfModel, query) -> np.ndarray:
    """The weights ``w(z)`` such that ``sum_i w_i(z) u_i`` is the interpolant of any data ``u`` at the centers."""
    return model.weights(query)

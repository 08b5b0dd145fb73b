import logging
from typing import Optional, Sequence

import numpy as np

from .errors import EmptySelection, ShapeMismatch
from .sampling import DesignMatrix

__all__ = (
    "SensitivityReport",
    "LinearityReport",
    "ReductionPolicy",
    "Reduction",
    "compute_jacobian_diaghessian",
    "global_measures",
    "screen_star",
    "full_hessian_and_D",
    "reduce_parameters",
    "local_nonlinearity_map",
    "power_iteration",
)

log = logging.getLogger(__name__)


class SensitivityReport:
    """Finite-difference sensitivities of the solution with respect to each parameter."""

    __slots__ = (
        "jacobian",
        "diag_hessian",
        "S",
        "S2",
        "ranking",
        "nonlinear_flags_global",
        "nonlinear_flags_local",
        "c",
    )

    def __init__(self, jacobian, diag_hessian, S, S2, ranking, nonlinear_flags_global, nonlinear_flags_local, c):
        self.jacobian = jacobian
        self.diag_hessian = diag_hessian
        self.S = S
        self.S2 = S2
        self.ranking = ranking
        self.nonlinear_flags_global = nonlinear_flags_global
        self.nonlinear_flags_local = nonlinear_flags_local
        self.c = c

    @property
    def dim(self) -> int:
        return len(self.S)

    def rows(self):
        """Rows ``(parameter, S, S2, rank, global_nonlinear, local_nonlinear_count)``; parameters and ranks 1-based."""
        rank = np.empty(self.dim, dtype=np.int64)
        rank[self.ranking] = np.arange(1, self.dim + 1)
        local_counts = self.nonlinear_flags_local.sum(axis=0)
        for j in range(self.dim):
            yield j + 1, self.S[j], self.S2[j], rank[j], int(self.nonlinear_flags_global[j]), int(local_counts[j])

    def __repr__(self):
        return f"<SensitivityReport L={self.dim} top={list(self.ranking[:5] + 1)}>"


class LinearityReport:
    """The global Hessian approximation and the linearity measure D."""

    __slots__ = ("full_hessian_global", "alpha_max", "D", "sigma")

    def __init__(self, full_hessian_global, alpha_max, D, sigma):
        self.full_hessian_global = full_hessian_global
        self.alpha_max = alpha_max
        self.D = D
        self.sigma = sigma

    @property
    def is_linear(self) -> bool:
        return self.D >= 0

    def __repr__(self):
        return f"<LinearityReport alpha_max={self.alpha_max:.6g} D={self.D:.6g} sigma={self.sigma:.6g}>"


def _steps(step, dim: int) -> np.ndarray:
    steps = np.broadcast_to(np.asarray(step, dtype=float), (dim,)).copy()
    if np.any(steps <= 0):
        raise ValueError("Finite-difference steps must be positive.")
    return steps


def compute_jacobian_diaghessian(X: DesignMatrix, step=1.0):
    """
    Central differences on a star design database.

    :param DesignMatrix X: Snapshots at ``star_doe(L)`` scaled by ``step``, in the documented order.
    :param step: The physical size of the step per coordinate (scalar or length L).
    :returns: ``(J, diagH)``, both (M, L).
    :raises ShapeMismatch: if the database does not have 2L+1 columns.
    """
    dim = X.dim
    if X.N != 2 * dim + 1:
        raise ShapeMismatch(f"A star database in {dim} dimensions needs {2 * dim + 1} columns, got {X.N}.")
    h = _steps(step, dim)
    u0 = X.snapshots[:, :1]
    plus = X.snapshots[:, 1::2]
    minus = X.snapshots[:, 2::2]
    jacobian = (plus - minus) / (2.0 * h)
    diag_hessian = (plus - 2.0 * u0 + minus) / h**2
    return jacobian, diag_hessian


def global_measures(jacobian, diag_hessian, c=1.0) -> SensitivityReport:
    """
    Aggregates pointwise sensitivities over the grid and ranks the parameters.

    ``S_j`` and ``S2_j`` are the Euclidean norms of column ``j`` of ``J`` and ``diagH``. Parameter ``j`` is flagged
    nonlinear globally if ``S_j < c * S2_j``, and at node ``i`` if ``|J_ij| < c * |diagH_ij|``.

    :param jacobian: (M, L) Jacobian.
    :param diag_hessian: (M, L) Hessian diagonal.
    :param c: Scalar or per-parameter constant.
    :rtype: SensitivityReport
    """
    jacobian = np.asarray(jacobian, dtype=float)
    diag_hessian = np.asarray(diag_hessian, dtype=float)
    if jacobian.shape != diag_hessian.shape:
        raise ShapeMismatch("J and diagH must have the same shape.")
    c = np.broadcast_to(np.asarray(c, dtype=float), (jacobian.shape[1],))
    S = np.sqrt(np.sum(jacobian**2, axis=0))
    S2 = np.sqrt(np.sum(diag_hessian**2, axis=0))
    ranking = np.argsort(-S, kind="stable")
    flags_global = S < c * S2
    flags_local = np.abs(jacobian) < c * np.abs(diag_hessian)
    return SensitivityReport(jacobian, diag_hessian, S, S2, ranking, flags_global, flags_local, c)


def screen_star(X: DesignMatrix, scales=1.0, c=1.0) -> SensitivityReport:
    """
    Screening of a star database whose normalized points +-1 sit at +-``scales`` in physical units.

    Derivatives are taken with respect to the physical variables. The nonlinearity constant is measured in
    normalized units, so it is scaled by ``scales`` as well: the flags are those of ``S_j < c * S2_j`` in normalized
    coordinates, whatever the marginals.

    :param DesignMatrix X: Star design database.
    :param scales: Physical size of a unit normalized step per coordinate (scalar or length L).
    :param c: The nonlinearity constant in normalized units.
    :rtype: SensitivityReport
    """
    scales = _steps(scales, X.dim)
    jacobian, diag_hessian = compute_jacobian_diaghessian(X, scales)
    return global_measures(jacobian, diag_hessian, np.asarray(c, dtype=float) * scales)


def power_iteration(matrix, tol: float = 1e-10, max_iter: int = 10000) -> float:
    """
    Returns the eigenvalue of largest magnitude of a symmetric matrix, by power iteration with Rayleigh quotients.

    :param matrix: (n, n) symmetric matrix.
    :param float tol: Relative tolerance on successive Rayleigh quotients.
    :param int max_iter: Maximum number of iterations.
    :rtype: float
    """
    matrix = np.asarray(matrix, dtype=float)
    v = np.ones(matrix.shape[0]) / np.sqrt(matrix.shape[0])
    w = matrix @ v
    if not np.any(w):
        return 0.0
    value = float(v @ w)
    for _ in range(max_iter):
        v = w / np.linalg.norm(w)
        w = matrix @ v
        if not np.any(w):
            return 0.0
        new = float(v @ w)
        if abs(new - value) <= tol * max(1.0, abs(new)):
            return new
        value = new
    log.warning("Power iteration did not converge in %d iterations.", max_iter)
    return value


def full_hessian_and_D(X_star: DesignMatrix, X_cross: DesignMatrix, step=1.0, sigma: float = 1.0) -> LinearityReport:
    """
    Builds the global Hessian approximation ``G`` and the linearity measure ``D``.

    Off-diagonal entries are ``G_jl = sqrt(sum_i H_ijl^2)`` from the mixed central difference on the cross design;
    diagonal entries are ``S2_j``. ``D = sqrt(sum_j S_j^2) - sigma/4 * |alpha_max|``, with ``alpha_max`` the
    eigenvalue of ``G`` of largest magnitude.

    :param DesignMatrix X_star: Star design database.
    :param DesignMatrix X_cross: Cross design database in the documented order.
    :param step: Finite-difference step per coordinate.
    :param float sigma: The largest standard deviation of the parameters.
    :rtype: LinearityReport
    :raises ShapeMismatch: if the databases do not match the design layouts.
    """
    J, diagH = compute_jacobian_diaghessian(X_star, step)
    dim = X_star.dim
    if X_cross.dim != dim or X_cross.N != 2 * dim * (dim - 1):
        raise ShapeMismatch(f"A cross database in {dim} dimensions needs {2 * dim * (dim - 1)} columns.")
    if X_cross.M != X_star.M:
        raise ShapeMismatch("Star and cross databases have different spatial sizes.")
    h = _steps(step, dim)
    report = global_measures(J, diagH)
    G = np.diag(report.S2)
    col = 0
    for j in range(dim):
        for l in range(j + 1, dim):  # noqa: E741
            pp, pm, mp, mm = (X_cross.snapshots[:, col + k] for k in range(4))
            mixed = (pp - pm - mp + mm) / (4.0 * h[j] * h[l])
            G[j, l] = G[l, j] = np.sqrt(np.sum(mixed**2))
            col += 4
    alpha = abs(power_iteration(G))
    D = float(np.sqrt(np.sum(report.S**2)) - sigma / 4.0 * alpha)
    log.info("Linearity measure: |alpha_max| = %.6g, D = %.6g (sigma = %.6g)", alpha, D, sigma)
    return LinearityReport(G, alpha, D, sigma)


class ReductionPolicy:
    """
    How to select retained parameters: the ``top_k`` highest-ranked, or the shortest ranking prefix whose cumulative
    ``S`` reaches ``fraction`` of the total. With ``keep_nonlinear``, globally nonlinear parameters whose ``S2`` is at
    least the smallest retained ``S`` are retained as well.
    """

    __slots__ = ("top_k", "fraction", "keep_nonlinear")

    def __init__(self, top_k: Optional[int] = None, fraction: Optional[float] = None, keep_nonlinear: bool = False):
        if (top_k is None) == (fraction is None):
            raise ValueError("Exactly one of top_k and fraction must be given.")
        if fraction is not None and not 0 < fraction <= 1:
            raise ValueError("fraction must lie in (0, 1].")
        self.top_k = top_k
        self.fraction = fraction
        self.keep_nonlinear = keep_nonlinear

    def __repr__(self):
        if self.top_k is not None:
            return f"<ReductionPolicy top_k={self.top_k}>"
        return f"<ReductionPolicy fraction={self.fraction}>"


class Reduction:
    """
    The map between the full and the reduced parameter space. Dropped parameters are frozen at their mean, 0.
    """

    __slots__ = ("retained", "dim")

    def __init__(self, retained: Sequence[int], dim: int):
        self.retained = np.array(sorted(int(j) for j in retained), dtype=np.int64)
        self.dim = dim

    @classmethod
    def identity(cls, dim: int) -> "Reduction":
        return cls(range(dim), dim)

    @property
    def frozen(self) -> dict:
        """Dropped parameter index -> frozen value."""
        kept = set(self.retained.tolist())
        return {j: 0.0 for j in range(self.dim) if j not in kept}

    @property
    def reduced_dim(self) -> int:
        return len(self.retained)

    def embed(self, reduced_points) -> np.ndarray:
        """Maps (n, L') reduced points to (n, L) full points."""
        reduced_points = np.atleast_2d(np.asarray(reduced_points, dtype=float))
        full = np.zeros((len(reduced_points), self.dim))
        full[:, self.retained] = reduced_points
        return full

    def project(self, full_points) -> np.ndarray:
        """Maps (n, L) full points to (n, L') reduced points."""
        return np.atleast_2d(np.asarray(full_points, dtype=float))[:, self.retained]

    def __repr__(self):
        return f"<Reduction retained={list(self.retained + 1)} of {self.dim}>"


def reduce_parameters(report: SensitivityReport, policy: ReductionPolicy) -> Reduction:
    """
    Selects the retained parameters according to the policy.

    :param SensitivityReport report: The screening report.
    :param ReductionPolicy policy: The selection policy.
    :rtype: Reduction
    :raises EmptySelection: if the policy retains nothing.
    """
    ranking = report.ranking
    if policy.top_k is not None:
        count = min(max(int(policy.top_k), 0), report.dim)
    else:
        cumulative = np.cumsum(report.S[ranking])
        total = cumulative[-1] if len(cumulative) else 0.0
        if total <= 0:
            count = 0
        else:
            count = int(np.searchsorted(cumulative, policy.fraction * total * (1 - 1e-12)) + 1)
    retained = set(ranking[:count].tolist())
    if policy.keep_nonlinear and retained:
        floor = min(report.S[j] for j in retained)
        retained.update(j for j in np.flatnonzero(report.nonlinear_flags_global) if report.S2[j] >= floor)
    if not retained:
        raise EmptySelection(f"Policy {policy!r} retained no parameters.")
    reduction = Reduction(retained, report.dim)
    log.info("Retained parameters %s", list(reduction.retained + 1))
    return reduction


def local_nonlinearity_map(report: SensitivityReport) -> np.ndarray:
    """The number of parameters flagged locally nonlinear at each grid node."""
    return report.nonlinear_flags_local.sum(axis=1)

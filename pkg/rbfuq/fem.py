import logging
from typing import Callable, Mapping, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NonConvergence, SingularSystem
from .mesh import BoundaryTag, Mesh

__all__ = ("BoundaryConditions", "SolveReport", "solve_deterministic", "l2_error", "DIRECT_SOLVE_LIMIT")

log = logging.getLogger(__name__)

DIRECT_SOLVE_LIMIT = 20000
MAX_HALVINGS = 20
MAX_CONTINUATION_STEPS = 30
SUFFICIENT_DECREASE = 1e-4

CoefficientField = Union[float, Callable[[np.ndarray, np.ndarray], np.ndarray]]
Source = Union[float, Callable[[np.ndarray, np.ndarray], np.ndarray]]


class BoundaryConditions:
    """Dirichlet values per boundary tag and a constant Neumann flux on Neumann edges."""

    __slots__ = ("dirichlet_values", "neumann_flux")

    def __init__(self, dirichlet_values: Mapping[BoundaryTag, float], neumann_flux: float = 0.0):
        self.dirichlet_values = {BoundaryTag(k): float(v) for k, v in dirichlet_values.items()}
        self.neumann_flux = float(neumann_flux)

    @classmethod
    def model_problem(cls, top_value: float = 1.0) -> "BoundaryConditions":
        """u = ``top_value`` on the upper edge, u = 0 on the right edge, zero flux elsewhere."""
        return cls({BoundaryTag.DIRICHLET_LEFT: top_value, BoundaryTag.DIRICHLET_RIGHT: 0.0})

    def scaled(self, alpha: float) -> "BoundaryConditions":
        return BoundaryConditions({k: alpha * v for k, v in self.dirichlet_values.items()}, alpha * self.neumann_flux)

    def check(self, mesh: Mesh):
        """
        :raises ValueError: if a Dirichlet tag present in the mesh has no value.
        """
        for tag in (BoundaryTag.DIRICHLET_LEFT, BoundaryTag.DIRICHLET_RIGHT):
            if np.any(mesh.boundary_tags == tag) and tag not in self.dirichlet_values:
                raise ValueError(f"No Dirichlet value given for boundary tag {tag.name}.")

    def __repr__(self):
        return f"<BoundaryConditions dirichlet={self.dirichlet_values} neumann_flux={self.neumann_flux}>"


class SolveReport:
    """The result of a deterministic solve."""

    __slots__ = ("solution", "newton_iterations", "final_residual_norm", "residual_history", "continuation_runs")

    def __init__(self, solution, newton_iterations, final_residual_norm, residual_history, continuation_runs=1):
        self.solution = solution
        self.newton_iterations = newton_iterations
        self.final_residual_norm = final_residual_norm
        self.residual_history = residual_history
        self.continuation_runs = continuation_runs

    def __repr__(self):
        return f"<SolveReport iterations={self.newton_iterations} residual={self.final_residual_norm:.3e}>"


class _Geometry:
    """Per-triangle P1 quantities shared by every Newton step of one solve."""

    def __init__(self, mesh: Mesh):
        p = mesh.nodes[mesh.triangles]  # (T, 3, 2)
        self.area = mesh.signed_areas
        # gradients of barycentric coordinates: rotate the opposite edge by 90 degrees
        edges = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        grads = np.stack([-edges[..., 1], edges[..., 0]], axis=-1) / (2.0 * self.area[:, None, None])
        self.stiffness = self.area[:, None, None] * np.einsum("tik,tjk->tij", grads, grads)
        self.rows = np.repeat(mesh.triangles[:, :, None], 3, axis=2).ravel()
        self.cols = np.repeat(mesh.triangles[:, None, :], 3, axis=1).ravel()
        self.triangles = mesh.triangles
        self.size = mesh.num_nodes

    def matrix(self, local: np.ndarray) -> sp.csr_matrix:
        return sp.coo_matrix((local.ravel(), (self.rows, self.cols)), shape=(self.size, self.size)).tocsr()


def _field_values(field: CoefficientField, mesh: Mesh) -> np.ndarray:
    if callable(field):
        return np.asarray(field(mesh.centroids, mesh.subdomains), dtype=float)
    return np.full(mesh.num_triangles, float(field))


def _load_vector(mesh: Mesh, geom: _Geometry, source: Source, bc: BoundaryConditions) -> np.ndarray:
    if callable(source):
        c = mesh.centroids
        b = np.asarray(source(c[:, 0], c[:, 1]), dtype=float)
    else:
        b = np.full(mesh.num_triangles, float(source))
    load = np.zeros(mesh.num_nodes)
    np.add.at(load, mesh.triangles, (b * geom.area / 3.0)[:, None])
    if bc.neumann_flux:
        edges = mesh.boundary_edges[mesh.boundary_tags == BoundaryTag.NEUMANN]
        lengths = np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)
        np.add.at(load, edges, (bc.neumann_flux * lengths / 2.0)[:, None])
    return load


def _linear_solve(matrix: sp.csr_matrix, rhs: np.ndarray, tol: float) -> np.ndarray:
    if matrix.shape[0] <= DIRECT_SOLVE_LIMIT:
        x = spla.spsolve(matrix.tocsc(), rhs)
    else:
        diag = matrix.diagonal()
        if np.any(diag == 0):
            raise SingularSystem("Zero diagonal entry in the Jacobian.")
        precond = spla.LinearOperator(matrix.shape, matvec=lambda v: v / diag)
        # the Jacobian is nonsymmetric for gamma != 0, so a Krylov method for general matrices is used
        x, info = spla.gmres(matrix, rhs, M=precond, rtol=1e-12, atol=0.1 * tol, restart=100, maxiter=1000)
        if info != 0:
            raise SingularSystem(f"GMRES failed to converge (info={info}).")
    if not np.all(np.isfinite(x)):
        raise SingularSystem("The linearized system is singular.")
    return x


class _Discretization:
    """The discrete residual and Newton Jacobian of one solve; ``gamma`` is passed per call for continuation."""

    def __init__(self, mesh: Mesh, geom: _Geometry, base: np.ndarray, load: np.ndarray, free: np.ndarray):
        self.mesh = mesh
        self.geom = geom
        self.base = base
        self.load = load
        self.free = free

    def coefficient(self, state: np.ndarray, gamma: float):
        centroid_u = state[self.mesh.triangles].mean(axis=1)
        a = self.base + gamma * centroid_u**2
        if np.any(a <= 0):
            raise SingularSystem(f"Diffusion coefficient became non-positive (min {a.min():.3e}).")
        return a, centroid_u

    def residual(self, state: np.ndarray, gamma: float) -> np.ndarray:
        a, _ = self.coefficient(state, gamma)
        return (self.geom.matrix(a[:, None, None] * self.geom.stiffness) @ state - self.load)[self.free]

    def jacobian(self, state: np.ndarray, gamma: float) -> sp.csr_matrix:
        a, centroid_u = self.coefficient(state, gamma)
        local = a[:, None, None] * self.geom.stiffness
        if gamma:
            flux = np.einsum("tij,tj->ti", self.geom.stiffness, state[self.mesh.triangles])
            local = local + flux[:, :, None] * (2.0 * gamma * centroid_u / 3.0)[:, None, None]
        return self.geom.matrix(local)[self.free][:, self.free]


class _Stalled(Exception):
    def __init__(self, iterations, residual_norm):
        super().__init__(iterations, residual_norm)
        self.iterations = iterations
        self.residual_norm = residual_norm


def _newton(disc: _Discretization, u: np.ndarray, gamma: float, tol: float, max_iter: int):
    """
    Newton's method at a fixed ``gamma``. A step must reduce the residual norm by a sufficient amount; it is halved
    up to ``MAX_HALVINGS`` times, and a step that still fails stalls the run instead of being accepted.

    :returns: The converged state and the residual norm history.
    :raises _Stalled: if the line search fails or ``max_iter`` steps do not meet the tolerance.
    """
    r = disc.residual(u, gamma)
    norm = float(np.linalg.norm(r))
    history = [norm]
    iterations = 0
    while norm > tol:
        if iterations >= max_iter:
            raise _Stalled(iterations, norm)
        delta = _linear_solve(disc.jacobian(u, gamma), -r, tol)

        step = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = u.copy()
            trial[disc.free] += step * delta
            try:
                trial_r = disc.residual(trial, gamma)
                trial_norm = float(np.linalg.norm(trial_r))
            except SingularSystem:
                trial_norm = np.inf
            if trial_norm <= (1.0 - SUFFICIENT_DECREASE * step) * norm:
                break
            step *= 0.5
        else:
            log.debug("Line search failed at gamma = %.6g after %d steps (residual %.3e)", gamma, iterations, norm)
            raise _Stalled(iterations, norm)
        u, r, norm = trial, trial_r, trial_norm
        iterations += 1
        history.append(norm)
        log.debug("Newton step %d: residual %.3e (step %.3g)", iterations, norm, step)
    return u, history


def solve_deterministic(
    mesh: Mesh,
    field: CoefficientField,
    bc: BoundaryConditions,
    source: Source = 1.0,
    gamma: float = 0.0,
    newton_tol: float = 1e-10,
    max_iter: int = 50,
) -> SolveReport:
    """
    Solves ``-div((a(x) + gamma*u^2) grad u) = b`` with P1 elements and Newton's method.

    The coefficient is frozen per triangle: ``a`` is evaluated at the centroid and ``u`` is the P1 interpolant at the
    centroid. The Jacobian includes the derivative of the ``gamma*u^2`` term. A step that does not reduce the
    residual norm is halved.

    For ``gamma > 0`` Newton starts from the linear (``gamma = 0``) solution. If it stalls there, ``gamma`` is
    approached by continuation: the increment is halved after every stalled run and doubled after every converged
    one. The reported iterations and residual history are those of the final run at the requested ``gamma``.

    :param Mesh mesh: The mesh.
    :param field: The base coefficient ``a(x, 0, y)`` with ``y`` already bound: a constant, or a callable mapping
        ``(points (T, 2), subdomain labels (T,))`` to ``(T,)`` values.
    :param BoundaryConditions bc: The boundary conditions.
    :param source: The right-hand side ``b``: a constant or a callable ``b(x, y)`` on arrays.
    :param float gamma: The nonlinearity constant.
    :param float newton_tol: Tolerance on the Euclidean norm of the discrete residual at free nodes.
    :param int max_iter: Maximum number of Newton steps per run.
    :rtype: SolveReport
    :raises NonConvergence: if Newton keeps stalling after ``MAX_CONTINUATION_STEPS`` reductions of the increment,
        or if the linear start needs more than ``max_iter`` steps.
    :raises SingularSystem: if the coefficient becomes non-positive or a linear solve fails.
    """
    if newton_tol <= 0:
        raise ValueError("newton_tol must be positive.")
    if gamma < 0:
        raise ValueError("gamma must not be negative.")
    bc.check(mesh)
    geom = _Geometry(mesh)
    load = _load_vector(mesh, geom, source, bc)

    u = np.zeros(mesh.num_nodes)
    fixed = np.zeros(mesh.num_nodes, dtype=bool)
    for tag, value in bc.dirichlet_values.items():
        nodes = mesh.tagged_nodes(tag)
        u[nodes] = value
        fixed[nodes] = True
    disc = _Discretization(mesh, geom, _field_values(field, mesh), load, ~fixed)

    try:
        u, history = _newton(disc, u, 0.0, newton_tol, max_iter)
    except _Stalled as e:
        raise NonConvergence(e.iterations, e.residual_norm) from None
    if not gamma:
        return SolveReport(u, len(history) - 1, history[-1], history)

    reached, target = 0.0, float(gamma)
    stalls = 0
    runs = 0
    while True:
        try:
            trial, history = _newton(disc, u, target, newton_tol, max_iter)
        except _Stalled as e:
            stalls += 1
            if stalls > MAX_CONTINUATION_STEPS:
                raise NonConvergence(e.iterations, e.residual_norm) from None
            target = reached + 0.5 * (target - reached)
            log.debug("Newton stalled; continuing at gamma = %.6g", target)
            continue
        u = trial
        runs += 1
        if target == gamma:
            break
        increment = target - reached
        reached, target = target, min(float(gamma), target + 2.0 * increment)
    if runs > 1:
        log.debug("Reached gamma = %.6g in %d continuation runs", gamma, runs)
    return SolveReport(u, len(history) - 1, history[-1], history, runs)


def l2_error(mesh: Mesh, u: np.ndarray, exact: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    """
    Returns the L2 norm of ``u_h - exact`` using the edge-midpoint rule on every triangle.

    :param Mesh mesh: The mesh.
    :param u: Nodal values of the P1 function ``u_h``.
    :param exact: The reference function ``exact(x, y)`` on arrays.
    :rtype: float
    """
    tri = mesh.triangles
    total = 0.0
    for i, j in ((0, 1), (1, 2), (2, 0)):
        mid = 0.5 * (mesh.nodes[tri[:, i]] + mesh.nodes[tri[:, j]])
        uh = 0.5 * (u[tri[:, i]] + u[tri[:, j]])
        total += np.sum(mesh.signed_areas / 3.0 * (uh - exact(mid[:, 0], mid[:, 1])) ** 2)
    return float(np.sqrt(total))


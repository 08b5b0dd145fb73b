import math

import numpy as np
import pytest

from rbfuq import *


def _manufactured(h):
    mesh = build_rectangle_mesh(h)
    bc = BoundaryConditions({BoundaryTag.DIRICHLET_LEFT: 0.0, BoundaryTag.DIRICHLET_RIGHT: 0.0})

    def source(x, y):
        return 2 * math.pi**2 * np.sin(math.pi * x) * np.sin(math.pi * y)

    def exact(x, y):
        return np.sin(math.pi * x) * np.sin(math.pi * y)

    report = solve_deterministic(mesh, 1.0, bc, source=source)
    return l2_error(mesh, report.solution, exact)


def test_convergence_rate():
    errors = [_manufactured(h) for h in (1 / 8, 1 / 16, 1 / 32)]
    rates = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    for rate in rates:
        assert 1.8 <= rate <= 2.2


def test_linear_one_newton_step():
    mesh = build_lshape_mesh(0.25)
    report = solve_deterministic(mesh, 30.0, BoundaryConditions.model_problem(), gamma=0.0)
    assert report.newton_iterations == 1
    assert report.final_residual_norm <= 1e-10
    assert len(report.residual_history) == 2


def test_max_principle():
    mesh = build_lshape_mesh(0.25)
    report = solve_deterministic(mesh, 1.0, BoundaryConditions.model_problem(1.0), source=0.0)
    u = report.solution
    assert u.min() >= -1e-12
    assert u.max() <= 1.0 + 1e-12


def test_dirichlet_values():
    mesh = build_lshape_mesh(0.5)
    report = solve_deterministic(mesh, 5.0, BoundaryConditions.model_problem(2.0), gamma=1.0)
    u = report.solution
    assert np.all(u[mesh.tagged_nodes(BoundaryTag.DIRICHLET_LEFT)] == 2.0)
    assert np.all(u[mesh.tagged_nodes(BoundaryTag.DIRICHLET_RIGHT)] == 0.0)


def test_nonlinear_converges():
    mesh = build_lshape_mesh(0.25)
    field = PiecewiseField(model_problem_specs())
    for gamma in (1.0, 100.0):
        report = solve_deterministic(mesh, field.bind(np.zeros(18)), BoundaryConditions.model_problem(), gamma=gamma)
        assert report.final_residual_norm <= 1e-10
        assert report.newton_iterations > 1
        assert np.all(np.isfinite(report.solution))


def test_gamma_lowers_solution_spread():
    # a larger gamma increases the diffusivity, so the solution is closer to the harmonic one
    mesh = build_lshape_mesh(0.25)
    bc = BoundaryConditions.model_problem()
    low = solve_deterministic(mesh, 1.0, bc, source=10.0, gamma=0.0).solution
    high = solve_deterministic(mesh, 1.0, bc, source=10.0, gamma=100.0).solution
    assert high.max() < low.max()


def test_non_convergence():
    mesh = build_lshape_mesh(0.25)
    with pytest.raises(NonConvergence) as e:
        solve_deterministic(mesh, 1.0, BoundaryConditions.model_problem(), gamma=100.0, max_iter=1)
    assert e.value.iterations == 1


def test_singular_coefficient():
    mesh = build_lshape_mesh(0.5)
    with pytest.raises(SingularSystem):
        solve_deterministic(mesh, -1.0, BoundaryConditions.model_problem())


def test_bad_arguments():
    mesh = build_lshape_mesh(0.5)
    with pytest.raises(ValueError):
        solve_deterministic(mesh, 1.0, BoundaryConditions.model_problem(), newton_tol=0)
    with pytest.raises(ValueError):
        solve_deterministic(mesh, 1.0, BoundaryConditions({BoundaryTag.DIRICHLET_LEFT: 1.0}))


def test_neumann_flux():
    mesh = build_lshape_mesh(0.5)
    plain = solve_deterministic(mesh, 1.0, BoundaryConditions.model_problem(), source=0.0).solution
    bc = BoundaryConditions(BoundaryConditions.model_problem().dirichlet_values, neumann_flux=1.0)
    fluxed = solve_deterministic(mesh, 1.0, bc, source=0.0).solution
    assert np.all(fluxed >= plain - 1e-12)
    assert np.sum(fluxed) > np.sum(plain)


def test_scaled_bc():
    bc = BoundaryConditions.model_problem(2.0).scaled(0.5)
    assert bc.dirichlet_values[BoundaryTag.DIRICHLET_LEFT] == 1.0
    assert bc.dirichlet_values[BoundaryTag.DIRICHLET_RIGHT] == 0.0


@pytest.mark.parametrize("gamma", [10.0, 100.0])
def test_strong_nonlinearity(gamma):
    mesh = build_lshape_mesh(0.25)
    bc = BoundaryConditions.model_problem()
    report = solve_deterministic(mesh, 1.0, bc, source=10.0, gamma=gamma)
    assert report.final_residual_norm <= 1e-10
    assert report.continuation_runs >= 1
    linear = solve_deterministic(mesh, 1.0, bc, source=10.0).solution
    # the nonlinear diffusivity is at least the linear one
    assert report.solution.max() <= linear.max() + 1e-12
    assert report.solution.min() >= -1e-12


@pytest.mark.parametrize("gamma", [1.0, 100.0])
def test_residual_monotone(gamma):
    mesh = build_lshape_mesh(0.25)
    field = PiecewiseField(model_problem_specs())
    report = solve_deterministic(mesh, field.bind(np.zeros(18)), BoundaryConditions.model_problem(), gamma=gamma)
    history = report.residual_history
    for before, after in zip(history[1:], history[2:]):
        assert after <= 1.01 * before


def test_linear_in_boundary_data():
    mesh = build_lshape_mesh(0.25)
    bc = BoundaryConditions.model_problem(1.0)
    base = solve_deterministic(mesh, 2.0, bc, source=0.0).solution
    for alpha in (0.5, 2.5):
        scaled = solve_deterministic(mesh, 2.0, bc.scaled(alpha), source=0.0).solution
        assert np.allclose(scaled, alpha * base, atol=1e-10)


@pytest.mark.parametrize("gamma", [0.0, 1.0])
def test_node_renumbering(gamma):
    mesh = build_lshape_mesh(0.25)
    perm = np.random.permutation(mesh.num_nodes)
    field = PiecewiseField(model_problem_specs())
    coefficient = field.bind(np.zeros(18))
    bc = BoundaryConditions.model_problem()
    u = solve_deterministic(mesh, coefficient, bc, gamma=gamma).solution
    v = solve_deterministic(mesh.permute_nodes(perm), coefficient, bc, gamma=gamma).solution
    assert np.allclose(v, u[perm], atol=1e-9)

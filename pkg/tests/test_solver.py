"""
Tests for the spd and saddle-point solvers
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import sparse as sp

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from adaptivity import solve_on_mesh
from assembly import PenaltyRegime, SparseSystem, assemble_constraints
from benchmarks import exact_solution, weight
from mesh import DomainSpec, build_initial_mesh, refine_uniformly
from solver import RELIABILITY_GATE, SolverError, relative_residual, solve_saddle, solve_spd


def spd_system(matrix, rhs):
    matrix = sp.csr_matrix(matrix)
    return SparseSystem(matrix=matrix, rhs=np.asarray(rhs, dtype=float), n_primal=matrix.shape[0])


def test_identity():
    report = solve_spd(spd_system(np.eye(3), [1.0, 0.0, 0.0]))
    assert np.allclose(report.solution, [1.0, 0.0, 0.0])
    assert report.reliable
    assert report.method == "splu"


def test_two_by_two():
    report = solve_spd(spd_system([[2.0, 1.0], [1.0, 2.0]], [3.0, 3.0]))
    assert np.allclose(report.solution, [1.0, 1.0], atol=1e-12)


@pytest.mark.parametrize("iterative", [False, True])
def test_random_spd(iterative):
    rng = np.random.default_rng(1)
    m = rng.standard_normal((50, 50))
    system = spd_system(m.T @ m + np.eye(50), rng.standard_normal(50))
    report = solve_spd(system, iterative=iterative)
    assert report.reliable
    assert report.relative_residual <= RELIABILITY_GATE
    if not iterative:
        assert report.relative_residual <= 1e-10
    else:
        assert report.method == "cg"
        assert report.statistics["iterations"] > 0


def test_singular_matrix_raises():
    with pytest.raises(SolverError):
        solve_spd(spd_system(np.zeros((3, 3)), [1.0, 0.0, 0.0]))


def test_structure_tags_are_checked():
    system = spd_system(np.eye(2), [1.0, 1.0])
    with pytest.raises(SolverError):
        solve_saddle(system)
    saddle = SparseSystem(matrix=system.matrix, rhs=system.rhs, structure="saddle", n_primal=2)
    with pytest.raises(SolverError):
        solve_spd(saddle)


def test_saddle_point_with_multiplier():
    # minimize x^T x / 2 - x_1 subject to x_1 + x_2 = 0
    matrix = sp.csr_matrix([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0]])
    system = SparseSystem(matrix=matrix, rhs=np.array([1.0, 0.0, 0.0]), structure="saddle",
                          n_primal=2, n_multiplier=1)
    report = solve_saddle(system)
    assert np.allclose(report.solution, [0.5, -0.5])
    assert np.allclose(report.multiplier, [0.5])
    assert report.reliable


def test_saddle_without_constraints_falls_back():
    system = SparseSystem(matrix=sp.csr_matrix(np.diag([2.0, 4.0])), rhs=np.array([2.0, 2.0]),
                          structure="saddle", n_primal=2)
    assert np.allclose(solve_saddle(system).solution, [1.0, 0.5])


def test_rank_deficient_constraints_raise():
    matrix = sp.csr_matrix([[1.0, 0.0, 1.0, 1.0], [0.0, 1.0, 1.0, 1.0],
                            [1.0, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0]])
    system = SparseSystem(matrix=matrix, rhs=np.array([1.0, 0.0, 0.0, 0.0]), structure="saddle",
                          n_primal=2, n_multiplier=2)
    with pytest.raises(SolverError):
        solve_saddle(system)


def test_relative_residual_of_zero_rhs_is_absolute():
    matrix = sp.identity(2, format="csr")
    assert relative_residual(matrix, np.array([3.0, 4.0]), np.zeros(2)) == pytest.approx(5.0)


@pytest.mark.parametrize("k", [0, 1])
@pytest.mark.parametrize("name, ell", [("square", 1.0), ("rectangle", 2), ("lshape", 1.0)])
def test_formulations_agree(name, ell, k):
    domain = DomainSpec(name, ell)
    exact = exact_solution(domain)
    regime = PenaltyRegime(1, weight("friedrichs", domain))
    mesh = build_initial_mesh(domain)
    for _ in range(2):
        level = solve_on_mesh(mesh, k, regime, exact.f, solver="both")
        assert level.discrepancy <= 1e-8
        assert level.report.reliable
        constraints = assemble_constraints(mesh, level.solution.rt_space)
        sigma = level.solution.sigma
        assert np.abs(constraints @ sigma).max() <= 1e-10 * max(1.0, np.abs(sigma).max())
        mesh = refine_uniformly(mesh)

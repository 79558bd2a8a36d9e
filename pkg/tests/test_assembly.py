"""
Tests for the least-squares assembly and functional evaluation
"""

import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg as la
from scipy import sparse as sp

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

import assembly
from assembly import (AssemblyError, PenaltyRegime, assemble_bilinear, assemble_constraints, assemble_norm,
                      evaluate_functional, functional_parts, primal_jumps, quadratic_form, restrict,
                      saddle_system)
from benchmarks import exact_solution, weight
from mesh import DomainSpec, build_initial_mesh, refine, refine_uniformly
from quadrature import edge_rule
from solver import solve_spd
from spaces import PiecewiseRTSpace, ScalarDGSpace, build_constrained_basis


def spaces(mesh, k):
    return PiecewiseRTSpace(mesh, k), ScalarDGSpace(mesh, k + 1)


def test_penalty_regime():
    h = np.array([0.5, 2.0])
    assert np.allclose(PenaltyRegime(1, 3.0).flux_jump_weight(h), h)
    assert np.allclose(PenaltyRegime(-1, 3.0).flux_jump_weight(h), 9.0 / h)
    with pytest.raises(AssemblyError):
        PenaltyRegime(0, 1.0)
    with pytest.raises(AssemblyError):
        PenaltyRegime(1, 0.0)


@pytest.mark.parametrize("alpha", [1, -1])
@pytest.mark.parametrize("k", [0, 1])
@pytest.mark.parametrize("name, ell", [("square", 1.0), ("rectangle", 2), ("lshape", 1.0)])
def test_quadratic_form_matches_functional(name, ell, k, alpha):
    domain = DomainSpec(name, ell)
    mesh = refine(build_initial_mesh(domain), [0, 3])
    exact = exact_solution(domain)
    regime = PenaltyRegime(alpha, weight("friedrichs", domain))
    rt, dg = spaces(mesh, k)
    system = assemble_bilinear(mesh, rt, dg, regime, exact.f)
    a = system.matrix
    assert abs(a - a.T).max() <= 1e-12 * abs(a).max()
    rng = np.random.default_rng(7)
    for _ in range(5):
        x = rng.standard_normal(system.size)
        total, per_triangle = evaluate_functional(mesh, rt, dg, x[:rt.num_dofs], x[rt.num_dofs:], exact.f, regime)
        assert np.isclose(total, per_triangle.sum())
        assert abs(quadratic_form(system, x) - total) <= 1e-10 * abs(total)


def test_zero_source_gives_zero_solution():
    mesh = build_initial_mesh(DomainSpec("square"))
    rt, dg = spaces(mesh, 1)
    regime = PenaltyRegime(-1, 1.0)
    system = assemble_bilinear(mesh, rt, dg, regime, None)
    assert not system.rhs.any()
    assert system.load_norm_sq == 0.0
    assert np.abs(solve_spd(system).solution).max() <= 1e-14


def test_functional_of_zero_is_load_norm():
    mesh = build_initial_mesh(DomainSpec("square"))
    rt, dg = spaces(mesh, 0)
    exact = exact_solution("square")
    regime = PenaltyRegime(1, 2.0)
    system = assemble_bilinear(mesh, rt, dg, regime, exact.f)
    total, _ = evaluate_functional(mesh, rt, dg, np.zeros(rt.num_dofs), np.zeros(dg.num_dofs), exact.f, regime)
    # c^2 ||f||^2 with ||f||^2 = 4 pi^4 / 4
    assert np.isclose(total, 4.0 * np.pi ** 4, rtol=1e-6)
    assert np.isclose(system.load_norm_sq, total)


def test_parallel_assembly_matches_serial(monkeypatch):
    monkeypatch.setattr(assembly, "CHUNK_SIZE", 5)
    mesh = refine_uniformly(build_initial_mesh(DomainSpec("lshape")), 1)
    rt, dg = spaces(mesh, 1)
    exact = exact_solution("lshape")
    regime = PenaltyRegime(1, weight("friedrichs", "lshape"))
    serial = assemble_bilinear(mesh, rt, dg, regime, exact.f, workers=1)
    parallel = assemble_bilinear(mesh, rt, dg, regime, exact.f, workers=4)
    assert abs(serial.matrix - parallel.matrix).max() <= 1e-12 * abs(serial.matrix).max()
    assert np.allclose(serial.rhs, parallel.rhs, rtol=0, atol=1e-12 * np.abs(serial.rhs).max())


@pytest.mark.parametrize("alpha", [1, -1])
def test_weight_scaling_is_quadratic(alpha):
    """A(c) = c^2 D + R, so A(3) - A(1) = 8/3 (A(2) - A(1)) and the primal block is unchanged."""
    mesh = build_initial_mesh(DomainSpec("rectangle", 2))
    rt, dg = spaces(mesh, 1)
    a = {c: assemble_bilinear(mesh, rt, dg, PenaltyRegime(alpha, c)).matrix.toarray() for c in (1.0, 2.0, 3.0)}
    d21 = a[2.0] - a[1.0]
    d31 = a[3.0] - a[1.0]
    assert np.allclose(d31, 8.0 / 3.0 * d21, atol=1e-10 * np.abs(d31).max())
    n = rt.num_dofs
    assert np.allclose(a[3.0][n:, n:], a[1.0][n:, n:])
    assert np.allclose(a[3.0][:n, n:], a[1.0][:n, n:])


def test_spaces_from_other_mesh_rejected():
    mesh = build_initial_mesh(DomainSpec("square"))
    finer = refine_uniformly(mesh)
    rt, dg = spaces(finer, 0)
    with pytest.raises(AssemblyError):
        assemble_bilinear(mesh, rt, dg, PenaltyRegime())
    with pytest.raises(AssemblyError):
        assemble_constraints(mesh, rt)


def test_constraints_shape_and_kernel():
    mesh = build_initial_mesh(DomainSpec("rectangle", 3))
    rt, dg = spaces(mesh, 1)
    constraints = assemble_constraints(mesh, rt, dg)
    topo = mesh.edges
    assert constraints.shape == (topo.interior.sum() + topo.neumann.sum(), rt.num_dofs + dg.num_dofs)
    assert constraints[:, rt.num_dofs:].nnz == 0
    kernel = constraints[:, :rt.num_dofs] @ rt.conforming_basis()
    assert abs(kernel).max() <= 1e-12


def test_restricted_and_saddle_systems():
    mesh = build_initial_mesh(DomainSpec("square"))
    rt, dg = spaces(mesh, 1)
    system = assemble_bilinear(mesh, rt, dg, PenaltyRegime(1, 1.0 / np.pi), exact_solution("square").f)
    basis = build_constrained_basis(mesh, 1, rt)
    restricted = restrict(system, basis)
    assert restricted.size == basis.num_dofs + dg.num_dofs
    assert restricted.prolongation.shape == (system.size, restricted.size)
    constraints = assemble_constraints(mesh, rt, dg)
    saddle = saddle_system(system, constraints)
    assert saddle.structure == "saddle"
    assert saddle.size == system.size + constraints.shape[0]
    with pytest.raises(AssemblyError):
        saddle_system(system, constraints[:, :rt.num_dofs])


def admissible(mesh, k, regime, f=None):
    """System on the discrete space of the regime and its prolongation to [sigma raw, u]."""
    rt, dg = spaces(mesh, k)
    system = assemble_bilinear(mesh, rt, dg, regime, f)
    if regime.alpha > 0:
        system = restrict(system, build_constrained_basis(mesh, k, rt))
        return rt, dg, system, system.prolongation
    return rt, dg, system, sp.identity(system.size, format="csr")


@pytest.mark.parametrize("alpha", [1, -1])
@pytest.mark.parametrize("k", [0, 1])
@pytest.mark.parametrize("name, ell", [("square", 1.0), ("rectangle", 2), ("lshape", 1.0)])
def test_minimizer_beats_perturbations(name, ell, k, alpha):
    domain = DomainSpec(name, ell)
    mesh = build_initial_mesh(domain)
    exact = exact_solution(domain)
    regime = PenaltyRegime(alpha, weight("friedrichs", domain))
    rt, dg, system, prolongation = admissible(mesh, k, regime, exact.f)
    y = solve_spd(system).solution
    x = prolongation @ y
    best, _ = evaluate_functional(mesh, rt, dg, x[:rt.num_dofs], x[rt.num_dofs:], exact.f, regime)
    rng = np.random.default_rng(3)
    for _ in range(20):
        direction = rng.standard_normal(y.size)
        for eps in (1e-3, 1e-1, 1.0):
            z = prolongation @ (y + eps * direction)
            value, _ = evaluate_functional(mesh, rt, dg, z[:rt.num_dofs], z[rt.num_dofs:], exact.f, regime)
            assert value >= best - 1e-12 * max(best, 1.0)


@pytest.mark.parametrize("alpha", [1, -1])
@pytest.mark.parametrize("k, refinements", [
    (0, 2), (1, 2),
    pytest.param(0, 3, marks=pytest.mark.slow),
])
def test_discrete_coercivity_under_refinement(k, refinements, alpha):
    """Smallest eigenvalue of the functional's matrix relative to the error norm stays away from zero."""
    domain = DomainSpec("square")
    c_omega = weight("friedrichs", domain)
    regime = PenaltyRegime(alpha, c_omega)
    mesh = build_initial_mesh(domain)
    smallest = []
    for level in range(refinements + 1):
        rt, dg, system, prolongation = admissible(mesh, k, regime)
        norm = (prolongation.T @ assemble_norm(mesh, rt, dg, c_omega) @ prolongation).toarray()
        eigenvalue = la.eigh(system.matrix.toarray(), norm, eigvals_only=True, subset_by_index=[0, 0])[0]
        smallest.append(eigenvalue)
        if level < refinements:
            mesh = refine_uniformly(mesh)
    assert min(smallest) > 0
    assert smallest[-1] >= 0.5 * smallest[0]


def test_norm_matrix_is_symmetric_positive_definite():
    mesh = refine(build_initial_mesh(DomainSpec("lshape")), [2, 7])
    rt, dg = spaces(mesh, 1)
    norm = assemble_norm(mesh, rt, dg, 0.5).toarray()
    assert np.allclose(norm, norm.T, atol=1e-12 * np.abs(norm).max())
    assert np.linalg.eigvalsh(norm).min() > 0
    # no coupling between flux and primal unknowns
    assert not norm[:rt.num_dofs, rt.num_dofs:].any()


def test_conforming_inputs_have_no_jump_contributions():
    mesh = refine_uniformly(build_initial_mesh(DomainSpec("square")), 1)
    rt, dg = spaces(mesh, 1)
    conforming = rt.conforming_basis()
    sigma = conforming @ np.random.default_rng(0).standard_normal(conforming.shape[1])
    parts = functional_parts(mesh, rt, dg, sigma, np.zeros(dg.num_dofs), None, PenaltyRegime(1, 1.0))
    assert parts.flux_jump.sum() <= 1e-20 * max(1.0, sigma @ sigma)
    # a global polynomial has no interior jumps
    u = dg.project(lambda x: 1.0 + x[..., 0] - 2.0 * x[..., 1] ** 2)
    inner = np.flatnonzero(mesh.edges.interior)
    assert np.abs(primal_jumps(dg, u, inner, edge_rule(6).points)).max() <= 1e-12


def test_functional_rejects_wrong_vector_sizes():
    mesh = build_initial_mesh(DomainSpec("square"))
    rt, dg = spaces(mesh, 0)
    with pytest.raises(AssemblyError):
        evaluate_functional(mesh, rt, dg, np.zeros(3), np.zeros(dg.num_dofs), None, PenaltyRegime())

"""
Invariant suites run by the `verify` command
"""

import logging
from math import factorial
from typing import Callable, Dict, List, Tuple

import numpy as np
from scipy import sparse as sp

from adaptivity import dorfler_mark, solve_on_mesh
from assembly import (PenaltyRegime, SparseSystem, assemble_bilinear, assemble_constraints,
                      evaluate_functional, quadratic_form)
from benchmarks import exact_solution, side_condition_diagnostic, weight
from mesh import DomainSpec, build_initial_mesh, check_conformity, refine, refine_uniformly
from quadrature import edge_rule, triangle_rule
from solver import solve_spd
from spaces import PiecewiseRTSpace, ScalarDGSpace, build_constrained_basis

logger = logging.getLogger(__name__)

Check = Tuple[str, Callable[[np.random.Generator], None]]


class VerificationError(AssertionError):
    """Raised by a failed invariant check; survives python -O."""


def _expect(condition, detail=None) -> None:
    if not bool(condition):
        raise VerificationError("condition violated" if detail is None else f"condition violated: {detail}")


def _check_triangle_exactness(rng):
    for degree in (2, 5, 8):
        rule = triangle_rule(degree)
        for a in range(degree + 1):
            b = degree - a
            x, y = rule.points[:, 0], rule.points[:, 1]
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            _expect(abs(rule.weights @ (x ** a * y ** b) - exact) < 1e-14)


def _check_edge_exactness(rng):
    rule = edge_rule(7)
    for p in range(8):
        _expect(abs(rule.weights @ rule.points ** p - 1.0 / (p + 1)) < 1e-14)


def _check_initial_meshes(rng):
    counts = {"square": (1.0, 8), "rectangle": (3.0, 24), "lshape": (1.0, 24)}
    for name, (ell, expected) in counts.items():
        mesh = build_initial_mesh(DomainSpec(name, ell))
        _expect(mesh.num_triangles == expected, (name, mesh.num_triangles))
        check_conformity(mesh)


def _check_uniform_growth(rng):
    mesh = build_initial_mesh(DomainSpec("square"))
    for n in range(1, 4):
        mesh = refine_uniformly(mesh)
        _expect(mesh.num_triangles == 8 * 4 ** n)
        check_conformity(mesh)


def _check_random_refinement(rng):
    mesh = build_initial_mesh(DomainSpec("lshape"))
    for _ in range(5):
        marked = rng.choice(mesh.num_triangles, size=max(1, mesh.num_triangles // 5), replace=False)
        mesh = refine(mesh, marked)
        check_conformity(mesh)
        _expect(np.all(mesh.areas > 0))


def _check_normals(rng):
    mesh = refine_uniformly(build_initial_mesh(DomainSpec("square")), 2)
    topo = mesh.edges
    _expect(np.allclose(np.linalg.norm(topo.normal, axis=1), 1.0, atol=1e-14))
    centroids = mesh.corners.mean(axis=1)
    mid = topo.midpoints(mesh.vertices)
    outward = np.einsum("ed,ed->e", topo.normal, mid - centroids[topo.t_plus])
    _expect(np.all(outward > 0))


def _check_constrained_basis(rng):
    for k in (0, 1, 2):
        mesh = refine_uniformly(build_initial_mesh(DomainSpec("rectangle", 2.0)), 1)
        space = PiecewiseRTSpace(mesh, k)
        basis = build_constrained_basis(mesh, k, space)
        sums = np.nansum(basis.alpha, axis=2)[~np.isnan(basis.alpha[:, :, 0])]
        _expect(np.allclose(sums, 1.0, atol=1e-12))
        basis.validate(assemble_constraints(mesh, space))


def _check_constraint_rank(rng):
    mesh = build_initial_mesh(DomainSpec("square"))
    for k in (0, 1, 2):
        constraints = assemble_constraints(mesh, PiecewiseRTSpace(mesh, k)).toarray()
        _expect(np.linalg.matrix_rank(constraints) == constraints.shape[0])


def _check_quadratic_form(rng):
    exact = exact_solution("square")
    mesh = refine_uniformly(build_initial_mesh(DomainSpec("square")), 1)
    for k in (0, 1):
        rt_space, dg_space = PiecewiseRTSpace(mesh, k), ScalarDGSpace(mesh, k + 1)
        for alpha in (1, -1):
            regime = PenaltyRegime(alpha, weight("friedrichs", "square"))
            system = assemble_bilinear(mesh, rt_space, dg_space, regime, exact.f)
            a = system.matrix
            _expect(abs(a - a.T).max() <= 1e-12 * abs(a).max())
            x = rng.standard_normal(system.size)
            total, _ = evaluate_functional(mesh, rt_space, dg_space, x[:rt_space.num_dofs],
                                           x[rt_space.num_dofs:], exact.f, regime)
            _expect(abs(quadratic_form(system, x) - total) <= 1e-10 * abs(total))


def _check_small_solves(rng):
    eye = SparseSystem(matrix=sp.identity(3, format="csr"), rhs=np.array([1.0, 0.0, 0.0]), n_primal=3)
    _expect(np.allclose(solve_spd(eye).solution, [1.0, 0.0, 0.0]))
    two = SparseSystem(matrix=sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), rhs=np.array([3.0, 3.0]), n_primal=2)
    _expect(np.allclose(solve_spd(two).solution, [1.0, 1.0], atol=1e-12))
    m = rng.standard_normal((50, 50))
    spd = SparseSystem(matrix=sp.csr_matrix(m.T @ m + np.eye(50)), rhs=rng.standard_normal(50), n_primal=50)
    _expect(solve_spd(spd).relative_residual <= 1e-10)


def _check_formulation_equivalence(rng):
    exact = exact_solution("square")
    mesh = build_initial_mesh(DomainSpec("square"))
    regime = PenaltyRegime(1, weight("friedrichs", "square"))
    level = solve_on_mesh(mesh, 0, regime, exact.f, solver="both")
    _expect(level.discrepancy is not None and level.discrepancy <= 1e-8)
    constraints = assemble_constraints(mesh, level.solution.rt_space)
    sigma = level.solution.sigma
    _expect(np.abs(constraints @ sigma).max() <= 1e-10 * max(1.0, np.abs(sigma).max()))


def _check_dorfler(rng):
    _expect(list(dorfler_mark(np.array([4.0, 1.0, 1.0, 1.0, 1.0]), 0.5)) == [0])
    eta = rng.random(40)
    _expect(dorfler_mark(eta, 1.0).size == 40)
    for theta in (0.2, 0.5, 0.8):
        marked = dorfler_mark(eta, theta)
        _expect(eta[marked].sum() >= theta * eta.sum())
        smallest = marked[np.argmin(eta[marked])]
        _expect(eta[marked].sum() - eta[smallest] < theta * eta.sum())


def _check_weights(rng):
    _expect(np.isclose(weight("friedrichs", "square", 2.0), 2.0 / np.pi))
    _expect(np.isclose(weight("width", "square", 3.0), 3.0))
    _expect(np.isclose(weight("diameter", "square", 1.0), np.sqrt(2.0)))
    _expect(np.isclose(weight("friedrichs", "lshape", 1.0), 9.6397238389738806 ** -0.5))


def _check_exact_boundary(rng):
    for name in ("square", "lshape"):
        exact = exact_solution(name, 2.0)
        mesh = build_initial_mesh(DomainSpec(name, 2.0))
        topo = mesh.edges
        boundary = np.flatnonzero(topo.t_minus < 0)
        t = rng.random((boundary.size, 8))
        a = mesh.vertices[topo.vertices[boundary, 0]]
        b = mesh.vertices[topo.vertices[boundary, 1]]
        points = a[:, None, :] + t[..., None] * (b - a)[:, None, :]
        _expect(np.abs(exact.u(points)).max() <= 1e-12)


def _check_side_condition(rng):
    mesh = build_initial_mesh(DomainSpec("square"))
    lhs_prev, rhs_prev = side_condition_diagnostic(mesh)
    for _ in range(3):
        mesh = refine_uniformly(mesh)
        lhs, rhs = side_condition_diagnostic(mesh)
        _expect(lhs >= 1.2 * lhs_prev)
        _expect(rhs_prev / 1.5 <= rhs <= 1.5 * rhs_prev)
        lhs_prev, rhs_prev = lhs, rhs


SUITES: Dict[str, List[Check]] = {
    "quadrature": [("triangle exactness", _check_triangle_exactness),
                   ("edge exactness", _check_edge_exactness)],
    "mesh": [("initial meshes", _check_initial_meshes),
             ("uniform growth", _check_uniform_growth),
             ("random refinement", _check_random_refinement),
             ("normal orientation", _check_normals)],
    "spaces": [("constrained basis", _check_constrained_basis),
               ("constraint rank", _check_constraint_rank)],
    "assembly": [("quadratic form", _check_quadratic_form)],
    "solver": [("small systems", _check_small_solves),
               ("formulation equivalence", _check_formulation_equivalence)],
    "adaptivity": [("doerfler marking", _check_dorfler)],
    "benchmarks": [("weights", _check_weights),
                   ("boundary values", _check_exact_boundary),
                   ("side condition", _check_side_condition)],
}


def run_suites(seed: int = 0, names=None) -> Dict[str, Tuple[int, int]]:
    """
    Run the invariant suites and print a pass count per suite.

    Returns:
        Mapping suite name -> (passed, total)
    """
    rng = np.random.default_rng(seed)
    results = {}
    print("=" * 60)
    print("VERIFY")
    print("=" * 60)
    for suite, checks in SUITES.items():
        if names and suite not in names:
            continue
        passed = 0
        for label, check in checks:
            try:
                check(rng)
                passed += 1
            except Exception as e:
                logger.error("%s / %s failed: %s", suite, label, e or type(e).__name__)
        results[suite] = (passed, len(checks))
        marker = "✓" if passed == len(checks) else "✗"
        print(f"{marker} {suite}: {passed}/{len(checks)} checks passed")
    return results

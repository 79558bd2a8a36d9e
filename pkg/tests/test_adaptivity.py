"""
Tests for the estimator, Doerfler marking and the adaptive loop
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from adaptivity import MarkingError, afem_loop, count_dofs, dorfler_mark, estimate, solve_on_mesh
from assembly import PenaltyRegime, evaluate_functional
from benchmarks import exact_solution, weight
from config import ExperimentConfig
from mesh import DomainSpec, build_initial_mesh, refine, refine_uniformly
from spaces import DiscreteSolution, PiecewiseRTSpace, ScalarDGSpace


def test_dorfler_examples():
    assert dorfler_mark(np.array([4.0, 1.0, 1.0, 1.0, 1.0]), 0.5).tolist() == [0]
    assert dorfler_mark(np.array([1.0, 1.0, 1.0, 1.0]), 0.5).tolist() == [0, 1]
    assert dorfler_mark(np.array([1.0, 3.0, 2.0]), 0.6).tolist() == [1, 2]
    assert dorfler_mark(np.array([0.0, 2.0, 0.0]), 1.0).tolist() == [0, 1, 2]


@pytest.mark.parametrize("eta, theta", [(np.zeros(4), 0.5), (np.array([1.0, -1.0]), 0.5),
                                        (np.ones(3), 0.0), (np.ones(3), 1.5), (np.array([1.0, np.nan]), 0.5)])
def test_dorfler_rejects_invalid_input(eta, theta):
    with pytest.raises(MarkingError):
        dorfler_mark(eta, theta)


@given(values=st.lists(st.integers(min_value=0, max_value=100), min_size=1, max_size=60),
       theta=st.sampled_from([0.1, 0.25, 0.5, 0.75, 0.9]))
@settings(max_examples=100, deadline=None)
def test_dorfler_set_is_minimal(values, theta):
    eta = np.array(values, dtype=float)
    assume(eta.sum() > 0)
    marked = dorfler_mark(eta, theta)
    target = theta * eta.sum()
    assert np.all(np.diff(marked) > 0)
    assert eta[marked].sum() >= target
    # no smaller set reaches the bulk: the largest len(marked) - 1 values fall short
    largest = np.sort(eta)[::-1]
    assert largest[:marked.size - 1].sum() < target


def test_uniform_marking_quadruples_triangles():
    config = ExperimentConfig(domain="square", k=0, theta=1.0, max_levels=3)
    history = afem_loop(config)
    assert [r.ntriangles for r in history.records] == [8, 32, 128]
    assert history.stop_reason == "max_levels"
    assert all(r.unreliable == 0 for r in history.records)
    assert np.all(np.diff(history.ndofs) > 0)
    assert history.final_mesh.num_triangles == 128


@pytest.mark.parametrize("alpha", [1, -1])
def test_ndof_matches_solved_space(alpha):
    mesh = refine_uniformly(build_initial_mesh(DomainSpec("rectangle", 2)), 1)
    regime = PenaltyRegime(alpha, 1.0 / np.pi)
    level = solve_on_mesh(mesh, 1, regime, exact_solution("rectangle", 2).f)
    assert level.ndof == count_dofs(mesh, 1, alpha)
    if alpha < 0:
        assert level.ndof == mesh.num_triangles * (8 + 6)


def test_max_ndof_stops_before_exceeding_budget():
    config = ExperimentConfig(domain="lshape", k=0, theta=0.5, max_ndof=600)
    history = afem_loop(config)
    assert history.stop_reason == "max_ndof"
    assert history.ndofs.max() <= 600
    # the next Doerfler refinement is the first mesh over the budget
    exact = exact_solution("lshape")
    regime = PenaltyRegime(1, weight("friedrichs", "lshape"))
    field = estimate(history.final_mesh, history.final_solution, exact.f, regime)
    refined = refine(history.final_mesh, dorfler_mark(field.eta_sq, 0.5))
    assert count_dofs(refined, 0, 1) > 600


def test_estimator_of_zero_solution_and_source():
    mesh = build_initial_mesh(DomainSpec("square"))
    zero = DiscreteSolution.zero(PiecewiseRTSpace(mesh, 0), ScalarDGSpace(mesh, 1))
    field = estimate(mesh, zero, None, PenaltyRegime())
    assert field.total == 0.0
    with pytest.raises(MarkingError):
        dorfler_mark(field.eta_sq, 0.5)


@pytest.mark.parametrize("alpha", [1, -1])
def test_estimator_is_the_functional(alpha):
    domain = DomainSpec("lshape")
    exact = exact_solution(domain)
    regime = PenaltyRegime(alpha, weight("friedrichs", domain))
    mesh = build_initial_mesh(domain)
    solution = solve_on_mesh(mesh, 1, regime, exact.f).solution
    field = estimate(mesh, solution, exact.f, regime)
    total, _ = evaluate_functional(mesh, solution.rt_space, solution.dg_space, solution.sigma, solution.u,
                                   exact.f, regime)
    assert field.eta_sq.shape == (mesh.num_triangles,)
    assert np.all(field.eta_sq >= 0)
    assert np.isclose(field.total, total)
    assert np.isclose(field.estimator ** 2, total)


def test_estimator_decreases_under_uniform_refinement():
    domain = DomainSpec("square")
    exact = exact_solution(domain)
    regime = PenaltyRegime(1, weight("friedrichs", domain))
    mesh = build_initial_mesh(domain)
    estimators = []
    for _ in range(4):
        solution = solve_on_mesh(mesh, 0, regime, exact.f).solution
        estimators.append(estimate(mesh, solution, exact.f, regime).estimator)
        mesh = refine_uniformly(mesh)
    assert np.all(np.diff(estimators) < 0)


def test_adaptive_loop_is_deterministic():
    config = ExperimentConfig(domain="lshape", k=0, theta=0.3, max_levels=3)
    first = afem_loop(config).records
    second = afem_loop(config).records
    assert first == second

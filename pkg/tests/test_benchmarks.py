"""
Tests for the benchmark solutions, weights, error norms and convergence records
"""

import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from benchmarks import (CSV_COLUMNS, LSHAPE_EIGENVALUE, ConvergenceRecord, WeightMode, compute_errors,
                        default_output_name, efficiency_index, exact_solution, history_frame, history_rates,
                        rate_fit, side_condition_diagnostic, weight, write_history_csv)
from config import ExperimentConfig
from mesh import BoundaryLabel, DomainSpec, Mesh, build_initial_mesh, refine_uniformly
from spaces import DiscreteSolution, PiecewiseRTSpace, ScalarDGSpace


def test_square_solution():
    exact = exact_solution("square", 3.0)
    center = np.array([1.5, 1.5])
    assert exact.u(center) == pytest.approx(1.0)
    assert exact.f(center) == pytest.approx(2.0 * np.pi ** 2 / 9.0)
    assert np.allclose(exact.grad(center), 0.0, atol=1e-15)


def test_rectangle_solution_has_zero_normal_derivative_on_long_sides():
    exact = exact_solution("rectangle", 4)
    x = np.column_stack((np.linspace(0.1, 3.9, 9), np.zeros(9)))
    assert np.allclose(exact.grad(x)[:, 1], 0.0)
    assert np.allclose(exact.u(np.array([[0.0, 0.3], [4.0, 0.7]])), 0.0, atol=1e-15)
    assert exact.f(np.array([2.0, 0.5])) == pytest.approx(np.pi ** 2 / 16.0)


@pytest.mark.parametrize("ell", [1.0, 10.0])
def test_lshape_source_matches_finite_differences(ell):
    exact = exact_solution("lshape", ell)
    rng = np.random.default_rng(11)
    points = rng.uniform(-0.95, 0.95, size=(400, 2))
    inside = ~((points[:, 0] > -0.05) & (points[:, 1] > -0.05)) & (np.hypot(points[:, 0], points[:, 1]) >= 0.2)
    points = ell * points[inside]
    h = 1e-4 * ell
    shifts = h * np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    laplacian = (sum(exact.u(points + s) for s in shifts) - 4.0 * exact.u(points)) / h ** 2
    f = exact.f(points)
    assert np.allclose(-laplacian, f, rtol=1e-5, atol=1e-5 / ell ** 2)
    # gradient against central differences
    grad = exact.grad(points)
    dx = (exact.u(points + shifts[0]) - exact.u(points + shifts[1])) / (2 * h)
    assert np.allclose(grad[:, 0], dx, rtol=1e-6, atol=1e-6 / ell)


def test_lshape_solution_vanishes_on_boundary():
    exact = exact_solution("lshape", 2.0)
    t = np.linspace(0.0, 2.0, 11)
    zeros = np.zeros_like(t)
    boundary = np.concatenate([
        np.column_stack((t, zeros)),          # reentrant side on the x1-axis
        np.column_stack((zeros, t)),          # reentrant side on the x2-axis
        np.column_stack((-t, np.full_like(t, 2.0))),
        np.column_stack((np.full_like(t, -2.0), t - 1.0)),
        np.column_stack((t - 1.0, np.full_like(t, -2.0))),
        np.column_stack((np.full_like(t, 2.0), -t)),
    ])
    assert np.abs(exact.u(boundary)).max() <= 1e-12


def test_weights():
    assert weight("one", "lshape", 7.0) == 1.0
    assert weight("diameter", "rectangle", 3.0) == pytest.approx(np.sqrt(10.0))
    assert weight("diameter", "lshape", 1.0) == pytest.approx(2.0 * np.sqrt(2.0))
    assert weight("width", "rectangle", 3.0) == 1.0
    assert weight("friedrichs", "square", 10.0) == pytest.approx(10.0 / np.pi)
    assert weight("friedrichs", DomainSpec("lshape", 10.0)) == pytest.approx(10.0 / np.sqrt(LSHAPE_EIGENVALUE))
    assert weight(WeightMode.ELL_OVER_PI, "lshape", 2.0) == pytest.approx(2.0 / np.pi)
    with pytest.raises(ValueError):
        weight("bogus", "square")


def test_errors_of_zero_solution():
    mesh = build_initial_mesh(DomainSpec("square"))
    zero = DiscreteSolution.zero(PiecewiseRTSpace(mesh, 0), ScalarDGSpace(mesh, 1))
    report = compute_errors(mesh, zero, exact_solution("square"), 1.0 / np.pi)
    energy, weighted = report
    assert energy == pytest.approx(1.0)
    assert report.sigma_rel == pytest.approx(1.0)
    assert report.div_rel == pytest.approx(1.0)
    assert report.flux_jump_op == 0.0
    # c^2 ||f||^2 + ||sigma||^2 + ||grad u||^2 = pi^2 + pi^2 / 2 + pi^2 / 2
    assert weighted == pytest.approx(np.pi * np.sqrt(2.0), rel=1e-6)


def test_side_condition_on_four_triangles():
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]])
    triangles = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    boundary = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
    mesh = Mesh(vertices=vertices, triangles=triangles, refinement_edge=np.zeros(4, dtype=np.int64),
                boundary=boundary, boundary_label=np.full(4, BoundaryLabel.DIRICHLET, dtype=np.int8))
    lhs, rhs = side_condition_diagnostic(mesh)
    assert lhs == pytest.approx(np.sqrt(2.0) / 2.0)
    assert rhs == pytest.approx(np.sqrt(2.0))


def test_side_condition_needs_dirichlet_vertices():
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    mesh = Mesh(vertices=vertices, triangles=np.array([[0, 1, 2]]), refinement_edge=np.zeros(1, dtype=np.int64),
                boundary=np.array([[0, 1], [1, 2], [2, 0]]),
                boundary_label=np.full(3, BoundaryLabel.NEUMANN, dtype=np.int8))
    with pytest.raises(ValueError):
        side_condition_diagnostic(mesh)


def test_side_condition_grows_under_refinement():
    mesh = build_initial_mesh(DomainSpec("square"))
    lhs_prev, rhs_prev = side_condition_diagnostic(mesh)
    for _ in range(3):
        mesh = refine_uniformly(mesh)
        lhs, rhs = side_condition_diagnostic(mesh)
        assert lhs >= 1.2 * lhs_prev
        assert rhs_prev / 1.5 <= rhs <= 1.5 * rhs_prev
        lhs_prev, rhs_prev = lhs, rhs


def test_rate_fit():
    ndof = np.array([100.0, 400.0, 1600.0, 6400.0])
    assert rate_fit(ndof, ndof ** -0.5) == pytest.approx(-0.5)
    values = np.array([1.0, 0.5, 0.25, 0.2])
    assert rate_fit(ndof, values, reliable=[True, True, True, False]) == pytest.approx(-0.5)
    assert np.isnan(rate_fit(ndof[:1], values[:1]))
    assert np.isnan(rate_fit(ndof, [1.0, np.nan, 0.0, np.nan]))


def make_records(levels=3):
    base = ConvergenceRecord(level=0, ndof=100, ntriangles=8, estimator=1.0, err_energy_rel=0.5,
                             err_weighted=0.9, efficiency=1.0 / 0.9, unreliable=0, k=0, alpha=1, ell=1.0,
                             theta=0.5, weight_mode="friedrichs", c_omega=1.0 / np.pi)
    return [replace(base, level=i, ndof=100 * 4 ** i, ntriangles=8 * 4 ** i, estimator=2.0 ** -i,
                    err_energy_rel=0.5 * 2.0 ** -i, err_weighted=0.9 * 2.0 ** -i) for i in range(levels)]


def test_history_csv_round_trip(tmp_path):
    records = make_records()
    path = write_history_csv(records, tmp_path / "nested" / "run.csv")
    frame = pd.read_csv(path)
    assert tuple(frame.columns) == CSV_COLUMNS
    assert len(frame) == 3
    assert frame["ndof"].tolist() == [100, 400, 1600]
    assert (frame["weight_mode"] == "friedrichs").all()
    assert list(history_frame(records).columns) == list(CSV_COLUMNS)


def test_history_rates():
    rates = history_rates(make_records(4))
    assert set(rates) == {"estimator", "err_energy_rel", "err_weighted"}
    assert all(slope == pytest.approx(-0.5) for slope in rates.values())


def test_efficiency_index():
    assert efficiency_index(2.0, 4.0) == 0.5
    assert np.isnan(efficiency_index(1.0, 0.0))


def test_default_output_name():
    assert default_output_name(ExperimentConfig()) == "square_ell1_k0_alphap_friedrichs_theta0.5.csv"
    config = ExperimentConfig(domain="lshape", ell=10.0, k=2, alpha=-1, weight="one", theta=1.0)
    assert default_output_name(config) == "lshape_ell10_k2_alpham_one_theta1.csv"

"""
Built-in error estimator, Doerfler marking and the adaptive loop
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from assembly import (PenaltyRegime, SourceFunction, SparseSystem, assemble_bilinear, assemble_constraints,
                      evaluate_functional, restrict, saddle_system)
from benchmarks import (ConvergenceRecord, ExactSolution, compute_errors, efficiency_index, exact_solution,
                        weight)
from mesh import DomainSpec, Mesh, build_initial_mesh, refine
from solver import SolveReport, solve_saddle, solve_spd
from spaces import DiscreteSolution, PiecewiseRTSpace, ScalarDGSpace, build_constrained_basis, dg_local_dim, rt_local_dim

logger = logging.getLogger(__name__)


class MarkingError(ValueError):
    """Raised for an invalid bulk parameter or an estimator without mass."""


@dataclass(frozen=True)
class EstimatorField:
    """Triangle-wise contributions eta_T^2 of the least-squares functional."""
    eta_sq: np.ndarray

    @property
    def total(self) -> float:
        return float(self.eta_sq.sum())

    @property
    def estimator(self) -> float:
        return float(np.sqrt(self.total))


@dataclass
class LevelSolution:
    """Discrete solution of one mesh together with its solve statistics."""
    solution: DiscreteSolution
    report: SolveReport
    ndof: int
    system: SparseSystem
    discrepancy: Optional[float] = None


@dataclass
class AdaptiveHistory:
    """Convergence records of an adaptive run and its final state."""
    records: List[ConvergenceRecord] = field(default_factory=list)
    meshes: List[Mesh] = field(default_factory=list)
    final_solution: Optional[DiscreteSolution] = None
    stop_reason: str = ""

    @property
    def final_mesh(self) -> Optional[Mesh]:
        return self.meshes[-1] if self.meshes else None

    @property
    def ndofs(self) -> np.ndarray:
        return np.array([r.ndof for r in self.records])

    @property
    def estimators(self) -> np.ndarray:
        return np.array([r.estimator for r in self.records])


def count_dofs(mesh: Mesh, k: int, alpha: int) -> int:
    """dim Sigma(T) + dim U(T) for alpha = +1, dim RT^{k,pw}(T) + dim U(T) for alpha = -1."""
    n = mesh.num_triangles * (rt_local_dim(k) + dg_local_dim(k + 1))
    if alpha > 0:
        topo = mesh.edges
        n -= int(np.count_nonzero(topo.interior | topo.neumann))
    return n


def solve_on_mesh(mesh: Mesh, k: int, regime: PenaltyRegime, f: Optional[SourceFunction],
                  solver: str = "spd", workers: int = 1, iterative: bool = False) -> LevelSolution:
    """
    Assemble and solve the least-squares problem on one mesh.

    Args:
        mesh: triangulation
        k: Raviart-Thomas degree, the primal space has degree k + 1
        regime: penalty regime
        f: right-hand side
        solver: 'spd' (constrained basis), 'saddle' (Lagrange multiplier) or
            'both' (solve both, keep the spd solution)
        workers: assembly threads
        iterative: conjugate gradients instead of a direct spd solve

    Returns:
        LevelSolution with the coefficients in the piecewise bases
    """
    rt_space = PiecewiseRTSpace(mesh, k)
    dg_space = ScalarDGSpace(mesh, k + 1)
    system = assemble_bilinear(mesh, rt_space, dg_space, regime, f, workers=workers)

    if regime.alpha < 0:
        report = solve_spd(system, iterative=iterative)
        solution = DiscreteSolution.from_vector(rt_space, dg_space, report.solution)
        return LevelSolution(solution=solution, report=report, ndof=system.size, system=system)

    basis = build_constrained_basis(mesh, k, rt_space)
    ndof = basis.num_dofs + dg_space.num_dofs
    spd_x = saddle_x = None
    report = None
    if solver in ("spd", "both"):
        restricted = restrict(system, basis)
        report = solve_spd(restricted, iterative=iterative)
        spd_x = restricted.prolongation @ report.solution
    if solver in ("saddle", "both"):
        constraints = assemble_constraints(mesh, rt_space, dg_space)
        saddle_report = solve_saddle(saddle_system(system, constraints))
        saddle_x = saddle_report.solution
        if report is None:
            report = saddle_report
        else:
            report.reliable = report.reliable and saddle_report.reliable

    discrepancy = None
    if spd_x is not None and saddle_x is not None:
        scale = max(np.abs(spd_x).max(), np.finfo(float).tiny)
        discrepancy = float(np.abs(spd_x - saddle_x).max() / scale)
        logger.info("spd and saddle coefficients differ by %.3e (relative max norm)", discrepancy)
    x = spd_x if spd_x is not None else saddle_x
    solution = DiscreteSolution.from_vector(rt_space, dg_space, x)
    return LevelSolution(solution=solution, report=report, ndof=ndof, system=system, discrepancy=discrepancy)


def estimate(mesh: Mesh, solution: DiscreteSolution, f: Optional[SourceFunction],
             regime: PenaltyRegime) -> EstimatorField:
    """Built-in estimator: the functional split into triangle contributions."""
    _, per_triangle = evaluate_functional(mesh, solution.rt_space, solution.dg_space,
                                          solution.sigma, solution.u, f, regime)
    return EstimatorField(eta_sq=per_triangle)


def dorfler_mark(eta_sq: np.ndarray, theta: float) -> np.ndarray:
    """
    Minimal set of triangles carrying a theta fraction of the total.

    Triangles are taken greedily by decreasing eta_sq, ties by increasing id.

    Args:
        eta_sq: nonnegative triangle contributions
        theta: bulk parameter in (0, 1]

    Returns:
        Sorted array of marked triangle ids

    Raises:
        MarkingError: for theta outside (0, 1], negative entries or an all-zero estimator
    """
    eta_sq = np.asarray(eta_sq, dtype=float)
    if not 0.0 < theta <= 1.0:
        raise MarkingError(f"theta must lie in (0, 1], got {theta!r}")
    if np.any(eta_sq < 0) or not np.all(np.isfinite(eta_sq)):
        raise MarkingError("estimator contributions must be finite and nonnegative")
    if eta_sq.size == 0 or not np.any(eta_sq > 0):
        raise MarkingError("estimator vanishes on every triangle")
    if theta == 1.0:
        return np.arange(eta_sq.size)

    order = np.argsort(-eta_sq, kind="stable")
    cumulative = np.cumsum(eta_sq[order])
    count = int(np.searchsorted(cumulative, theta * cumulative[-1], side="left")) + 1
    return np.sort(order[:min(count, eta_sq.size)])


def afem_loop(config, exact: Optional[ExactSolution] = None) -> AdaptiveHistory:
    """
    Solve, estimate, mark and refine until the dof budget, the level limit
    or an unreliable solve stops the loop.

    The budget is checked on the refined mesh before it is solved: the loop
    ends as soon as the next mesh would have ndof > max_ndof, so every
    recorded level satisfies ndof <= max_ndof and the first mesh over the
    budget is never solved.

    Args:
        config: ExperimentConfig
        exact: exact solution used for the error columns, default the
            benchmark solution of the configured domain

    Returns:
        AdaptiveHistory with one record per solved level
    """
    domain = DomainSpec(config.domain, config.ell)
    exact = exact or exact_solution(domain)
    c_omega = weight(config.weight, domain)
    regime = PenaltyRegime(config.alpha, c_omega)
    history = AdaptiveHistory()
    mesh = build_initial_mesh(domain)

    print("=" * 60)
    print(f"{domain.name}(ell={domain.ell:g}) k={config.k} alpha={config.alpha:+d} "
          f"weight={config.weight} (c={c_omega:.6g}) theta={config.theta:g}")
    print("=" * 60)

    level = 0
    while True:
        level_solution = solve_on_mesh(mesh, config.k, regime, exact.f, solver=config.solver,
                                       workers=config.workers, iterative=config.iterative)
        solution = level_solution.solution
        field_ = estimate(mesh, solution, exact.f, regime)
        errors = compute_errors(mesh, solution, exact, c_omega)
        reliable = level_solution.report.reliable
        record = ConvergenceRecord(
            level=level, ndof=level_solution.ndof, ntriangles=mesh.num_triangles,
            estimator=field_.estimator, err_energy_rel=errors.err_energy_rel,
            err_weighted=errors.err_weighted,
            efficiency=efficiency_index(field_.estimator, errors.err_weighted),
            unreliable=int(not reliable), k=config.k, alpha=config.alpha, ell=float(config.ell),
            theta=float(config.theta), weight_mode=str(config.weight), c_omega=c_omega)
        history.records.append(record)
        history.meshes.append(mesh)
        history.final_solution = solution

        marker = "✓" if reliable else "✗"
        print(f"{marker} level {level:2d}: ndof={record.ndof:8d} triangles={record.ntriangles:7d} "
              f"eta={record.estimator:.4e} energy={record.err_energy_rel:.4e} eff={record.efficiency:.3f}")
        if config.alpha < 0:
            logger.info("level %d: over-penalized normal-jump term %.4e", level, errors.flux_jump_op)

        if not reliable:
            history.stop_reason = "unreliable solve"
            logger.warning("stopping at level %d: relative residual %.3e", level,
                           level_solution.report.relative_residual)
            break
        if config.max_levels is not None and level + 1 >= config.max_levels:
            history.stop_reason = "max_levels"
            break
        try:
            marked = dorfler_mark(field_.eta_sq, config.theta)
        except MarkingError as e:
            history.stop_reason = "estimator vanished"
            logger.warning("stopping at level %d: %s", level, e)
            break
        refined = refine(mesh, marked)
        if count_dofs(refined, config.k, config.alpha) > config.max_ndof:
            history.stop_reason = "max_ndof"
            break
        mesh = refined
        level += 1

    logger.info("adaptive loop finished after %d levels (%s)", len(history.records), history.stop_reason)
    return history

"""
Assembly of the discontinuous least-squares system

Unknown vector layout: [sigma (piecewise RT dofs), u (P^{k+1} dofs)].
The least-squares functional reads

    LS_h(f; sigma, u) = c^2 ||f + div_pw sigma||^2 + ||sigma - grad_pw u||^2
                        + sum_{E in E(Omega) u E(Gamma_N)} w_E ||[sigma . n_E]||_E^2
                        + sum_{E in E(Omega) u E(Gamma_D)} h_E^{-1} ||[u]||_E^2

with w_E = c^(1 - alpha) h_E^alpha, and equals x^T A x - 2 b^T x + c^2 ||f||^2
for the assembled matrix A and load b.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy import sparse as sp

from quadrature import edge_rule, load_degree, stiffness_degree, triangle_rule
from mesh import Mesh
from spaces import ConstrainedRTBasis, PiecewiseRTSpace, ScalarDGSpace

logger = logging.getLogger(__name__)

SourceFunction = Callable[[np.ndarray], np.ndarray]

# triangles per local-matrix batch
CHUNK_SIZE = 2048


class AssemblyError(ValueError):
    """Raised for inconsistent spaces or penalty parameters."""


@dataclass(frozen=True)
class PenaltyRegime:
    """
    Edge weighting of the normal-jump term.

    alpha = +1: natural penalty h_E (flux space with mean-jump side condition)
    alpha = -1: over-penalization c_omega^2 / h_E
    """
    alpha: int = 1
    c_omega: float = 1.0

    def __post_init__(self):
        if self.alpha not in (-1, 1):
            raise AssemblyError(f"alpha must be -1 or +1, got {self.alpha!r}")
        if not np.isfinite(self.c_omega) or self.c_omega <= 0:
            raise AssemblyError(f"c_omega must be positive, got {self.c_omega!r}")

    def flux_jump_weight(self, h: np.ndarray) -> np.ndarray:
        return self.c_omega ** (1 - self.alpha) * h ** float(self.alpha)


@dataclass(eq=False)
class SparseSystem:
    """
    Symmetric sparse system with block-structure tag.

    structure 'spd' carries n_primal unknowns; 'saddle' appends n_multiplier
    Lagrange multipliers after the n_primal unknowns. `prolongation` maps
    solution vectors of a restricted system back onto [sigma raw, u].
    """
    matrix: sp.csr_matrix
    rhs: np.ndarray
    structure: str = "spd"
    n_primal: int = 0
    n_multiplier: int = 0
    load_norm_sq: float = 0.0
    prolongation: Optional[sp.csr_matrix] = None
    info: Dict[str, int] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return int(self.matrix.shape[0])


def _zero_source(x: np.ndarray) -> np.ndarray:
    return np.zeros(x.shape[:-1])


def _check_spaces(mesh, rt_space: PiecewiseRTSpace, dg_space: Optional[ScalarDGSpace] = None):
    for space in (rt_space, dg_space):
        if space is None:
            continue
        if space.mesh is not mesh or space.generation != mesh.generation:
            raise AssemblyError(f"space built on mesh generation {space.generation}, "
                                f"assembling on generation {mesh.generation}")


def _chunks(n: int, size: Optional[int] = None):
    size = size or CHUNK_SIZE
    return [np.arange(start, min(start + size, n)) for start in range(0, n, size)]


def _volume_chunk(rt_space, dg_space, regime, f, cells):
    """Local matrices, loads and ||f||^2 contributions of a batch of triangles."""
    mesh = rt_space.mesh
    k = rt_space.k
    c2 = regime.c_omega ** 2
    n_rt, n_dg = rt_space.local_dim, dg_space.local_dim

    rule = triangle_rule(stiffness_degree(k))
    bary = rule.barycentric
    sig, div = rt_space.evaluate(bary, cells)
    _, grad_u = dg_space.evaluate(bary, cells)
    weights = 2.0 * mesh.areas[cells, None] * rule.weights[None, :]

    # constitutive residual sigma - grad u, one row per quadrature point and component
    residual = np.concatenate((sig, -grad_u), axis=2)
    residual = residual.transpose(0, 1, 3, 2).reshape(cells.size, -1, n_rt + n_dg)
    w2 = np.repeat(weights, 2, axis=1)
    local = np.matmul(residual.transpose(0, 2, 1) * w2[:, None, :], residual)
    weighted_div = div.transpose(0, 2, 1) * weights[:, None, :]
    local[:, :n_rt, :n_rt] += c2 * np.matmul(weighted_div, div)

    rule = triangle_rule(load_degree(k))
    bary = rule.barycentric
    _, div = rt_space.evaluate(bary, cells)
    weights = 2.0 * mesh.areas[cells, None] * rule.weights[None, :]
    fx = f(np.einsum("qi,cid->cqd", bary, mesh.corners[cells]))
    load = -c2 * np.einsum("cq,cq,cqn->cn", weights, fx, div)
    load_sq = c2 * np.einsum("cq,cq->c", weights, fx ** 2)
    return local, load, load_sq


def _edge_terms(rt_space, dg_space, regime):
    """Triplets of the normal-jump and primal-jump edge terms."""
    mesh = rt_space.mesh
    topo = mesh.edges
    k = rt_space.k
    n_sigma = rt_space.num_dofs
    rule = edge_rule(stiffness_degree(k))
    rows, cols, vals = [], [], []

    def add(weights, plus_dofs, plus_tr, minus_dofs=None, minus_tr=None):
        # weights (E, Q) already include |E| and the edge weight
        if minus_dofs is not None:
            dofs = np.concatenate((plus_dofs, minus_dofs), axis=1)
            jump = np.concatenate((plus_tr, -minus_tr), axis=2)
        else:
            dofs, jump = plus_dofs, plus_tr
        local = np.matmul(jump.transpose(0, 2, 1) * weights[:, None, :], jump)
        n = dofs.shape[1]
        rows.append(np.repeat(dofs, n, axis=1).ravel())
        cols.append(np.tile(dofs, (1, n)).ravel())
        vals.append(local.ravel())

    flux_edges = topo.flux_jump_edges
    if flux_edges.size:
        h = topo.length[flux_edges]
        weights = (regime.flux_jump_weight(h) * h)[:, None] * rule.weights[None, :]
        inner = topo.t_minus[flux_edges] >= 0
        for mask, two_sided in ((inner, True), (~inner, False)):
            edges = flux_edges[mask]
            if edges.size == 0:
                continue
            cells, tr_p = rt_space.normal_traces(edges, "plus", rule.points)
            if two_sided:
                cells_m, tr_m = rt_space.normal_traces(edges, "minus", rule.points)
                add(weights[mask], rt_space.dofs(cells), tr_p, rt_space.dofs(cells_m), tr_m)
            else:
                add(weights[mask], rt_space.dofs(cells), tr_p)

    primal_edges = topo.primal_jump_edges
    if primal_edges.size:
        weights = np.ones_like(topo.length[primal_edges])[:, None] * rule.weights[None, :]
        inner = topo.t_minus[primal_edges] >= 0
        for mask, two_sided in ((inner, True), (~inner, False)):
            edges = primal_edges[mask]
            if edges.size == 0:
                continue
            cells, tr_p = dg_space.traces(edges, "plus", rule.points)
            if two_sided:
                cells_m, tr_m = dg_space.traces(edges, "minus", rule.points)
                add(weights[mask], n_sigma + dg_space.dofs(cells), tr_p,
                    n_sigma + dg_space.dofs(cells_m), tr_m)
            else:
                add(weights[mask], n_sigma + dg_space.dofs(cells), tr_p)

    if not rows:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), np.empty(0)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def assemble_bilinear(mesh: Mesh, rt_space: PiecewiseRTSpace, dg_space: ScalarDGSpace, regime: PenaltyRegime,
                      f: Optional[SourceFunction] = None, workers: int = 1) -> SparseSystem:
    """
    Assemble the first variation B and load F of the least-squares functional.

    Args:
        mesh: triangulation both spaces are built on
        rt_space: piecewise RT space (unconstrained)
        dg_space: discontinuous P^{k+1} space on the same mesh
        regime: penalty regime (alpha, c_omega)
        f: right-hand side evaluated at points of shape (..., 2)
        workers: threads computing the local element matrices

    Returns:
        SparseSystem tagged 'spd' on the full discontinuous space
    """
    _check_spaces(mesh, rt_space, dg_space)
    f = f or _zero_source
    n_sigma, n_u = rt_space.num_dofs, dg_space.num_dofs
    n = n_sigma + n_u

    chunks = _chunks(mesh.num_triangles)
    task = lambda cells: _volume_chunk(rt_space, dg_space, regime, f, cells)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, chunks))
    else:
        results = [task(cells) for cells in chunks]

    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    load_sq = 0.0
    for cells, (local, load, chunk_sq) in zip(chunks, results):
        dofs = np.concatenate((rt_space.dofs(cells), n_sigma + dg_space.dofs(cells)), axis=1)
        m = dofs.shape[1]
        rows.append(np.repeat(dofs, m, axis=1).ravel())
        cols.append(np.tile(dofs, (1, m)).ravel())
        vals.append(local.ravel())
        np.add.at(rhs, dofs[:, :rt_space.local_dim].ravel(), load.ravel())
        load_sq += float(chunk_sq.sum())

    edge_rows, edge_cols, edge_vals = _edge_terms(rt_space, dg_space, regime)
    rows.append(edge_rows)
    cols.append(edge_cols)
    vals.append(edge_vals)

    matrix = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(n, n)).tocsr()
    logger.debug("assembled %d x %d least-squares matrix with %d nonzeros", n, n, matrix.nnz)
    return SparseSystem(matrix=matrix, rhs=rhs, structure="spd", n_primal=n, load_norm_sq=load_sq,
                        info={"n_sigma": n_sigma, "n_u": n_u})


def assemble_norm(mesh: Mesh, rt_space: PiecewiseRTSpace, dg_space: ScalarDGSpace,
                  c_omega: float) -> sp.csr_matrix:
    """
    Matrix of the computable error norm on [sigma, u]:

        c^2 ||div_pw tau||^2 + ||tau||^2 + ||grad_pw v||^2 + j^2(v)
        + sum_{E in E(Omega) u E(Gamma_N)} h_E ||[tau . n_E]||_E^2

    where j^2(v) is the primal-jump term of the functional. The least-squares
    matrix of either regime is bounded below by a mesh-independent multiple
    of it.
    """
    _check_spaces(mesh, rt_space, dg_space)
    regime = PenaltyRegime(1, c_omega)
    n_sigma, n_u = rt_space.num_dofs, dg_space.num_dofs
    n_rt = rt_space.local_dim
    rule = triangle_rule(stiffness_degree(rt_space.k))
    bary = rule.barycentric

    rows, cols, vals = [], [], []
    for cells in _chunks(mesh.num_triangles):
        sig, div = rt_space.evaluate(bary, cells)
        _, grad_u = dg_space.evaluate(bary, cells)
        weights = 2.0 * mesh.areas[cells, None] * rule.weights[None, :]
        values = np.concatenate((sig, grad_u), axis=2)
        local = np.einsum("cq,cqad,cqbd->cab", weights, values, values)
        local[:, :n_rt, :n_rt] += c_omega ** 2 * np.einsum("cq,cqa,cqb->cab", weights, div, div)
        # no sigma-u coupling in the norm
        local[:, :n_rt, n_rt:] = 0.0
        local[:, n_rt:, :n_rt] = 0.0
        dofs = np.concatenate((rt_space.dofs(cells), n_sigma + dg_space.dofs(cells)), axis=1)
        m = dofs.shape[1]
        rows.append(np.repeat(dofs, m, axis=1).ravel())
        cols.append(np.tile(dofs, (1, m)).ravel())
        vals.append(local.ravel())

    edge_rows, edge_cols, edge_vals = _edge_terms(rt_space, dg_space, regime)
    rows.append(edge_rows)
    cols.append(edge_cols)
    vals.append(edge_vals)
    n = n_sigma + n_u
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n)).tocsr()


def assemble_constraints(mesh: Mesh, rt_space: PiecewiseRTSpace,
                         dg_space: Optional[ScalarDGSpace] = None) -> sp.csr_matrix:
    """
    Mean normal-jump constraints, one row per interior and Neumann edge.

    Entry (E, g) = int_E [g . n_E]_E ds for every piecewise RT function g;
    the columns of the primal space (if given) are zero.
    """
    _check_spaces(mesh, rt_space, dg_space)
    topo = mesh.edges
    rule = edge_rule(2 * rt_space.k + 2)
    edges = topo.flux_jump_edges
    n_cols = rt_space.num_dofs + (dg_space.num_dofs if dg_space is not None else 0)
    if edges.size == 0:
        return sp.csr_matrix((0, n_cols))

    row_ids = np.arange(edges.size)
    weights = topo.length[edges]
    cells, tr_p = rt_space.normal_traces(edges, "plus", rule.points)
    plus = weights[:, None] * np.einsum("q,eqn->en", rule.weights, tr_p)
    rows = [np.repeat(row_ids, rt_space.local_dim)]
    cols = [rt_space.dofs(cells).ravel()]
    vals = [plus.ravel()]

    inner = topo.t_minus[edges] >= 0
    if inner.any():
        cells_m, tr_m = rt_space.normal_traces(edges[inner], "minus", rule.points)
        minus = -weights[inner, None] * np.einsum("q,eqn->en", rule.weights, tr_m)
        rows.append(np.repeat(row_ids[inner], rt_space.local_dim))
        cols.append(rt_space.dofs(cells_m).ravel())
        vals.append(minus.ravel())

    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(edges.size, n_cols))


def restrict(system: SparseSystem, basis: ConstrainedRTBasis) -> SparseSystem:
    """
    Change of basis onto the constrained flux space.

    P = diag(Z, I) maps [sigma in the constrained basis, u] to the piecewise
    layout; the restricted system is P^T A P x = P^T b.
    """
    n_u = system.info["n_u"]
    prolongation = sp.block_diag((basis.matrix, sp.identity(n_u, format="csr")), format="csr")
    matrix = (prolongation.T @ system.matrix @ prolongation).tocsr()
    return SparseSystem(matrix=matrix, rhs=prolongation.T @ system.rhs, structure="spd",
                        n_primal=matrix.shape[0], load_norm_sq=system.load_norm_sq,
                        prolongation=prolongation,
                        info={"n_sigma": basis.num_dofs, "n_u": n_u})


def saddle_system(system: SparseSystem, constraints: sp.csr_matrix) -> SparseSystem:
    """Block system [[A, C^T], [C, 0]] with right-hand side [b, 0]."""
    n_mult = constraints.shape[0]
    if constraints.shape[1] != system.size:
        raise AssemblyError(f"constraint matrix has {constraints.shape[1]} columns, "
                            f"system has {system.size} unknowns")
    matrix = sp.bmat([[system.matrix, constraints.T], [constraints, None]], format="csr")
    rhs = np.concatenate((system.rhs, np.zeros(n_mult)))
    return SparseSystem(matrix=matrix, rhs=rhs, structure="saddle", n_primal=system.size,
                        n_multiplier=n_mult, load_norm_sq=system.load_norm_sq, info=dict(system.info))


@dataclass(frozen=True)
class FunctionalParts:
    """Per-triangle contributions of the four terms of the functional."""
    equilibrium: np.ndarray
    constitutive: np.ndarray
    flux_jump: np.ndarray
    primal_jump: np.ndarray

    @property
    def per_triangle(self) -> np.ndarray:
        return self.equilibrium + self.constitutive + self.flux_jump + self.primal_jump


def _spread_edges(values, edges, topo, num_triangles):
    """Half of interior-edge values to each side, boundary values to t_plus."""
    out = np.zeros(num_triangles)
    inner = topo.t_minus[edges] >= 0
    np.add.at(out, topo.t_plus[edges], np.where(inner, 0.5, 1.0) * values)
    np.add.at(out, topo.t_minus[edges[inner]], 0.5 * values[inner])
    return out


def functional_parts(mesh: Mesh, rt_space: PiecewiseRTSpace, dg_space: ScalarDGSpace, sigma: np.ndarray,
                     u: np.ndarray, f: Optional[SourceFunction], regime: PenaltyRegime) -> FunctionalParts:
    """Evaluate the least-squares functional term by term and triangle by triangle."""
    _check_spaces(mesh, rt_space, dg_space)
    f = f or _zero_source
    topo = mesh.edges
    k = rt_space.k
    if sigma.shape != (rt_space.num_dofs,) or u.shape != (dg_space.num_dofs,):
        raise AssemblyError(f"coefficient vectors of sizes {sigma.shape} and {u.shape} do not match "
                            f"the spaces ({rt_space.num_dofs}, {dg_space.num_dofs})")

    rule = triangle_rule(load_degree(k))
    bary = rule.barycentric
    weights = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    sig, div = rt_space.field(sigma, bary)
    _, grad_u = dg_space.field(u, bary)
    fx = f(mesh.to_physical(bary))
    equilibrium = regime.c_omega ** 2 * np.einsum("cq,cq->c", weights, (fx + div) ** 2)
    constitutive = np.einsum("cq,cqd->c", weights, (sig - grad_u) ** 2)

    erule = edge_rule(stiffness_degree(k))
    flux = np.zeros(mesh.num_triangles)
    edges = topo.flux_jump_edges
    if edges.size:
        jump = flux_jumps(rt_space, sigma, edges, erule.points)
        h = topo.length[edges]
        values = regime.flux_jump_weight(h) * h * np.einsum("q,eq->e", erule.weights, jump ** 2)
        flux = _spread_edges(values, edges, topo, mesh.num_triangles)

    primal = np.zeros(mesh.num_triangles)
    edges = topo.primal_jump_edges
    if edges.size:
        jump = primal_jumps(dg_space, u, edges, erule.points)
        # h_E^{-1} ||.||^2 with ds = h_E dt
        values = np.einsum("q,eq->e", erule.weights, jump ** 2)
        primal = _spread_edges(values, edges, topo, mesh.num_triangles)
    return FunctionalParts(equilibrium=equilibrium, constitutive=constitutive,
                           flux_jump=flux, primal_jump=primal)


def flux_jumps(rt_space, sigma, edges, s):
    """[sigma . n_E] at edge parameters s, shape (E, Q)."""
    topo = rt_space.mesh.edges
    cells, tr = rt_space.normal_traces(edges, "plus", s)
    jump = np.einsum("eqn,en->eq", tr, sigma[rt_space.dofs(cells)])
    inner = topo.t_minus[edges] >= 0
    if inner.any():
        cells_m, tr_m = rt_space.normal_traces(edges[inner], "minus", s)
        jump[inner] -= np.einsum("eqn,en->eq", tr_m, sigma[rt_space.dofs(cells_m)])
    return jump


def primal_jumps(dg_space, u, edges, s):
    """[u] at edge parameters s, shape (E, Q); the trace itself on boundary edges."""
    topo = dg_space.mesh.edges
    cells, tr = dg_space.traces(edges, "plus", s)
    jump = np.einsum("eqn,en->eq", tr, u[dg_space.dofs(cells)])
    inner = topo.t_minus[edges] >= 0
    if inner.any():
        cells_m, tr_m = dg_space.traces(edges[inner], "minus", s)
        jump[inner] -= np.einsum("eqn,en->eq", tr_m, u[dg_space.dofs(cells_m)])
    return jump


def evaluate_functional(mesh: Mesh, rt_space: PiecewiseRTSpace, dg_space: ScalarDGSpace, sigma: np.ndarray,
                        u: np.ndarray, f: Optional[SourceFunction],
                        regime: PenaltyRegime) -> Tuple[float, np.ndarray]:
    """
    Least-squares functional and its split into triangle contributions.

    Interior-edge terms are shared half and half between the two adjacent
    triangles, boundary-edge terms belong to their triangle.

    Returns:
        (total, per_triangle) with total == per_triangle.sum()
    """
    per_triangle = functional_parts(mesh, rt_space, dg_space, sigma, u, f, regime).per_triangle
    return float(per_triangle.sum()), per_triangle


def quadratic_form(system: SparseSystem, x: np.ndarray) -> float:
    """x^T A x - 2 b^T x + c^2 ||f||^2, the functional value at x."""
    return float(x @ (system.matrix @ x) - 2.0 * system.rhs @ x + system.load_norm_sq)

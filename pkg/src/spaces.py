"""
Shape functions and degree-of-freedom maps for the discontinuous spaces

Flux space: piecewise Raviart-Thomas functions RT^{k,pw}, triangle-blocked.
Local basis on a triangle T with vertices P0, P1, P2 (local edge i opposite P_i):

    edge functions      psi_{i,j} = s_i |E_i| / (2|T|) (x - P_i) L_j(t_i(x)),  j = 0..k
    interior functions  (x - P_v) lambda_v lambda_1^a lambda_2^b,  v in {1, 2}, a + b <= k - 1,
                        orthonormalized per triangle

s_i = +1 if T is T_+ of the edge and -1 otherwise, so psi_{i,j} restricts the
global edge function psi_E times L_j. L_j are the Lagrange polynomials at the
k + 1 Gauss points of [0, 1]; t_i runs from the endpoint with the smaller
global vertex id (t = 0) to the larger one (t = 1), identically from both
sides of the edge. Since sum_j L_j = 1, the edge functions of one side sum
to the lowest-order function psi_{E,+} or psi_{E,-}.

Primal space: discontinuous P^{k+1} with orthonormalized monomials.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from math import factorial
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy import sparse as sp

from mesh import BoundaryLabel, Mesh
from quadrature import edge_rule, triangle_rule

logger = logging.getLogger(__name__)


class SpaceError(RuntimeError):
    """Raised for degenerate geometry or an invalid constrained basis."""


def rt_local_dim(k: int) -> int:
    return (k + 1) * (k + 3)


def dg_local_dim(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


def _lagrange_at_gauss_points(k: int):
    """Lagrange polynomials (and derivatives) at the k + 1 Gauss points of [0, 1]."""
    nodes = edge_rule(2 * k).points
    basis, derivatives = [], []
    for j, node in enumerate(nodes):
        others = np.delete(nodes, j)
        if others.size == 0:
            poly = np.polynomial.Polynomial([1.0])
        else:
            poly = np.polynomial.Polynomial.fromroots(others) / np.prod(node - others)
        basis.append(poly)
        derivatives.append(poly.deriv())
    return nodes, basis, derivatives


def _interior_exponents(k: int):
    return [(v, a, n - a) for v in (1, 2) for n in range(k) for a in range(n + 1)]


def _raw_interior(x, bary, corners, grads, k):
    """Unorthonormalized interior functions: values (C, Q, n, 2) and divergences (C, Q, n)."""
    exps = _interior_exponents(k)
    c, q = bary.shape[:2]
    values = np.empty((c, q, len(exps), 2))
    div = np.empty((c, q, len(exps)))
    l1, l2 = bary[..., 1], bary[..., 2]
    for n, (v, a, b) in enumerate(exps):
        r = x - corners[:, None, v, :]
        pa, pb = a + (v == 1), b + (v == 2)
        p = l1 ** pa * l2 ** pb
        d1 = pa * l1 ** max(pa - 1, 0) * l2 ** pb
        d2 = pb * l1 ** pa * l2 ** max(pb - 1, 0)
        grad_p = d1[..., None] * grads[:, None, 1, :] + d2[..., None] * grads[:, None, 2, :]
        values[:, :, n, :] = r * p[..., None]
        div[:, :, n] = 2.0 * p + np.einsum("cqd,cqd->cq", grad_p, r)
    return values, div


def _interior_transform(corners, grads, areas, k):
    """Per-triangle inverse Cholesky factors that orthonormalize the interior functions."""
    rule = triangle_rule(2 * k + 2)
    bary = np.broadcast_to(rule.barycentric, (corners.shape[0],) + rule.barycentric.shape)
    x = np.einsum("cqi,cid->cqd", bary, corners)
    values, _ = _raw_interior(x, bary, corners, grads, k)
    weights = 2.0 * areas[:, None] * rule.weights[None, :]
    mass = np.einsum("cq,cqad,cqbd->cab", weights, values, values)
    try:
        lower = np.linalg.cholesky(mass)
    except np.linalg.LinAlgError as e:
        raise SpaceError(f"interior Raviart-Thomas functions are linearly dependent: {e}") from e
    eye = np.broadcast_to(np.eye(mass.shape[1]), mass.shape)
    return np.linalg.solve(lower, eye)


def _rt_shape_functions(bary, corners, grads, areas, signs, param_vertex, transform, k):
    """
    Evaluate the local RT^k basis on a batch of triangles.

    Args:
        bary: (C, Q, 3) barycentric evaluation points
        corners: (C, 3, 2) triangle vertices
        grads: (C, 3, 2) barycentric gradients
        areas: (C,) triangle areas
        signs: (C, 3) orientation signs of the local edges
        param_vertex: (C, 3) local vertex where the edge parameter equals 1
        transform: (C, n_int, n_int) interior orthonormalization or None
        k: polynomial degree

    Returns:
        values (C, Q, n_loc, 2) and divergences (C, Q, n_loc)
    """
    c, q = bary.shape[:2]
    n_loc = rt_local_dim(k)
    values = np.empty((c, q, n_loc, 2))
    div = np.empty((c, q, n_loc))
    x = np.einsum("cqi,cid->cqd", bary, corners)
    _, lagrange, dlagrange = _lagrange_at_gauss_points(k)
    rows = np.arange(c)

    for i in range(3):
        r = x - corners[:, None, i, :]
        length = np.linalg.norm(corners[:, (i + 2) % 3] - corners[:, (i + 1) % 3], axis=1)
        scale = signs[:, i] * length / (2.0 * areas)
        pv = param_vertex[:, i]
        t = bary[rows, :, pv]
        grad_t = grads[rows, pv]
        r_dot = np.einsum("cqd,cd->cq", r, grad_t)
        for j in range(k + 1):
            idx = i * (k + 1) + j
            lj = lagrange[j](t)
            values[:, :, idx, :] = (scale[:, None] * lj)[..., None] * r
            div[:, :, idx] = scale[:, None] * (2.0 * lj + dlagrange[j](t) * r_dot)

    if k > 0:
        raw_values, raw_div = _raw_interior(x, bary, corners, grads, k)
        start = 3 * (k + 1)
        values[:, :, start:, :] = np.einsum("cab,cqbd->cqad", transform, raw_values)
        div[:, :, start:] = np.einsum("cab,cqb->cqa", transform, raw_div)
    return values, div


def _barycentric_gradients(corners: np.ndarray, areas: np.ndarray) -> np.ndarray:
    grads = np.empty(corners.shape)
    for i in range(3):
        a = corners[:, (i + 1) % 3]
        b = corners[:, (i + 2) % 3]
        grads[:, i, 0] = (a[:, 1] - b[:, 1]) / (2.0 * areas)
        grads[:, i, 1] = (b[:, 0] - a[:, 0]) / (2.0 * areas)
    return grads


def eval_rt_basis(triangle: np.ndarray, k: int, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Evaluate the local RT^k basis of a single triangle.

    Edge functions carry the outward orientation (s_i = +1) and the edge
    parameter runs counter-clockwise along each edge.

    Args:
        triangle: (3, 2) vertex coordinates
        k: polynomial degree
        points: (Q, 2) points of the reference triangle

    Returns:
        values (Q, n_loc, 2) and divergences (Q, n_loc) at the mapped points

    Raises:
        SpaceError: for a degenerate triangle
    """
    corners = np.asarray(triangle, dtype=float)[None]
    d1 = corners[0, 1] - corners[0, 0]
    d2 = corners[0, 2] - corners[0, 0]
    area = 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])
    scale = max(np.abs(corners).max(), 1.0)
    if abs(area) <= 1e-14 * scale ** 2:
        raise SpaceError("degenerate triangle with zero area")
    if area < 0:
        raise SpaceError("triangle vertices must be counter-clockwise")
    areas = np.array([area])
    grads = _barycentric_gradients(corners, areas)
    points = np.asarray(points, dtype=float)
    bary = np.column_stack((1.0 - points[:, 0] - points[:, 1], points[:, 0], points[:, 1]))[None]
    signs = np.ones((1, 3))
    param_vertex = np.array([[2, 0, 1]])
    transform = _interior_transform(corners, grads, areas, k) if k > 0 else None
    values, div = _rt_shape_functions(bary, corners, grads, areas, signs, param_vertex, transform, k)
    return values[0], div[0]


def edge_side_barycentric(mesh: Mesh, edges: np.ndarray, cells: np.ndarray, s: np.ndarray) -> np.ndarray:
    """
    Barycentric coordinates of edge points inside an adjacent triangle.

    The point with edge parameter s is (1 - s) X_{v0} + s X_{v1}.

    Returns:
        (len(edges), len(s), 3) barycentric coordinates in the given cells
    """
    topo = mesh.edges
    tris = mesh.triangles[cells]
    v0 = topo.vertices[edges, 0]
    v1 = topo.vertices[edges, 1]
    l0 = np.argmax(tris == v0[:, None], axis=1)
    l1 = np.argmax(tris == v1[:, None], axis=1)
    bary = np.zeros((edges.size, s.size, 3))
    rows = np.arange(edges.size)
    bary[rows, :, l0] = 1.0 - s[None, :]
    bary[rows, :, l1] = s[None, :]
    return bary


class PiecewiseRTSpace:
    """
    Fully discontinuous Raviart-Thomas space RT^{k,pw} on a mesh.

    Global dof of local function n on triangle t is t * local_dim + n.
    """

    def __init__(self, mesh: Mesh, k: int):
        if k < 0:
            raise SpaceError(f"polynomial degree must be nonnegative, got {k}")
        self.mesh = mesh
        self.k = int(k)
        self.generation = mesh.generation
        self.local_dim = rt_local_dim(self.k)
        self.num_dofs = mesh.num_triangles * self.local_dim
        topo = mesh.edges
        self.signs = topo.tri_signs.astype(float)

        tris = mesh.triangles
        # local vertex carrying the larger global id on every local edge
        first = (np.arange(3)[None, :] + 1) % 3
        second = (np.arange(3)[None, :] + 2) % 3
        va = np.take_along_axis(tris, np.broadcast_to(first, tris.shape), axis=1)
        vb = np.take_along_axis(tris, np.broadcast_to(second, tris.shape), axis=1)
        self.param_vertex = np.where(vb > va, second, first)

        self.transform = None
        if self.k > 0:
            self.transform = _interior_transform(mesh.corners, mesh.barycentric_gradients,
                                                 mesh.areas, self.k)
        logger.debug("RT^%d,pw space: %d dofs on %d triangles", self.k, self.num_dofs, mesh.num_triangles)

    @property
    def num_interior(self) -> int:
        return self.k * (self.k + 1)

    def dofs(self, cells: Optional[np.ndarray] = None) -> np.ndarray:
        """(C, local_dim) global dofs of the given triangles."""
        if cells is None:
            cells = np.arange(self.mesh.num_triangles)
        return cells[:, None] * self.local_dim + np.arange(self.local_dim)[None, :]

    def edge_dof(self, cells: np.ndarray, local_edges: np.ndarray, j: int) -> np.ndarray:
        return cells * self.local_dim + local_edges * (self.k + 1) + j

    def evaluate(self, bary: np.ndarray, cells: Optional[np.ndarray] = None):
        """
        Values and divergences of the local basis functions.

        Args:
            bary: (Q, 3) or (C, Q, 3) barycentric points
            cells: (C,) triangle ids, default all triangles

        Returns:
            values (C, Q, local_dim, 2) and divergences (C, Q, local_dim)
        """
        if cells is None:
            cells = np.arange(self.mesh.num_triangles)
        if bary.ndim == 2:
            bary = np.broadcast_to(bary, (cells.size,) + bary.shape)
        mesh = self.mesh
        transform = self.transform[cells] if self.transform is not None else None
        return _rt_shape_functions(bary, mesh.corners[cells], mesh.barycentric_gradients[cells],
                                   mesh.areas[cells], self.signs[cells], self.param_vertex[cells],
                                   transform, self.k)

    def normal_traces(self, edges: np.ndarray, side: str, s: np.ndarray):
        """
        Normal traces (along n_E) of the basis functions of one edge side.

        Args:
            edges: edge ids (every edge must have the requested side)
            side: 'plus' or 'minus'
            s: edge parameters in [0, 1]

        Returns:
            cells (E,), traces (E, len(s), local_dim)
        """
        topo = self.mesh.edges
        cells = topo.t_plus[edges] if side == "plus" else topo.t_minus[edges]
        if np.any(cells < 0):
            raise SpaceError("requested the minus side of a boundary edge")
        bary = edge_side_barycentric(self.mesh, edges, cells, s)
        values, _ = self.evaluate(bary, cells)
        return cells, np.einsum("eqnd,ed->eqn", values, topo.normal[edges])

    def field(self, coefficients: np.ndarray, bary: np.ndarray, cells: Optional[np.ndarray] = None):
        """Evaluate a discrete flux and its divergence at barycentric points."""
        if cells is None:
            cells = np.arange(self.mesh.num_triangles)
        values, div = self.evaluate(bary, cells)
        local = coefficients[self.dofs(cells)]
        return np.einsum("cqnd,cn->cqd", values, local), np.einsum("cqn,cn->cq", div, local)

    def conforming_basis(self) -> sp.csr_matrix:
        """
        Columns expanding a basis of the conforming space RT^k_N (zero normal
        trace on the Neumann boundary) in the piecewise basis.
        """
        topo = self.mesh.edges
        k = self.k
        edges = np.flatnonzero(~topo.neumann)
        rows, cols = [], []
        col = 0
        for j in range(k + 1):
            plus = self.edge_dof(topo.t_plus[edges], topo.local_plus[edges], j)
            ids = col + np.arange(edges.size)
            rows.append(plus)
            cols.append(ids)
            inner = topo.t_minus[edges] >= 0
            minus = self.edge_dof(topo.t_minus[edges][inner], topo.local_minus[edges][inner], j)
            rows.append(minus)
            cols.append(ids[inner])
            col += edges.size
        if k > 0:
            interior = (self.dofs()[:, 3 * (k + 1):]).ravel()
            rows.append(interior)
            cols.append(col + np.arange(interior.size))
            col += interior.size
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(self.num_dofs, col))


class ScalarDGSpace:
    """
    Discontinuous P^degree with orthonormalized monomials per triangle.

    On the reference triangle the basis satisfies int phi_i phi_j = delta_ij / 2,
    so the mass matrix on T is |T| times the identity.
    """

    def __init__(self, mesh: Mesh, degree: int):
        if degree < 0:
            raise SpaceError(f"polynomial degree must be nonnegative, got {degree}")
        self.mesh = mesh
        self.degree = int(degree)
        self.generation = mesh.generation
        self.exponents = [(a, n - a) for n in range(degree + 1) for a in range(n, -1, -1)]
        self.local_dim = dg_local_dim(self.degree)
        self.num_dofs = mesh.num_triangles * self.local_dim
        self.coefficients = self._orthonormal_coefficients()

    def _orthonormal_coefficients(self) -> np.ndarray:
        exps = self.exponents
        gram = np.array([[factorial(a1 + a2) * factorial(b1 + b2) / factorial(a1 + a2 + b1 + b2 + 2)
                          for (a2, b2) in exps] for (a1, b1) in exps])
        lower = scipy.linalg.cholesky(gram, lower=True)
        return scipy.linalg.solve_triangular(lower, np.eye(len(exps)), lower=True) / np.sqrt(2.0)

    @cached_property
    def reference_gram(self) -> np.ndarray:
        """Mass matrix of the basis on the reference triangle (1/2 times identity)."""
        rule = triangle_rule(2 * self.degree)
        values, _ = self._reference(rule.barycentric)
        return np.einsum("q,qa,qb->ab", rule.weights, values, values)

    def _reference(self, bary: np.ndarray):
        x, y = bary[..., 1], bary[..., 2]
        mono = np.stack([x ** a * y ** b for a, b in self.exponents], axis=-1)
        dx = np.stack([a * x ** max(a - 1, 0) * y ** b for a, b in self.exponents], axis=-1)
        dy = np.stack([b * x ** a * y ** max(b - 1, 0) for a, b in self.exponents], axis=-1)
        c = self.coefficients
        return mono @ c.T, np.stack((dx @ c.T, dy @ c.T), axis=-1)

    def dofs(self, cells: Optional[np.ndarray] = None) -> np.ndarray:
        if cells is None:
            cells = np.arange(self.mesh.num_triangles)
        return cells[:, None] * self.local_dim + np.arange(self.local_dim)[None, :]

    def evaluate(self, bary: np.ndarray, cells: Optional[np.ndarray] = None):
        """
        Values and physical gradients of the local basis.

        Returns:
            values (C, Q, local_dim) and gradients (C, Q, local_dim, 2)
        """
        if cells is None:
            cells = np.arange(self.mesh.num_triangles)
        if bary.ndim == 2:
            bary = np.broadcast_to(bary, (cells.size,) + bary.shape)
        values, ref_grads = self._reference(bary)
        grads = self.mesh.barycentric_gradients[cells]
        # x_hat = lambda_1 and y_hat = lambda_2
        phys = (ref_grads[..., 0, None] * grads[:, None, None, 1, :]
                + ref_grads[..., 1, None] * grads[:, None, None, 2, :])
        return values, phys

    def traces(self, edges: np.ndarray, side: str, s: np.ndarray):
        topo = self.mesh.edges
        cells = topo.t_plus[edges] if side == "plus" else topo.t_minus[edges]
        if np.any(cells < 0):
            raise SpaceError("requested the minus side of a boundary edge")
        bary = edge_side_barycentric(self.mesh, edges, cells, s)
        values, _ = self.evaluate(bary, cells)
        return cells, values

    def field(self, coefficients: np.ndarray, bary: np.ndarray, cells: Optional[np.ndarray] = None):
        """Evaluate a discrete scalar and its gradient at barycentric points."""
        if cells is None:
            cells = np.arange(self.mesh.num_triangles)
        values, grads = self.evaluate(bary, cells)
        local = coefficients[self.dofs(cells)]
        return np.einsum("cqn,cn->cq", values, local), np.einsum("cqnd,cn->cqd", grads, local)

    def project(self, func: Callable[[np.ndarray], np.ndarray], degree: Optional[int] = None) -> np.ndarray:
        """Triangle-wise L2 projection of func(points (..., 2)) -> (...)."""
        rule = triangle_rule(degree if degree is not None else 2 * self.degree + 2)
        x = self.mesh.to_physical(rule.barycentric)
        values, _ = self.evaluate(rule.barycentric)
        weights = 2.0 * self.mesh.areas[:, None] * rule.weights[None, :]
        moments = np.einsum("cq,cq,cqn->cn", weights, func(x), values)
        return (moments / self.mesh.areas[:, None]).ravel()


def dg_dofmap(mesh: Mesh, degree: int) -> ScalarDGSpace:
    """Triangle-blocked dof map of P^degree(T), degree = k + 1."""
    return ScalarDGSpace(mesh, degree)


@dataclass(frozen=True, eq=False)
class ConstrainedRTBasis:
    """
    Basis of the flux space with vanishing mean normal jumps.

    Attributes:
        space: underlying piecewise RT space
        matrix: (n_raw, n_constrained) columns expanding each basis function
            in the piecewise basis
        alpha: (K, 2, k + 1) mean normal jumps alpha_{E,j} of the plus and
            minus side functions (NaN where a side does not exist)
        kinds: (n_constrained,) origin of every column: 0 lowest-order psi_E,
            1 corrected edge function, 2 Dirichlet edge function, 3 interior
        dropped: raw dofs left out, one per interior-edge side, Neumann edge
            and Dirichlet edge (for k = 0 these are the lowest-order functions
            that psi_E replaces or that carry a nonzero mean)
    """
    space: PiecewiseRTSpace
    matrix: sp.csr_matrix
    alpha: np.ndarray
    kinds: np.ndarray
    dropped: np.ndarray

    @property
    def num_dofs(self) -> int:
        return int(self.matrix.shape[1])

    def expected_dimension(self) -> int:
        topo = self.space.mesh.edges
        return self.space.num_dofs - int(np.count_nonzero(topo.interior | topo.neumann))

    def validate(self, constraints: Optional[sp.spmatrix] = None, tol: float = 1e-12) -> None:
        """
        Check cardinality, full column rank and mean-jump annihilation.

        Raises:
            SpaceError: when the columns do not form a basis of the constrained space
        """
        if self.num_dofs != self.expected_dimension():
            raise SpaceError(f"constrained basis has {self.num_dofs} functions, "
                             f"expected {self.expected_dimension()}")
        dense = self.matrix.toarray()
        rank = np.linalg.matrix_rank(dense)
        if rank < self.num_dofs:
            raise SpaceError(f"constrained basis is rank deficient ({rank} < {self.num_dofs})")
        if constraints is not None:
            lengths = self.space.mesh.edges.length[self.space.mesh.edges.flux_jump_edges]
            residual = np.abs((constraints @ self.matrix).toarray()) / lengths[:, None]
            if residual.size and residual.max() > tol:
                raise SpaceError(f"constrained basis violates the mean-jump condition ({residual.max():.3e})")


def mean_normal_jumps(space: PiecewiseRTSpace) -> np.ndarray:
    """
    alpha_{E,j} = (1/|E|) int_E [psi_{E,j} n_E] ds for both sides of every edge.

    The minus side uses the opposite sign so that both sides yield the
    same weights for the conforming pairs psi_{E,j}(T+) + psi_{E,j}(T-).
    """
    topo = space.mesh.edges
    k = space.k
    rule = edge_rule(2 * k + 2)
    alpha = np.full((topo.num_edges, 2, k + 1), np.nan)
    edges = np.arange(topo.num_edges)
    cells, traces = space.normal_traces(edges, "plus", rule.points)
    edge_cols = topo.local_plus[:, None] * (k + 1) + np.arange(k + 1)[None, :]
    plus = np.take_along_axis(traces, np.broadcast_to(edge_cols[:, None, :], (edges.size, rule.num_points, k + 1)), axis=2)
    alpha[:, 0, :] = np.einsum("q,eqj->ej", rule.weights, plus)

    inner = np.flatnonzero(topo.interior)
    if inner.size:
        _, traces = space.normal_traces(inner, "minus", rule.points)
        edge_cols = topo.local_minus[inner, None] * (k + 1) + np.arange(k + 1)[None, :]
        minus = np.take_along_axis(traces, np.broadcast_to(edge_cols[:, None, :], (inner.size, rule.num_points, k + 1)), axis=2)
        alpha[inner, 1, :] = np.einsum("q,eqj->ej", rule.weights, minus)
    return alpha


def build_constrained_basis(mesh: Mesh, k: int, space: Optional[PiecewiseRTSpace] = None) -> ConstrainedRTBasis:
    """
    Explicit basis of the RT functions with zero mean normal jump on
    interior and Neumann edges.

    An existing piecewise space on the mesh may be passed to share its
    shape-function data.

    Columns, in this order:
      - psi_E for every interior and Dirichlet edge (sum of all edge
        functions of both sides);
      - corrected psi_{E,j} - alpha_{E,j} psi_{E,+/-}, j = 0..k-1, on every
        interior-edge side and Neumann edge (j = k is dropped);
      - psi_{E,j}, j = 0..k-1, on Dirichlet edges (j = k is dropped);
      - all interior functions.

    Raises:
        SpaceError: when alpha_{E,j} does not sum to one on an edge side
    """
    if space is None:
        space = PiecewiseRTSpace(mesh, k)
    elif space.mesh is not mesh or space.k != k:
        raise SpaceError(f"piecewise space (k={space.k}) does not belong to this mesh and degree k={k}")
    topo = mesh.edges
    alpha = mean_normal_jumps(space)

    sums = np.nansum(alpha, axis=2)
    present = ~np.isnan(alpha[:, :, 0])
    if np.any(np.abs(sums[present] - 1.0) > 1e-10):
        raise SpaceError(f"edge weights alpha do not sum to one (max deviation "
                         f"{np.abs(sums[present] - 1.0).max():.3e})")

    rows, cols, vals, kinds, dropped = [], [], [], [], []
    col = 0

    def side_dofs(edges, side):
        if side == 0:
            return np.stack([space.edge_dof(topo.t_plus[edges], topo.local_plus[edges], j)
                             for j in range(k + 1)], axis=1)
        return np.stack([space.edge_dof(topo.t_minus[edges], topo.local_minus[edges], j)
                         for j in range(k + 1)], axis=1)

    # lowest-order conforming functions psi_E
    for edges in (np.flatnonzero(topo.interior), np.flatnonzero(topo.dirichlet)):
        ids = col + np.arange(edges.size)
        sides = (0, 1) if edges.size and topo.t_minus[edges[0]] >= 0 else (0,)
        for side in sides:
            dofs = side_dofs(edges, side)
            rows.append(dofs.ravel())
            cols.append(np.repeat(ids, k + 1))
            vals.append(np.ones(dofs.size))
        kinds.append(np.zeros(edges.size, dtype=np.int8))
        col += edges.size

    # corrected higher-order edge functions on interior-edge sides and Neumann edges
    groups = [(np.flatnonzero(topo.interior), 0), (np.flatnonzero(topo.interior), 1),
              (np.flatnonzero(topo.neumann), 0)]
    for edges, side in groups:
        if edges.size == 0:
            continue
        dofs = side_dofs(edges, side)
        dropped.append(dofs[:, k])
        for j in range(k):
            ids = col + np.arange(edges.size)
            coeff = -np.repeat(alpha[edges, side, j], k + 1)
            coeff = coeff.reshape(edges.size, k + 1)
            coeff[:, j] += 1.0
            rows.append(dofs.ravel())
            cols.append(np.repeat(ids, k + 1))
            vals.append(coeff.ravel())
            kinds.append(np.ones(edges.size, dtype=np.int8))
            col += edges.size

    # higher-order Dirichlet edge functions need no correction
    edges = np.flatnonzero(topo.dirichlet)
    if edges.size:
        dofs = side_dofs(edges, 0)
        dropped.append(dofs[:, k])
        for j in range(k):
            rows.append(dofs[:, j])
            cols.append(col + np.arange(edges.size))
            vals.append(np.ones(edges.size))
            kinds.append(np.full(edges.size, 2, dtype=np.int8))
            col += edges.size

    if k > 0:
        interior = space.dofs()[:, 3 * (k + 1):].ravel()
        rows.append(interior)
        cols.append(col + np.arange(interior.size))
        vals.append(np.ones(interior.size))
        kinds.append(np.full(interior.size, 3, dtype=np.int8))
        col += interior.size

    matrix = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(space.num_dofs, col))
    basis = ConstrainedRTBasis(space=space, matrix=matrix, alpha=alpha,
                               kinds=np.concatenate(kinds),
                               dropped=np.concatenate(dropped) if dropped else np.empty(0, dtype=np.int64))
    if basis.num_dofs != basis.expected_dimension():
        raise SpaceError(f"constrained basis has {basis.num_dofs} functions, "
                         f"expected {basis.expected_dimension()}")
    logger.debug("constrained RT basis: %d of %d piecewise dofs", basis.num_dofs, space.num_dofs)
    return basis


@dataclass(frozen=True, eq=False)
class DiscreteSolution:
    """Coefficients of (sigma_h, u_h) in the piecewise RT and P^{k+1} bases."""
    rt_space: PiecewiseRTSpace
    dg_space: ScalarDGSpace
    sigma: np.ndarray
    u: np.ndarray

    @property
    def mesh(self) -> Mesh:
        return self.rt_space.mesh

    @classmethod
    def zero(cls, rt_space: PiecewiseRTSpace, dg_space: ScalarDGSpace) -> "DiscreteSolution":
        return cls(rt_space, dg_space, np.zeros(rt_space.num_dofs), np.zeros(dg_space.num_dofs))

    @classmethod
    def from_vector(cls, rt_space: PiecewiseRTSpace, dg_space: ScalarDGSpace, x: np.ndarray) -> "DiscreteSolution":
        """Split a vector laid out as [sigma, u]."""
        n = rt_space.num_dofs
        if x.shape != (n + dg_space.num_dofs,):
            raise SpaceError(f"vector of length {x.shape[0]} does not match {n} + {dg_space.num_dofs} dofs")
        return cls(rt_space, dg_space, x[:n].copy(), x[n:].copy())

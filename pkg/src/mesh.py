"""
Triangulations of the benchmark domains, newest-vertex bisection and edge topology
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

DOMAINS = ("square", "rectangle", "lshape")


class MeshError(ValueError):
    """Raised for invalid domains, unknown triangles or broken conformity."""


class BoundaryLabel(IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    NEUMANN = 2


@dataclass(frozen=True)
class DomainSpec:
    """
    One of the benchmark domains with its length scale.

    square(l)    = (0, l)^2, Dirichlet everywhere
    rectangle(l) = (0, l) x (0, 1), Dirichlet on the left and right sides
    lshape(l)    = (-l, l)^2 minus [0, l)^2, Dirichlet everywhere
    """
    name: str
    ell: float = 1.0

    def __post_init__(self):
        if self.name not in DOMAINS:
            raise MeshError(f"unknown domain {self.name!r}, expected one of {', '.join(DOMAINS)}")
        if not np.isfinite(self.ell) or self.ell <= 0:
            raise MeshError(f"ell must be positive, got {self.ell!r}")
        if self.name == "rectangle" and float(self.ell) != int(self.ell):
            raise MeshError(f"ell must be a positive integer for the rectangle, got {self.ell!r}")

    def boundary_label(self, midpoints: np.ndarray) -> np.ndarray:
        """Label boundary edges from their midpoints."""
        labels = np.full(midpoints.shape[0], BoundaryLabel.DIRICHLET, dtype=np.int8)
        if self.name == "rectangle":
            x = midpoints[:, 0]
            tol = 1e-12 * self.ell
            on_sides = (np.abs(x) < tol) | (np.abs(x - self.ell) < tol)
            labels[~on_sides] = BoundaryLabel.NEUMANN
        return labels


@dataclass(frozen=True, eq=False)
class EdgeTopology:
    """
    Edge adjacency of a conforming triangulation.

    Local edge i of a triangle is the edge opposite its local vertex i.
    For interior edges t_plus is the adjacent triangle with the smaller id
    and the unit normal points out of t_plus; boundary edges have
    t_minus = -1 and the outward unit normal.
    """
    vertices: np.ndarray        # (K, 2), v0 < v1
    t_plus: np.ndarray          # (K,)
    t_minus: np.ndarray         # (K,), -1 on the boundary
    local_plus: np.ndarray      # (K,), local edge index in t_plus
    local_minus: np.ndarray     # (K,), -1 on the boundary
    normal: np.ndarray          # (K, 2)
    length: np.ndarray          # (K,)
    label: np.ndarray           # (K,) BoundaryLabel
    tri_edges: np.ndarray       # (M, 3) global edge of each local edge
    tri_signs: np.ndarray       # (M, 3) +1 where the triangle is t_plus

    @property
    def num_edges(self) -> int:
        return int(self.length.shape[0])

    @property
    def interior(self) -> np.ndarray:
        return self.label == BoundaryLabel.INTERIOR

    @property
    def dirichlet(self) -> np.ndarray:
        return self.label == BoundaryLabel.DIRICHLET

    @property
    def neumann(self) -> np.ndarray:
        return self.label == BoundaryLabel.NEUMANN

    @property
    def flux_jump_edges(self) -> np.ndarray:
        """Edges in E(Omega) and E(Gamma_N), carrying normal-jump terms."""
        return np.flatnonzero(self.interior | self.neumann)

    @property
    def primal_jump_edges(self) -> np.ndarray:
        """Edges in E(Omega) and E(Gamma_D), carrying primal jump terms."""
        return np.flatnonzero(self.interior | self.dirichlet)

    def midpoints(self, coordinates: np.ndarray) -> np.ndarray:
        return 0.5 * (coordinates[self.vertices[:, 0]] + coordinates[self.vertices[:, 1]])


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Immutable triangulation with labeled boundary.

    Attributes:
        vertices: (N, 2) vertex coordinates
        triangles: (M, 3) vertex ids, counter-clockwise
        refinement_edge: (M,) local index of the refinement edge
        boundary: (B, 2) vertex pairs of the boundary edges
        boundary_label: (B,) BoundaryLabel of each boundary edge
        generation: number of refine calls since the initial mesh
        domain: benchmark domain the mesh discretizes
    """
    vertices: np.ndarray
    triangles: np.ndarray
    refinement_edge: np.ndarray
    boundary: np.ndarray
    boundary_label: np.ndarray
    generation: int = 0
    domain: Optional[DomainSpec] = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("vertices", "triangles", "refinement_edge", "boundary", "boundary_label"):
            array = getattr(self, name)
            array.setflags(write=False)

    def __str__(self):
        return (f"Mesh(generation={self.generation}, vertices={self.num_vertices}, "
                f"triangles={self.num_triangles})")

    @property
    def num_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def num_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @cached_property
    def corners(self) -> np.ndarray:
        """(M, 3, 2) coordinates of the triangle vertices."""
        return self.vertices[self.triangles]

    @cached_property
    def areas(self) -> np.ndarray:
        """Signed areas, positive for counter-clockwise triangles."""
        p = self.corners
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def diameters(self) -> np.ndarray:
        """h_T = longest edge of each triangle."""
        p = self.corners
        lengths = np.stack([np.linalg.norm(p[:, (i + 2) % 3] - p[:, (i + 1) % 3], axis=1)
                            for i in range(3)], axis=1)
        return lengths.max(axis=1)

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """(M, 3, 2) constant gradients of the barycentric coordinates."""
        p = self.corners
        area2 = 2.0 * self.areas
        grads = np.empty((self.num_triangles, 3, 2))
        for i in range(3):
            a = p[:, (i + 1) % 3]
            b = p[:, (i + 2) % 3]
            # rotate (b - a) clockwise by 90 degrees, points towards vertex i
            grads[:, i, 0] = (a[:, 1] - b[:, 1]) / area2
            grads[:, i, 1] = (b[:, 0] - a[:, 0]) / area2
        return grads

    @cached_property
    def edges(self) -> "EdgeTopology":
        return edge_topology(self)

    @cached_property
    def vertex_labels(self) -> np.ndarray:
        """Vertex labels; Dirichlet wins at Dirichlet/Neumann junctions."""
        labels = np.full(self.num_vertices, BoundaryLabel.INTERIOR, dtype=np.int8)
        neumann = self.boundary[self.boundary_label == BoundaryLabel.NEUMANN]
        dirichlet = self.boundary[self.boundary_label == BoundaryLabel.DIRICHLET]
        labels[neumann.ravel()] = BoundaryLabel.NEUMANN
        labels[dirichlet.ravel()] = BoundaryLabel.DIRICHLET
        return labels

    def to_physical(self, reference_points: np.ndarray) -> np.ndarray:
        """
        Map points given in barycentric coordinates onto every triangle.

        Args:
            reference_points: (Q, 3) or (M, Q, 3) barycentric coordinates

        Returns:
            (M, Q, 2) physical coordinates
        """
        if reference_points.ndim == 2:
            return np.einsum("qi,mid->mqd", reference_points, self.corners)
        return np.einsum("mqi,mid->mqd", reference_points, self.corners)


def _square_patch(x0: float, y0: float, s: float):
    """Eight triangles of a square split by both diagonals and both midlines."""
    h = 0.5 * s
    center = (x0 + h, y0 + h)
    ring = [(x0, y0), (x0 + h, y0), (x0 + s, y0), (x0 + s, y0 + h),
            (x0 + s, y0 + s), (x0 + h, y0 + s), (x0, y0 + s), (x0, y0 + h)]
    return [(center, ring[i], ring[(i + 1) % 8]) for i in range(8)]


def _longest_edges(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Local index of the longest edge, ties broken by smallest opposite vertex id."""
    p = vertices[triangles]
    lengths = np.stack([np.linalg.norm(p[:, (i + 2) % 3] - p[:, (i + 1) % 3], axis=1)
                        for i in range(3)], axis=1)
    longest = lengths.max(axis=1, keepdims=True)
    candidates = lengths >= longest * (1.0 - 1e-12)
    opposite = np.where(candidates, triangles, np.iinfo(np.int64).max)
    return np.argmin(opposite, axis=1)


def build_initial_mesh(domain: DomainSpec) -> Mesh:
    """
    Build the initial triangulation of a benchmark domain.

    Every constituent square is split into 8 triangles by its diagonals and
    midlines: one square for the square domain, ell unit squares for the
    rectangle and three squares of side ell for the L-shape.

    Args:
        domain: Benchmark domain

    Returns:
        Mesh of generation 0
    """
    ell = float(domain.ell)
    if domain.name == "square":
        squares, side = [(0.0, 0.0)], ell
    elif domain.name == "rectangle":
        squares, side = [(float(i), 0.0) for i in range(int(ell))], 1.0
    else:
        squares, side = [(-ell, 0.0), (-ell, -ell), (0.0, -ell)], ell

    points = np.array([corner for x0, y0 in squares
                       for tri in _square_patch(x0, y0, side) for corner in tri])
    # all coordinates are multiples of side / 2, so integer keys merge duplicates exactly
    keys = np.rint(points / (0.5 * side)).astype(np.int64)
    unique_keys, inverse = np.unique(keys, axis=0, return_inverse=True)
    vertices = unique_keys.astype(float) * (0.5 * side)
    triangles = inverse.reshape(-1, 3).astype(np.int64)

    refinement_edge = _longest_edges(vertices, triangles)

    # boundary edges are the local edges seen by exactly one triangle
    local = np.stack([triangles[:, [(i + 1) % 3, (i + 2) % 3]] for i in range(3)], axis=1).reshape(-1, 2)
    _, edge_ids, counts = np.unique(np.sort(local, axis=1), axis=0, return_inverse=True, return_counts=True)
    edge_ids = edge_ids.ravel()
    boundary = local[counts[edge_ids] == 1]
    midpoints = 0.5 * (vertices[boundary[:, 0]] + vertices[boundary[:, 1]])
    labels = domain.boundary_label(midpoints)

    mesh = Mesh(vertices=vertices, triangles=triangles, refinement_edge=refinement_edge.astype(np.int64),
                boundary=boundary, boundary_label=labels, generation=0, domain=domain)
    logger.info("initial %s mesh (ell=%g): %d vertices, %d triangles",
                domain.name, ell, mesh.num_vertices, mesh.num_triangles)
    return mesh


def edge_topology(mesh: Mesh) -> EdgeTopology:
    """
    Enumerate the edges of a conforming mesh.

    Raises:
        MeshError: when an edge is shared by more than two triangles, a
            triangle-boundary edge carries no boundary label (hanging node)
            or a triangle is degenerate
    """
    tris = mesh.triangles
    m = tris.shape[0]
    if np.any(mesh.areas <= 0):
        raise MeshError("mesh contains triangles with non-positive area")

    # local edge i (opposite vertex i) of triangle t sits at flat index 3 t + i
    local = np.stack([tris[:, [(i + 1) % 3, (i + 2) % 3]] for i in range(3)], axis=1).reshape(-1, 2)
    pairs = np.sort(local, axis=1)
    edge_vertices, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise MeshError("non-conforming mesh: an edge is shared by more than two triangles")

    k = edge_vertices.shape[0]
    order = np.argsort(inverse, kind="stable")
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    first = order[starts]
    second = np.where(counts == 2, order[np.minimum(starts + 1, order.size - 1)], -1)

    t_plus = first // 3
    local_plus = first % 3
    t_minus = np.where(second >= 0, second // 3, -1)
    local_minus = np.where(second >= 0, second % 3, -1)

    coords = mesh.vertices
    a = coords[edge_vertices[:, 0]]
    b = coords[edge_vertices[:, 1]]
    d = b - a
    length = np.linalg.norm(d, axis=1)
    normal = np.column_stack((d[:, 1], -d[:, 0])) / length[:, None]
    centroid = mesh.corners[t_plus].mean(axis=1)
    flip = np.einsum("kd,kd->k", 0.5 * (a + b) - centroid, normal) < 0
    normal[flip] *= -1.0

    label = np.full(k, BoundaryLabel.INTERIOR, dtype=np.int8)
    on_boundary = counts == 1
    n = mesh.num_vertices
    boundary_keys = np.sort(mesh.boundary, axis=1)
    boundary_keys = boundary_keys[:, 0] * n + boundary_keys[:, 1]
    sorter = np.argsort(boundary_keys)
    edge_keys = edge_vertices[on_boundary, 0] * n + edge_vertices[on_boundary, 1]
    if boundary_keys.size != edge_keys.size:
        raise MeshError(f"non-conforming mesh: {edge_keys.size} triangle boundary edges but "
                        f"{boundary_keys.size} labeled boundary edges")
    pos = np.searchsorted(boundary_keys, edge_keys, sorter=sorter)
    pos = np.minimum(pos, boundary_keys.size - 1)
    found = boundary_keys[sorter[pos]] == edge_keys
    if not np.all(found):
        raise MeshError("non-conforming mesh: triangle boundary does not match the labeled boundary "
                        "(hanging node?)")
    label[on_boundary] = mesh.boundary_label[sorter[pos]]

    tri_edges = inverse.reshape(m, 3)
    tri_signs = np.where(t_plus[tri_edges] == np.arange(m)[:, None], 1, -1).astype(np.int8)

    topology = EdgeTopology(vertices=edge_vertices, t_plus=t_plus, t_minus=t_minus,
                            local_plus=local_plus, local_minus=local_minus, normal=normal,
                            length=length, label=label, tri_edges=tri_edges, tri_signs=tri_signs)
    logger.debug("edge topology: %d edges (%d interior, %d Dirichlet, %d Neumann)",
                 k, topology.interior.sum(), topology.dirichlet.sum(), topology.neumann.sum())
    return topology


def refine(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    """
    Newest-vertex bisection of the marked triangles with closure.

    All three edges of a marked triangle are bisected. Closure marks the
    refinement edge of every triangle with a marked edge until the marking
    is stable, which rules out hanging nodes.

    Args:
        mesh: Current mesh
        marked: Ids of the triangles to refine

    Returns:
        New mesh of the next generation (the input itself when nothing is marked)

    Raises:
        MeshError: on unknown triangle ids
    """
    marked = np.unique(np.fromiter((int(t) for t in marked), dtype=np.int64))
    if marked.size == 0:
        return mesh
    m = mesh.num_triangles
    if marked[0] < 0 or marked[-1] >= m:
        bad = marked[(marked < 0) | (marked >= m)]
        raise MeshError(f"unknown triangle id(s): {bad.tolist()}")

    topo = mesh.edges
    edge_marked = np.zeros(topo.num_edges, dtype=bool)
    edge_marked[topo.tri_edges[marked].ravel()] = True
    ref_edge = topo.tri_edges[np.arange(m), mesh.refinement_edge]

    sweeps = 0
    while True:
        touched = edge_marked[topo.tri_edges].any(axis=1)
        missing = touched & ~edge_marked[ref_edge]
        if not missing.any():
            break
        edge_marked[ref_edge[missing]] = True
        sweeps += 1
    logger.debug("closure finished after %d sweeps", sweeps)

    # new vertices at the midpoints of the marked edges
    split = np.flatnonzero(edge_marked)
    midpoint_of = np.full(topo.num_edges, -1, dtype=np.int64)
    midpoint_of[split] = mesh.num_vertices + np.arange(split.size)
    new_points = 0.5 * (mesh.vertices[topo.vertices[split, 0]] + mesh.vertices[topo.vertices[split, 1]])
    vertices = np.vstack((mesh.vertices, new_points))

    # rotate every triangle to (a, b, c) with refinement edge (b, c)
    r = mesh.refinement_edge
    rows = np.arange(m)
    a = mesh.triangles[rows, r]
    b = mesh.triangles[rows, (r + 1) % 3]
    c = mesh.triangles[rows, (r + 2) % 3]
    m_bc = midpoint_of[ref_edge]
    m_ab = midpoint_of[topo.tri_edges[rows, (r + 2) % 3]]
    m_ca = midpoint_of[topo.tri_edges[rows, (r + 1) % 3]]

    children, parents, slots, ref = [], [], [], []

    def emit(mask, tri, slot, refinement):
        children.append(np.column_stack(tri)[mask])
        parents.append(rows[mask])
        slots.append(np.full(mask.sum(), slot))
        ref.append(np.broadcast_to(refinement, mask.shape)[mask])

    keep = m_bc < 0
    bisect = ~keep
    emit(keep, (mesh.triangles[:, 0], mesh.triangles[:, 1], mesh.triangles[:, 2]), 0, r)
    # first bisection gives (m, a, b) and (m, c, a); each is split again
    # when its refinement edge (a, b) resp. (c, a) is marked
    left_split = bisect & (m_ab >= 0)
    right_split = bisect & (m_ca >= 0)
    emit(bisect & ~left_split, (m_bc, a, b), 0, 0)
    emit(left_split, (m_ab, m_bc, a), 0, 0)
    emit(left_split, (m_ab, b, m_bc), 1, 0)
    emit(bisect & ~right_split, (m_bc, c, a), 2, 0)
    emit(right_split, (m_ca, m_bc, c), 2, 0)
    emit(right_split, (m_ca, a, m_bc), 3, 0)

    parents = np.concatenate(parents)
    slots = np.concatenate(slots)
    order = np.lexsort((slots, parents))
    triangles = np.concatenate(children)[order].astype(np.int64)
    refinement_edge = np.concatenate(ref)[order].astype(np.int64)

    # boundary segments keep their label and orientation
    bkeys = np.sort(mesh.boundary, axis=1)
    n = mesh.num_vertices
    edge_keys = topo.vertices[:, 0] * n + topo.vertices[:, 1]
    edge_sorter = np.argsort(edge_keys)
    pos = edge_sorter[np.searchsorted(edge_keys, bkeys[:, 0] * n + bkeys[:, 1], sorter=edge_sorter)]
    mid = midpoint_of[pos]
    whole = mid < 0
    boundary = np.vstack((mesh.boundary[whole],
                          np.column_stack((mesh.boundary[~whole, 0], mid[~whole])),
                          np.column_stack((mid[~whole], mesh.boundary[~whole, 1]))))
    boundary_label = np.concatenate((mesh.boundary_label[whole],
                                     mesh.boundary_label[~whole], mesh.boundary_label[~whole]))

    refined = Mesh(vertices=vertices, triangles=triangles, refinement_edge=refinement_edge,
                   boundary=boundary, boundary_label=boundary_label,
                   generation=mesh.generation + 1, domain=mesh.domain)
    logger.debug("refined %d marked triangles: %d -> %d triangles",
                 marked.size, m, refined.num_triangles)
    return refined


def refine_uniformly(mesh: Mesh, times: int = 1) -> Mesh:
    """Mark every triangle `times` times in a row."""
    for _ in range(times):
        mesh = refine(mesh, range(mesh.num_triangles))
    return mesh


def check_conformity(mesh: Mesh) -> None:
    """
    Exhaustive scan of the mesh invariants.

    Raises:
        MeshError: on the first violated invariant
    """
    if not np.all(np.isfinite(mesh.vertices)):
        raise MeshError("vertex coordinates must be finite")
    if np.any(mesh.areas <= 0):
        raise MeshError("triangles must be counter-clockwise with positive area")
    tris = mesh.triangles
    if np.any((tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (tris[:, 0] == tris[:, 2])):
        raise MeshError("triangle vertex ids must be distinct")
    topo = edge_topology(mesh)
    interior = topo.interior
    if np.any(topo.t_minus[interior] < 0) or np.any(topo.t_minus[~interior] >= 0):
        raise MeshError("interior edges need exactly two triangles, boundary edges exactly one")
    used = np.bincount(tris.ravel(), minlength=mesh.num_vertices)
    if np.any(used == 0):
        raise MeshError("mesh contains vertices not used by any triangle")


def min_angle(mesh: Mesh) -> float:
    """Smallest interior angle over all triangles, in radians."""
    p = mesh.corners
    angles = []
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        v = p[:, (i + 2) % 3] - p[:, i]
        cos = np.einsum("md,md->m", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
    return float(np.min(angles))


def write_mesh(mesh: Mesh, path: Union[str, Path]) -> Path:
    """
    Dump the mesh as plain text for debugging and visualization.

    Format: a header line `vertices N triangles M edges K`, then N rows of
    coordinates, M rows `v0 v1 v2 refinement_edge` and K rows `v0 v1 class`.
    """
    path = Path(path)
    topo = mesh.edges
    names = {int(BoundaryLabel.INTERIOR): "interior", int(BoundaryLabel.DIRICHLET): "dirichlet",
             int(BoundaryLabel.NEUMANN): "neumann"}
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"vertices {mesh.num_vertices} triangles {mesh.num_triangles} edges {topo.num_edges}\n")
        for x, y in mesh.vertices:
            f.write(f"{x!r} {y!r}\n")
        for (v0, v1, v2), r in zip(mesh.triangles, mesh.refinement_edge):
            f.write(f"{v0} {v1} {v2} {r}\n")
        for (v0, v1), label in zip(topo.vertices, topo.label):
            f.write(f"{v0} {v1} {names[int(label)]}\n")
    return path

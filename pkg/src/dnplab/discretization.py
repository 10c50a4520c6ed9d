"""P1 triangle meshes, element gradients, lumped quadrature and sparse assembly.

Nodal fields are plain ``(n_nodes,)`` arrays; boundary traces are arrays
ordered like ``mesh.boundary_nodes``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve


class MeshError(ValueError):
    """Invalid mesh topology or geometry."""


class DegenerateTriangleError(MeshError):
    pass


@dataclass(frozen=True, eq=False)
class ElementGradient:
    """Per-triangle constant gradient of a P1 field, with triangle areas."""

    grad: np.ndarray
    area: np.ndarray

    @property
    def norm(self) -> np.ndarray:
        return np.hypot(self.grad[:, 0], self.grad[:, 1])


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Triangulated polygon.

    Boundary edges and nodes are derived from the triangle list: an edge used
    by exactly one triangle is a boundary edge and inherits that triangle's
    (counterclockwise) orientation.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray = field(init=False)
    boundary_nodes: np.ndarray = field(init=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError(f"nodes must have shape (N, 2), got {nodes.shape}")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise MeshError(f"triangles must have shape (T, 3), got {tris.shape}")
        if tris.size and (tris.min() < 0 or tris.max() >= len(nodes)):
            raise MeshError("triangle index out of range")
        nodes.setflags(write=False)
        tris.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)

        area = _signed_areas(nodes, tris)
        bad = np.flatnonzero(area <= 0.0)
        if bad.size:
            raise DegenerateTriangleError(
                f"{bad.size} triangle(s) with non-positive signed area, first index {bad[0]}"
            )
        edges, loops = _boundary_loops(tris)
        object.__setattr__(self, "boundary_edges", edges)
        object.__setattr__(self, "boundary_nodes", np.concatenate(loops))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        return _signed_areas(self.nodes, self.triangles)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Gradients of the three hat functions on each triangle, shape (T, 3, 2)."""
        return _hat_gradients(self.nodes, self.triangles)

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        """Vertex-rule weights: node i gets area/3 from every triangle touching it."""
        w = np.zeros(self.n_nodes)
        np.add.at(w, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        return w

    @cached_property
    def is_boundary(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = True
        return mask

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.is_boundary)

    @cached_property
    def outward_normals(self) -> np.ndarray:
        """Unit outward normal per boundary edge (tangent rotated by -pi/2)."""
        d = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        n = np.column_stack([d[:, 1], -d[:, 0]])
        return n / np.linalg.norm(n, axis=1)[:, None]

    def interpolate(self, f) -> np.ndarray:
        """Nodal values of ``f(x1, x2)`` (vectorized callable) or a constant."""
        if callable(f):
            vals = np.asarray(f(self.nodes[:, 0], self.nodes[:, 1]), dtype=float)
            return np.broadcast_to(vals, (self.n_nodes,)).copy()
        return np.full(self.n_nodes, float(f))

    def trace(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, dtype=float)[self.boundary_nodes]

    def zero_extension(self, h: np.ndarray) -> np.ndarray:
        """Nodal field equal to the trace ``h`` on the boundary and 0 inside."""
        u = np.zeros(self.n_nodes)
        u[self.boundary_nodes] = h
        return u


def _signed_areas(nodes, tris):
    a, b, c = nodes[tris[:, 0]], nodes[tris[:, 1]], nodes[tris[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def _hat_gradients(nodes, tris):
    a, b, c = nodes[tris[:, 0]], nodes[tris[:, 1]], nodes[tris[:, 2]]
    twice_area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    # grad(phi_i) = rot(opposite edge) / (2 area)
    g = np.empty((len(tris), 3, 2))
    for i, (p, q) in enumerate(((b, c), (c, a), (a, b))):
        g[:, i, 0] = (p[:, 1] - q[:, 1]) / twice_area
        g[:, i, 1] = (q[:, 0] - p[:, 0]) / twice_area
    return g


def _boundary_loops(tris):
    directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("non-manifold edge shared by more than two triangles")
    edges = directed[counts[inverse.ravel()] == 1]
    if len(edges) == 0:
        raise MeshError("mesh has no boundary")

    succ = {}
    for a, b in edges:
        if a in succ:
            raise MeshError(f"boundary node {a} has two outgoing boundary edges")
        succ[int(a)] = int(b)
    loops, ordered, seen = [], [], set()
    for start in sorted(succ):
        if start in seen:
            continue
        loop, node = [], start
        while node not in seen:
            seen.add(node)
            loop.append(node)
            if node not in succ:
                raise MeshError("boundary edges do not form closed loops")
            ordered.append((node, succ[node]))
            node = succ[node]
        if node != start:
            raise MeshError("boundary edges do not form closed loops")
        loops.append(np.array(loop, dtype=np.int64))
    edges = np.array(ordered, dtype=np.int64)
    edges.setflags(write=False)
    return edges, loops


def make_unit_square_mesh(subdivisions: int) -> TriangleMesh:
    """Uniform triangulation of [0, 1]^2 with alternating cell diagonals.

    Every cell is split into two right isosceles triangles; the diagonal
    direction alternates in a checkerboard so the mesh is symmetric under
    x -> 1 - x and y -> 1 - y whenever ``subdivisions`` is even.
    """
    n = int(subdivisions)
    if n < 1 or n != subdivisions:
        raise ValueError("subdivisions must be a positive integer")
    x = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i, j = i.ravel(), j.ravel()
    sw = j * (n + 1) + i
    se, nw, ne = sw + 1, sw + n + 1, sw + n + 2
    even = (i + j) % 2 == 0
    # even cells: diagonal sw-ne; odd cells: diagonal se-nw
    t1 = np.where(even[:, None], np.column_stack([sw, se, ne]), np.column_stack([sw, se, nw]))
    t2 = np.where(even[:, None], np.column_stack([sw, ne, nw]), np.column_stack([se, ne, nw]))
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2], tris[1::2] = t1, t2
    return TriangleMesh(nodes, tris)


def read_mesh(path) -> TriangleMesh:
    """Read ``N_v N_t`` header, then N_v lines ``x y`` and N_t lines ``i j k``."""
    tokens = Path(path).read_text().split()
    try:
        nv, nt = int(tokens[0]), int(tokens[1])
        body = tokens[2:]
        if len(body) != 2 * nv + 3 * nt:
            raise MeshError(f"expected {2 * nv + 3 * nt} values after header, found {len(body)}")
        nodes = np.array(body[: 2 * nv], dtype=float).reshape(nv, 2)
        tris = np.array(body[2 * nv:], dtype=np.int64).reshape(nt, 3)
    except (IndexError, ValueError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    return TriangleMesh(nodes, tris)


def write_mesh(mesh: TriangleMesh, path) -> None:
    lines = [f"{mesh.n_nodes} {mesh.n_triangles}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def element_gradients(mesh: TriangleMesh, u: np.ndarray) -> ElementGradient:
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_nodes,):
        raise ValueError(f"field has shape {u.shape}, mesh has {mesh.n_nodes} nodes")
    area = mesh.areas
    if np.any(area <= np.finfo(float).tiny):
        raise DegenerateTriangleError("zero-area triangle")
    grad = np.einsum("tik,ti->tk", mesh.basis_gradients, u[mesh.triangles])
    return ElementGradient(grad, area)


def lumped_mass_integrate(mesh: TriangleMesh, f, u: np.ndarray) -> float:
    """Vertex-rule quadrature of ``integral f(u) dx``."""
    vals = np.asarray(f(np.asarray(u, dtype=float)), dtype=float)
    vals = np.broadcast_to(vals, (mesh.n_nodes,))
    if not np.all(np.isfinite(vals)):
        raise ValueError("integrand is not finite at every node")
    return float(mesh.lumped_mass @ vals)


def vertex_average(mesh: TriangleMesh, c: np.ndarray) -> np.ndarray:
    """Per-triangle mean of a nodal coefficient."""
    return np.asarray(c, dtype=float)[mesh.triangles].mean(axis=1)


def assemble_stiffness(mesh: TriangleMesh, coeff: np.ndarray) -> sp.csr_matrix:
    """Global matrix of ``integral grad(phi_i) . K_T grad(phi_j)``.

    ``coeff`` is a per-triangle scalar (T,) or matrix (T, 2, 2); triangle
    areas are applied here.
    """
    B = mesh.basis_gradients
    coeff = np.asarray(coeff, dtype=float)
    if coeff.ndim == 1:
        local = coeff[:, None, None] * np.einsum("tik,tjk->tij", B, B)
    else:
        local = np.einsum("tik,tkl,tjl->tij", B, coeff, B)
    local *= mesh.areas[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def solve_dirichlet(mesh: TriangleMesh, K: sp.spmatrix, boundary_values, rhs=None) -> np.ndarray:
    """Solve ``K u = rhs`` at interior nodes with ``u = boundary_values`` on the boundary."""
    u = np.zeros(mesh.n_nodes)
    u[mesh.boundary_nodes] = boundary_values
    inner, bnd = mesh.interior_nodes, mesh.boundary_nodes
    if inner.size == 0:
        return u
    K = sp.csr_matrix(K)
    b = -(K[inner][:, bnd] @ u[bnd])
    if rhs is not None:
        b = b + np.asarray(rhs, dtype=float)[inner]
    A = K[inner][:, inner].tocsc()
    x = spsolve(A, b)
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("singular interior system")
    u[inner] = x
    return u


def harmonic_extension(mesh: TriangleMesh, h: np.ndarray) -> np.ndarray:
    """Discrete harmonic (unit Laplacian) extension of a boundary trace."""
    K = assemble_stiffness(mesh, np.ones(mesh.n_triangles))
    return solve_dirichlet(mesh, K, h)

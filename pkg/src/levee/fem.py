"""Quadratic (6-node) triangle machinery shared by the seepage and mechanics
solvers: node numbering, shape functions, quadrature and fast sparse assembly.

Corner nodes keep the linear mesh numbering; edge midpoints follow.  Local
node order is the three corners, then the midpoints of edges 0-1, 1-2, 2-0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh

# Symmetric quadrature on the reference triangle, weights sum to 1/2.
QUAD3 = (np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]), np.full(3, 1 / 6))

_a, _b = 0.445948490915965, 0.091576213509771
_wa, _wb = 0.223381589678011 / 2, 0.109951743655322 / 2
QUAD6 = (np.array([[_a, _a], [1 - 2 * _a, _a], [_a, 1 - 2 * _a],
                   [_b, _b], [1 - 2 * _b, _b], [_b, 1 - 2 * _b]]),
         np.array([_wa, _wa, _wa, _wb, _wb, _wb]))


def p2_shape(xi, eta):
    """P2 shape functions at reference points; returns (..., 6)."""
    l1 = 1.0 - xi - eta
    l2, l3 = xi, eta
    return np.stack([l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), l3 * (2 * l3 - 1),
                     4 * l1 * l2, 4 * l2 * l3, 4 * l3 * l1], axis=-1)


def p2_shape_bary(lam):
    """P2 shape functions from barycentric coordinates (..., 3)."""
    l1, l2, l3 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack([l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), l3 * (2 * l3 - 1),
                     4 * l1 * l2, 4 * l2 * l3, 4 * l3 * l1], axis=-1)


def p1_shape(xi, eta):
    return np.stack([1.0 - xi - eta, xi, eta], axis=-1)


def p1_dshape(xi, eta):
    one = np.ones_like(np.asarray(xi, dtype=float))
    d = np.stack([np.stack([-one, -one], -1), np.stack([one, 0 * one], -1),
                  np.stack([0 * one, one], -1)], axis=-2)
    return d


def p2_dshape(xi, eta):
    """Reference derivatives (..., 6, 2)."""
    l1 = 1.0 - xi - eta
    l2, l3 = xi, eta
    dxi = np.stack([-(4 * l1 - 1), 4 * l2 - 1, np.zeros_like(xi),
                    4 * (l1 - l2), 4 * l3, -4 * l3], axis=-1)
    deta = np.stack([-(4 * l1 - 1), np.zeros_like(xi), 4 * l3 - 1,
                     -4 * l2, 4 * l2, 4 * (l1 - l3)], axis=-1)
    return np.stack([dxi, deta], axis=-1)


@dataclass
class P2Space:
    """Quadratic nodal space on a linear triangle mesh."""

    mesh: Mesh
    nodes: np.ndarray
    cells: np.ndarray
    edge_mid: dict

    @property
    def n(self) -> int:
        return len(self.nodes)

    def boundary_nodes(self, tag: str, yield_to: tuple = ()) -> np.ndarray:
        """Corner and midpoint nodes on boundary edges with ``tag``.

        Corners shared with a differently tagged edge follow the mesh's corner
        rule, except that corners owned by a tag in ``yield_to`` are claimed.
        """
        owner = self.mesh.node_tags()
        ids = set()
        for (a, b), t in zip(self.mesh.boundary_edges, self.mesh.boundary_tags):
            if t != tag:
                continue
            mid = self.edge_mid[(min(a, b), max(a, b))]
            if mid >= 0:
                ids.add(mid)
            for v in (a, b):
                if owner.get(int(v)) == tag or owner.get(int(v)) in yield_to:
                    ids.add(int(v))
        return np.array(sorted(ids), dtype=np.int64)

    def boundary_edges3(self, tag: str) -> np.ndarray:
        """Quadratic boundary edges (start, end, mid) with ``tag``."""
        out = [(a, b, self.edge_mid[(min(a, b), max(a, b))])
               for (a, b), t in zip(self.mesh.boundary_edges, self.mesh.boundary_tags) if t == tag]
        return np.array(out, dtype=np.int64).reshape(-1, 3)

    @property
    def order(self) -> int:
        return 2 if self.cells.shape[1] == 6 else 1

    def shape_at(self, x: float, y: float):
        """(cell id, shape values) for a physical point."""
        from .mesh import locate_point

        tri, lam = locate_point(self.mesh, x, y)
        lam = np.asarray(lam, dtype=float)
        return tri, (p2_shape_bary(lam) if self.order == 2 else lam)

    def interpolate(self, values: np.ndarray, x: float, y: float) -> float:
        tri, N = self.shape_at(x, y)
        return float(N @ values[self.cells[tri]])


def p1_space(mesh: Mesh) -> P2Space:
    """Linear space sharing the P2Space interface (midpoint map still built
    so boundary queries work; midpoints are simply never referenced)."""
    edge_mid = {}
    for a, b in mesh.boundary_edges:
        edge_mid[(min(a, b), max(a, b))] = -1
    return P2Space(mesh=mesh, nodes=mesh.nodes.copy(), cells=mesh.triangles.astype(np.int64),
                   edge_mid=edge_mid)


def lagrange_space(mesh: Mesh, order: int = 2) -> P2Space:
    if order not in (1, 2):
        raise ValueError(f"element order must be 1 or 2, got {order}")
    return p2_space(mesh) if order == 2 else p1_space(mesh)


def p2_space(mesh: Mesh) -> P2Space:
    tris = mesh.triangles
    n0 = mesh.n_nodes
    pairs = np.sort(tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 3, 2), axis=2)
    flat = pairs.reshape(-1, 2)
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    mid_ids = n0 + inv.reshape(-1, 3)
    mids = 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])
    nodes = np.vstack([mesh.nodes, mids])
    cells = np.hstack([tris, mid_ids]).astype(np.int64)
    edge_mid = {(int(a), int(b)): n0 + k for k, (a, b) in enumerate(uniq)}
    return P2Space(mesh=mesh, nodes=nodes, cells=cells, edge_mid=edge_mid)


@dataclass
class ElementGeometry:
    """Per element and quadrature point: physical gradients, shape values,
    integration weights (|J| w) and point coordinates."""

    N: np.ndarray       # (q, k)
    dN: np.ndarray      # (M, q, k, 2)
    w: np.ndarray       # (M, q)
    xq: np.ndarray      # (M, q, 2)


def element_geometry(space: P2Space, rule=QUAD3) -> ElementGeometry:
    pts, wts = rule
    if space.order == 2:
        N = p2_shape(pts[:, 0], pts[:, 1])
        dref = p2_dshape(pts[:, 0], pts[:, 1])      # (q, 6, 2)
    else:
        N = p1_shape(pts[:, 0], pts[:, 1])
        dref = p1_dshape(pts[:, 0], pts[:, 1])
    corners = space.nodes[space.cells[:, :3]]        # (M, 3, 2)
    J = np.stack([corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]], axis=2)
    # J[:, i, j] = d x_i / d xi_j
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 0, 1] = -J[:, 0, 1] / det
    inv[:, 1, 0] = -J[:, 1, 0] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    # dN/dx_k = sum_j dN/dxi_j * dxi_j/dx_k
    dN = np.einsum("qaj,mjk->mqak", dref, inv)
    w = np.abs(det)[:, None] * wts[None, :]
    xq = np.einsum("qa,mad->mqd", N, space.nodes[space.cells])
    return ElementGeometry(N=N, dN=dN, w=w, xq=xq)


class Assembler:
    """Scatter element matrices into a fixed CSR pattern.

    ``dofs`` is (M, k) global dof numbers per element.  Assembly is a single
    bincount over precomputed positions, deterministic for fixed inputs.
    """

    def __init__(self, dofs: np.ndarray, n: int):
        self.dofs = np.asarray(dofs, dtype=np.int64)
        self.n = n
        k = self.dofs.shape[1]
        rows = np.repeat(self.dofs, k, axis=1).ravel()
        cols = np.tile(self.dofs, (1, k)).ravel()
        pattern = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        pattern.sum_duplicates()
        pattern.sort_indices()
        self.indptr = pattern.indptr
        self.indices = pattern.indices
        # position of each (row, col) entry inside the CSR data array
        pos = np.empty(len(rows), dtype=np.int64)
        order = np.lexsort((cols, rows))
        r_sorted, c_sorted = rows[order], cols[order]
        key_sorted = r_sorted * n + c_sorted
        csr_rows = np.repeat(np.arange(n), np.diff(self.indptr))
        csr_key = csr_rows * n + self.indices
        pos[order] = np.searchsorted(csr_key, key_sorted)
        self.pos = pos

    def matrix(self, ke: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.pos, weights=ke.ravel(), minlength=len(self.indices))
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()),
                             shape=(self.n, self.n))

    def vector(self, fe: np.ndarray) -> np.ndarray:
        return np.bincount(self.dofs.ravel(), weights=fe.ravel(), minlength=self.n)


def solve_dirichlet(A: sp.csr_matrix, b: np.ndarray, fixed: np.ndarray, values: np.ndarray):
    """Solve A x = b with x[fixed] = values by elimination."""
    from scipy.sparse.linalg import spsolve

    n = A.shape[0]
    x = np.zeros(n)
    x[fixed] = values
    free = np.ones(n, dtype=bool)
    free[fixed] = False
    Aff = A[free][:, free]
    rhs = b[free] - A[free][:, fixed] @ values
    x[free] = spsolve(Aff.tocsc(), rhs)
    return x

"""Weighted P1 stiffness and mass matrices.

The bilinear forms are

    a(u, v) = int w_xx u_x v_x + w_yy u_y v_y + w_pot u v,
    m(u, v) = int w_mass u v,

in each patch's assembly coordinates. Flat patches have unit weights; tube
patches carry the flattened-metric weights. Weights are sampled at the three
edge midpoints of every triangle, which integrates quadratics exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from qwglab.geometry import PatchComplex, VertexShape, tube_domain
from qwglab.graph import CurvatureProfile
from qwglab.mesh import DIRICHLET, TriMesh, mesh_domain, tube_counts


@dataclass
class SparsePair:
    """Stiffness ``K`` and mass ``M`` on the free (non-Dirichlet) nodes."""

    K: sp.csr_matrix
    M: sp.csr_matrix
    dofs: np.ndarray
    n_nodes: int
    mesh: TriMesh = None

    @property
    def n(self):
        return self.K.shape[0]

    def to_nodal(self, x):
        """Scatter dof vectors (1-D or columns) to all nodes, zero on Dirichlet nodes."""
        x = np.asarray(x)
        out = np.zeros((self.n_nodes,) + x.shape[1:], dtype=x.dtype)
        out[self.dofs] = x
        return out

    def restrict(self, u):
        return np.asarray(u)[self.dofs]


def _midpoints(local):
    return np.stack(
        [
            0.5 * (local[:, 1] + local[:, 2]),
            0.5 * (local[:, 2] + local[:, 0]),
            0.5 * (local[:, 0] + local[:, 1]),
        ],
        axis=1,
    )


def _weights(mesh: TriMesh):
    """Per-triangle weights at the three midpoints, each of shape (T, 3)."""
    T = len(mesh.tris)
    wx = np.ones((T, 3))
    wy = np.ones((T, 3))
    wp = np.zeros((T, 3))
    wm = np.ones((T, 3))
    mids = _midpoints(mesh.local)
    for pi, p in enumerate(mesh.domain.patches):
        if p.coeff is None:
            continue
        sel = mesh.tri_patch == pi
        m = mids[sel]
        a, b, c, d = p.coeff.weights(m[..., 0], m[..., 1])
        wx[sel], wy[sel], wp[sel], wm[sel] = a, b, c, d
    return wx, wy, wp, wm


def _mass_blocks(area, w):
    """Element matrices of ``int w phi_i phi_j`` with midpoint weights ``w``."""
    T = len(area)
    E = np.empty((T, 3, 3))
    tot = w.sum(axis=1)
    for i in range(3):
        E[:, i, i] = (tot - w[:, i]) / 12.0
        for j in range(3):
            if j != i:
                E[:, i, j] = w[:, 3 - i - j] / 12.0
    return E * area[:, None, None]


def element_matrices(mesh: TriMesh, tri_mask=None):
    """Element stiffness (with potential) and mass blocks, shape (T, 3, 3)."""
    P = mesh.local
    x, y = P[..., 0], P[..., 1]
    # gradients of barycentric functions
    bx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    by = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    area = 0.5 * det
    bx = bx / det[:, None]
    by = by / det[:, None]
    wx, wy, wp, wm = _weights(mesh)
    mx = wx.mean(axis=1)
    my = wy.mean(axis=1)
    Ke = area[:, None, None] * (
        mx[:, None, None] * bx[:, :, None] * bx[:, None, :] + my[:, None, None] * by[:, :, None] * by[:, None, :]
    )
    Ke += _mass_blocks(area, wp)
    Me = _mass_blocks(area, wm)
    if tri_mask is not None:
        Ke = Ke * tri_mask[:, None, None]
        Me = Me * tri_mask[:, None, None]
    return Ke, Me


def _scatter(mesh, E):
    t = mesh.tris
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    N = mesh.n_nodes
    A = sp.coo_matrix((E.ravel(), (rows, cols)), shape=(N, N)).tocsr()
    A.sum_duplicates()
    return A


def assemble_full(mesh: TriMesh, tri_mask=None):
    """Global matrices over all nodes, boundary conditions not applied."""
    Ke, Me = element_matrices(mesh, tri_mask)
    return _scatter(mesh, Ke), _scatter(mesh, Me)


def assemble(mesh: TriMesh) -> SparsePair:
    """Stiffness and mass with Dirichlet nodes eliminated."""
    K, M = assemble_full(mesh)
    free = np.flatnonzero(mesh.node_tag != DIRICHLET)
    K = K[free][:, free]
    M = M[free][:, free]
    K = 0.5 * (K + K.T)
    M = 0.5 * (M + M.T)
    return SparsePair(K.tocsr(), M.tocsr(), free, mesh.n_nodes, mesh)


def assemble_flat(domain: PatchComplex, h: float) -> SparsePair:
    return assemble(mesh_domain(domain, h))


def assemble_mixed_dn(shape: VertexShape, h: float) -> SparsePair:
    """Dirichlet on the outer boundary, Neumann on the interfaces, unit scale."""
    cx = PatchComplex(shape.patches(scale=1.0, region="vertex", interface_tag="N"), 1.0, {"kind": "shape"})
    return assemble_flat(cx, h)


def assemble_tube(length: float, profile: CurvatureProfile, eps: float, h: float, ny=None, periodic=False):
    """Flattened tube on the reference rectangle, reference mesh width ``h``."""
    cx = tube_domain(length, profile, eps, periodic=periodic)
    nx, ny_auto = tube_counts(length, eps, h)
    ny = ny_auto if ny is None else int(ny)
    cx.patches[0].min_counts = (nx, ny)
    return assemble(mesh_domain(cx, 1e300))


def region_mass(mesh: TriMesh, prefix: str):
    """Full nodal mass matrix restricted to triangles whose region starts with ``prefix``."""
    _, M = assemble_full(mesh, mesh.tri_mask(prefix))
    return M


def dump_matrix(A, path):
    """Coordinate text format: ``nrows ncols nnz`` then ``i j value`` lines (0-based)."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    with open(path, "w") as fh:
        fh.write(f"{C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for i, j, v in zip(C.row[order], C.col[order], C.data[order]):
            fh.write(f"{i} {j} {v:.17g}\n")

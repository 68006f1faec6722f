"""Conforming triangulation of a patch complex.

Subdivision counts are shared through chains of equal sides (opposite sides of
a quad, all sides of a triangle, glued sides), each chain taking the largest
``ceil(length / h)`` among its members. Patches are then subdivided
independently and coincident nodes are merged, so the result is conforming
without any explicit edge bookkeeping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from qwglab.geometry import GeometryError, PatchComplex

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2


@dataclass
class TriMesh:
    """P1 mesh.

    Attributes
    ----------
    nodes : (N, 2) physical coordinates.
    tris : (T, 3) node indices.
    local : (T, 3, 2) vertex coordinates in the patch's assembly frame.
    tri_patch : (T,) patch index of each triangle.
    node_tag : (N,) ``INTERIOR``, ``DIRICHLET`` or ``NEUMANN``.
    patch_nodes : node indices per patch.
    grids : ``{patch index: (ny+1, nx+1) node index array}`` for quads;
        rows run along the first side, so a column is a transversal section.
    """

    nodes: np.ndarray
    tris: np.ndarray
    local: np.ndarray
    tri_patch: np.ndarray
    node_tag: np.ndarray
    patch_nodes: list
    grids: dict
    domain: PatchComplex
    counts: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return len(self.nodes)

    def dirichlet_nodes(self):
        return np.flatnonzero(self.node_tag == DIRICHLET)

    def free_nodes(self):
        return np.flatnonzero(self.node_tag != DIRICHLET)

    def region_of_tri(self):
        regions = np.array([p.region for p in self.domain.patches], dtype=object)
        return regions[self.tri_patch]

    def tri_mask(self, prefix):
        return np.array([r.startswith(prefix) for r in self.region_of_tri()], dtype=bool)

    def min_angle(self):
        """Smallest interior angle (degrees) in assembly coordinates."""
        P = self.local
        ang = []
        for i in range(3):
            a = P[:, (i + 1) % 3] - P[:, i]
            b = P[:, (i + 2) % 3] - P[:, i]
            cosv = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            ang.append(np.degrees(np.arccos(np.clip(cosv, -1.0, 1.0))))
        return float(np.min(ang))


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _side_counts(domain: PatchComplex, h: float, glued):
    sides = [(pi, si) for pi, p in enumerate(domain.patches) for si in range(len(p.corners))]
    index = {s: i for i, s in enumerate(sides)}
    uf = _UnionFind(len(sides))
    for pi, p in enumerate(domain.patches):
        if p.kind == "quad":
            uf.union(index[(pi, 0)], index[(pi, 2)])
            uf.union(index[(pi, 1)], index[(pi, 3)])
        else:
            uf.union(index[(pi, 0)], index[(pi, 1)])
            uf.union(index[(pi, 0)], index[(pi, 2)])
    for a, b in glued:
        uf.union(index[a], index[b])
    want = {}
    for pi, p in enumerate(domain.patches):
        for si in range(len(p.corners)):
            n = max(1, math.ceil(p.side_length(si) / h - 1e-9))
            if p.min_counts:
                n = max(n, int(p.min_counts[si % 2]))
            root = uf.find(index[(pi, si)])
            want[root] = max(want.get(root, 1), n)
    return {s: want[uf.find(index[s])] for s in sides}


def _quad_points(C, n, m):
    s = np.linspace(0.0, 1.0, n + 1)
    t = np.linspace(0.0, 1.0, m + 1)
    S, T = np.meshgrid(s, t)  # (m+1, n+1)
    S, T = S.ravel(), T.ravel()
    P = (
        ((1 - S) * (1 - T))[:, None] * C[0]
        + (S * (1 - T))[:, None] * C[1]
        + (S * T)[:, None] * C[2]
        + ((1 - S) * T)[:, None] * C[3]
    )
    return P


def _quad_tris(n, m):
    idx = np.arange((m + 1) * (n + 1)).reshape(m + 1, n + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    return np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)]), idx


def _tri_points(C, n):
    pts, lookup = [], {}
    for j in range(n + 1):
        for i in range(n + 1 - j):
            lookup[(i, j)] = len(pts)
            pts.append(C[0] + (i / n) * (C[1] - C[0]) + (j / n) * (C[2] - C[0]))
    tris = []
    for j in range(n):
        for i in range(n - j):
            tris.append((lookup[(i, j)], lookup[(i + 1, j)], lookup[(i, j + 1)]))
            if i + j < n - 1:
                tris.append((lookup[(i + 1, j)], lookup[(i + 1, j + 1)], lookup[(i, j + 1)]))
    side_sets = [
        [lookup[(i, 0)] for i in range(n + 1)],
        [lookup[(n - j, j)] for j in range(n + 1)],
        [lookup[(0, j)] for j in range(n, -1, -1)],
    ]
    return np.array(pts), np.array(tris, dtype=np.int64), side_sets


def mesh_domain(domain: PatchComplex, h: float, merge_tol=None) -> TriMesh:
    """Triangulate ``domain`` with target edge length ``h`` (physical units)."""
    if not h > 0.0:
        raise GeometryError("mesh size must be positive")
    glued = domain.glued_sides()
    glued_set = {s for pair in glued for s in pair}
    counts = _side_counts(domain, h, glued)

    all_phys, all_local, all_tris, tri_patch = [], [], [], []
    patch_ranges, grids_local, side_nodes = [], {}, []
    offset = 0
    for pi, p in enumerate(domain.patches):
        if p.kind == "quad":
            n, m = counts[(pi, 0)], counts[(pi, 1)]
            L = _quad_points(p.corners, n, m)
            T, grid = _quad_tris(n, m)
            grids_local[pi] = grid + offset
            sides = [grid[0, :], grid[:, -1], grid[-1, ::-1], grid[::-1, 0]]
        else:
            n = counts[(pi, 0)]
            L, T, sides = _tri_points(p.corners, n)
        X = p.to_physical(L)
        all_phys.append(X)
        all_local.append(L)
        all_tris.append(T + offset)
        tri_patch.append(np.full(len(T), pi))
        patch_ranges.append(np.arange(offset, offset + len(L)))
        side_nodes.append([np.asarray(s) + offset for s in sides])
        offset += len(L)

    raw_phys = np.vstack(all_phys)
    raw_local = np.vstack(all_local)
    raw_tris = np.vstack(all_tris)
    tri_patch = np.concatenate(tri_patch)

    # merge coincident nodes
    if merge_tol is None:
        merge_tol = 1e-7 * min(h, domain.eps)
    uf = _UnionFind(len(raw_phys))
    for a, b in cKDTree(raw_phys).query_pairs(merge_tol, output_type="ndarray"):
        uf.union(int(a), int(b))
    for pi, p in enumerate(domain.patches):
        if "P" in p.side_tags:  # periodic tube: glue last column to first
            g = grids_local[pi]
            for a, b in zip(g[:, 0], g[:, -1]):
                uf.union(int(a), int(b))
    roots = np.array([uf.find(i) for i in range(len(raw_phys))])
    uniq, new_id = np.unique(roots, return_inverse=True)

    nodes = raw_phys[uniq]
    tris = new_id[raw_tris]
    local = raw_local[raw_tris]

    tag = np.zeros(len(nodes), dtype=np.int8)
    for pi, p in enumerate(domain.patches):
        for si, t in enumerate(p.side_tags):
            if (pi, si) in glued_set or t == "P":
                continue
            if t == "I":
                raise GeometryError(f"patch {pi} ({p.region}) side {si} should be glued but is free")
            ids = new_id[side_nodes[pi][si]]
            if t == "D":
                tag[ids] = DIRICHLET
            elif t == "N":
                tag[ids] = np.where(tag[ids] == DIRICHLET, DIRICHLET, NEUMANN)
    # Dirichlet wins wherever a node sits on any Dirichlet side
    for pi, p in enumerate(domain.patches):
        for si, t in enumerate(p.side_tags):
            if t == "D" and (pi, si) not in glued_set:
                tag[new_id[side_nodes[pi][si]]] = DIRICHLET

    areas = _signed_area(local)
    if np.any(areas <= 0.0):
        raise GeometryError("inverted triangle produced; check patch orientation")

    return TriMesh(
        nodes=nodes,
        tris=tris,
        local=local,
        tri_patch=tri_patch,
        node_tag=tag,
        patch_nodes=[np.unique(new_id[r]) for r in patch_ranges],
        grids={pi: new_id[g] for pi, g in grids_local.items()},
        domain=domain,
        counts=counts,
    )


def _signed_area(local):
    a = local[:, 1] - local[:, 0]
    b = local[:, 2] - local[:, 0]
    return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def tube_counts(length, eps, h, ny_min=8, aspect=4.0):
    """Subdivisions ``(nx, ny)`` of a tube rectangle for reference mesh width ``h``.

    ``ny`` covers ``(-1, 1)``; ``nx`` is raised until the physical aspect
    ratio ``hx / (eps hy)`` is at most ``aspect``.
    """
    ny = max(ny_min, math.ceil(2.0 / h - 1e-9))
    nx = max(math.ceil(length / h - 1e-9), math.ceil(length / (aspect * eps * 2.0 / ny) - 1e-9))
    return nx, ny

"""Metric graphs and the decoupled limit operator.

The limit operator acts edge by edge as ``-d^2/dx^2 - kappa_j(x)^2 / 4`` on
``(0, l_j)`` with Dirichlet conditions at both ends, so its spectrum is the
sorted union of the per-edge spectra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from qwglab.eigen import lowest_eigenpairs


class GraphError(ValueError):
    """Invalid graph data or an operation applied outside its domain."""


@dataclass(frozen=True)
class CrossSection:
    """The reference cross-section ``F = (-1, 1)`` with Dirichlet ends."""

    half_width: float = 1.0

    @property
    def lambda1(self) -> float:
        return math.pi**2 / 4.0

    @property
    def lambda2(self) -> float:
        return math.pi**2

    def phi(self, y):
        """First normalized transversal mode ``cos(pi y / 2)``."""
        return np.cos(0.5 * math.pi * np.asarray(y, dtype=float))


CROSS_SECTION = CrossSection()


@dataclass(frozen=True)
class CurvatureProfile:
    """Signed curvature along an edge.

    ``kind`` is ``"zero"``, ``"constant"`` (``amplitude`` is the value) or
    ``"bump"``: ``a (1 - s^2)^3`` with ``s = (x - center) / half_width`` on
    ``|s| <= 1`` and zero elsewhere. The bump is C^2 and its derivatives are
    evaluated from closed forms.
    """

    kind: str = "zero"
    amplitude: float = 0.0
    center: float = 0.0
    half_width: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "bump"):
            raise GraphError(f"unknown curvature kind {self.kind!r}")
        if self.kind == "bump" and not self.half_width > 0.0:
            raise GraphError("bump half-width must be positive")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, c):
        return cls("constant", amplitude=float(c))

    @classmethod
    def bump(cls, center, half_width, amplitude):
        return cls("bump", float(amplitude), float(center), float(half_width))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.amplitude == 0.0

    @property
    def support(self):
        """Closed support interval, ``None`` when the curvature vanishes."""
        if self.is_zero:
            return None
        if self.kind == "constant":
            return (-math.inf, math.inf)
        return (self.center - self.half_width, self.center + self.half_width)

    def sup_abs(self) -> float:
        return 0.0 if self.is_zero else abs(self.amplitude)

    def derivative_bounds(self):
        """Suprema of ``|kappa|, |kappa'|, |kappa''|``."""
        if self.is_zero:
            return (0.0, 0.0, 0.0)
        if self.kind == "constant":
            return (abs(self.amplitude), 0.0, 0.0)
        s = np.linspace(-1.0, 1.0, 4001)
        x = self.center + self.half_width * s
        k, k1, k2 = self.triple(x)
        return (float(np.max(np.abs(k))), float(np.max(np.abs(k1))), float(np.max(np.abs(k2))))

    def triple(self, x):
        """``(kappa, kappa', kappa'')`` at ``x`` (scalar or array)."""
        x = np.asarray(x, dtype=float)
        if self.is_zero:
            z = np.zeros_like(x)
            return z, z.copy(), z.copy()
        if self.kind == "constant":
            return np.full_like(x, self.amplitude), np.zeros_like(x), np.zeros_like(x)
        a, w = self.amplitude, self.half_width
        s = (x - self.center) / w
        inside = np.abs(s) <= 1.0
        q = np.where(inside, 1.0 - s * s, 0.0)
        k = a * q**3
        k1 = -6.0 * a * s * q**2 / w
        k2 = -6.0 * a * q * (1.0 - 5.0 * s * s) / w**2
        k1 = np.where(inside, k1, 0.0)
        k2 = np.where(inside, k2, 0.0)
        return k, k1, k2

    def turning(self, x):
        """Tangent turning angle ``int_0^x kappa``."""
        x = np.asarray(x, dtype=float)
        if self.is_zero:
            return np.zeros_like(x)
        if self.kind == "constant":
            return self.amplitude * x
        w = self.half_width

        def prim(s):
            s = np.clip(s, -1.0, 1.0)
            return s - s**3 + 0.6 * s**5 - s**7 / 7.0

        s = (x - self.center) / w
        s0 = (0.0 - self.center) / w
        return self.amplitude * w * (prim(s) - prim(s0))

    def to_dict(self):
        if self.kind == "zero":
            return {"kind": "zero"}
        if self.kind == "constant":
            return {"kind": "constant", "value": self.amplitude}
        return {
            "kind": "bump",
            "center": self.center,
            "half_width": self.half_width,
            "amplitude": self.amplitude,
        }


@dataclass(frozen=True)
class Vertex:
    id: str
    pos: tuple


@dataclass(frozen=True)
class Edge:
    id: str
    start: str
    end: str
    length: float
    curvature: CurvatureProfile = field(default_factory=CurvatureProfile.zero)


@dataclass(frozen=True)
class MetricGraph:
    vertices: tuple
    edges: tuple

    def __init__(self, vertices: Sequence, edges: Sequence):
        vs = tuple(v if isinstance(v, Vertex) else Vertex(str(v[0]), tuple(map(float, v[1]))) for v in vertices)
        object.__setattr__(self, "vertices", vs)
        object.__setattr__(self, "edges", tuple(edges))

    @property
    def vertex_map(self):
        return {v.id: v for v in self.vertices}

    @property
    def edge_map(self):
        return {e.id: e for e in self.edges}

    def incident(self, vid):
        """Edge ids incident to ``vid`` (the set J_k), in edge order."""
        return [e.id for e in self.edges if vid in (e.start, e.end)]

    def degree(self, vid) -> int:
        return sum((e.start == vid) + (e.end == vid) for e in self.edges)

    @property
    def is_straight(self) -> bool:
        return all(e.curvature.is_zero for e in self.edges)

    @classmethod
    def star(cls, lengths, directions=None, curvatures=None):
        """Star graph with center ``"c"`` and leaves ``"v0", "v1", ...``."""
        n = len(lengths)
        if directions is None:
            directions = [2.0 * math.pi * j / n for j in range(n)]
        curvatures = curvatures or [CurvatureProfile.zero()] * n
        verts = [Vertex("c", (0.0, 0.0))]
        edges = []
        for j, (ell, ang, kap) in enumerate(zip(lengths, directions, curvatures)):
            verts.append(Vertex(f"v{j}", (ell * math.cos(ang), ell * math.sin(ang))))
            edges.append(Edge(f"e{j}", "c", f"v{j}", float(ell), kap))
        return cls(verts, edges)


def validate_graph(g: MetricGraph, embedded: bool = True) -> MetricGraph:
    """Return ``g`` unchanged if every structural invariant holds."""
    vmap = {}
    for v in g.vertices:
        if v.id in vmap:
            raise GraphError(f"duplicate vertex id {v.id!r}")
        vmap[v.id] = v
    seen = set()
    for e in g.edges:
        if e.id in seen:
            raise GraphError(f"duplicate edge id {e.id!r}")
        seen.add(e.id)
        for end in (e.start, e.end):
            if end not in vmap:
                raise GraphError(f"edge {e.id!r}: dangling endpoint {end!r}")
        if not e.length > 0.0:
            raise GraphError(f"edge {e.id!r}: nonpositive length {e.length}")
        kap = e.curvature
        if kap.kind == "constant" and not kap.is_zero:
            raise GraphError(f"edge {e.id!r}: constant curvature is only allowed for closed tubes")
        sup = kap.support
        if sup is not None and not (sup[0] > 0.0 and sup[1] < e.length):
            raise GraphError(f"edge {e.id!r}: curvature support touches endpoint")
        if embedded:
            a = np.asarray(vmap[e.start].pos)
            b = np.asarray(vmap[e.end].pos)
            if np.linalg.norm(b - a) > e.length * (1.0 + 1e-12):
                raise GraphError(f"edge {e.id!r}: endpoint distance exceeds its length")
    return g


@dataclass
class LimitSpectrum:
    """Sorted eigenvalues with their edge id and per-edge mode index (1-based)."""

    entries: list
    count: int

    @property
    def values(self) -> np.ndarray:
        return np.array([v for v, _, _ in self.entries], dtype=float)

    def __len__(self):
        return len(self.entries)


def _merge(entries, count):
    # by value, ties broken by (edge id, mode index)
    entries = sorted(entries, key=lambda t: (t[0], t[1], t[2]))
    return LimitSpectrum(entries[:count], count)


def straight_limit_spectrum(g: MetricGraph, count: int) -> LimitSpectrum:
    """Closed-form spectrum ``(n pi / l_j)^2`` of a graph with straight edges."""
    if not g.is_straight:
        raise GraphError("straight_limit_spectrum needs zero curvature on every edge")
    if count < 0:
        raise GraphError("count must be nonnegative")
    entries = []
    for e in g.edges:
        for n in range(1, count + 1):
            entries.append(((n * math.pi / e.length) ** 2, e.id, n))
    return _merge(entries, count)


def p1_pair_1d(length, n, potential=None):
    """P1 stiffness (+ potential) and consistent mass on a uniform grid of ``(0, length)``.

    Dirichlet ends are eliminated, leaving ``n - 1`` interior unknowns. The
    potential is integrated with two-point Gauss quadrature per element.
    """
    h = length / n
    m = n - 1
    main = np.full(m, 2.0 / h)
    off = np.full(m - 1, -1.0 / h)
    K = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    M = sp.diags([np.full(m - 1, h / 6.0), np.full(m, 4.0 * h / 6.0), np.full(m - 1, h / 6.0)], [-1, 0, 1])
    K = K.tocsr()
    if potential is not None:
        g = 0.5 / math.sqrt(3.0)
        left = np.arange(n) * h
        xq = np.concatenate([left + (0.5 - g) * h, left + (0.5 + g) * h])
        vq = np.asarray(potential(xq), dtype=float)
        v1, v2 = vq[:n], vq[n:]
        # hat values at the Gauss points: left node gets (0.5+g), right (0.5-g) at xq1
        a, b = 0.5 + g, 0.5 - g
        w = 0.5 * h
        ell = w * (v1 * a * a + v2 * b * b)
        err = w * (v1 * b * b + v2 * a * a)
        lr = w * (v1 * a * b + v2 * b * a)
        # element e couples node e (left) and node e+1 (right); interior index = node - 1
        diag = np.zeros(n + 1)
        diag[:-1] += ell
        diag[1:] += err
        P = sp.diags([lr[1:-1], diag[1:-1], lr[1:-1]], [-1, 0, 1])
        K = K + P
    return sp.csr_matrix(K), sp.csr_matrix(M)


def fd_pair_1d(length, n):
    """Second-order central-difference pair ``K = tridiag(-1, 2, -1) / h``, ``M = h I``."""
    h = length / n
    m = n - 1
    K = sp.diags([np.full(m - 1, -1.0 / h), np.full(m, 2.0 / h), np.full(m - 1, -1.0 / h)], [-1, 0, 1])
    M = sp.identity(m) * h
    return sp.csr_matrix(K), sp.csr_matrix(M)


def limit_eigenpairs_1d(e: Edge, n: int, count: int, method: str = "p1", seed: int = 0):
    """Eigenpairs of ``-d^2/dx^2 - kappa^2/4`` on ``(0, l)``.

    Returns ``(values, grid, vectors)`` with vectors padded by the Dirichlet
    zeros, one column per eigenvalue, normalized in ``L^2(0, l)``.
    """
    if n < count + 2:
        raise GraphError(f"grid size n={n} too small for count={count}")
    if method == "p1":
        kap = e.curvature
        pot = None if kap.is_zero else (lambda x: -0.25 * kap.triple(x)[0] ** 2)
        K, M = p1_pair_1d(e.length, n, pot)
    elif method == "fd":
        if not e.curvature.is_zero:
            raise GraphError("finite-difference variant is only defined for straight edges")
        K, M = fd_pair_1d(e.length, n)
    else:
        raise GraphError(f"unknown discretization {method!r}")
    res = lowest_eigenpairs((K, M), count, seed=seed, sigma=0.0)
    grid = np.linspace(0.0, e.length, n + 1)
    vecs = np.zeros((n + 1, count))
    vecs[1:-1] = res.eigenvectors
    return res.eigenvalues, grid, vecs


def limit_spectrum_1d(e: Edge, n: int, count: int, method: str = "p1"):
    """Lowest ``count`` eigenvalues of the discretized edge operator."""
    if count == 0:
        return []
    vals, _, _ = limit_eigenpairs_1d(e, n, count, method)
    return [float(v) for v in vals]


def merged_limit_spectrum(g: MetricGraph, n: int, count: int) -> LimitSpectrum:
    """Sorted union of per-edge limit spectra (straight edges use the closed form).

    ``n`` is the number of grid intervals used on each curved edge.
    """
    validate_graph(g, embedded=False)
    if count == 0:
        return LimitSpectrum([], 0)
    entries = []
    for e in g.edges:
        if e.curvature.is_zero:
            vals = [(k * math.pi / e.length) ** 2 for k in range(1, count + 1)]
        else:
            vals = limit_spectrum_1d(e, n, count)
        entries.extend((v, e.id, k + 1) for k, v in enumerate(vals))
    return _merge(entries, count)


def eta_bound(lambda_k: float, delta1: float, delta2: float, Lambda: float = 0.0) -> float:
    """Comparison defect ``(lam d1 + d2)(1 + Lam + lam) / (1 - (1 + Lam + lam) d1)``."""
    for name, val in (("lambda_k", lambda_k), ("delta1", delta1), ("delta2", delta2), ("Lambda", Lambda)):
        if val < 0.0:
            raise GraphError(f"{name} must be nonnegative, got {val}")
    scale = 1.0 + Lambda + lambda_k
    if not delta1 < 1.0 / scale:
        raise GraphError(f"delta1={delta1} violates delta1 < 1/(1 + Lambda + lambda_k) = {1.0 / scale}")
    return (lambda_k * delta1 + delta2) * scale / (1.0 - scale * delta1)

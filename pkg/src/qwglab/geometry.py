"""Thin domains around metric graphs as complexes of straight-sided patches.

Every patch is a bilinear quadrilateral or an affine triangle given by its
corners in *assembly coordinates*. Flat patches are assembled in physical
coordinates. Tube patches (curved edges) are assembled on the reference
rectangle ``(x0, x1) x (-1, 1)`` with the coefficient fields of the flattened
metric; their ``embed`` map sends reference points to the plane and is only
used to glue them to neighbouring patches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from shapely.geometry import Polygon

from qwglab.graph import CurvatureProfile, MetricGraph, validate_graph


class GeometryError(ValueError):
    """Geometric construction impossible for the given parameters."""


# ---------------------------------------------------------------------------
# curvature and the flattened tube form


def curvature_triple(profile: CurvatureProfile, x):
    return profile.triple(x)


def K_eps(triple, y, eps):
    """Curvature induced potential of the flattened tube at ``(x, y)``.

    ``triple`` holds ``(kappa, kappa', kappa'')`` at ``x``; arrays broadcast.
    """
    k, k1, k2 = (np.asarray(t, dtype=float) for t in triple)
    y = np.asarray(y, dtype=float)
    J = 1.0 + eps * y * k
    if np.any(J <= 0.0):
        raise GeometryError("1 + eps*y*kappa must stay positive")
    out = -(k**2) / (4.0 * J**2) + eps * y * k2 / (2.0 * J**3) - 5.0 * eps**2 * y**2 * k1**2 / (4.0 * J**4)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class TubeCoefficients:
    """Weights of the flattened form on ``(0, l) x (-1, 1)``."""

    eps: float
    profile: CurvatureProfile

    def weights(self, x, y):
        """``(w_xx, w_yy, w_potential, w_mass)`` at reference points."""
        k, k1, k2 = self.profile.triple(x)
        J = 1.0 + self.eps * np.asarray(y) * k
        if np.any(J <= 0.0):
            raise GeometryError("tube metric degenerates; eps too large for this curvature")
        wx = self.eps / J**2
        wy = np.full_like(wx, 1.0 / self.eps)
        wp = self.eps * K_eps((k, k1, k2), y, self.eps)
        wm = np.full_like(wx, self.eps)
        return wx, wy, wp, wm


def eps_max(profile: CurvatureProfile) -> float:
    sup = profile.sup_abs()
    return math.inf if sup == 0.0 else 1.0 / (2.0 * sup)


# ---------------------------------------------------------------------------
# embedded curves


_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


class Curve:
    """Arclength-parametrized planar curve with prescribed curvature.

    The normal is the right-hand one, ``n = (t_y, -t_x)``, so that the
    pulled-back metric reads ``(1 + eps y kappa)^2 dx^2 + eps^2 dy^2``.
    """

    def __init__(self, start, theta0, profile: CurvatureProfile, length, cells=256):
        self.start = np.asarray(start, dtype=float)
        self.theta0 = float(theta0)
        self.profile = profile
        self.length = float(length)
        self._knots = np.linspace(0.0, self.length, cells + 1)
        incr = self._integrate(self._knots[:-1], self._knots[1:])
        self._cum = np.vstack([np.zeros(2), np.cumsum(incr, axis=0)])

    def theta(self, x):
        return self.theta0 + self.profile.turning(x)

    def _integrate(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        mid = 0.5 * (a + b)
        half = 0.5 * (b - a)
        xs = mid[:, None] + half[:, None] * _GL_X[None, :]
        th = self.theta(xs)
        cx = (np.cos(th) * _GL_W).sum(axis=1) * half
        cy = (np.sin(th) * _GL_W).sum(axis=1) * half
        return np.stack([cx, cy], axis=1)

    def point(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.clip(np.searchsorted(self._knots, x, side="right") - 1, 0, len(self._knots) - 2)
        base = self._cum[idx] + self._integrate(self._knots[idx], x)
        return self.start + base

    def tangent(self, x):
        th = self.theta(np.atleast_1d(np.asarray(x, dtype=float)))
        return np.stack([np.cos(th), np.sin(th)], axis=1)

    def normal(self, x):
        t = self.tangent(x)
        return np.stack([t[:, 1], -t[:, 0]], axis=1)

    def psi(self, x, y, eps):
        """Tube chart ``gamma(x) + eps y n(x)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return self.point(x) + eps * y[:, None] * self.normal(x)

    @classmethod
    def through(cls, start, end, profile, length):
        """Curve starting at ``start`` whose chord points at ``end``."""
        probe = cls((0.0, 0.0), 0.0, profile, length)
        chord = probe.point(length)[0]
        want = np.asarray(end, dtype=float) - np.asarray(start, dtype=float)
        theta0 = math.atan2(want[1], want[0]) - math.atan2(chord[1], chord[0])
        return cls(start, theta0, profile, length)


# ---------------------------------------------------------------------------
# patches


def _shoelace(P):
    P = np.asarray(P, dtype=float)
    x, y = P[:, 0], P[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@dataclass
class Patch:
    """A quad (4 corners) or triangle (3 corners), counterclockwise.

    ``side_tags[i]`` is the boundary condition of the side from corner ``i``
    to corner ``i + 1`` when that side is not glued to another patch:
    ``"D"`` Dirichlet, ``"N"`` Neumann, ``"I"`` must be glued.
    """

    corners: np.ndarray
    region: str
    side_tags: tuple
    coeff: Optional[TubeCoefficients] = None
    embed: Optional[Callable] = None
    min_counts: tuple = ()
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.corners = np.asarray(self.corners, dtype=float)
        if len(self.side_tags) != len(self.corners):
            raise GeometryError("one boundary tag per side required")

    @property
    def kind(self):
        return "quad" if len(self.corners) == 4 else "tri"

    def to_physical(self, P):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if self.embed is None:
            return P
        return self.embed(P)

    @property
    def physical_corners(self):
        return self.to_physical(self.corners)

    def side_physical(self, i, samples=2):
        a = self.corners[i]
        b = self.corners[(i + 1) % len(self.corners)]
        t = np.linspace(0.0, 1.0, samples)[:, None]
        return self.to_physical(a[None, :] * (1.0 - t) + b[None, :] * t)

    def side_length(self, i):
        samples = 65 if self.embed is not None else 2
        P = self.side_physical(i, samples)
        return float(np.sum(np.linalg.norm(np.diff(P, axis=0), axis=1)))

    def area(self):
        """Physical area (exact for flat patches and for tube rectangles)."""
        if self.coeff is None:
            return abs(_shoelace(self.corners))
        # int (1 + eps y kappa) dy over (-1, 1) is 2 whatever kappa is
        return self.coeff.eps * abs(_shoelace(self.corners))

    def jacobian_signs(self):
        C = self.corners
        n = len(C)
        return [
            float(np.cross(C[(i + 1) % n] - C[i], C[(i - 1) % n] - C[i])) for i in range(n)
        ]


@dataclass
class PatchComplex:
    patches: list
    eps: float
    meta: dict = field(default_factory=dict)

    def area(self) -> float:
        return float(sum(p.area() for p in self.patches))

    def regions(self):
        return sorted({p.region for p in self.patches})

    def glued_sides(self, tol=None):
        """Pairs ``((patch, side), (patch, side))`` whose physical endpoints coincide."""
        scale = max(self.eps, 1e-300)
        tol = 1e-9 * scale if tol is None else tol
        table = {}
        pairs = []
        for pi, p in enumerate(self.patches):
            for si in range(len(p.corners)):
                ends = p.side_physical(si)
                key = tuple(sorted(tuple(np.round(e / tol).astype(np.int64)) for e in ends))
                if key in table:
                    pairs.append((table.pop(key), (pi, si)))
                else:
                    table[key] = (pi, si)
        return pairs

    def dump_text(self) -> str:
        """One line per patch: region tag then the physical corners."""
        lines = []
        for p in self.patches:
            C = p.physical_corners
            if len(C) == 3:
                C = np.vstack([C, C[-1:]])
            coords = " ".join(f"{x:.17g} {y:.17g}" for x, y in C)
            lines.append(f"{p.region} {coords}")
        return "\n".join(lines) + "\n"


def _fan(points, center, region, tags, info=None):
    """Triangles ``(center, p_i, p_{i+1})``; only the polygon side carries a tag."""
    n = len(points)
    out = []
    for i in range(n):
        a, b = points[i], points[(i + 1) % n]
        tri = np.array([center, a, b])
        if _shoelace(tri) <= 0.0:
            raise GeometryError(f"{region}: polygon is not star-shaped about its fan center")
        out.append(Patch(tri, region, ("I", tags[i], "I"), info=dict(info or {})))
    return out


# ---------------------------------------------------------------------------
# vertex neighbourhoods


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def _left(e):
    return np.array([-e[1], e[0]])


@dataclass
class VertexShape:
    """Unscaled vertex neighbourhood with the graph vertex at the origin.

    ``polygon`` is counterclockwise; ``tags[i]`` labels the side from
    ``polygon[i]`` to ``polygon[i+1]``: ``"D"`` for the outer boundary or the
    integer index of the interface (into ``directions``).
    """

    polygon: np.ndarray
    tags: tuple
    directions: np.ndarray
    d_attach: np.ndarray
    tau: float
    radius: float = 0.0
    edge_ids: tuple = ()

    @property
    def area(self) -> float:
        return _shoelace(self.polygon)

    @property
    def centroid(self):
        c = Polygon(self.polygon).centroid
        return np.array([c.x, c.y])

    def interface_segment(self, j):
        for i, t in enumerate(self.tags):
            if t == j:
                return self.polygon[i], self.polygon[(i + 1) % len(self.polygon)]
        raise KeyError(j)

    def patches(self, scale=1.0, offset=(0.0, 0.0), region="vertex", interface_tag="N"):
        P = np.asarray(offset, dtype=float) + scale * self.polygon
        tags = ["D" if t == "D" else interface_tag for t in self.tags]
        c = np.asarray(offset, dtype=float) + scale * self.centroid
        return _fan(P, c, region, tags)


def _angle(v):
    return math.atan2(v[1], v[0]) % (2.0 * math.pi)


def make_vertex_shape(directions, tau=0.0, d_attach=1.5, r_min=0.3, edge_ids=()):
    """Star-shaped vertex neighbourhood with fixed interfaces.

    Each interface is the segment of length 2 perpendicular to its direction,
    centred at ``d_attach * direction``. Between consecutive interfaces the
    outer boundary runs through one control point on the angular bisector at
    distance ``max(r_min, r0 exp(-tau))``, where ``r0`` puts the control point
    on the chord joining the two interface corners (the convex-hull shape).
    """
    dirs = np.array([_unit(d) for d in directions], dtype=float)
    n = len(dirs)
    if n < 1:
        raise GeometryError("need at least one direction")
    if tau < 0.0:
        raise GeometryError("tau must be nonnegative")
    d = np.broadcast_to(np.asarray(d_attach, dtype=float), (n,)).copy()
    if np.any(d <= 0.0):
        raise GeometryError("attachment distances must be positive")
    angles = np.array([_angle(e) for e in dirs])
    order = np.argsort(angles, kind="stable")
    if n > 1 and np.min(np.diff(np.append(angles[order], angles[order[0]] + 2 * math.pi))) < 1e-9:
        raise GeometryError("directions must be pairwise distinct")

    poly, tags = [], []
    radius = math.inf
    for pos, j in enumerate(order):
        e = dirs[j]
        nl = _left(e)
        qm, qp = d[j] * e - nl, d[j] * e + nl
        poly += [qm, qp]
        tags += [int(j), "D"]
        jn = order[(pos + 1) % n]
        en = dirs[jn]
        qn = d[jn] * en - _left(en)
        gap = (angles[jn] - angles[j]) % (2.0 * math.pi)
        if n == 1:
            gap = 2.0 * math.pi
        bis_ang = angles[j] + 0.5 * gap
        u = np.array([math.cos(bis_ang), math.sin(bis_ang)])
        # ray-chord intersection: s u = qp + t (qn - qp)
        A = np.column_stack([u, qp - qn])
        r0 = None
        if abs(np.linalg.det(A)) > 1e-12:
            s, t = np.linalg.solve(A, qp)
            if s > 0.0 and -1e-12 <= t <= 1.0 + 1e-12:
                r0 = s
        if r0 is None:
            r0 = max(np.linalg.norm(qp), np.linalg.norm(qn))
        r = max(min(r_min, r0), r0 * math.exp(-tau))
        radius = min(radius, r)
        poly.append(r * u)
        tags.append("D")
    P = np.array(poly)
    # per side: the interface index, or "D" for the outer boundary
    side_tags = [t if isinstance(t, int) else "D" for t in tags]
    shape_poly = Polygon(P)
    if not shape_poly.is_valid or shape_poly.area <= 0.0:
        raise GeometryError("vertex polygon self-intersects")
    for j in range(n):
        for k in range(j + 1, n):
            sj = _segment(dirs[j], d[j])
            sk = _segment(dirs[k], d[k])
            if _segments_intersect(sj, sk):
                raise GeometryError("interface segments intersect")
    shape = VertexShape(P, tuple(side_tags), dirs, d, float(tau), radius, tuple(edge_ids))
    c = shape.centroid
    for i in range(len(P)):
        if _shoelace(np.array([c, P[i], P[(i + 1) % len(P)]])) <= 0.0:
            raise GeometryError("vertex polygon is not star-shaped about its centroid")
    return shape


def _segment(e, d):
    nl = _left(e)
    return d * e - nl, d * e + nl


def _segments_intersect(s1, s2):
    from shapely.geometry import LineString

    return LineString(s1).intersects(LineString(s2))


# ---------------------------------------------------------------------------
# whole domains


def outgoing_directions(g: MetricGraph):
    """``{(vertex id, edge id): unit direction of the edge leaving the vertex}``."""
    vmap = g.vertex_map
    out = {}
    for e in g.edges:
        ps = np.asarray(vmap[e.start].pos, dtype=float)
        pt = np.asarray(vmap[e.end].pos, dtype=float)
        if e.curvature.is_zero:
            u = _unit(pt - ps)
            out[(e.start, e.id)] = u
            out[(e.end, e.id)] = -u
        else:
            c = Curve.through(ps, pt, e.curvature, e.length)
            out[(e.start, e.id)] = c.tangent(0.0)[0]
            out[(e.end, e.id)] = -c.tangent(e.length)[0]
    return out


def shapes_for_graph(g: MetricGraph, params: dict):
    """Build a :class:`VertexShape` for every junction from per-vertex parameters.

    ``params[vid]`` may hold ``tau``, ``d_attach`` and ``r_min``.
    """
    dirs = outgoing_directions(g)
    shapes = {}
    for v in g.vertices:
        if g.degree(v.id) < 2:
            continue
        p = dict(params.get(v.id, {}))
        inc = g.incident(v.id)
        shapes[v.id] = make_vertex_shape(
            [dirs[(v.id, j)] for j in inc],
            tau=p.get("tau", 0.0),
            d_attach=p.get("d_attach", 1.5),
            r_min=p.get("r_min", 0.3),
            edge_ids=tuple(inc),
        )
    return shapes


def build_domain(g: MetricGraph, shapes: dict, eps: float) -> PatchComplex:
    """Patch complex of the thin domain at scale ``eps``.

    Junction vertices need a shape; degree-1 vertices get a flat Dirichlet
    cap exactly at the vertex.
    """
    validate_graph(g)
    if not eps > 0.0:
        raise GeometryError("eps must be positive")
    vmap = g.vertex_map
    dirs = outgoing_directions(g)
    attach = {}
    for v in g.vertices:
        deg = g.degree(v.id)
        if deg < 2:
            continue
        if v.id not in shapes:
            raise GeometryError(f"junction {v.id!r} has no vertex shape")
        sh = shapes[v.id]
        inc = g.incident(v.id)
        ids = list(sh.edge_ids) or inc
        if sorted(ids) != sorted(inc):
            raise GeometryError(f"shape at {v.id!r} does not match the incident edges")
        for idx, eid in enumerate(ids):
            if np.linalg.norm(sh.directions[idx] - dirs[(v.id, eid)]) > 1e-8:
                raise GeometryError(f"shape at {v.id!r}: direction of edge {eid!r} mismatch")
            attach[(v.id, eid)] = float(sh.d_attach[idx])

    patches = []
    a_coeff = {}
    for e in g.edges:
        ds = attach.get((e.start, e.id), 0.0)
        dt = attach.get((e.end, e.id), 0.0)
        if not eps * (ds + dt) < e.length:
            raise GeometryError(f"eps={eps} too large: scaled shapes do not fit on edge {e.id!r}")
        a_coeff[e.id] = (ds + dt) / e.length
        ps = np.asarray(vmap[e.start].pos, dtype=float)
        pt = np.asarray(vmap[e.end].pos, dtype=float)
        tag_s = "I" if g.degree(e.start) >= 2 else "D"
        tag_t = "I" if g.degree(e.end) >= 2 else "D"
        region = f"edge:{e.id}"
        if e.curvature.is_zero:
            if abs(np.linalg.norm(pt - ps) - e.length) > 1e-9 * e.length:
                raise GeometryError(f"straight edge {e.id!r}: vertex distance differs from its length")
            u = _unit(pt - ps)
            nl = _left(u)
            A = ps + eps * ds * u
            B = pt - eps * dt * u
            corners = [A - eps * nl, B - eps * nl, B + eps * nl, A + eps * nl]
            info = {"origin": ps, "e": u, "n": nl, "edge": e.id}
            patches.append(Patch(corners, region, ("D", tag_t, "D", tag_s), info=info))
        else:
            kap = e.curvature
            if eps > eps_max(kap):
                raise GeometryError(f"eps={eps} exceeds 1/(2 sup|kappa|) on edge {e.id!r}")
            lo, hi = kap.support
            if not (lo > eps * ds and hi < e.length - eps * dt):
                raise GeometryError(f"curvature support of edge {e.id!r} is clipped by the vertex regions")
            curve = Curve.through(ps, pt, kap, e.length)
            if g.degree(e.end) >= 2:
                end = curve.point(e.length)[0]
                if np.linalg.norm(end - pt) > 1e-6 * e.length:
                    raise GeometryError(f"curved edge {e.id!r} does not end at its vertex")
            patches.append(
                _tube_patch(curve, e.length, eps, eps * ds, e.length - eps * dt, region, tag_s, tag_t, e.id)
            )

    for vid, sh in shapes.items():
        if vid not in vmap:
            raise GeometryError(f"shape given for unknown vertex {vid!r}")
        pos = np.asarray(vmap[vid].pos, dtype=float)
        patches += sh.patches(scale=eps, offset=pos, region=f"vertex:{vid}", interface_tag="I")

    cx = PatchComplex(patches, eps, {"a": a_coeff, "kind": "graph"})
    return cx


def _tube_patch(curve, length, eps, x0, x1, region, tag_s="D", tag_t="D", edge_id=None, coeff=None):
    coeff = coeff or TubeCoefficients(eps, curve.profile)

    def embed(P):
        return curve.psi(P[:, 0], P[:, 1], eps)

    corners = [(x0, -1.0), (x1, -1.0), (x1, 1.0), (x0, 1.0)]
    info = {"edge": edge_id, "tube": True, "length": length}
    return Patch(corners, region, ("D", tag_t, "D", tag_s), coeff=coeff, embed=embed, info=info)


def tube_domain(length, profile: CurvatureProfile, eps, periodic=False) -> PatchComplex:
    """Single curved tube over ``(0, length) x (-1, 1)``, Dirichlet all round.

    With ``periodic=True`` the two ends are identified (closed curve).
    """
    if eps > eps_max(profile):
        raise GeometryError(f"eps={eps} exceeds 1/(2 sup|kappa|)")
    curve = Curve((0.0, 0.0), 0.0, profile, length)
    p = _tube_patch(curve, length, eps, 0.0, length, "edge:tube", edge_id="tube")
    if periodic:
        p.side_tags = ("D", "P", "D", "P")
    return PatchComplex([p], eps, {"kind": "tube", "periodic": periodic})


# ---------------------------------------------------------------------------
# the eps-neighbourhood counterexample


def counterexample_gap_factor(alpha: float, c: float) -> float:
    """Closed-form factor ``G`` with ``RQ - pi^2/(4 eps^2) = G pi^2/(4 eps^2)``."""
    pi2 = math.pi**2
    ca, sa = math.cos(alpha), math.sin(alpha)
    num = 8.0 * c * ca + 3.0 * pi2 * sa - 16.0 * c
    den = ((3.0 * pi2 - 4.0) * ca + 3.0 * pi2 * c * sa + 8.0) * c
    if abs(den) < 1e-12:
        raise GeometryError(f"pole of the gap factor at alpha={alpha}, c={c}")
    return num / den


def star_directions(alpha):
    """Axis edge along +x, the two others at angle ``alpha`` from the -x axis."""
    ca, sa = math.cos(alpha), math.sin(alpha)
    return [np.array([1.0, 0.0]), np.array([-ca, sa]), np.array([-ca, -sa])]


def _corner_data(alpha):
    """Per arm: start offsets (units of eps) and neighbour corners."""
    dirs = star_directions(alpha)
    angles = [_angle(e) for e in dirs]
    order = np.argsort(angles)
    corners = {}
    for pos, j in enumerate(order):
        jn = order[(pos + 1) % 3]
        gap = (angles[jn] - angles[j]) % (2.0 * math.pi)
        if gap > math.pi + 1e-12:
            raise GeometryError("outer boundary is not polygonal for this angle")
        bis = angles[j] + 0.5 * gap
        corners[(j, jn)] = np.array([math.cos(bis), math.sin(bis)]) / math.sin(0.5 * gap)
    return dirs, order, corners


def trial_gap_factor(alpha: float, c: float) -> float:
    """Exact shifted Rayleigh factor of the cut-off trial function on the true
    eps-neighbourhood (flat arm caps), for ``0 < alpha <= pi/2``.

    Computed arm by arm from the corner-piece integrals of ``cos(pi y)`` and
    ``cos^2(pi y / 2)``; agrees with :func:`counterexample_gap_factor` for
    ``alpha <= pi/3`` where every arm starts at its farther corner from the
    opposite wall.
    """
    if not 0.0 < alpha <= 0.5 * math.pi + 1e-12:
        raise GeometryError("alpha must lie in (0, pi/2]")
    dirs, order, corners = _corner_data(alpha)
    pi2 = math.pi**2
    C = D = 0.0
    for j in range(3):
        cots = []
        for (a, b), p in corners.items():
            if j in (a, b):
                cots.append(float(p @ dirs[j]))
        x0 = max(cots)
        s = sum(cots)
        # int_A cos(pi y) and int_A cos^2(pi y/2) over the corner piece
        C += 2.0 * s / pi2
        D += x0 - s * (0.25 - 1.0 / pi2)
    return (1.5 / c - C) / (1.5 * c + D)


def build_counterexample_domain(alpha: float, ell: float, eps: float) -> PatchComplex:
    """Eps-neighbourhood of a 3-star with arms of length ``ell``.

    Arm 0 lies on the +x axis, arms 1 and 2 make angle ``alpha`` with the
    -x axis. The vertex region is split into the corner pieces ``A_j``
    (bounded by the angle bisectors) and each arm rectangle ``U_j`` starts
    where its corner piece ends. Far ends are flat Dirichlet caps.
    """
    if not 0.0 < alpha <= 0.5 * math.pi + 1e-12:
        raise GeometryError("alpha must lie in (0, pi/2]: beyond that the outer boundary is a circular arc")
    if not 0.0 < eps < ell / 4.0:
        raise GeometryError("need 0 < eps < ell/4")
    dirs, order, corners = _corner_data(alpha)
    patches = []
    x0s = []
    for j in range(3):
        e = dirs[j]
        nl = _left(e)
        prev_key = [k for k in corners if k[1] == j][0]
        next_key = [k for k in corners if k[0] == j][0]
        p_prev = eps * corners[prev_key]
        p_next = eps * corners[next_key]
        x0 = max(float(p_prev @ e), float(p_next @ e))
        x0s.append(x0)
        if not x0 + eps < ell:
            raise GeometryError("degenerate geometry: arm shorter than its corner piece")
        f_m = x0 * e - eps * nl
        f_p = x0 * e + eps * nl
        poly = [np.zeros(2), p_prev, f_m, f_p, p_next]
        tags = ["I", "D", "I", "D", "I"]
        keep_pts, keep_tags = [], []
        for i, pt in enumerate(poly):
            if keep_pts and np.linalg.norm(pt - keep_pts[-1]) < 1e-12 * eps:
                continue
            keep_pts.append(pt)
            keep_tags.append(tags[i])
        if np.linalg.norm(keep_pts[-1] - keep_pts[0]) < 1e-12 * eps:
            keep_pts.pop()
            keep_tags.pop()
        # sides after dropping duplicates: side i goes keep_pts[i] -> keep_pts[i+1]
        P = np.array(keep_pts)
        side_tags = _resolve_tags(P, eps, e, nl, x0)
        info = {"origin": np.zeros(2), "e": e, "n": nl, "x0": x0, "role": "A", "arm": j}
        c = np.mean(P, axis=0)
        patches += [
            Patch(p.corners, f"vertex:A{j}", p.side_tags, info=info)
            for p in _fan(P, c, f"vertex:A{j}", side_tags)
        ]
        B0, B1 = ell * e - eps * nl, ell * e + eps * nl
        info_u = {"origin": np.zeros(2), "e": e, "n": nl, "x0": x0, "role": "U", "arm": j}
        patches.append(Patch([f_m, B0, B1, f_p], f"edge:U{j}", ("D", "D", "D", "I"), info=info_u))
    meta = {"kind": "counterexample", "alpha": alpha, "ell": ell, "x0": x0s}
    return PatchComplex(patches, eps, meta)


def _resolve_tags(P, eps, e, nl, x0):
    """Tag each corner-piece side: interior seams and the arm interface glue, walls are D."""
    tags = []
    n = len(P)
    for i in range(n):
        a, b = P[i], P[(i + 1) % n]
        ya, yb = a @ nl, b @ nl
        on_wall = abs(abs(ya) - eps) < 1e-9 * eps and abs(abs(yb) - eps) < 1e-9 * eps and ya * yb > 0
        tags.append("D" if on_wall else "I")
    return tags


def trial_field(mesh, domain: PatchComplex, c: float):
    """Nodal interpolant of the cut-off transversal trial function.

    ``eps^{-1/2} chi(x) cos(pi y / (2 eps))`` in each arm's coordinates with
    ``chi = 1`` on the corner piece, ``cos(pi x / (2 eps c))`` on
    ``0 <= x <= c eps`` (x measured from the start of the arm rectangle) and
    zero beyond.
    """
    eps = domain.eps
    u = np.zeros(len(mesh.nodes))
    for pi_, p in enumerate(domain.patches):
        info = p.info
        if "role" not in info:
            raise GeometryError("trial_field needs a counterexample domain")
        ids = mesh.patch_nodes[pi_]
        z = mesh.nodes[ids] - info["origin"]
        y = z @ info["n"]
        x = z @ info["e"] - info["x0"]
        val = np.cos(0.5 * math.pi * y / eps) / math.sqrt(eps)
        if info["role"] == "U":
            chi = np.where(x <= 0.0, 1.0, np.where(x <= c * eps, np.cos(0.5 * math.pi * x / (c * eps)), 0.0))
            val = val * chi
        u[ids] = val
    u[mesh.dirichlet_nodes()] = 0.0
    return u

import math

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.spatial import cKDTree
from scipy.special import j0, y0

from _domains import rectangle
from qwglab.assembly import (
    assemble,
    assemble_flat,
    assemble_full,
    assemble_mixed_dn,
    assemble_tube,
    dump_matrix,
    region_mass,
)
from qwglab.eigen import dense_eigen_reference, lowest_eigenpairs
from qwglab.geometry import GeometryError, Patch, PatchComplex, build_domain, make_vertex_shape
from qwglab.graph import CurvatureProfile
from qwglab.mesh import DIRICHLET, INTERIOR, NEUMANN, mesh_domain, tube_counts

PI2 = math.pi**2


def lowest(pair, k=1):
    return lowest_eigenpairs(pair, k, sigma=0.0).eigenvalues


# -- mesh structure -------------------------------------------------------------------


def test_two_by_two_square():
    m = mesh_domain(rectangle(1.0, 1.0), 0.5)
    assert m.n_nodes == 9
    assert len(m.tris) == 8
    assert list(m.free_nodes()) == [int(np.flatnonzero(np.all(np.isclose(m.nodes, 0.5), axis=1))[0])]
    assert m.min_angle() == pytest.approx(45.0)


def test_mixed_tags_on_square():
    m = mesh_domain(rectangle(1.0, 1.0, ("D", "N", "N", "N")), 0.25)
    bottom = np.isclose(m.nodes[:, 1], 0.0)
    assert np.all(m.node_tag[bottom] == DIRICHLET)
    top_inner = np.isclose(m.nodes[:, 1], 1.0) & (m.nodes[:, 0] > 0) & (m.nodes[:, 0] < 1)
    assert np.all(m.node_tag[top_inner] == NEUMANN)
    assert np.all(m.node_tag[~np.isclose(m.nodes, 0.0).any(axis=1) & ~np.isclose(m.nodes, 1.0).any(axis=1)] == INTERIOR)


def test_star_mesh_is_conforming(star_case):
    g, shapes = star_case
    cx = build_domain(g, shapes, 0.1)
    m = mesh_domain(cx, 0.1 / 8)
    assert len(cKDTree(m.nodes).query_pairs(1e-9)) == 0
    # every interior edge is shared by exactly two triangles
    edges = np.sort(np.vstack([m.tris[:, [0, 1]], m.tris[:, [1, 2]], m.tris[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    assert set(counts) <= {1, 2}
    boundary_len = 0.0
    for a, b in uniq[counts == 1]:
        boundary_len += np.linalg.norm(m.nodes[a] - m.nodes[b])
    # boundary edges all lie on the Dirichlet boundary
    once = uniq[counts == 1].ravel()
    assert np.all(m.node_tag[once] == DIRICHLET)
    assert boundary_len > 2 * sum(e.length for e in g.edges) - 1.0
    # fan triangles in the vertex region are the most slender ones
    assert m.min_angle() > 4.0


def test_mesh_errors():
    with pytest.raises(GeometryError):
        mesh_domain(rectangle(1.0, 1.0), 0.0)
    loose = PatchComplex([Patch([(0, 0), (1, 0), (1, 1), (0, 1)], "edge:x", ("D", "I", "D", "D"))], 1.0)
    with pytest.raises(GeometryError, match="glued"):
        mesh_domain(loose, 0.25)


@pytest.mark.parametrize("eps, h, expected", [(0.1, 1 / 16, (40, 32)), (0.5, 0.25, (4, 8)), (0.05, 0.5, (20, 8))])
def test_tube_counts(eps, h, expected):
    assert tube_counts(1.0, eps, h) == expected


# -- assembly identities ------------------------------------------------------------------


@pytest.fixture(scope="module")
def star_full(star_case):
    g, shapes = star_case
    m = mesh_domain(build_domain(g, shapes, 0.1), 0.1 / 4)
    return m, assemble_full(m)


def test_stiffness_annihilates_constants(star_full):
    _, (K, M) = star_full
    assert np.max(np.abs(K @ np.ones(K.shape[0]))) < 1e-9 * abs(K).max()


def test_mass_integrates_area(star_full, star_case):
    m, (K, M) = star_full
    one = np.ones(M.shape[0])
    assert one @ (M @ one) == pytest.approx(m.domain.area(), rel=1e-12)
    x = m.nodes[:, 0]
    # P1 mass reproduces the exact integral of x for linear x
    a = m.nodes[m.tris[:, 1]] - m.nodes[m.tris[:, 0]]
    b = m.nodes[m.tris[:, 2]] - m.nodes[m.tris[:, 0]]
    areas = 0.5 * np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    assert one @ (M @ x) == pytest.approx(np.sum(areas * x[m.tris].mean(axis=1)), rel=1e-12)


def test_matrices_symmetric_and_definite(star_full):
    m, _ = star_full
    pair = assemble(m)
    assert abs(pair.K - pair.K.T).max() == 0.0
    assert abs(pair.M - pair.M.T).max() == 0.0
    sla.cholesky(pair.M.toarray())
    assert dense_eigen_reference((pair.K, pair.M), max_dim=pair.n)[0] > 0.0


def test_region_mass_partition(star_full):
    m, (_, M) = star_full
    one = np.ones(M.shape[0])
    parts = sum(one @ (region_mass(m, r) @ one) for r in ("vertex", "edge"))
    assert parts == pytest.approx(one @ (M @ one), rel=1e-13)


def test_dump_matrix_roundtrip(tmp_path):
    pair = assemble_flat(rectangle(1.0, 1.0), 0.25)
    path = tmp_path / "K.txt"
    dump_matrix(pair.K, path)
    lines = path.read_text().splitlines()
    n, mcols, nnz = map(int, lines[0].split())
    data = np.array([l.split() for l in lines[1:]], dtype=float)
    A = sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(n, mcols))
    assert nnz == pair.K.nnz
    assert abs(A - pair.K).max() == 0.0


# -- analytic oracles ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "tags, expected, rtol",
    [
        (("D", "D", "D", "D"), 2 * PI2, 1e-3),
        (("N", "D", "N", "D"), PI2, 1e-3),
        (("D", "D", "N", "D"), 1.25 * PI2, 5e-3),
        (("D", "N", "N", "N"), PI2 / 4, 5e-3),
    ],
    ids=["dirichlet", "dn-strip", "one-neumann", "dn-quarter"],
)
def test_unit_square_oracles(tags, expected, rtol):
    lam = lowest(assemble_flat(rectangle(1.0, 1.0, tags), 1 / 64))[0]
    assert lam == pytest.approx(expected, rel=rtol)


def test_second_order_refinement():
    errs = [lowest(assemble_flat(rectangle(1.0, 1.0), h))[0] - 2 * PI2 for h in (1 / 8, 1 / 16, 1 / 32)]
    assert all(e > 0 for e in errs)
    for a, b in zip(errs, errs[1:]):
        assert 3.0 <= a / b <= 5.0


def test_first_three_rectangle_values():
    eps = 0.1
    lam = lowest(assemble_flat(rectangle(1.0, 2 * eps, y0=-eps, eps=eps), eps / 16), 3)
    exact = [(n * math.pi) ** 2 + PI2 / (4 * eps**2) for n in (1, 2, 3)]
    np.testing.assert_allclose(lam, exact, rtol=2e-3)


# -- tubes ----------------------------------------------------------------------------------


def test_straight_tube_equals_flat_strip():
    eps = 0.1
    tube = assemble_tube(1.0, CurvatureProfile.zero(), eps, 1 / 16)
    nx, ny = tube_counts(1.0, eps, 1 / 16)
    flat = rectangle(1.0, 2 * eps, y0=-eps, eps=eps)
    flat.patches[0].min_counts = (nx, ny)
    strip = assemble(mesh_domain(flat, 1e300))
    np.testing.assert_allclose(lowest(tube, 3), lowest(strip, 3), rtol=1e-10)


def test_straight_tube_oracle():
    eps = 0.1
    lam = lowest(assemble_tube(1.0, CurvatureProfile.zero(), eps, 1 / 32))[0]
    assert lam == pytest.approx(PI2 / (4 * eps**2) + PI2, rel=2e-3)


def test_bump_weights_are_local():
    from qwglab.geometry import TubeCoefficients

    eps = 0.1
    x = np.array([0.05, 0.25, 0.75, 0.95])
    y = np.array([-1.0, 0.3, -0.2, 1.0])
    curved = TubeCoefficients(eps, CurvatureProfile.bump(0.5, 0.2, 2.0)).weights(x, y)
    flat = TubeCoefficients(eps, CurvatureProfile.zero()).weights(x, y)
    for a, b in zip(curved, flat):
        np.testing.assert_array_equal(a, b)


def _annulus_ground_state(r_in, r_out):
    """Lowest radial Dirichlet eigenvalue of the annulus, from the Bessel cross product."""

    def f(k):
        return j0(k * r_in) * y0(k * r_out) - j0(k * r_out) * y0(k * r_in)

    guess = math.pi / (r_out - r_in)
    k = brentq(f, 0.5 * guess, 1.5 * guess)
    return k**2


def test_closed_tube_matches_annulus():
    eps, R = 0.1, 1.0
    pair = assemble_tube(2 * math.pi * R, CurvatureProfile.constant(1.0 / R), eps, 1 / 32, periodic=True)
    lam = lowest(pair)[0]
    assert lam == pytest.approx(_annulus_ground_state(R - eps, R + eps), rel=2e-3)


def test_bessel_oracle_sanity():
    # thin annulus: ground state close to the straight strip value minus a curvature correction
    lam = _annulus_ground_state(0.9, 1.1)
    assert PI2 / 0.04 - 1.0 < lam < PI2 / 0.04


# -- mixed vertex problem -----------------------------------------------------------------------


@pytest.mark.parametrize("tau, expected", [(0.0, 1.186418), (3.0, 5.988)])
def test_mixed_problem_frozen_values(tau, expected):
    sym3 = [(1.0, 0.0), (-0.5, math.sqrt(3) / 2), (-0.5, -math.sqrt(3) / 2)]
    lam = lowest(assemble_mixed_dn(make_vertex_shape(sym3, tau=tau), 0.05))[0]
    assert lam == pytest.approx(expected, rel=1e-3)


def test_two_direction_shape_is_a_rectangle():
    sh = make_vertex_shape([(1.0, 0.0), (-1.0, 0.0)], tau=0.0, d_attach=1.5)
    assert sh.area == pytest.approx(6.0)
    assert lowest(assemble_mixed_dn(sh, 0.05))[0] == pytest.approx(PI2 / 4, rel=5e-3)


def test_mixed_problem_continuous_under_bulge():
    from qwglab.geometry import VertexShape

    sh = make_vertex_shape([(1.0, 0.0), (-1.0, 0.0)], tau=0.0, d_attach=1.5)
    P = sh.polygon.copy()
    P[np.isclose(P[:, 0], 0.0)] *= 1.05
    bulged = VertexShape(P, sh.tags, sh.directions, sh.d_attach, sh.tau)
    a = lowest(assemble_mixed_dn(sh, 0.05))[0]
    b = lowest(assemble_mixed_dn(bulged, 0.05))[0]
    assert b < a
    assert abs(a - b) / a < 0.05


def test_bump_stiffness_is_local(bump):
    eps = 0.1
    curved = assemble_tube(1.0, bump, eps, 1 / 16)
    flat = assemble_tube(1.0, CurvatureProfile.zero(), eps, 1 / 16)
    x = curved.mesh.nodes[curved.dofs, 0]
    D = (curved.K - flat.K).tocoo()
    touched = D.col[np.abs(D.data) > 0.0]
    h = 1.0 / tube_counts(1.0, eps, 1 / 16)[0]
    assert len(touched) > 0
    assert np.all((x[touched] > 0.3 - 2 * h) & (x[touched] < 0.7 + 2 * h))


def test_tube_converges_to_flat_as_curvature_vanishes(bump):
    eps = 0.1
    flat = assemble_tube(1.0, CurvatureProfile.zero(), eps, 1 / 8)
    diffs = []
    for scale in (1e-1, 1e-2, 1e-3):
        kap = CurvatureProfile.bump(0.5, 0.2, 2.0 * scale)
        diffs.append(abs(assemble_tube(1.0, kap, eps, 1 / 8).K - flat.K).max())
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 1e-3 * abs(flat.K).max()


@pytest.mark.parametrize("seed", range(5))
def test_random_forms(star_full, seed):
    m, _ = star_full
    pair = assemble(m)
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, pair.n))
    assert x @ (pair.M @ x) > 0.0
    normK = abs(pair.K).max() * pair.n
    assert abs(x @ (pair.K @ y) - y @ (pair.K @ x)) <= 1e-12 * normK * np.linalg.norm(x) * np.linalg.norm(y)

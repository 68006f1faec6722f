"""Experiments: shifted spectra, smallness checks, convergence sweeps, diagnostics."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from qwglab import __version__
from qwglab.assembly import assemble, assemble_mixed_dn, region_mass
from qwglab.eigen import EigenSolveError, lowest_eigenpairs, rayleigh_quotient
from qwglab.geometry import (
    VertexShape,
    build_counterexample_domain,
    build_domain,
    counterexample_gap_factor,
    trial_field,
    trial_gap_factor,
)
from qwglab.graph import CROSS_SECTION, MetricGraph, merged_limit_spectrum, p1_pair_1d
from qwglab.mesh import TriMesh, mesh_domain

log = logging.getLogger(__name__)

CSV_HEADER = ["eps", "k", "lambda_eps", "shifted", "lambda_limit", "gap", "vertex_mass_fraction", "converged"]


class SaturatedError(ValueError):
    """A gap is not positive: the data are at the discretization floor."""


# ---------------------------------------------------------------------------
# thresholds and shifts


def threshold(eps):
    return CROSS_SECTION.lambda1 / eps**2


@lru_cache(maxsize=64)
def discrete_cross_section(ny: int):
    """First two eigenvalues and the M-normalized first mode of P1 on (-1, 1)."""
    K, M = p1_pair_1d(2.0, ny)
    vals, vecs = sla.eigh(K.toarray(), M.toarray())
    phi = vecs[:, 0] * np.sign(vecs[np.argmax(np.abs(vecs[:, 0])), 0])
    return float(vals[0]), float(vals[1]), phi


def shift_value(eps, mode="mesh", ny=None):
    """The number subtracted from ``lambda(eps)``."""
    if mode == "exact":
        return threshold(eps)
    if mode == "mesh":
        if ny is None:
            raise ValueError("mesh-consistent shift needs the cross-section interval count")
        return discrete_cross_section(int(ny))[0] / eps**2
    raise ValueError(f"unknown shift mode {mode!r}")


def shifted_spectrum(values, eps, mode="mesh", ny=None):
    """``values - shift`` where the shift is ``pi^2/(4 eps^2)`` or its discrete counterpart."""
    return np.asarray(values, dtype=float) - shift_value(eps, mode, ny)


def cross_section_intervals(mesh: TriMesh) -> int:
    """Transversal subdivision count of the edge patches (all equal by construction)."""
    ns = set()
    for pi, p in enumerate(mesh.domain.patches):
        if p.region.startswith("edge") and p.kind == "quad":
            ns.add(mesh.counts[(pi, 1)])
    if len(ns) != 1:
        raise ValueError(f"edge patches have differing transversal counts {sorted(ns)}")
    return ns.pop()


# ---------------------------------------------------------------------------
# smallness


@dataclass
class SmallnessVerdict:
    lambda_dn: float
    threshold: float
    error: float
    margin: float
    satisfied: bool
    h: float
    lambda_coarse: float

    def to_dict(self):
        return asdict(self)


def lambda_dn(shape: VertexShape, h: float, seed=0) -> float:
    return float(lowest_eigenpairs(assemble_mixed_dn(shape, h), 1, seed=seed, sigma=0.0).eigenvalues[0])


def check_smallness(shape: VertexShape, h=0.05, margin=None, seed=0) -> SmallnessVerdict:
    """Compare the mixed eigenvalue of ``shape`` with ``pi^2/4``.

    Solves at ``2h`` and ``h``; the Richardson estimate of the error of the
    fine value is ``|difference| / 3``. The verdict requires the fine value to
    exceed the threshold by ``margin`` (default twice that estimate).
    """
    coarse = lambda_dn(shape, 2.0 * h, seed)
    fine = lambda_dn(shape, h, seed)
    err = abs(fine - coarse) / 3.0
    margin = 2.0 * err if margin is None else float(margin)
    thr = CROSS_SECTION.lambda1
    return SmallnessVerdict(fine, thr, err, margin, bool(fine > thr + margin), h, coarse)


# ---------------------------------------------------------------------------
# rates and diagnostics


def fit_rate(points):
    """Least-squares slope of ``log gap`` against ``log eps``."""
    pts = [(float(e), float(g)) for e, g in points]
    if len(pts) < 2:
        raise ValueError("need at least two points")
    if any(g <= 0.0 for _, g in pts):
        raise SaturatedError("nonpositive gap: saturated by discretization")
    if any(e <= 0.0 for e, _ in pts):
        raise ValueError("eps must be positive")
    x = np.log([e for e, _ in pts])
    y = np.log([g for _, g in pts])
    return float(np.polyfit(x, y, 1)[0])


def transversal_average(u, mesh: TriMesh, patch=None):
    """Column integrals ``int u(x, y) cos(pi y / 2) dy`` over a quad strip or tube.

    Returns ``(x, profile)`` with ``x`` the arclength coordinate of each column.
    """
    quads = sorted(mesh.grids)
    if patch is None:
        cand = [pi for pi in quads if mesh.domain.patches[pi].region.startswith("edge")]
        if not cand:
            raise ValueError("mesh has no column structure")
        patch = cand[0]
    grid = mesh.grids[patch]  # (ny+1, nx+1)
    p = mesh.domain.patches[patch]
    u = np.asarray(u, dtype=float)
    ny = grid.shape[0] - 1
    y = np.linspace(-1.0, 1.0, ny + 1)
    w = np.full(ny + 1, 2.0 / ny)
    w[0] = w[-1] = 1.0 / ny
    prof = (u[grid] * (w * CROSS_SECTION.phi(y))[:, None]).sum(axis=0)
    if p.coeff is not None:
        x = np.linspace(p.corners[0, 0], p.corners[1, 0], grid.shape[1])
    else:
        x = (mesh.nodes[grid].mean(axis=0) - p.info["origin"]) @ p.info["e"]
    return x, prof


def vertex_mass_fraction(u, mesh: TriMesh, prefix="vertex"):
    """Share of ``u^T M u`` carried by the triangles of the vertex regions.

    ``u`` is one nodal field or a matrix with one field per column.
    """
    U = np.asarray(u, dtype=float)
    single = U.ndim == 1
    U = U[:, None] if single else U
    Mv = region_mass(mesh, prefix)
    Mall = region_mass(mesh, "")
    tot = np.einsum("ij,ij->j", U, Mall @ U)
    if np.any(tot <= 0.0):
        raise ValueError("field has zero mass")
    frac = np.clip(np.einsum("ij,ij->j", U, Mv @ U) / tot, 0.0, 1.0)
    return float(frac[0]) if single else frac


def gap_check_terms(v, ny=64):
    """``(lhs, rhs)`` of the transversal estimate for an interior-node vector ``v``."""
    K, M = p1_pair_1d(2.0, ny)
    l1, l2, phi = discrete_cross_section(ny)
    v = np.asarray(v, dtype=float)
    nrm = float(v @ (M @ v))
    proj = float(v @ (M @ phi))
    lhs = nrm - proj**2
    rhs = (float(v @ (K @ v)) - l1 * nrm) / (l2 - l1)
    return lhs, rhs


def transversal_gap_check(samples=100, ny=64, seed=0):
    """Largest ``lhs - rhs`` over seeded random fields of unit discrete norm."""
    K, M = p1_pair_1d(2.0, ny)
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(samples):
        v = rng.standard_normal(ny - 1)
        v /= math.sqrt(float(v @ (M @ v)))
        lhs, rhs = gap_check_terms(v, ny)
        worst = max(worst, lhs - rhs)
    return worst


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class Row:
    eps: float
    k: int
    lambda_eps: float
    shifted: float
    lambda_limit: float
    gap: float
    vertex_mass_fraction: float
    converged: bool
    error_estimate: float = math.nan
    shift: float = math.nan


@dataclass
class SpectrumReport:
    rows: list
    rates: dict
    smallness: dict
    solver: list
    flags: list = field(default_factory=list)
    scenario: dict = field(default_factory=dict)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(
                [
                    _fmt(r.eps),
                    r.k,
                    _fmt(r.lambda_eps),
                    _fmt(r.shifted),
                    _fmt(r.lambda_limit),
                    _fmt(r.gap),
                    _fmt(r.vertex_mass_fraction),
                    int(bool(r.converged)),
                ]
            )
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "tool": "qwglab",
            "version": __version__,
            "scenario": self.scenario,
            "smallness": self.smallness,
            "rates": self.rates,
            "solver": self.solver,
            "flags": self.flags,
            "rows": [asdict(r) for r in self.rows],
        }

    def column(self, name, k=None):
        return np.array([getattr(r, name) for r in self.rows if k is None or r.k == k])


def _fmt(x):
    return "%.12g" % x


@dataclass
class SweepConfig:
    graph: MetricGraph
    shapes: dict
    eps: list
    k: int = 3
    h_rule: float = 16.0
    shift: str = "mesh"
    tol: float = 1e-8
    seed: int = 0
    limit_intervals: int = 2000
    richardson: bool = True
    extrapolate: bool = False
    smallness_h: float = 0.05
    workers: int = 1


def solve_thin(graph, shapes, eps, h, k, tol=1e-8, seed=0):
    """Assemble and solve the thin-domain problem; returns (result, mesh, pair)."""
    cx = build_domain(graph, shapes, eps)
    mesh = mesh_domain(cx, h)
    pair = assemble(mesh)
    res = lowest_eigenpairs(pair, k, tol=tol, seed=seed, sigma=0.9 * threshold(eps))
    return res, mesh, pair


def _sweep_point(cfg: SweepConfig, eps: float):
    h = eps / cfg.h_rule
    out = {"eps": eps}
    try:
        res, mesh, pair = solve_thin(cfg.graph, cfg.shapes, eps, h, cfg.k, cfg.tol, cfg.seed)
    except EigenSolveError as exc:
        out["error"] = str(exc)
        return out
    ny = cross_section_intervals(mesh)
    vals = res.eigenvalues
    shift = shift_value(eps, cfg.shift, ny)
    out.update(
        values=vals.tolist(),
        shift=shift,
        converged=res.converged.tolist(),
        iterations=res.iterations,
        sigma=res.sigma,
        dofs=pair.n,
        ny=ny,
        method=res.meta.get("method"),
    )
    nodal = pair.to_nodal(res.eigenvectors)
    out["vmf"] = vertex_mass_fraction(nodal, mesh).tolist()
    if cfg.richardson or cfg.extrapolate:
        try:
            rc, mc, _ = solve_thin(cfg.graph, cfg.shapes, eps, 2.0 * h, cfg.k, cfg.tol, cfg.seed)
            ny_c = cross_section_intervals(mc)
            sh_c = rc.eigenvalues - shift_value(eps, cfg.shift, ny_c)
            sh_f = vals - shift
            out["coarse_shifted"] = sh_c.tolist()
            out["error_estimate"] = (np.abs(sh_f - sh_c) / 3.0).tolist()
            if cfg.extrapolate:
                out["extrapolated_shift"] = (4.0 * shift - shift_value(eps, cfg.shift, ny_c)) / 3.0
                out["extrapolated_values"] = ((4.0 * vals - rc.eigenvalues) / 3.0).tolist()
        except EigenSolveError as exc:
            out["coarse_error"] = str(exc)
    return out


def convergence_sweep(cfg: SweepConfig) -> SpectrumReport:
    """Solve on every ``eps``, shift, pair with the limit spectrum by index, fit rates."""
    eps_list = [float(e) for e in cfg.eps]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing")
    if cfg.k < 1:
        raise ValueError("k must be at least 1")
    flags = []
    smallness = {}
    for vid, sh in sorted(cfg.shapes.items()):
        v = check_smallness(sh, cfg.smallness_h, seed=cfg.seed)
        smallness[vid] = v.to_dict()
        if not v.satisfied:
            msg = f"smallness not satisfied at vertex {vid}"
            log.warning(msg)
            flags.append(msg)
    limit = merged_limit_spectrum(cfg.graph, cfg.limit_intervals, cfg.k).values

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            points = list(pool.map(_sweep_point, [cfg] * len(eps_list), eps_list))
    else:
        points = [_sweep_point(cfg, e) for e in eps_list]

    rows, solver = [], []
    for pt in points:
        eps = pt["eps"]
        if "error" in pt:
            flags.append(f"eps={eps}: {pt['error']}")
            solver.append({"eps": eps, "error": pt["error"]})
            continue
        vals = np.array(pt.get("extrapolated_values", pt["values"]))
        shift = pt.get("extrapolated_shift", pt["shift"])
        errs = pt.get("error_estimate", [math.nan] * len(vals))
        for i, lam in enumerate(vals):
            s = float(lam - shift)
            lim = float(limit[i]) if i < len(limit) else math.nan
            rows.append(
                Row(eps, i + 1, float(lam), s, lim, abs(s - lim), float(pt["vmf"][i]), bool(pt["converged"][i]), float(errs[i]), float(shift))
            )
        solver.append({k: pt[k] for k in ("eps", "iterations", "sigma", "dofs", "ny", "method") if k in pt})

    rates = {}
    for i in range(1, cfg.k + 1):
        pts = [(r.eps, r.gap) for r in rows if r.k == i]
        try:
            rates[str(i)] = fit_rate(pts)
        except SaturatedError:
            rates[str(i)] = "saturated"
        except ValueError:
            rates[str(i)] = None
    return SpectrumReport(rows, rates, smallness, solver, flags)


def positivity_violations(report: SpectrumReport):
    """Rows whose shifted value is below ``-2`` times its error estimate."""
    return [r for r in report.rows if r.shifted < -2.0 * r.error_estimate]


# ---------------------------------------------------------------------------
# counterexample


@dataclass
class CounterexampleRow:
    eps: float
    gap_factor: float
    exact_trial_factor: float
    closed_form_shifted: float
    trial_shifted: float
    lambda1_shifted: float
    scaled_lambda1: float
    trial_rq: float
    lambda1: float
    converged: bool


def counterexample_point(alpha, ell, c, eps, h_rule=16.0, seed=0, tol=1e-8):
    cx = build_counterexample_domain(alpha, ell, eps)
    mesh = mesh_domain(cx, eps / h_rule)
    pair = assemble(mesh)
    u = trial_field(mesh, cx, c)
    rq = rayleigh_quotient(pair, pair.restrict(u))
    thr = threshold(eps)
    res = lowest_eigenpairs(pair, 1, tol=tol, seed=seed, sigma=0.5 * thr)
    lam = float(res.eigenvalues[0])
    G = counterexample_gap_factor(alpha, c)
    return CounterexampleRow(
        eps=eps,
        gap_factor=G,
        exact_trial_factor=trial_gap_factor(alpha, c),
        closed_form_shifted=G * thr,
        trial_shifted=rq - thr,
        lambda1_shifted=lam - thr,
        scaled_lambda1=eps**2 * (lam - thr),
        trial_rq=rq,
        lambda1=lam,
        converged=bool(res.converged[0]),
    )


def counterexample_run(alpha, ell, c, eps_list, h_rule=16.0, seed=0):
    """Trial quotient, closed form and computed ground state on each ``eps``."""
    rows = [counterexample_point(alpha, ell, c, e, h_rule, seed) for e in eps_list]
    scaled = np.array([r.scaled_lambda1 for r in rows])
    spread = float((scaled.max() - scaled.min()) / abs(scaled.mean()))
    return {
        "alpha": alpha,
        "ell": ell,
        "c": c,
        "rows": [asdict(r) for r in rows],
        "minmax_ok": all(r.lambda1 <= r.trial_rq for r in rows),
        "scaled_spread": spread,
        "below_threshold": all(r.lambda1_shifted < 0.0 for r in rows),
    }


# ---------------------------------------------------------------------------
# reports


def write_reports(report: SpectrumReport, out_dir, stem="sweep"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.csv").write_text(report.csv_text())
    (out / f"{stem}.json").write_text(json.dumps(_jsonable(report.to_json()), indent=2, sort_keys=True) + "\n")
    return out / f"{stem}.csv", out / f"{stem}.json"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x

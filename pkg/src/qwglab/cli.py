"""Command line entry point: ``qwglab <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

from qwglab import __version__
from qwglab.eigen import EigenSolveError
from qwglab.geometry import GeometryError, counterexample_gap_factor
from qwglab.graph import GraphError, merged_limit_spectrum
from qwglab.lab import (
    _fmt,
    _jsonable,
    check_smallness,
    convergence_sweep,
    counterexample_run,
    cross_section_intervals,
    fit_rate,
    SaturatedError,
    shift_value,
    solve_thin,
    write_reports,
)
from qwglab.scenario import ScenarioError, graph_from_scenario, load, sweep_config

log = logging.getLogger("qwglab")

COUNTEREXAMPLE_COLUMNS = [
    "eps",
    "gap_factor",
    "exact_trial_factor",
    "closed_form_shifted",
    "trial_shifted",
    "lambda1_shifted",
    "scaled_lambda1",
    "converged",
]


def _apply_overrides(s, args):
    if getattr(args, "seed", None) is not None:
        s["seed"] = args.seed
    if getattr(args, "shift", None) is not None:
        s["shift"] = args.shift
    if getattr(args, "h_rule", None) is not None:
        s["h_rule"] = args.h_rule
    return s


def _write_json(path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _counterexample(s, out: Path):
    ce = s["counterexample"]
    rep = counterexample_run(ce["alpha"], ce["ell"], ce["c"], s["eps"], s["h_rule"], s["seed"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COUNTEREXAMPLE_COLUMNS)
    for r in rep["rows"]:
        w.writerow([_fmt(r[c]) if c != "converged" else int(r[c]) for c in COUNTEREXAMPLE_COLUMNS])
    out.mkdir(parents=True, exist_ok=True)
    (out / "counterexample.csv").write_text(buf.getvalue())
    _write_json(out / "counterexample.json", {"tool": "qwglab", "version": __version__, "scenario": s, **rep})
    return rep


def _smallness(s, out: Path):
    cfg = sweep_config(s)
    verdicts = {vid: check_smallness(sh, s["smallness_h"], seed=s["seed"]).to_dict() for vid, sh in sorted(cfg.shapes.items())}
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "smallness.json", {"tool": "qwglab", "version": __version__, "scenario": s, "smallness": verdicts})
    return verdicts


def run_scenario(path, out_dir, seed=None, shift=None, h_rule=None) -> int:
    """Run a scenario file and write its reports; returns the process exit status."""
    ns = argparse.Namespace(seed=seed, shift=shift, h_rule=h_rule)
    try:
        s = _apply_overrides(load(path), ns)
        out = Path(out_dir)
        if s["kind"] == "sweep":
            report = convergence_sweep(sweep_config(s))
            report.scenario = s
            write_reports(report, out)
            for f in report.flags:
                log.warning(f)
        elif s["kind"] == "counterexample":
            _counterexample(s, out)
        else:
            _smallness(s, out)
    except (ScenarioError, GraphError, GeometryError, EigenSolveError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# subcommands


def cmd_sweep(args):
    if not args.scenario:
        print("error: --scenario is required", file=sys.stderr)
        return 2
    status = run_scenario(args.scenario, args.out, args.seed, args.shift, args.h_rule)
    if status == 0:
        print((Path(args.out) / "sweep.csv").read_text() if (Path(args.out) / "sweep.csv").exists() else "", end="")
    return status


def cmd_counterexample(args):
    if args.scenario:
        s = _apply_overrides(load(args.scenario), args)
    else:
        s = {
            "kind": "counterexample",
            "counterexample": {"alpha": args.alpha, "ell": args.ell, "c": args.c},
            "eps": args.eps,
            "h_rule": args.h_rule or 16.0,
            "seed": args.seed or 0,
        }
    rep = _counterexample(s, Path(args.out))
    print((Path(args.out) / "counterexample.csv").read_text(), end="")
    print(f"min-max ok: {rep['minmax_ok']}  scaled spread: {rep['scaled_spread']:.4f}")
    return 0


def cmd_check_smallness(args):
    s = _apply_overrides(load(args.scenario), args)
    for vid, v in _smallness(s, Path(args.out)).items():
        state = "satisfied" if v["satisfied"] else "not satisfied"
        print(f"{vid}: lambda_DN={v['lambda_dn']:.6f} threshold={v['threshold']:.6f} margin={v['margin']:.2e} {state}")
    return 0


def cmd_limit_spectrum(args):
    s = load(args.scenario)
    g = graph_from_scenario(s)
    k = args.k or s["k"]
    lim = merged_limit_spectrum(g, s["limit_intervals"], k)
    print("k,value,edge,mode")
    for i, (v, eid, n) in enumerate(lim.entries, start=1):
        print(f"{i},{_fmt(v)},{eid},{n}")
    return 0


def cmd_solve2d(args):
    s = _apply_overrides(load(args.scenario), args)
    cfg = sweep_config(s)
    eps = args.eps if args.eps is not None else cfg.eps[0]
    res, mesh, pair = solve_thin(cfg.graph, cfg.shapes, eps, eps / cfg.h_rule, cfg.k, cfg.tol, cfg.seed)
    shift = shift_value(eps, cfg.shift, cross_section_intervals(mesh))
    print(f"# eps={eps} dofs={pair.n} shift={_fmt(shift)}")
    print("k,lambda_eps,shifted,converged")
    for i, (lam, ok) in enumerate(zip(res.eigenvalues, res.converged), start=1):
        print(f"{i},{_fmt(lam)},{_fmt(lam - shift)},{int(ok)}")
    return 0


def cmd_rates(args):
    with open(args.csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ks = sorted({int(r["k"]) for r in rows})
    print("k,rate")
    for k in ks:
        pts = [(float(r["eps"]), float(r["gap"])) for r in rows if int(r["k"]) == k]
        try:
            rate = _fmt(fit_rate(pts))
        except SaturatedError:
            rate = "saturated"
        print(f"{k},{rate}")
    return 0


def cmd_selftest(args):
    """Fast oracle checks; exit status 1 if any fails."""
    from qwglab.assembly import assemble_tube
    from qwglab.eigen import lowest_eigenpairs
    from qwglab.graph import CurvatureProfile, fd_pair_1d

    checks = []
    K, M = fd_pair_1d(1.0, 4)
    lam = lowest_eigenpairs((K, M), 1).eigenvalues[0]
    checks.append(("finite-difference chain", abs(lam - 32 * (1 - math.cos(math.pi / 4))) < 1e-10))
    g = counterexample_gap_factor(math.pi / 2, 3.0)
    closed = (3 * math.pi**2 - 48) / (3 * (9 * math.pi**2 + 8))
    checks.append(("gap factor at a right angle", abs(g - closed) < 1e-12))
    eps = 0.1
    pair = assemble_tube(1.0, CurvatureProfile.zero(), eps, 1.0 / 32)
    lam = lowest_eigenpairs(pair, 1, sigma=0.9 * math.pi**2 / (4 * eps**2)).eigenvalues[0]
    exact = math.pi**2 / (4 * eps**2) + math.pi**2
    checks.append(("straight tube", abs(lam / exact - 1) < 2e-3))
    ok = True
    for name, passed in checks:
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}")
    return 0 if ok else 1


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON file")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--shift", choices=["exact", "mesh"], default=None)
    common.add_argument("--h-rule", dest="h_rule", type=float, default=None, help="mesh width is eps / FACTOR")

    p = argparse.ArgumentParser(prog="qwglab", description="Thin branched waveguide spectra and their graph limits.")
    p.add_argument("--version", action="version", version=f"qwglab {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("limit-spectrum", parents=[common], help="decoupled graph spectrum")
    q.add_argument("-k", type=int, default=None)
    q.set_defaults(func=cmd_limit_spectrum)

    q = sub.add_parser("solve2d", parents=[common], help="one thin-domain solve")
    q.add_argument("--eps", type=float, default=None)
    q.set_defaults(func=cmd_solve2d)

    q = sub.add_parser("sweep", parents=[common], help="convergence sweep with CSV/JSON reports")
    q.set_defaults(func=cmd_sweep)

    q = sub.add_parser("check-smallness", parents=[common], help="mixed eigenvalue test of each vertex shape")
    q.set_defaults(func=cmd_check_smallness)

    q = sub.add_parser("counterexample", parents=[common], help="eps-neighbourhood star below threshold")
    q.add_argument("--alpha", type=float, default=math.pi / 2)
    q.add_argument("--ell", type=float, default=1.0)
    q.add_argument("--c", type=float, default=3.0)
    q.add_argument("--eps", type=float, nargs="+", default=[0.2, 0.1, 0.05])
    q.set_defaults(func=cmd_counterexample)

    q = sub.add_parser("rates", parents=[common], help="refit rates from a sweep CSV")
    q.add_argument("--csv", required=True)
    q.set_defaults(func=cmd_rates)

    q = sub.add_parser("selftest", parents=[common], help="quick oracle checks")
    q.set_defaults(func=cmd_selftest)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, GraphError, GeometryError, EigenSolveError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

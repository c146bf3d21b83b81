"""Command-line interface: ``bohmexit simulate|sweep-r|born|report``."""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

from ..errors import BohmExitError, ConfigError
from ..report import config_hash
from .config import load_config
from .runner import run, run_born, sweep_R


def _overrides(args):
    upd = {}
    if args.seed is not None:
        upd["ensemble.seed"] = args.seed
    if args.n_traj is not None:
        upd["ensemble.n"] = args.n_traj
    if args.tol is not None:
        upd["tolerances.integrator"] = args.tol
    if args.out is not None:
        upd["outputs.dir"] = args.out
    return upd


def _load(args):
    cfg = load_config(args.config)
    upd = _overrides(args)
    return cfg.override(upd) if upd else cfg


def _print_report(rep, out=None):
    out = out or sys.stdout
    print(f"R={rep.radius:g}  partition={rep.partition}  n_ok={rep.n_ok}/{rep.n}  "
          f"chi2 p={rep.chi2['p_value']:.3g}  max|z|={rep.max_abs_z(5.0 / max(rep.n_ok, 1)):.2f}", file=out)
    print(f"{'cell':>8} {'empirical':>10} {'cone':>10} {'flux':>10} {'z':>7}", file=out)
    for c in rep.cells:
        if c.cone_pred < 1e-4 and c.count == 0:
            continue
        fl = "" if c.flux_pred is None else f"{c.flux_pred:10.5f}"
        print(f"{'-'.join(map(str, c.cell)):>8} {c.empirical:10.5f} {c.cone_pred:10.5f} {fl:>10} "
              f"{c.z_score:7.2f}", file=out)


def cmd_simulate(args):
    cfg = _load(args)
    res = run(cfg, workers=args.workers)
    for rep in res.reports.values():
        _print_report(rep)
    print(f"wrote {len(res.files)} files to {cfg.outputs.dir}")
    return 0


def cmd_sweep(args):
    cfg = _load(args)
    try:
        radii = [float(r) for r in args.radii.split(",") if r.strip()]
    except ValueError:
        raise ConfigError(f"--radii must be comma-separated numbers, got {args.radii!r}", field="radii")
    table, res = sweep_R(cfg, radii, workers=args.workers)
    cols = table.COLUMNS
    print(" ".join(f"{c:>14}" for c in cols))
    for r in table.rows:
        print(" ".join(f"{'-':>14}" if r[c] is None else f"{r[c]:14.6g}" for c in cols))
    print(f"wrote {len(res.files)} files to {cfg.outputs.dir}")
    return 0


def cmd_born(args):
    cfg = _load(args)
    table, summary = run_born(cfg)
    for k, v in summary.items():
        print(f"{k}: {v:.10g}")
    print(f"wrote {os.path.join(cfg.outputs.dir, 'cross_section.csv')}")
    return 0


def cmd_report(args):
    paths = sorted(glob.glob(os.path.join(args.dir, "**", "report.json"), recursive=True))
    if not paths:
        print(f"no report.json under {args.dir}", file=sys.stderr)
        return 1
    status = 0
    for p in paths:
        with open(p) as fh:
            data = json.load(fh)
        ok = config_hash(data.get("config")) == data.get("config_hash")
        status |= 0 if ok else 1
        cells = data["cells"]
        zs = [abs(c["z_score"]) for c in cells if isinstance(c["z_score"], float)
              and c["cone_pred"] * data["n_ok"] >= 5]
        print(f"{p}: R={data['radius']:g} n_ok={data['n_ok']} chi2 p={data['chi2']['p_value']:.3g} "
              f"max|z|={max(zs) if zs else 0:.2f} config hash {'ok' if ok else 'MISMATCH'}")
    return status


def build_parser():
    ap = argparse.ArgumentParser(prog="bohmexit", description="Bohmian exit statistics experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="YAML experiment configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--n-traj", type=int, dest="n_traj")
        p.add_argument("--tol", type=float, help="integrator tolerance")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("simulate", help="run the exit experiment")
    common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("sweep-r", help="convergence study over detector radii")
    common(p)
    p.add_argument("--radii", required=True, help="comma-separated radii, e.g. 50,100,200")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("born", help="Born cross-section table")
    common(p)
    p.set_defaults(func=cmd_born)
    p = sub.add_parser("report", help="summarise report.json files in a directory")
    p.add_argument("dir")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except BohmExitError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Experiment orchestration: build objects from a config, run, sweep radii, write artifacts.

Numerical outputs go to ``report.json`` and are a pure function of the
configuration; wall-clock timings, timestamps and host details go to
``metadata.json`` so reruns produce byte-identical reports.
"""

from __future__ import annotations

import csv
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy

from .. import __version__
from ..amplitudes import Potential3D, cross_section_table, write_cross_section_csv, yukawa_total_born
from ..errors import ArityError, BohmExitError, ConfigError
from ..exits import default_time_edges, joint_exit_experiment, line_exit_experiment
from ..propagate import (FluxRecord, Potential1D, averaged_barrier_coefficients, evolve_scattering,
                         extract_outgoing)
from ..report import config_hash, write_exit_events, write_json
from ..sphere import SpherePartition
from ..states import AnalyticState, GaussianPacketSpec, GridState
from .config import ExperimentConfig, dump_config, from_dict

MODELING_NOTE = ("Single-packet ensemble at finite detector radius; beam limits are approached "
                 "only through the radius sweep and the packet momentum width.")


# -- object builders -------------------------------------------------------------------


def build_state(sc):
    """:class:`AnalyticState` described by a :class:`StateConfig`."""
    specs = [GaussianPacketSpec(p.center, p.momentum, p.width, p.phase) for p in sc.packets]
    if sc.arrangement == "single":
        terms = [(1.0, (specs[0],))]
    elif sc.arrangement == "product":
        terms = [(1.0, tuple(specs))]
    elif sc.arrangement == "symmetrized":
        (a, b), (c1, c2) = specs, [complex(*c) for c in sc.coefficients]
        terms = [(c1, (a, b)), (c2, (b, a))]
    else:
        terms = [(complex(*t.coefficient), tuple(specs[i] for i in t.packets)) for t in sc.terms]
    return AnalyticState(terms)


def build_partition(cfg, R):
    d = cfg.detector
    return SpherePartition.from_name(d.partition, R, d.axis)


def build_potential1d(pc):
    return Potential1D(pc.kind, pc.height, pc.width, pc.center)


def build_born_potential(bp):
    if bp.kind == "yukawa":
        return Potential3D.yukawa(bp.strength, bp.mu)
    return Potential3D.gaussian_well(bp.depth, bp.width)


# -- results ---------------------------------------------------------------------------


@dataclass
class ConvergenceTable:
    """One row of discrepancy metrics per detector radius."""

    rows: list

    COLUMNS = ("radius", "max_abs_diff", "max_abs_z", "flux_cone_gap", "signed_unsigned_gap",
               "multi_crossing_fraction", "chi2_p")

    def column(self, name):
        return np.array([np.nan if r[name] is None else r[name] for r in self.rows], dtype=float)

    def as_dict(self):
        return {"columns": list(self.COLUMNS), "rows": self.rows}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow(["" if r[c] is None else repr(r[c]) for c in self.COLUMNS])


@dataclass
class RunResult:
    config: ExperimentConfig
    reports: dict
    convergence: ConvergenceTable | None = None
    files: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def report(self):
        """The report of the first (or only) radius."""
        return next(iter(self.reports.values()))


def discrepancy_metrics(report):
    """Convergence metrics of one report."""
    emp, cone, flux = report.empirical, report.cone, report.flux
    big = cone > 0.01
    gap = None
    if np.isfinite(flux).all() and big.any():
        gap = float(np.max(np.abs(flux[big] - cone[big]) / cone[big]))
    su = None
    if "flux_absolute" in report.extra and np.isfinite(flux).all():
        signed, absolute = float(flux.sum()), float(np.sum(report.extra["flux_absolute"]))
        su = abs(absolute - signed) / abs(signed)
    mc = None if report.crossings is None else report.crossings["multi_crossing_fraction"]
    return {"radius": report.radius, "max_abs_diff": float(np.max(np.abs(emp - cone))),
            "max_abs_z": report.max_abs_z(min_pred=5.0 / max(report.n_ok, 1)),
            "flux_cone_gap": gap, "signed_unsigned_gap": su, "multi_crossing_fraction": mc,
            "chi2_p": report.chi2["p_value"]}


# -- execution -------------------------------------------------------------------------


def _with_context(exc, context):
    """Prefix the error message with the experiment context, keeping the type."""
    if exc.args:
        exc.args = (f"[{context}] {exc.args[0]}",) + exc.args[1:]
    else:
        exc.args = (f"[{context}]",)
    exc.experiment_context = context
    return exc


def _run_free(cfg, R):
    state = build_state(cfg.state)
    partition = build_partition(cfg, R)
    det, tol = cfg.detector, cfg.tolerances
    events = [] if cfg.outputs.exit_events else None
    report = joint_exit_experiment(
        state, partition, n=cfg.ensemble.n, seed=cfg.ensemble.seed, tol=tol.integrator, T=det.T,
        t_max=det.t_max, time_edges=default_time_edges(state, R, det.time_bins),
        flux=state.num_particles == 1, quad_tol=tol.quadrature, flux_tol=tol.flux, exit_events=events)
    return report, events


def _evolve_line(cfg, radii):
    """Interacting grid evolution with flux probes at ``+-R`` for every radius."""
    state = build_state(cfg.state)
    dyn = cfg.dynamics
    V = build_potential1d(dyn.potential)
    g = dyn.grid
    origin = -0.5 * g.points * g.spacing + 0.5 * g.spacing
    grid = GridState.from_analytic(state, origin, g.spacing, g.points)
    probes = np.array(sorted([-R for R in radii] + list(radii)))
    final, record = evolve_scattering(grid, V, dyn.duration, dyn.dt, dyn.dt_far, probes=probes)
    outgoing = extract_outgoing(final, V)
    return state, V, final, record, outgoing


def _line_report(cfg, R, state, V, record, outgoing):
    probes = record.positions
    i, j = int(np.argmin(np.abs(probes + R))), int(np.argmin(np.abs(probes - R)))
    sub = FluxRecord(record.times, probes[[i, j]], record.flux[:, [i, j]], record.cdf[:, [i, j]])
    report = line_exit_experiment(sub, outgoing, R, n=cfg.ensemble.n, seed=cfg.ensemble.seed)
    report.extra["half_line"] = {"transmitted": outgoing.half_line(+1), "reflected": outgoing.half_line(-1)}
    if V.kind == "square":
        T, Rc = averaged_barrier_coefficients(state, V)
        report.extra["analytic"] = {"transmission": T, "reflection": Rc}
    return report


def _run_one(cfg_dict, R):
    cfg = from_dict(cfg_dict)
    t0 = time.perf_counter()
    try:
        report, events = _run_free(cfg, R)
    except BohmExitError as exc:
        raise _with_context(exc, f"R={R:g}, seed={cfg.ensemble.seed}") from None
    return report, events, time.perf_counter() - t0


def _execute(cfg, radii, workers=1):
    """Reports (and exit events) for each radius, identical for any ``workers``."""
    if cfg.state is None:
        raise ConfigError("this command needs a state section", field="state")
    out, timings = {}, {}
    if cfg.dynamics.kind == "potential1d":
        t0 = time.perf_counter()
        try:
            state, V, _, record, outgoing = _evolve_line(cfg, radii)
            for R in radii:
                out[R] = (_line_report(cfg, R, state, V, record, outgoing), None)
        except BohmExitError as exc:
            raise _with_context(exc, f"potential1d, seed={cfg.ensemble.seed}") from None
        timings["evolution_and_exits"] = time.perf_counter() - t0
        return out, timings
    data = cfg.to_dict()
    if workers > 1 and len(radii) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, [data] * len(radii), radii))
    else:
        results = [_run_one(data, R) for R in radii]
    for R, (rep, ev, dt) in zip(radii, results):
        out[R] = (rep, ev)
        timings[f"R={R:g}"] = dt
    return out, timings


def _metadata_block(cfg):
    return {"config_hash": config_hash(cfg.to_dict()), "config": cfg.to_dict(), "seed": cfg.ensemble.seed,
            "versions": {"bohmexit": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
            "modeling_note": MODELING_NOTE}


def _write_cells(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "count", "empirical", "stderr", "flux_pred", "cone_pred", "z_score"])
        for c in report.cells:
            w.writerow(["-".join(map(str, c.cell)), c.count, repr(c.empirical), repr(c.stderr),
                        "" if c.flux_pred is None else repr(c.flux_pred), repr(c.cone_pred), repr(c.z_score)])


def _write_outputs(cfg, out_dir, reports, convergence, timings):
    os.makedirs(out_dir, exist_ok=True)
    files = []
    meta = _metadata_block(cfg)
    multi = len(reports) > 1
    for R, (rep, events) in reports.items():
        d = os.path.join(out_dir, f"R{R:g}") if multi else out_dir
        os.makedirs(d, exist_ok=True)
        rep.metadata = dict(meta)
        write_json(os.path.join(d, "report.json"), rep.as_dict())
        _write_cells(os.path.join(d, "cells.csv"), rep)
        files += [os.path.join(d, "report.json"), os.path.join(d, "cells.csv")]
        if events is not None:
            write_exit_events(os.path.join(d, "exit_events.csv"), events)
            files.append(os.path.join(d, "exit_events.csv"))
    if convergence is not None:
        write_json(os.path.join(out_dir, "convergence.json"), {**convergence.as_dict(), **meta})
        convergence.write_csv(os.path.join(out_dir, "convergence.csv"))
        files += [os.path.join(out_dir, "convergence.json"), os.path.join(out_dir, "convergence.csv")]
    with open(os.path.join(out_dir, "config.yaml"), "w") as fh:
        fh.write(dump_config(cfg))
    runtime = {"timings_s": timings, "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
               "python": sys.version.split()[0], "platform": platform.platform()}
    write_json(os.path.join(out_dir, "metadata.json"), runtime)
    files += [os.path.join(out_dir, "config.yaml"), os.path.join(out_dir, "metadata.json")]
    return files


def run(cfg, out_dir=None, workers=1):
    """Run the exit experiment at every configured radius.

    Parameters
    ----------
    cfg : ExperimentConfig
    out_dir : str, optional
        Artifact directory; ``cfg.outputs.dir`` when omitted, nothing is
        written when ``False``.
    workers : int
        Radii are farmed out to this many processes; outputs do not depend
        on it.

    Returns
    -------
    RunResult
    """
    radii = cfg.detector.radius_list
    reports, timings = _execute(cfg, radii, workers)
    convergence = _convergence(reports) if len(radii) > 1 else None
    meta = _metadata_block(cfg)
    for rep, _ in reports.values():
        rep.metadata = dict(meta)
    files = []
    if out_dir is not False:
        files = _write_outputs(cfg, out_dir or cfg.outputs.dir, reports, convergence, timings)
    return RunResult(cfg, {R: rep for R, (rep, _) in reports.items()}, convergence, files, timings)


def _convergence(reports):
    return ConvergenceTable([discrepancy_metrics(rep) for rep, _ in reports.values()])


def sweep_R(cfg, radii, out_dir=None, workers=1):
    """Convergence table over detector radii (at least two)."""
    radii = tuple(float(r) for r in radii)
    if len(radii) < 2:
        raise ArityError("a radius sweep needs at least two radii")
    res = run(cfg.override({"detector.radii": list(radii)}), out_dir=out_dir, workers=workers)
    return res.convergence, res


def run_born(cfg, out_dir=None):
    """Cross-section table of the ``born`` section; writes ``cross_section.csv``."""
    if cfg.born is None:
        raise ConfigError("this command needs a born section", field="born")
    b = cfg.born
    V = build_born_potential(b.potential)
    table = cross_section_table(V, b.k, b.order, b.angles)
    summary = {"k": b.k, "order": b.order, "sigma_total": float(table[-1, 2])}
    if b.potential.kind == "yukawa":
        summary["sigma_total_closed_form_first_order"] = yukawa_total_born(b.potential.strength, b.potential.mu, b.k)
    if out_dir is not False:
        d = out_dir or cfg.outputs.dir
        os.makedirs(d, exist_ok=True)
        write_cross_section_csv(os.path.join(d, "cross_section.csv"), table)
        write_json(os.path.join(d, "born.json"), {**summary, "config_hash": config_hash(cfg.to_dict())})
    return table, summary

"""Comparison reports and their CSV/JSON serialisations."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

EVENT_COLUMNS = ("traj_id", "particle_id", "t_exit", "x", "y", "z", "patch_id")


@dataclass
class CellRecord:
    """One detector cell: a patch, or a patch pair for two particles."""

    cell: tuple
    count: int
    empirical: float
    stderr: float
    flux_pred: float | None
    cone_pred: float
    z_score: float
    independence_z: float | None = None

    def as_dict(self):
        d = {"cell": list(self.cell), "count": self.count, "empirical": self.empirical,
             "stderr": self.stderr, "flux_pred": self.flux_pred, "cone_pred": self.cone_pred,
             "z_score": _finite(self.z_score)}
        if self.independence_z is not None:
            d["independence_z"] = _finite(self.independence_z)
        return d


def _finite(x):
    if x is None:
        return None
    x = float(x)
    return x if np.isfinite(x) else ("inf" if x > 0 else "-inf")


@dataclass
class ComparisonReport:
    """Empirical exit frequencies next to cone and flux predictions."""

    cells: list
    n: int
    n_ok: int
    seed: int
    radius: float
    partition: str
    num_particles: int
    chi2: dict
    time_marginals: list = field(default_factory=list)
    crossings: dict | None = None
    diagnostics: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def empirical(self):
        return np.array([c.empirical for c in self.cells])

    @property
    def cone(self):
        return np.array([c.cone_pred for c in self.cells])

    @property
    def flux(self):
        return np.array([np.nan if c.flux_pred is None else c.flux_pred for c in self.cells])

    @property
    def z_scores(self):
        return np.array([c.z_score for c in self.cells])

    @property
    def stderr(self):
        return np.array([c.stderr for c in self.cells])

    def max_abs_z(self, min_pred=0.0):
        sel = self.cone > min_pred
        return float(np.abs(self.z_scores[sel]).max()) if sel.any() else 0.0

    def as_dict(self):
        out = {"radius": self.radius, "n": self.n, "n_ok": self.n_ok, "seed": self.seed,
               "partition": self.partition, "num_particles": self.num_particles,
               "cells": [c.as_dict() for c in self.cells], "chi2": self.chi2,
               "time_marginals": self.time_marginals, "crossings": self.crossings,
               "diagnostics": self.diagnostics,
               "extra": {k: v for k, v in self.extra.items() if not k.startswith("_")}}
        out.update(self.metadata)
        return out


def config_hash(obj):
    """SHA-256 of the canonical JSON form of ``obj``."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def write_exit_events(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVENT_COLUMNS)
        for r in rows:
            w.writerow([r[0], r[1], repr(float(r[2])), *(repr(float(v)) for v in r[3:6]), r[6]])


def read_exit_events(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

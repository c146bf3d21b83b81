"""Experiment configuration: YAML schema, defaults and validation.

A configuration file is a YAML mapping with the sections below; every key
is optional except ``state.packets`` (or a ``born`` section on its own).

.. code-block:: yaml

    state:
      packets:                      # one entry per Gaussian packet
        - {center: [0, 0, 0], momentum: [0, 0, 5], width: 1.0}
      arrangement: single           # single | product | symmetrized | terms
      coefficients: [1, 1]          # symmetrized only; complex as [re, im]
      terms:                        # arrangement = terms only
        - {coefficient: 1, packets: [0, 1]}
    dynamics:
      kind: free                    # free | potential1d
      potential: {kind: square, height: 1.0, width: 1.5, center: 0.0}
      grid: {spacing: 0.125, points: 16384}
      dt: 0.005
      dt_far: 0.05
      duration: 200.0
    detector:
      radius: 200.0
      radii: [50, 100, 200]         # overrides radius when given
      partition: standard26         # standard26 | coarse8 | hemispheres | line
      axis: [0, 0, 1]
      T: 0.0
      t_max: null                   # null: automatic horizon
      time_bins: 12
    ensemble: {n: 10000, seed: 0}
    tolerances: {integrator: 1.0e-8, quadrature: 1.0e-6, flux: 1.0e-4}
    outputs: {dir: results, exit_events: true}
    born:
      potential: {kind: yukawa, strength: 0.1, mu: 1.0}
      k: 1.0
      order: 1
      angles: 91
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import yaml

from ..errors import ConfigError

PARTITIONS = ("standard26", "coarse8", "hemispheres", "line")
ARRANGEMENTS = ("single", "product", "symmetrized", "terms")


@dataclass(frozen=True)
class PacketConfig:
    center: tuple
    momentum: tuple
    width: tuple
    phase: float = 0.0


@dataclass(frozen=True)
class TermConfig:
    coefficient: tuple
    packets: tuple


@dataclass(frozen=True)
class StateConfig:
    packets: tuple
    arrangement: str = "single"
    coefficients: tuple = ((1.0, 0.0), (1.0, 0.0))
    terms: tuple = ()

    @property
    def dimension(self):
        return len(self.packets[0].center)

    @property
    def num_particles(self):
        if self.arrangement == "single":
            return 1
        if self.arrangement == "symmetrized":
            return 2
        if self.arrangement == "product":
            return len(self.packets)
        return len(self.terms[0].packets)


@dataclass(frozen=True)
class PotentialConfig:
    kind: str = "square"
    height: float = 1.0
    width: float = 1.5
    center: float = 0.0


@dataclass(frozen=True)
class GridConfig:
    spacing: float = 0.125
    points: int = 16384


@dataclass(frozen=True)
class DynamicsConfig:
    kind: str = "free"
    potential: PotentialConfig | None = None
    grid: GridConfig = GridConfig()
    dt: float = 0.005
    dt_far: float = 0.05
    duration: float = 200.0


@dataclass(frozen=True)
class DetectorConfig:
    radius: float = 200.0
    radii: tuple | None = None
    partition: str = "standard26"
    axis: tuple = (0.0, 0.0, 1.0)
    T: float = 0.0
    t_max: float | None = None
    time_bins: int = 12

    @property
    def radius_list(self):
        return tuple(self.radii) if self.radii else (self.radius,)


@dataclass(frozen=True)
class EnsembleConfig:
    n: int = 10_000
    seed: int = 0


@dataclass(frozen=True)
class ToleranceConfig:
    integrator: float = 1e-8
    quadrature: float = 1e-6
    flux: float = 1e-4


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "results"
    exit_events: bool = True


@dataclass(frozen=True)
class BornPotentialConfig:
    kind: str = "yukawa"
    strength: float = 0.1
    mu: float = 1.0
    depth: float = 0.0
    width: float = 1.0


@dataclass(frozen=True)
class BornConfig:
    potential: BornPotentialConfig = BornPotentialConfig()
    k: float = 1.0
    order: int = 1
    angles: int = 91


@dataclass(frozen=True)
class ExperimentConfig:
    state: StateConfig | None = None
    dynamics: DynamicsConfig = DynamicsConfig()
    detector: DetectorConfig = DetectorConfig()
    ensemble: EnsembleConfig = EnsembleConfig()
    tolerances: ToleranceConfig = ToleranceConfig()
    outputs: OutputConfig = OutputConfig()
    born: BornConfig | None = None

    def to_dict(self):
        return _plain(asdict(self))

    def override(self, updates):
        """Validated copy with dotted keys replaced, e.g. ``{"detector.radius": 50}``."""
        data = self.to_dict()
        for key, value in updates.items():
            node = data
            parts = key.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = value
        return from_dict(data)


# -- parsing helpers -----------------------------------------------------------------


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


class _Ctx:
    """Carries the source line of every dotted key for error messages."""

    def __init__(self, lines=None):
        self.lines = lines or {}

    def fail(self, path, message):
        line = self.lines.get(path)
        where = f" (line {line})" if line else ""
        raise ConfigError(f"{path}: {message}{where}", field=path, line=line)


def _line_map(text):
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    out = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = f"{path}.{k.value}" if path else str(k.value)
                out[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                p = f"{path}[{i}]"
                out[p] = v.start_mark.line + 1
                walk(v, p)

    if root is not None:
        walk(root, "")
    return out


def _section(ctx, data, path, cls):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        ctx.fail(path, "expected a mapping")
    allowed = {f.name for f in fields(cls)}
    for key in data:
        if key not in allowed:
            ctx.fail(f"{path}.{key}" if path else str(key), "unknown key")
    return data


def _number(ctx, path, value, positive=False, nonneg=False, integer=False):
    if isinstance(value, str):
        # YAML 1.1 reads exponents without a dot (1e-8) as strings
        try:
            value = float(value)
        except ValueError:
            pass
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        ctx.fail(path, f"expected a number, got {value!r}")
    if integer and (not float(value).is_integer()):
        ctx.fail(path, f"expected an integer, got {value!r}")
    if not math.isfinite(value):
        ctx.fail(path, "must be finite")
    if positive and not value > 0:
        ctx.fail(path, f"must be positive, got {value!r}")
    if nonneg and value < 0:
        ctx.fail(path, f"must be nonnegative, got {value!r}")
    return int(value) if integer else float(value)


def _vector(ctx, path, value, positive=False):
    vals = value if isinstance(value, (list, tuple)) else [value]
    return tuple(_number(ctx, f"{path}[{i}]" if len(vals) > 1 else path, v, positive=positive)
                 for i, v in enumerate(vals))


def _complex(ctx, path, value):
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            ctx.fail(path, "complex numbers are written [re, im]")
        return (_number(ctx, f"{path}[0]", value[0]), _number(ctx, f"{path}[1]", value[1]))
    return (_number(ctx, path, value), 0.0)


# -- sections ------------------------------------------------------------------------


def _packet(ctx, data, path):
    data = _section(ctx, data, path, PacketConfig)
    for key in ("center", "momentum"):
        if key not in data:
            ctx.fail(f"{path}.{key}", "required")
    center = _vector(ctx, f"{path}.center", data["center"])
    d = len(center)
    if d not in (1, 2, 3):
        ctx.fail(f"{path}.center", f"must have 1 to 3 components, got {d}")
    momentum = _vector(ctx, f"{path}.momentum", data["momentum"])
    if len(momentum) != d:
        ctx.fail(f"{path}.momentum", f"must have {d} components like center")
    width = _vector(ctx, f"{path}.width", data.get("width", 1.0), positive=True)
    if len(width) == 1:
        width = width * d
    if len(width) != d:
        ctx.fail(f"{path}.width", "must be a scalar or one value per axis")
    phase = _number(ctx, f"{path}.phase", data.get("phase", 0.0))
    return PacketConfig(center, momentum, width, phase)


def _state(ctx, data):
    data = _section(ctx, data, "state", StateConfig)
    raw = data.get("packets")
    if not isinstance(raw, list) or not raw:
        ctx.fail("state.packets", "a nonempty list of packets is required")
    packets = tuple(_packet(ctx, p, f"state.packets[{i}]") for i, p in enumerate(raw))
    d = len(packets[0].center)
    for i, p in enumerate(packets):
        if len(p.center) != d:
            ctx.fail(f"state.packets[{i}].center", "all packets must share a dimension")
    default = "single" if len(packets) == 1 else "product"
    arrangement = data.get("arrangement", default)
    if arrangement not in ARRANGEMENTS:
        ctx.fail("state.arrangement", f"must be one of {', '.join(ARRANGEMENTS)}")
    if arrangement == "single" and len(packets) != 1:
        ctx.fail("state.arrangement", "single needs exactly one packet")
    if arrangement == "symmetrized" and len(packets) != 2:
        ctx.fail("state.arrangement", "symmetrized needs exactly two packets")
    coeffs = data.get("coefficients", [1.0, 1.0])
    if not isinstance(coeffs, list) or len(coeffs) != 2:
        ctx.fail("state.coefficients", "expected two coefficients")
    coeffs = tuple(_complex(ctx, f"state.coefficients[{i}]", c) for i, c in enumerate(coeffs))
    if all(c == (0.0, 0.0) for c in coeffs):
        ctx.fail("state.coefficients", "at least one coefficient must be nonzero")
    terms = ()
    if arrangement == "terms":
        raw_terms = data.get("terms")
        if not isinstance(raw_terms, list) or not raw_terms:
            ctx.fail("state.terms", "a nonempty list of terms is required")
        out = []
        for i, t in enumerate(raw_terms):
            tp = f"state.terms[{i}]"
            t = _section(ctx, t, tp, TermConfig)
            idx = t.get("packets")
            if not isinstance(idx, list) or not idx:
                ctx.fail(f"{tp}.packets", "list of packet indices required")
            for j, v in enumerate(idx):
                if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v < len(packets):
                    ctx.fail(f"{tp}.packets[{j}]", f"must index state.packets (0..{len(packets) - 1})")
            out.append(TermConfig(_complex(ctx, f"{tp}.coefficient", t.get("coefficient", 1.0)), tuple(idx)))
        if len({len(t.packets) for t in out}) != 1:
            ctx.fail("state.terms", "every term needs the same number of particles")
        if all(t.coefficient == (0.0, 0.0) for t in out):
            ctx.fail("state.terms", "at least one coefficient must be nonzero")
        terms = tuple(out)
    elif data.get("terms"):
        ctx.fail("state.terms", "only used with arrangement: terms")
    return StateConfig(packets, arrangement, coeffs, terms)


def _dynamics(ctx, data):
    data = _section(ctx, data, "dynamics", DynamicsConfig)
    kind = data.get("kind", "free")
    if kind not in ("free", "potential1d"):
        ctx.fail("dynamics.kind", "must be free or potential1d")
    pot = None
    if kind == "potential1d":
        p = _section(ctx, data.get("potential"), "dynamics.potential", PotentialConfig)
        pk = p.get("kind", "square")
        if pk not in ("square", "gaussian"):
            ctx.fail("dynamics.potential.kind", "must be square or gaussian")
        pot = PotentialConfig(pk, _number(ctx, "dynamics.potential.height", p.get("height", 1.0)),
                              _number(ctx, "dynamics.potential.width", p.get("width", 1.5), positive=True),
                              _number(ctx, "dynamics.potential.center", p.get("center", 0.0)))
    elif data.get("potential") is not None:
        ctx.fail("dynamics.potential", "only used with kind: potential1d")
    g = _section(ctx, data.get("grid"), "dynamics.grid", GridConfig)
    grid = GridConfig(_number(ctx, "dynamics.grid.spacing", g.get("spacing", 0.125), positive=True),
                      _number(ctx, "dynamics.grid.points", g.get("points", 16384), integer=True))
    if grid.points < 16:
        ctx.fail("dynamics.grid.points", "need at least 16 grid points")
    return DynamicsConfig(kind, pot, grid,
                          _number(ctx, "dynamics.dt", data.get("dt", 0.005), positive=True),
                          _number(ctx, "dynamics.dt_far", data.get("dt_far", 0.05), positive=True),
                          _number(ctx, "dynamics.duration", data.get("duration", 200.0), positive=True))


def _detector(ctx, data, dimension):
    data = _section(ctx, data, "detector", DetectorConfig)
    radius = _number(ctx, "detector.radius", data.get("radius", 200.0), positive=True)
    radii = data.get("radii")
    if radii is not None:
        if not isinstance(radii, list) or not radii:
            ctx.fail("detector.radii", "expected a nonempty list of radii")
        radii = tuple(_number(ctx, f"detector.radii[{i}]", r, positive=True) for i, r in enumerate(radii))
    default = "line" if dimension == 1 else "standard26"
    partition = data.get("partition", default)
    if partition not in PARTITIONS:
        ctx.fail("detector.partition", f"must be one of {', '.join(PARTITIONS)}")
    if dimension is not None and (partition == "line") != (dimension == 1):
        ctx.fail("detector.partition", f"{partition} does not fit {dimension}D configurations")
    axis = _vector(ctx, "detector.axis", data.get("axis", [0.0, 0.0, 1.0]))
    if len(axis) != 3 or all(a == 0 for a in axis):
        ctx.fail("detector.axis", "must be a nonzero 3-vector")
    T = _number(ctx, "detector.T", data.get("T", 0.0), nonneg=True)
    t_max = data.get("t_max")
    if t_max is not None:
        t_max = _number(ctx, "detector.t_max", t_max, positive=True)
        if t_max <= T:
            ctx.fail("detector.t_max", "must exceed detector.T")
    bins = _number(ctx, "detector.time_bins", data.get("time_bins", 12), integer=True)
    if bins < 2:
        ctx.fail("detector.time_bins", "need at least 2 time bins")
    return DetectorConfig(radius, radii, partition, axis, T, t_max, bins)


def _simple(ctx, data, name, cls, rules):
    data = _section(ctx, data, name, cls)
    defaults = cls()
    vals = {}
    for f in fields(cls):
        v = data.get(f.name, getattr(defaults, f.name))
        rule = rules.get(f.name)
        vals[f.name] = v if rule is None else rule(f"{name}.{f.name}", v)
    return cls(**vals)


def _born(ctx, data):
    data = _section(ctx, data, "born", BornConfig)
    p = _section(ctx, data.get("potential"), "born.potential", BornPotentialConfig)
    kind = p.get("kind", "yukawa")
    if kind not in ("yukawa", "gaussian"):
        ctx.fail("born.potential.kind", "must be yukawa or gaussian")
    pot = BornPotentialConfig(kind,
                              _number(ctx, "born.potential.strength", p.get("strength", 0.1)),
                              _number(ctx, "born.potential.mu", p.get("mu", 1.0), positive=True),
                              _number(ctx, "born.potential.depth", p.get("depth", 0.0)),
                              _number(ctx, "born.potential.width", p.get("width", 1.0), positive=True))
    order = _number(ctx, "born.order", data.get("order", 1), integer=True)
    if order not in (1, 2):
        ctx.fail("born.order", "must be 1 or 2")
    angles = _number(ctx, "born.angles", data.get("angles", 91), integer=True)
    if angles < 2:
        ctx.fail("born.angles", "need at least 2 angles")
    return BornConfig(pot, _number(ctx, "born.k", data.get("k", 1.0), positive=True), order, angles)


def from_dict(data, lines=None):
    """Validate a parsed mapping and fill defaults."""
    ctx = _Ctx(lines)
    data = _section(ctx, data, "", ExperimentConfig)
    state = _state(ctx, data["state"]) if data.get("state") is not None else None
    born = _born(ctx, data["born"]) if data.get("born") is not None else None
    if state is None and born is None:
        ctx.fail("state", "required unless the file only configures born")
    dim = state.dimension if state is not None else None
    dynamics = _dynamics(ctx, data.get("dynamics"))
    if dynamics.kind == "potential1d" and state is not None:
        if dim != 1 or state.num_particles != 1:
            ctx.fail("dynamics.kind", "potential1d needs a single particle in one dimension")
    if state is not None and dim == 2:
        ctx.fail("state.packets[0].center", "exit experiments are defined in 1D and 3D only")
    detector = _detector(ctx, data.get("detector"), dim)
    ensemble = _simple(ctx, data.get("ensemble"), "ensemble", EnsembleConfig, {
        "n": lambda p, v: _number(ctx, p, v, positive=True, integer=True),
        "seed": lambda p, v: _number(ctx, p, v, nonneg=True, integer=True)})
    tol = _simple(ctx, data.get("tolerances"), "tolerances", ToleranceConfig, {
        k: (lambda p, v: _number(ctx, p, v, positive=True)) for k in ("integrator", "quadrature", "flux")})

    def _bool(p, v):
        if not isinstance(v, bool):
            ctx.fail(p, "expected true or false")
        return v

    def _str(p, v):
        if not isinstance(v, str) or not v:
            ctx.fail(p, "expected a nonempty string")
        return v

    outputs = _simple(ctx, data.get("outputs"), "outputs", OutputConfig, {"dir": _str, "exit_events": _bool})
    return ExperimentConfig(state, dynamics, detector, ensemble, tol, outputs, born)


def loads_config(text):
    """Parse and validate YAML text."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        where = f" at line {line}" if line else ""
        raise ConfigError(f"could not parse configuration{where}: {getattr(exc, 'problem', exc)}",
                          line=line) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping", line=1)
    return from_dict(data, _line_map(text))


def load_config(path):
    """Read, validate and default-fill an experiment configuration file."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc.strerror}") from exc
    return loads_config(text)


def dump_config(cfg):
    """YAML text that :func:`loads_config` parses back to ``cfg``."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def save_config(cfg, path):
    with open(path, "w") as fh:
        fh.write(dump_config(cfg))

"""Scenario configuration: TOML schema, per-scenario defaults and validation.

A config document has the sections ``[scenario]`` (with a ``[scenario.params]``
table specific to the scenario), ``[grid]``, ``[packet]``, ``[[sites]]``,
``[physics]`` and ``[output]``.  Omitted keys take the scenario's defaults;
unknown keys are rejected with their path.
"""
from __future__ import annotations

import copy
import hashlib
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .detector import MAX_RATE_STEP
from .errors import InconsistentPhysics, SchemaViolation

SCENARIOS = ("time_measurement", "position_measurement", "revival", "back_reaction", "nested_fuzzy")


@dataclass
class GridConfig:
    n_points: int
    dx: float
    dt: float
    x_min: float
    boundary: str = "absorbing"
    sponge_fraction: float = 0.1
    sponge_strength: float = 20.0


@dataclass
class PacketConfig:
    shape: str = "gaussian"
    x0: float = 0.0
    width: float = 1.0
    k0: float = 0.0
    gap: float = 8.0
    count: int = 1
    weights: Optional[List[float]] = None
    phases: Optional[List[float]] = None
    lambda_par: Optional[float] = None
    phase_offset: float = 0.0
    taper: Optional[float] = None


@dataclass
class SiteConfig:
    id: str
    x: float
    width: float
    tau: Optional[float] = None
    binding_energy: Optional[float] = None
    active: bool = True
    taper: Optional[float] = None


@dataclass
class PhysicsConfig:
    mass: float = 1.0
    c: float = 10.0
    tau: float = 0.5
    binding_energy: float = 1.0
    scheme: str = "crank-nicolson"
    geometry: str = "radial-3d"
    branch_floor: float = 1e-9
    sigma_phi: float = 0.0


@dataclass
class TimeParams:
    cluster_prominence: float = 1e-2
    stop_residual: float = 1e-10


@dataclass
class PositionParams:
    stop_residual: float = 1e-10
    curve_points: int = 21
    r_min_over_w: float = 20.0
    r_decades: float = 1.0
    proportional_beta: float = 0.5


@dataclass
class RevivalParams:
    capture_time: Optional[float] = None
    hold_time: float = 1.0
    kick: float = 0.0
    flight_time: float = 3.0
    flight_dt: float = 0.01
    ensemble: int = 1000
    visibility_threshold: float = 1e-6


@dataclass
class BackReactionParams:
    trap_separation: float = 4.0
    trap_width: float = 0.5
    trap_weights: List[float] = field(default_factory=lambda: [0.5, 0.5])
    site_width: Optional[float] = None
    capture_steps: Optional[int] = None


@dataclass
class NestedParams:
    spacing: float = 2.0
    n_sites: int = 5
    site_width: Optional[float] = None
    device_weights: List[float] = field(default_factory=lambda: [0.5, 0.5])
    active: Optional[List[bool]] = None
    meta_order: str = "after"
    capture_steps: Optional[int] = None


PARAMS = {
    "time_measurement": TimeParams,
    "position_measurement": PositionParams,
    "revival": RevivalParams,
    "back_reaction": BackReactionParams,
    "nested_fuzzy": NestedParams,
}
DERIVED_SITES = ("back_reaction", "nested_fuzzy")


@dataclass
class ScenarioSection:
    name: str
    seed: int = 0
    t_end: Optional[float] = None
    params: Any = None


@dataclass
class OutputConfig:
    dir: str = "out"
    plots: bool = True
    series_stride: int = 10


@dataclass
class ScenarioConfig:
    scenario: ScenarioSection
    grid: GridConfig
    packet: PacketConfig
    sites: List[SiteConfig]
    physics: PhysicsConfig
    output: OutputConfig = field(default_factory=OutputConfig)

    def site_tau(self, s: SiteConfig) -> float:
        return self.physics.tau if s.tau is None else s.tau

    def site_binding(self, s: SiteConfig) -> float:
        return self.physics.binding_energy if s.binding_energy is None else s.binding_energy


_DEFAULTS: Dict[str, dict] = {
    "time_measurement": {
        "grid": {"n_points": 4400, "dx": 0.025, "dt": 0.005, "x_min": -61.0},
        "packet": {"shape": "pulse_train", "x0": -3.0, "width": 4.0, "k0": 8.0, "gap": 8.0, "count": 2},
        "sites": [{"id": "A", "x": 18.0, "width": 36.0, "taper": 1.0}],
        "physics": {"tau": 0.5},
    },
    "position_measurement": {
        "grid": {"n_points": 1000, "dx": 0.05, "dt": 0.002, "x_min": -24.975},
        "packet": {"shape": "gaussian", "x0": 0.0, "width": 3.0, "k0": 0.0},
        "sites": [{"id": "A", "x": -7.5, "width": 15.0, "taper": 0.0},
                  {"id": "B", "x": 7.5, "width": 15.0, "taper": 0.0}],
        "physics": {"tau": 0.05},
    },
    "revival": {
        "grid": {"n_points": 1600, "dx": 0.05, "dt": 0.002, "x_min": -40.0},
        "packet": {"shape": "pulse_train", "x0": 3.0, "width": 1.5, "k0": 0.0, "gap": 2.0, "count": 2,
                   "phases": [0.0, 1.0]},
        "sites": [{"id": "A", "x": -3.0, "width": 4.0}, {"id": "B", "x": 3.0, "width": 4.0}],
        "physics": {"tau": 0.05},
    },
    "back_reaction": {
        "grid": {"n_points": 2000, "dx": 0.01, "dt": 0.005, "x_min": -10.0},
        "packet": {"shape": "pulse_train", "width": 0.5, "count": 2},
        "sites": [],
        "physics": {"tau": 0.05, "mass": 100.0},
    },
    "nested_fuzzy": {
        "grid": {"n_points": 2200, "dx": 0.05, "dt": 0.005, "x_min": -50.0},
        "packet": {"shape": "transverse_phase", "x0": 4.0, "width": 10.0, "lambda_par": 4.0, "taper": 0.5},
        "sites": [],
        "physics": {"tau": 0.05},
    },
}


def default_dict(name: str) -> dict:
    if name not in SCENARIOS:
        raise SchemaViolation("scenario.name", f"unknown scenario {name!r}; expected one of {SCENARIOS}")
    return copy.deepcopy(_DEFAULTS[name])


def _check_keys(cls, data: dict, path: str):
    names = {f.name for f in fields(cls)}
    for key in data:
        if key not in names:
            raise SchemaViolation(f"{path}.{key}" if path else key, "unknown key")


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise SchemaViolation(path, "expected a table")
    _check_keys(cls, data, path)
    try:
        return cls(**data)
    except TypeError as exc:
        raise SchemaViolation(path, str(exc)) from None


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def config_from_dict(doc: dict) -> ScenarioConfig:
    allowed = {"scenario", "grid", "packet", "sites", "physics", "output"}
    for key in doc:
        if key not in allowed:
            raise SchemaViolation(key, "unknown section")
    scen = doc.get("scenario")
    if not isinstance(scen, dict) or "name" not in scen:
        raise SchemaViolation("scenario.name", "required")
    name = scen["name"]
    base = default_dict(name)
    if name in DERIVED_SITES and doc.get("sites"):
        raise SchemaViolation("sites", f"sites are derived from scenario.params for {name}")
    merged = _merge(base, {k: v for k, v in doc.items() if k != "scenario"})

    params_cls = PARAMS[name]
    scen = dict(scen)
    params = _build(params_cls, scen.pop("params", {}) or {}, "scenario.params")
    section = _build(ScenarioSection, scen, "scenario")
    section.params = params

    sites = merged.get("sites", [])
    if not isinstance(sites, list):
        raise SchemaViolation("sites", "expected an array of tables")
    cfg = ScenarioConfig(
        scenario=section,
        grid=_build(GridConfig, merged["grid"], "grid"),
        packet=_build(PacketConfig, merged.get("packet", {}), "packet"),
        sites=[_build(SiteConfig, s, f"sites[{i}]") for i, s in enumerate(sites)],
        physics=_build(PhysicsConfig, merged.get("physics", {}), "physics"),
        output=_build(OutputConfig, merged.get("output", {}), "output"),
    )
    check_physics(cfg)
    return cfg


def parse_config(text: str) -> ScenarioConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SchemaViolation("<document>", str(exc)) from None
    return config_from_dict(doc)


def load_config(path) -> ScenarioConfig:
    with open(path, "rb") as fh:
        return parse_config(fh.read().decode("utf-8"))


def check_physics(cfg: ScenarioConfig):
    g = cfg.grid
    if g.n_points < 16 or g.dx <= 0 or g.dt <= 0:
        raise InconsistentPhysics("grid needs n_points >= 16 and positive dx, dt")
    if cfg.physics.mass <= 0 or cfg.physics.c <= 0 or cfg.physics.tau <= 0:
        raise InconsistentPhysics("mass, c and tau must be positive")
    for i, s in enumerate(cfg.sites):
        tau = cfg.site_tau(s)
        if tau <= 0:
            raise InconsistentPhysics(f"sites[{i}].tau must be positive")
        if g.dt / tau > MAX_RATE_STEP:
            raise InconsistentPhysics(
                f"sites[{i}]: capture rate * dt = {g.dt / tau:g} exceeds {MAX_RATE_STEP}")
        if s.width < 2 * g.dx:
            raise InconsistentPhysics(f"sites[{i}]: width {s.width:g} below 2*dx")
    if cfg.scenario.name in DERIVED_SITES and g.dt / cfg.physics.tau > MAX_RATE_STEP:
        raise InconsistentPhysics(
            f"physics: capture rate * dt = {g.dt / cfg.physics.tau:g} exceeds {MAX_RATE_STEP}")
    if cfg.physics.sigma_phi < 0:
        raise InconsistentPhysics("physics.sigma_phi must be non-negative")


def _strip_none(obj):
    if isinstance(obj, dict):
        return {k: _strip_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, list):
        return [_strip_none(v) for v in obj]
    return obj


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return _strip_none(asdict(cfg))


def emit_config(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def config_hash(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(emit_config(cfg).encode("utf-8")).hexdigest()


def set_path(doc: dict, dotted: str, value):
    """Assign ``value`` at a dotted key path such as ``scenario.params.trap_separation``."""
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise SchemaViolation(dotted, "path does not name a table")
    node[keys[-1]] = value

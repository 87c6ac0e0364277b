"""Scenario files: JSON documents describing one closed-loop experiment.

Missing parameters are filled from the defaults below; unknown keys are
rejected with the offending key path and its line in the source file.
"""
from __future__ import annotations

import copy
import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

PARAM_DEFAULTS = {
    "v_min": 1.0,
    "a_min": -2.5,
    "a_max": 2.5,
    "a_lat_hat": 2.5,
    "j_min": -1.5,
    "j_max": 1.5,
    "kappa_min": -3.0,
    "kappa_max": 3.0,
    "w_d": 1.0,
    "w_kappa": 20.0,
    "w_v": 0.1,
    "w_a": 1.0,
    "alpha": 10.0,
    "beta": 5e-3,
}

CONSTRAINT_SETS = ("none", "tmin", "tmin_tmax", "all")
SIGNAL_STATES = ("green", "yellow", "red")


class ScenarioError(ValueError):
    """Malformed scenario document."""

    def __init__(self, message: str, line: Optional[int] = None, source: Optional[str] = None):
        where = ""
        if source:
            where = f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip())
        self.line = line


@dataclass
class GridConfig:
    delta_s: float = 0.5
    horizon: float = 125.0


@dataclass
class Params:
    v_min: float = PARAM_DEFAULTS["v_min"]
    a_min: float = PARAM_DEFAULTS["a_min"]
    a_max: float = PARAM_DEFAULTS["a_max"]
    a_lat_hat: float = PARAM_DEFAULTS["a_lat_hat"]
    j_min: float = PARAM_DEFAULTS["j_min"]
    j_max: float = PARAM_DEFAULTS["j_max"]
    kappa_min: float = PARAM_DEFAULTS["kappa_min"]
    kappa_max: float = PARAM_DEFAULTS["kappa_max"]
    w_d: float = PARAM_DEFAULTS["w_d"]
    w_kappa: float = PARAM_DEFAULTS["w_kappa"]
    w_v: float = PARAM_DEFAULTS["w_v"]
    w_a: float = PARAM_DEFAULTS["w_a"]
    alpha: float = PARAM_DEFAULTS["alpha"]
    beta: float = PARAM_DEFAULTS["beta"]


@dataclass
class SolverConfig:
    n_iters: int = 5
    tol: float = 1e-6
    mu_default: float = 1e2
    mu_tmax: float = 1e3
    lambda_max_default: float = 1e2
    lambda_max_tmax: float = 1e3


@dataclass
class ReferenceConfig:
    points: list = field(default_factory=list)
    noise_sigma: float = 0.0
    seed: int = 0


@dataclass
class SpeedLimit:
    v: float
    s_start: float = 0.0
    s_end: float = 1e9


@dataclass
class Actor:
    """Constant-velocity traffic participant.

    The actor moves along ``path`` (defaults to the ego reference) starting
    at arc length ``s0`` at ``spawn_time``; with ``relative`` set, ``s0`` is
    measured from the ego position at spawn time.
    """

    v: float
    s0: float = 0.0
    spawn_time: float = 0.0
    path: Optional[list] = None
    relative: bool = False
    length: float = 4.5
    width: float = 1.8
    name: str = ""


@dataclass
class SignalPhase:
    t: float
    state: str


@dataclass
class Signal:
    s: float
    schedule: list = field(default_factory=list)
    deadline: bool = False
    name: str = ""


@dataclass
class SpatioTemporalEntry:
    kind: str
    s: float
    t: float
    alpha: Optional[float] = None
    beta: Optional[float] = None
    name: str = ""


@dataclass
class EgoConfig:
    s: float = 0.0
    v: float = 0.0
    length: float = 4.5
    width: float = 1.8


@dataclass
class SimConfig:
    duration: float = 20.0
    dt: float = 0.01
    default_speed_limit: float = 13.89
    d_safe_const: float = 6.0
    d_safe_time: float = 1.0
    lateral_threshold: float = 2.0
    wheelbase: float = 2.9
    kp: float = 0.5
    budget_ms: Optional[float] = None
    profile_stride: int = 100
    constraint_set: str = "all"


@dataclass
class Scenario:
    name: str = ""
    description: str = ""
    grid: GridConfig = field(default_factory=GridConfig)
    params: Params = field(default_factory=Params)
    solver: SolverConfig = field(default_factory=SolverConfig)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    speed_limits: list = field(default_factory=list)
    actors: list = field(default_factory=list)
    signals: list = field(default_factory=list)
    spatiotemporal: list = field(default_factory=list)
    ego: EgoConfig = field(default_factory=EgoConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


_SECTIONS = {
    "grid": GridConfig,
    "params": Params,
    "solver": SolverConfig,
    "reference": ReferenceConfig,
    "ego": EgoConfig,
    "sim": SimConfig,
}
_LISTS = {
    "speed_limits": SpeedLimit,
    "actors": Actor,
    "signals": Signal,
    "spatiotemporal": SpatioTemporalEntry,
}


def _line_of(text: Optional[str], key: str) -> Optional[int]:
    if not text:
        return None
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    if m is None:
        return None
    return text.count("\n", 0, m.start()) + 1


def _build(cls, data: Any, path: str, text: Optional[str], source: Optional[str]):
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: expected an object, got {type(data).__name__}", None, source)
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ScenarioError(f"unknown key {path}.{key}", _line_of(text, key), source)
    kwargs = {}
    for key, value in data.items():
        if cls is Signal and key == "schedule":
            value = [_build(SignalPhase, v, f"{path}.schedule[{i}]", text, source) for i, v in enumerate(value)]
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ScenarioError(f"{path}: {exc}", None, source) from None


def scenario_from_dict(data: dict, text: Optional[str] = None, source: Optional[str] = None) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object", 1, source)
    allowed = {f.name for f in fields(Scenario)}
    for key in data:
        if key not in allowed:
            raise ScenarioError(f"unknown key {key}", _line_of(text, key), source)
    kwargs: dict = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key, text, source)
        elif key in _LISTS:
            if not isinstance(value, list):
                raise ScenarioError(f"{key}: expected a list", _line_of(text, key), source)
            kwargs[key] = [_build(_LISTS[key], v, f"{key}[{i}]", text, source) for i, v in enumerate(value)]
        else:
            kwargs[key] = value
    scenario = Scenario(**kwargs)
    validate(scenario, text, source)
    return scenario


def validate(sc: Scenario, text: Optional[str] = None, source: Optional[str] = None) -> None:
    def fail(msg, key=None):
        raise ScenarioError(msg, _line_of(text, key) if key else None, source)

    if sc.grid.delta_s <= 0 or sc.grid.horizon <= 2 * sc.grid.delta_s:
        fail("grid: need delta_s > 0 and horizon > 2 * delta_s", "grid")
    p = sc.params
    if not (p.a_min < 0 < p.a_max) or not (p.j_min < 0 < p.j_max):
        fail("params: need a_min < 0 < a_max and j_min < 0 < j_max", "params")
    if p.v_min <= 0 or p.a_lat_hat <= 0 or p.kappa_min >= p.kappa_max:
        fail("params: need v_min > 0, a_lat_hat > 0 and kappa_min < kappa_max", "params")
    if min(p.w_d, p.w_kappa, p.w_v, p.w_a) <= 0:
        fail("params: weights must be positive", "params")
    if p.alpha < 0 or not (0 < p.beta < 1):
        fail("params: need alpha >= 0 and 0 < beta < 1", "alpha")
    if sc.solver.n_iters < 1 or sc.solver.tol <= 0:
        fail("solver: need n_iters >= 1 and tol > 0", "solver")
    if len(sc.reference.points) < 2:
        fail("reference: need at least 2 points", "reference")
    for pt in sc.reference.points:
        if not (isinstance(pt, (list, tuple)) and len(pt) == 2):
            fail("reference.points: each point must be [x, y]", "points")
    if sc.reference.noise_sigma < 0:
        fail("reference.noise_sigma must be non-negative", "noise_sigma")
    for sig in sc.signals:
        for ph in sig.schedule:
            if ph.t < 0 or ph.state not in SIGNAL_STATES:
                fail(f"signal schedule entries need t >= 0 and a state in {SIGNAL_STATES}", "schedule")
    for a in sc.actors:
        if a.v < 0 or a.spawn_time < 0:
            fail("actors need v >= 0 and spawn_time >= 0", "actors")
    for st in sc.spatiotemporal:
        if st.kind not in ("min", "max") or st.t <= 0:
            fail("spatiotemporal entries need kind 'min'/'max' and t > 0", "spatiotemporal")
    if sc.ego.v < 0:
        fail("ego.v must be non-negative", "ego")
    if sc.sim.dt <= 0 or sc.sim.duration <= 0:
        fail("sim: need dt > 0 and duration > 0", "sim")
    if sc.sim.constraint_set not in CONSTRAINT_SETS:
        fail(f"sim.constraint_set must be one of {CONSTRAINT_SETS}", "constraint_set")


def loads(text: str, source: Optional[str] = None) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno, source) from None
    return scenario_from_dict(data, text, source)


def load(path) -> Scenario:
    path = Path(path)
    return loads(path.read_text(), str(path))


def dumps(sc: Scenario) -> str:
    return sc.to_json()


def bundled_dir() -> Path:
    return Path(__file__).parent / "scenarios"


def bundled(name: str) -> Scenario:
    """Load one of the scenarios shipped with the package, e.g. ``"fig1_merge_light"``."""
    if not name.endswith(".json"):
        name += ".json"
    return load(bundled_dir() / name)


def with_overrides(sc: Scenario, **sim_overrides) -> Scenario:
    out = copy.deepcopy(sc)
    for k, v in sim_overrides.items():
        setattr(out.sim, k, v)
    return out

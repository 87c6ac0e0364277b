"""Closed-loop simulation: replanning every control cycle on a kinematic bicycle.

Each cycle localizes the ego on the reference, smooths the path ahead,
turns actors, signals and arrival-time bounds into velocity constraints,
optimizes the velocity profile and executes both through a simple
low-level controller.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from shapely.geometry import Polygon

from . import al, ilqr
from .grid import SpatialGrid
from .path import PathWeights, ReferencePolyline, SmoothedPath, curvature_speed_limit, smooth_path
from .scenario import Scenario
from .velocity import (
    LimitProfile,
    ProfileWeights,
    ReferenceProfile,
    SpatioTemporalConstraint,
    VelocityTrajectory,
    apply_dynamic_constraint,
    apply_static_constraint,
    generate_reference,
    optimize_profile,
    postprocess_standstill,
)

LOG = logging.getLogger(__name__)

MAX_STEER = 0.6
NOISE_SPACING = 1.0


# -- geometry ---------------------------------------------------------------

class Polyline:
    """Piecewise-linear curve with arc-length lookup and projection."""

    def __init__(self, points) -> None:
        pts = np.asarray(points, dtype=float)
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-9
        pts = pts[keep]
        if len(pts) < 2:
            raise ValueError("degenerate polyline: fewer than 2 distinct points")
        self.points = pts
        d = np.diff(pts, axis=0)
        self.seg_len = np.linalg.norm(d, axis=1)
        self.seg_dir = d / self.seg_len[:, None]
        self.s = np.concatenate([[0.0], np.cumsum(self.seg_len)])

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def at(self, s: float) -> tuple[float, float, float]:
        """Position and heading at arc length ``s``; extrapolates past the ends."""
        i = int(np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.seg_len) - 1))
        p = self.points[i] + (s - self.s[i]) * self.seg_dir[i]
        return float(p[0]), float(p[1]), float(math.atan2(self.seg_dir[i, 1], self.seg_dir[i, 0]))

    def sample(self, s: np.ndarray) -> np.ndarray:
        idx = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.seg_len) - 1)
        return self.points[idx] + (s - self.s[idx])[:, None] * self.seg_dir[idx]

    def project(self, x: float, y: float, s_lo: float = -np.inf, s_hi: float = np.inf
                ) -> tuple[float, float]:
        """Arc length and distance of the closest point, searching segments overlapping ``[s_lo, s_hi]``."""
        lo = max(int(np.searchsorted(self.s, s_lo, side="right")) - 1, 0)
        hi = min(int(np.searchsorted(self.s, s_hi, side="left")), len(self.seg_len) - 1)
        a = self.points[lo:hi + 1]
        dvec = self.seg_dir[lo:hi + 1]
        L = self.seg_len[lo:hi + 1]
        rel = np.array([x, y]) - a
        tau = np.einsum("ij,ij->i", rel, dvec)
        # the last segment extends forward, the first backward
        upper = L.copy()
        if hi == len(self.seg_len) - 1:
            upper[-1] = np.inf
        lower = np.zeros_like(L)
        if lo == 0:
            lower[0] = -np.inf
        tau = np.clip(tau, lower, upper)
        foot = a + tau[:, None] * dvec
        dist = np.hypot(x - foot[:, 0], y - foot[:, 1])
        j = int(np.argmin(dist))
        return float(self.s[lo + j] + tau[j]), float(dist[j])


def vehicle_box(x: float, y: float, heading: float, length: float, width: float) -> Polygon:
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    corners = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
    return Polygon([(x + c * px - s * py, y + s * px + c * py) for px, py in corners])


# -- vehicle ----------------------------------------------------------------

@dataclass(frozen=True)
class EgoState:
    x: float
    y: float
    psi: float
    v: float
    s: float = 0.0


def step_vehicle(ego: EgoState, accel: float, steer: float, dt: float = 0.01, wheelbase: float = 2.9
                 ) -> EgoState:
    """One RK4 step of the kinematic bicycle; speed is floored at zero."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    tan_d = math.tan(steer)

    def f(state):
        _, _, psi, v = state
        return np.array([v * math.cos(psi), v * math.sin(psi), v * tan_d / wheelbase, accel])

    z = np.array([ego.x, ego.y, ego.psi, ego.v])
    k1 = f(z)
    k2 = f(z + 0.5 * dt * k1)
    k3 = f(z + 0.5 * dt * k2)
    k4 = f(z + dt * k3)
    z = z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return EgoState(float(z[0]), float(z[1]), float(z[2]), max(float(z[3]), 0.0), ego.s)


@dataclass(frozen=True)
class ControlCommand:
    accel: float
    steer: float
    out_of_plan: bool = False


def low_level_control(ego: EgoState, path: SmoothedPath, profile: VelocityTrajectory,
                      kp: float = 0.5, wheelbase: float = 2.9, a_min: float = -2.5,
                      a_max: float = 2.5) -> ControlCommand:
    """Feed-forward plus proportional speed control and pure-pursuit steering.

    The plan is anchored at ``path.grid.s0``; ``profile`` uses plan-relative
    arc length. A standstill sample ahead caps the command at the constant
    deceleration that stops exactly there. The command saturates at the
    actuator limits ``[a_min, a_max]``.
    """
    s_rel = ego.s - path.grid.s0
    sv = profile.grid.s
    if s_rel < -0.5 * profile.grid.ds or s_rel > sv[-1]:
        return ControlCommand(0.0, 0.0, True)
    v_star = float(np.interp(s_rel, sv, profile.v))
    a_star = float(np.interp(s_rel, sv, profile.a))
    accel = a_star + kp * (v_star - ego.v)

    stop = np.flatnonzero((profile.v <= 0.0) & (sv >= s_rel - 0.5 * profile.grid.ds))
    if stop.size:
        d = max(float(sv[stop[0]]) - s_rel, 0.0)
        brake = -ego.v * ego.v / (2.0 * d) if d > 1e-3 else (a_min if ego.v > 0.0 else 0.0)
        accel = min(accel, max(brake, a_min))

    lookahead = max(3.0, 0.5 * ego.v)
    sp = path.grid.s - path.grid.s0
    tx = float(np.interp(s_rel + lookahead, sp, path.x))
    ty = float(np.interp(s_rel + lookahead, sp, path.y))
    alpha = math.atan2(ty - ego.y, tx - ego.x) - ego.psi
    alpha = math.atan2(math.sin(alpha), math.cos(alpha))
    steer = math.atan2(2.0 * wheelbase * math.sin(alpha), lookahead)
    accel = min(max(accel, a_min), a_max)
    return ControlCommand(float(accel), float(np.clip(steer, -MAX_STEER, MAX_STEER)))


# -- world ------------------------------------------------------------------

@dataclass
class ActorTrack:
    name: str
    line: Polyline
    v: float
    s0: float
    spawn_time: float
    relative: bool
    length: float
    width: float
    s_start: Optional[float] = None

    def active(self, t: float) -> bool:
        return t >= self.spawn_time and self.s_start is not None

    def pose(self, t: float) -> tuple[float, float, float]:
        return self.line.at(self.s_start + self.v * (t - self.spawn_time))


@dataclass
class SignalTrack:
    name: str
    s: float
    phases: list
    deadline: bool

    def state(self, t: float) -> str:
        current = "green"
        for ph in self.phases:
            if ph.t <= t:
                current = ph.state
        return current

    def next_red(self, t: float) -> Optional[float]:
        if self.state(t) == "red":
            return t
        for ph in self.phases:
            if ph.t > t and ph.state == "red":
                return ph.t
        return None


class World:
    """Runtime view of a :class:`Scenario`: geometry, actors, signals and planner settings."""

    def __init__(self, scenario: Scenario, constraint_set: Optional[str] = None, seed: Optional[int] = None,
                 arrival_tol: float = 0.1) -> None:
        self.scenario = scenario
        self.arrival_tol = arrival_tol
        p = scenario.params
        self.constraint_set = constraint_set or scenario.sim.constraint_set
        self.path_weights = PathWeights(p.w_d, p.w_kappa)
        self.weights = ProfileWeights(
            v_min=p.v_min, a_min=p.a_min, a_max=p.a_max, j_min=p.j_min, j_max=p.j_max,
            w_v=p.w_v, w_a=p.w_a,
        )
        sv = scenario.solver
        self.settings = ilqr.IlqrSettings(max_iter=sv.n_iters, tol=sv.tol)
        self.ds = scenario.grid.delta_s
        self.K = int(round(scenario.grid.horizon / self.ds))
        clean = np.asarray(scenario.reference.points, dtype=float)
        self.clean_line = Polyline(clean)
        self.reference = Polyline(self._noisy(clean, seed))
        self.actors = [
            ActorTrack(a.name or f"actor{i}", Polyline(a.path) if a.path else self.clean_line, a.v, a.s0,
                       a.spawn_time, a.relative, a.length, a.width, None if a.relative else a.s0)
            for i, a in enumerate(scenario.actors)
        ]
        self.signals = [SignalTrack(sg.name or f"signal{i}", sg.s, sorted(sg.schedule, key=lambda ph: ph.t),
                                    sg.deadline) for i, sg in enumerate(scenario.signals)]
        self.spatiotemporal = [
            SpatioTemporalConstraint(e.kind, e.s, e.t,
                                     p.alpha if e.alpha is None else e.alpha,
                                     p.beta if e.beta is None else e.beta, e.name)
            for e in scenario.spatiotemporal
        ]

    def _noisy(self, clean: np.ndarray, seed: Optional[int]) -> np.ndarray:
        ref = self.scenario.reference
        if ref.noise_sigma <= 0.0:
            return clean
        line = Polyline(clean)
        s = np.linspace(0.0, line.length, int(np.ceil(line.length / NOISE_SPACING)) + 1)
        pts = line.sample(s)
        rng = np.random.default_rng(ref.seed if seed is None else seed)
        return pts + rng.normal(0.0, ref.noise_sigma, pts.shape)

    def speed_limit(self, s: np.ndarray) -> np.ndarray:
        v = np.full(len(s), np.nan)
        for seg in self.scenario.speed_limits:
            inside = (s >= seg.s_start) & (s < seg.s_end)
            v[inside] = np.fmin(v[inside], seg.v)
        return np.where(np.isnan(v), self.scenario.sim.default_speed_limit, v)

    def enforced_spatiotemporal(self) -> list:
        cs = self.constraint_set
        if cs == "none":
            return []
        if cs == "tmin":
            return [c for c in self.spatiotemporal if c.kind == "min"]
        return list(self.spatiotemporal)

    def initial_ego(self) -> EgoState:
        x, y, psi = self.reference.at(self.scenario.ego.s)
        return EgoState(x, y, psi, float(self.scenario.ego.v), float(self.scenario.ego.s))

    def d_safe(self, v_ego: float) -> float:
        return self.scenario.sim.d_safe_const + self.scenario.sim.d_safe_time * v_ego


# -- planning ---------------------------------------------------------------

@dataclass
class WarmStart:
    """Previous solution for the next cycle.

    ``origin`` is the arc length that index 0 stands for when shifting; it
    advances in whole grid steps so that sub-step ego motion accumulates
    instead of being rounded away every cycle. ``anchor`` is where the plan
    actually started.
    """

    origin: float
    path_controls: np.ndarray
    path_state: al.ALState
    vel_controls: np.ndarray
    vel_state: al.ALState
    reference: Optional[ReferenceProfile] = None
    anchor: float = 0.0
    profile: Optional[VelocityTrajectory] = None
    t_plan: float = 0.0

    def steps(self, s_now: float, ds: float) -> int:
        return int(round(max(s_now - self.origin, 0.0) / ds))

    def shifted(self, s_now: float, ds: float) -> tuple[tuple, tuple]:
        adv = self.steps(s_now, ds) * ds
        Up, lp, _ = al.shift_warm_start(self.path_controls, self.path_state, adv, ds)
        Uv, lv, _ = al.shift_warm_start(self.vel_controls, self.vel_state, adv, ds)
        return (Up, lp), (Uv, lv)

    def ramp_acceleration(self, s_now: float) -> float:
        """Forward-sweep acceleration of the previous reference at ``s_now``, where that sweep was active."""
        ref = self.reference
        if ref is None:
            return 0.0
        s_rel = s_now - self.anchor
        if s_rel < 0.0 or s_rel > ref.grid.s[-1]:
            return 0.0
        k = min(int(s_rel / ref.grid.ds), ref.grid.K - 1)
        if ref.v_fwd[k] > ref.v_bwd[k]:
            return 0.0
        return float(np.interp(s_rel, ref.grid.s, ref.a_fwd))


@dataclass
class CyclePlan:
    origin: float
    t_plan: float
    path: SmoothedPath
    profile: VelocityTrajectory
    limits: LimitProfile
    reference: ReferenceProfile
    constraints: list
    warm: WarmStart
    timings: dict
    obstacles: list = field(default_factory=list)


@dataclass
class SignalMemory:
    """Per-signal decision for the current red phase: stop or proceed."""

    decision: dict = field(default_factory=dict)


def _extract_obstacles(world: World, ego: EgoState, path: SmoothedPath, t: float) -> list:
    """Actors near the smoothed path ahead, as ``(name, s_o, v_o)`` in plan coordinates."""
    out = []
    line = None
    threshold = world.scenario.sim.lateral_threshold
    for actor in world.actors:
        if not actor.active(t):
            continue
        ax, ay, ah = actor.pose(t)
        if math.hypot(ax - ego.x, ay - ego.y) > path.grid.horizon + actor.length + 20.0:
            continue
        if line is None:
            line = Polyline(path.points)
        s_proj, lateral = line.project(ax, ay)
        if lateral >= threshold or s_proj <= 0.0 or s_proj > line.length:
            continue
        _, _, ph = line.at(s_proj)
        # crossing and oncoming traffic is handled by arrival-time bounds
        along = math.cos(ah - ph)
        if along <= 0.0:
            continue
        v_o = actor.v * along
        s_o = max(s_proj - 0.5 * (world.scenario.ego.length + actor.length), 0.0)
        out.append((actor.name, s_o, v_o))
    return out


def _signal_stops(world: World, ego: EgoState, t: float, memory: SignalMemory,
                  predicted_arrival: Callable[[float], Optional[float]]) -> list:
    """Plan-relative stop locations for signals the ego has decided to stop at.

    The decision is taken once per non-green phase: on yellow the ego goes
    on if its current plan crosses the line before red; otherwise, and on
    red, it stops if the line is beyond its braking distance.
    """
    stops = []
    a_brake = -world.weights.a_min
    for sig in world.signals:
        d = sig.s - ego.s
        state = sig.state(t)
        if state == "green":
            memory.decision.pop(sig.name, None)
            continue
        if d < -0.5 * world.ds:
            continue
        if sig.name not in memory.decision:
            can_stop = ego.v * ego.v / (2.0 * a_brake) <= d + 0.5 * world.ds
            go = False
            if state == "yellow":
                t_red = sig.next_red(t)
                t_arr = predicted_arrival(sig.s)
                go = t_red is None or (t_arr is not None and t_arr <= t_red + world.arrival_tol)
            memory.decision[sig.name] = can_stop and not go
        if memory.decision[sig.name]:
            stops.append(max(d, 0.0))
    return stops


def _active_spatiotemporal(world: World, ego: EgoState, t: float) -> list:
    out = []
    for c in world.enforced_spatiotemporal():
        if c.s_c > ego.s and c.t > t:
            out.append(c.relative(ego.s, t))
    if world.constraint_set == "all":
        for sig in world.signals:
            t_red = sig.next_red(t) if sig.deadline else None
            if t_red is not None and sig.s > ego.s:
                out.append(SpatioTemporalConstraint("max", sig.s - ego.s, t_red - t, name=f"{sig.name}_deadline"))
    return out


def plan_cycle(ego: EgoState, world: World, t: float, warm: Optional[WarmStart] = None,
               memory: Optional[SignalMemory] = None, init_cycles: int = 1) -> CyclePlan:
    """Smooth the path ahead, build the velocity limits and optimize the profile.

    ``init_cycles > 1`` repeats both solves on their own output, which gives
    the first cycle of a run a settled plan before anything is executed.
    """
    memory = memory if memory is not None else SignalMemory()
    sc = world.scenario
    p = sc.params
    sv = sc.solver
    t0 = time.perf_counter()
    s_grid = ego.s + world.ds * np.arange(world.K)
    pts = world.reference.sample(s_grid)
    ref = ReferencePolyline(SpatialGrid(ego.s, world.ds, world.K), pts[:, 0].copy(), pts[:, 1].copy())
    path_ws = vel_ws = None
    if warm is not None:
        path_ws, vel_ws = warm.shifted(ego.s, world.ds)
    t1 = time.perf_counter()
    for _ in range(init_cycles):
        path = smooth_path(ref, world.path_weights, (p.kappa_min, p.kappa_max), path_ws, world.settings,
                           sv.mu_default, sv.lambda_max_default)
        path_ws = (path.controls, path.al_state)
    t2 = time.perf_counter()

    grid = SpatialGrid(0.0, world.ds, world.K)
    limits = curvature_speed_limit(path.kappa, world.speed_limit(s_grid), p.a_lat_hat, grid)
    obstacles = _extract_obstacles(world, ego, path, t)
    d_safe = world.d_safe(ego.v)
    # constant-speed arrival estimate; the previous plan would close a feedback loop
    t_pred = grid.s / max(ego.v, p.v_min)
    for _, s_o, v_o in obstacles:
        limits = apply_dynamic_constraint(limits, s_o, v_o, d_safe, t_pred)
    def predicted_arrival(s_abs: float) -> Optional[float]:
        if warm is None or warm.profile is None:
            return None
        s_rel = s_abs - warm.anchor
        pr = warm.profile
        if s_rel < 0.0 or s_rel > pr.grid.s[-1]:
            return None
        return warm.t_plan + float(np.interp(s_rel, pr.grid.s, pr.t))

    for d in _signal_stops(world, ego, t, memory, predicted_arrival):
        limits = apply_static_constraint(limits, d, 0.0)
    constraints = _active_spatiotemporal(world, ego, t)
    a_start = warm.ramp_acceleration(ego.s) if warm is not None else 0.0
    reference = generate_reference(limits, ego.v, world.weights, a_start)
    t3 = time.perf_counter()
    for _ in range(init_cycles):
        profile = optimize_profile(reference, ego.v, constraints, world.weights, vel_ws, world.settings,
                                   mu=sv.mu_default, lam_max=sv.lambda_max_default,
                                   mu_tmax=sv.mu_tmax, lam_max_tmax=sv.lambda_max_tmax)
        vel_ws = (profile.controls, profile.al_state)
    t4 = time.perf_counter()
    profile = postprocess_standstill(profile, limits, p.v_min)
    t5 = time.perf_counter()

    origin = ego.s if warm is None else warm.origin + warm.steps(ego.s, world.ds) * world.ds
    new_warm = WarmStart(origin, path.controls, path.al_state, profile.controls, profile.al_state,
                         reference, ego.s, profile, t)
    timings = {
        "lateral": t2 - t1,
        "longitudinal": t4 - t3,
        "preprocessing": (t1 - t0) + (t3 - t2) + (t5 - t4),
    }
    timings["total"] = timings["lateral"] + timings["longitudinal"] + timings["preprocessing"]
    return CyclePlan(ego.s, t, path, profile, limits, reference, constraints, new_warm, timings, obstacles)


# -- run loop ---------------------------------------------------------------

CYCLE_FIELDS = [
    "cycle", "time", "x", "y", "psi", "v", "s", "accel", "steer", "plan_origin",
    "v_plan", "a_plan", "path_iters", "vel_iters", "path_status", "vel_status",
    "path_violation", "vel_violation", "vel_cost", "limit_violation", "n_obstacles", "n_spatiotemporal",
    "plan_reused", "planner_error", "out_of_plan", "collision",
]
TIMING_FIELDS = ["t_lateral_ms", "t_longitudinal_ms", "t_preprocessing_ms", "t_total_ms"]
PROFILE_FIELDS = ["cycle", "time", "s", "x_r", "y_r", "phi_r", "kappa",
                  "v_lim", "v_ref", "v_star", "a_star", "t_star"]


@dataclass
class CycleLog:
    cycle: int
    time: float
    x: float
    y: float
    psi: float
    v: float
    s: float
    accel: float
    steer: float
    plan_origin: float
    v_plan: float
    a_plan: float
    path_iters: int
    vel_iters: int
    path_status: str
    vel_status: str
    path_violation: float
    vel_violation: float
    vel_cost: float
    limit_violation: float
    n_obstacles: int
    n_spatiotemporal: int
    plan_reused: bool
    planner_error: bool
    out_of_plan: bool
    collision: bool
    t_lateral_ms: float = float("nan")
    t_longitudinal_ms: float = float("nan")
    t_preprocessing_ms: float = float("nan")
    t_total_ms: float = float("nan")

    def row(self, fields_) -> list:
        out = []
        for name in fields_:
            v = getattr(self, name)
            if isinstance(v, bool):
                out.append(int(v))
            elif isinstance(v, float):
                out.append(f"{v:.9g}")
            else:
                out.append(v)
        return out


@dataclass
class Arrival:
    name: str
    kind: str
    s: float
    bound: float
    time: Optional[float]
    enforced: bool
    satisfied: bool


@dataclass
class Verdict:
    collision: bool
    collision_time: Optional[float]
    collided_with: Optional[str]
    arrivals: list
    red_light_violations: list
    a_min_observed: float
    a_max_observed: float
    planner_errors: int
    plans_reused: int
    runtime_ms: dict

    @property
    def constraints_satisfied(self) -> bool:
        return all(a.satisfied for a in self.arrivals if a.enforced) and not self.red_light_violations

    def arrival(self, s: float) -> Optional[Arrival]:
        for a in self.arrivals:
            if abs(a.s - s) < 1e-9:
                return a
        return None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["constraints_satisfied"] = self.constraints_satisfied
        return d


@dataclass
class RunResult:
    scenario: str
    constraint_set: str
    logs: list
    verdict: Verdict
    outputs: dict = field(default_factory=dict)


def runtime_stats(values) -> dict:
    x = np.asarray(values, dtype=float) * 1e3
    if x.size == 0:
        return {}
    return {
        "mean": float(x.mean()), "std": float(x.std()), "max": float(x.max()),
        "p50": float(np.percentile(x, 50)), "p90": float(np.percentile(x, 90)),
        "p99": float(np.percentile(x, 99)),
    }


def _crossing_time(times, s_values, s_target: float) -> Optional[float]:
    s_arr = np.asarray(s_values)
    idx = np.flatnonzero(s_arr >= s_target)
    if idx.size == 0:
        return None
    i = int(idx[0])
    if i == 0:
        return float(times[0])
    s0, s1 = s_arr[i - 1], s_arr[i]
    frac = (s_target - s0) / (s1 - s0) if s1 > s0 else 1.0
    return float(times[i - 1] + frac * (times[i] - times[i - 1]))


def _check_collision(world: World, ego: EgoState, t: float) -> Optional[str]:
    sc = world.scenario
    ego_box = None
    for actor in world.actors:
        if not actor.active(t):
            continue
        ax, ay, ah = actor.pose(t)
        if math.hypot(ax - ego.x, ay - ego.y) > 0.5 * (sc.ego.length + actor.length + sc.ego.width + actor.width):
            continue
        if ego_box is None:
            ego_box = vehicle_box(ego.x, ego.y, ego.psi, sc.ego.length, sc.ego.width)
        if ego_box.intersects(vehicle_box(ax, ay, ah, actor.length, actor.width)):
            return actor.name
    return None


def run_scenario(scenario: Scenario, duration: Optional[float] = None, out_dir=None,
                 constraint_set: Optional[str] = None, cold_start: bool = False,
                 budget_ms: Optional[float] = None, seed: Optional[int] = None,
                 callback: Optional[Callable] = None, stop_on_collision: bool = True,
                 profile_stride: Optional[int] = None, write_timings: bool = False,
                 arrival_tol: float = 0.1, init_cycles: int = 5) -> RunResult:
    """Simulate ``scenario`` on the fixed control clock.

    ``callback(cycle, t, ego, plan)`` is called after every planning cycle.
    With ``out_dir`` set, ``cycles.csv``, ``profiles.csv`` and
    ``report.json`` are written there; wall-clock timings go to the report
    (and to ``timings.csv`` with ``write_timings``) so that the CSVs are
    reproducible byte for byte.
    """
    world = World(scenario, constraint_set, seed, arrival_tol)
    sim = scenario.sim
    duration = sim.duration if duration is None else duration
    budget_ms = sim.budget_ms if budget_ms is None else budget_ms
    stride = sim.profile_stride if profile_stride is None else profile_stride
    n_cycles = int(round(duration / sim.dt))

    ego = world.initial_ego()
    memory = SignalMemory()
    warm: Optional[WarmStart] = None
    active: Optional[CyclePlan] = None
    logs: list = []
    snapshots: list = []
    timing_rows: dict = {"lateral": [], "longitudinal": [], "preprocessing": [], "total": []}
    times = [0.0]
    s_hist = [ego.s]
    red_violations: list = []
    collision = None
    collision_time = None

    for cycle in range(n_cycles):
        t = cycle * sim.dt
        for actor in world.actors:
            if actor.s_start is None and t >= actor.spawn_time:
                actor.s_start = ego.s + actor.s0
        plan = None
        error = False
        try:
            plan = plan_cycle(ego, world, t, None if cold_start else warm, memory,
                              init_cycles if cycle == 0 else 1)
        except Exception as exc:  # the loop keeps running on the previous plan
            LOG.warning("cycle %d: planner failed: %s", cycle, exc)
            error = True
        reused = False
        if plan is not None:
            warm = plan.warm
            for k in timing_rows:
                timing_rows[k].append(plan.timings[k])
            over = budget_ms is not None and plan.timings["total"] * 1e3 > budget_ms
            if over and active is not None:
                reused = True
            else:
                active = plan
        else:
            reused = active is not None
        if callback is not None:
            callback(cycle, t, ego, plan)

        if active is not None:
            cmd = low_level_control(ego, active.path, active.profile, sim.kp, sim.wheelbase,
                                    scenario.params.a_min, scenario.params.a_max)
        else:
            cmd = ControlCommand(0.0, 0.0, True)

        if plan is not None and stride > 0 and cycle % stride == 0:
            snapshots.append((cycle, t, plan))

        vp = active.profile if active is not None else None
        s_rel = ego.s - active.origin if active is not None else 0.0
        path_rep = active.path.report if active is not None else None
        vel_rep = vp.report if vp is not None else None
        tm = plan.timings if plan is not None else {}
        log = CycleLog(
            cycle=cycle, time=t, x=ego.x, y=ego.y, psi=ego.psi, v=ego.v, s=ego.s,
            accel=cmd.accel, steer=cmd.steer, plan_origin=active.origin if active else float("nan"),
            v_plan=float(np.interp(s_rel, vp.grid.s, vp.v)) if vp is not None else float("nan"),
            a_plan=float(np.interp(s_rel, vp.grid.s, vp.a)) if vp is not None else float("nan"),
            path_iters=path_rep.ilqr.iterations if plan is not None else 0,
            vel_iters=vel_rep.ilqr.iterations if plan is not None else 0,
            path_status=path_rep.ilqr.status if path_rep else "none",
            vel_status=vel_rep.ilqr.status if vel_rep else "none",
            path_violation=path_rep.max_violation if path_rep else float("nan"),
            vel_violation=vel_rep.max_violation if vel_rep else float("nan"),
            vel_cost=vel_rep.base_cost if vel_rep else float("nan"),
            limit_violation=float(np.max(vp.v - active.limits.v_lim, initial=0.0)) if vp is not None else float("nan"),
            n_obstacles=len(active.obstacles) if active else 0,
            n_spatiotemporal=len(active.constraints) if active else 0,
            plan_reused=reused, planner_error=error, out_of_plan=cmd.out_of_plan, collision=False,
            t_lateral_ms=tm.get("lateral", float("nan")) * 1e3,
            t_longitudinal_ms=tm.get("longitudinal", float("nan")) * 1e3,
            t_preprocessing_ms=tm.get("preprocessing", float("nan")) * 1e3,
            t_total_ms=tm.get("total", float("nan")) * 1e3,
        )

        moved = step_vehicle(ego, cmd.accel, cmd.steer, sim.dt, sim.wheelbase)
        s_new, _ = world.reference.project(moved.x, moved.y, ego.s - 2.0, ego.s + 5.0)
        s_new = max(ego.s, s_new)
        for sig in world.signals:
            if ego.s < sig.s <= s_new and sig.state(t) == "red":
                red_violations.append({"signal": sig.name, "time": t})
        ego = replace(moved, s=s_new)
        times.append(t + sim.dt)
        s_hist.append(ego.s)

        hit = _check_collision(world, ego, t + sim.dt)
        if hit is not None:
            log.collision = True
            if collision is None:
                collision, collision_time = hit, t + sim.dt
                LOG.info("collision with %s at t=%.2f s", hit, collision_time)
        logs.append(log)
        if collision is not None and stop_on_collision:
            break

    arrivals = []
    enforced = {id(c) for c in world.enforced_spatiotemporal()}
    for c in world.spatiotemporal:
        t_arr = _crossing_time(times, s_hist, c.s_c)
        if c.kind == "min":
            ok = t_arr is None or t_arr >= c.t - arrival_tol
        else:
            ok = t_arr is not None and t_arr <= c.t + arrival_tol
        arrivals.append(Arrival(c.label, c.kind, c.s_c, c.t, t_arr, id(c) in enforced, ok))
    accels = [lg.accel for lg in logs] or [0.0]
    verdict = Verdict(
        collision=collision is not None, collision_time=collision_time, collided_with=collision,
        arrivals=arrivals, red_light_violations=red_violations,
        a_min_observed=float(min(accels)), a_max_observed=float(max(accels)),
        planner_errors=sum(lg.planner_error for lg in logs), plans_reused=sum(lg.plan_reused for lg in logs),
        runtime_ms={k: runtime_stats(v) for k, v in timing_rows.items()},
    )
    result = RunResult(scenario.name, world.constraint_set, logs, verdict)
    if out_dir is not None:
        result.outputs = write_outputs(result, snapshots, out_dir, write_timings)
    return result


def write_outputs(result: RunResult, snapshots: list, out_dir, write_timings: bool = False) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"cycles": out / "cycles.csv", "profiles": out / "profiles.csv", "report": out / "report.json"}
    with open(paths["cycles"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CYCLE_FIELDS)
        for lg in result.logs:
            w.writerow(lg.row(CYCLE_FIELDS))
    with open(paths["profiles"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PROFILE_FIELDS)
        for cycle, t, plan in snapshots:
            pr = plan.profile
            cols = zip(pr.grid.s, plan.path.x, plan.path.y, plan.path.phi, plan.path.kappa,
                       plan.limits.v_lim, plan.reference.v_ref, pr.v, pr.a, pr.t)
            for row in cols:
                w.writerow([cycle, f"{t:.9g}"] + [f"{x:.9g}" for x in row])
    if write_timings:
        paths["timings"] = out / "timings.csv"
        with open(paths["timings"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cycle"] + TIMING_FIELDS)
            for lg in result.logs:
                w.writerow(lg.row(["cycle"] + TIMING_FIELDS))
    report = {
        "scenario": result.scenario,
        "constraint_set": result.constraint_set,
        "cycles": len(result.logs),
        "verdict": result.verdict.to_dict(),
        "outputs": {k: str(v) for k, v in paths.items() if k != "report"},
    }
    paths["report"].write_text(json.dumps(report, indent=2) + "\n")
    return paths

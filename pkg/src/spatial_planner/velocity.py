"""Longitudinal planning over arc length.

Builds the velocity-limit profile from speed limits and interactions, shapes
it into a jerk- and acceleration-limited reference, and optimizes the
velocity profile with state ``[v, t]`` and control ``a``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numba
import numpy as np

from . import al, ilqr
from .grid import SpatialGrid

V_GUARD = 0.1
STANDSTILL_TOL = 0.05


@dataclass(frozen=True)
class ProfileWeights:
    w_v: float = 0.1
    w_a: float = 1.0
    v_min: float = 1.0
    a_min: float = -2.5
    a_max: float = 2.5
    j_min: float = -1.5
    j_max: float = 1.5

    def __post_init__(self) -> None:
        if self.w_v <= 0.0 or self.w_a <= 0.0:
            raise ValueError("profile weights must be positive")
        if not (self.a_min < 0.0 < self.a_max):
            raise ValueError("need a_min < 0 < a_max")
        if not (self.j_min < 0.0 < self.j_max):
            raise ValueError("need j_min < 0 < j_max")
        if self.v_min <= 0.0:
            raise ValueError("v_min must be positive")


@dataclass
class LimitProfile:
    grid: SpatialGrid
    v_lim: np.ndarray

    def __post_init__(self) -> None:
        self.v_lim = np.asarray(self.v_lim, dtype=float)
        if self.v_lim.shape != (self.grid.K,):
            raise ValueError(f"limit profile needs {self.grid.K} samples, got {self.v_lim.shape}")
        if not np.all(np.isfinite(self.v_lim)) or np.any(self.v_lim < 0.0):
            raise ValueError("velocity limits must be finite and non-negative")

    @classmethod
    def constant(cls, grid: SpatialGrid, v: float) -> "LimitProfile":
        return cls(grid, np.full(grid.K, float(v)))

    def copy(self) -> "LimitProfile":
        return LimitProfile(self.grid, self.v_lim.copy())


@dataclass
class ReferenceProfile:
    grid: SpatialGrid
    v_ref: np.ndarray
    v_bwd: np.ndarray
    v_fwd: np.ndarray
    a_bwd: np.ndarray
    a_fwd: np.ndarray


@dataclass(frozen=True)
class SpatioTemporalConstraint:
    """Arrival-time bound at ``s_c``: ``t(s_c) <= t`` (max) or ``t(s_c) >= t`` (min)."""

    kind: str
    s_c: float
    t: float
    alpha: float = 10.0
    beta: float = 5e-3
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("min", "max"):
            raise ValueError(f"spatiotemporal kind must be 'min' or 'max', got {self.kind!r}")
        if self.alpha < 0.0 or not (0.0 < self.beta < 1.0):
            raise ValueError("need alpha >= 0 and 0 < beta < 1")

    @property
    def label(self) -> str:
        return self.name or f"t{self.kind}@{self.s_c:g}"

    def relative(self, s_ego: float, t_now: float) -> "SpatioTemporalConstraint":
        """The same bound expressed in a plan anchored at ``(s_ego, t_now)``."""
        return replace(self, s_c=self.s_c - s_ego, t=self.t - t_now, name=self.label)


@dataclass
class VelocityTrajectory:
    grid: SpatialGrid
    v: np.ndarray
    t: np.ndarray
    a: np.ndarray
    standstill: bool = False
    v_ref: Optional[np.ndarray] = None
    controls: Optional[np.ndarray] = None
    al_state: Optional[al.ALState] = None
    report: Optional[al.ALReport] = None
    consistent: bool = True


# -- velocity-limit profile -------------------------------------------------

def apply_static_constraint(limits: LimitProfile, s_o: float, v_o: float = 0.0) -> LimitProfile:
    """Cap the limit at the sample nearest ``s_o``; no-op outside the horizon."""
    if v_o < 0.0:
        raise ValueError("v_o must be non-negative")
    out = limits.copy()
    k = limits.grid.nearest(s_o)
    if k is not None:
        out.v_lim[k] = min(out.v_lim[k], v_o)
    return out


def apply_dynamic_constraint(limits: LimitProfile, s_o: float, v_o: float, d_safe: float,
                             t_pred: np.ndarray | None = None) -> LimitProfile:
    """Linear ramp from ``v_o`` at ``s_o - d_safe`` down to standstill at ``s_o``.

    With ``t_pred`` (predicted ego arrival time per grid sample) the ramp is
    applied to the predicted gap ``s_o + v_o * t_pred(s) - s`` instead, so a
    moving obstacle is followed at ``d_safe`` rather than stopped behind.
    For ``v_o = 0`` both forms coincide up to ``s_o``; the predicted form
    also zeroes the limit beyond it.
    """
    if v_o < 0.0:
        raise ValueError("v_o must be non-negative")
    if d_safe <= 0.0:
        raise ValueError("d_safe must be positive")
    out = limits.copy()
    if s_o < limits.grid.s0:
        return out
    s = limits.grid.s
    if t_pred is None:
        sel = (s >= s_o - d_safe) & (s <= s_o + 1e-9)
        gap = s_o - s[sel]
    else:
        gap_all = s_o + v_o * np.asarray(t_pred, dtype=float) - s
        sel = gap_all <= d_safe
        gap = gap_all[sel]
    ramp = v_o * np.minimum(1.0, np.maximum(gap, 0.0) / d_safe)
    out.v_lim[sel] = np.minimum(out.v_lim[sel], ramp)
    return out


# -- reference generation ---------------------------------------------------

@numba.njit(cache=True)
def _advance(v, a, jerk, a_cap, ds):
    """Integrate ``v' = a, a' = jerk`` (``a`` capped at ``a_cap``) over distance ``ds``.

    Exact for piecewise-constant jerk, so it stays well defined at ``v = 0``.
    """
    if a < a_cap:
        tau1 = (a_cap - a) / jerk
        d1 = v * tau1 + 0.5 * a * tau1 * tau1 + jerk * tau1 ** 3 / 6.0
        if d1 >= ds:
            lo = 0.0
            hi = tau1
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                d = v * mid + 0.5 * a * mid * mid + jerk * mid ** 3 / 6.0
                if d < ds:
                    lo = mid
                else:
                    hi = mid
            tau = 0.5 * (lo + hi)
            return v + a * tau + 0.5 * jerk * tau * tau, a + jerk * tau
        v = v + a * tau1 + 0.5 * jerk * tau1 * tau1
        ds = ds - d1
        a = a_cap
    return np.sqrt(v * v + 2.0 * a_cap * ds), a_cap


@numba.njit(cache=True)
def _sweep(v_lim, v0, a0, jerk, a_cap, ds):
    K = v_lim.shape[0]
    v_out = np.empty(K)
    a_out = np.empty(K)
    v = min(v0, v_lim[0])
    a = min(max(a0, 0.0), a_cap)
    if v >= v_lim[0]:
        a = 0.0
    v_out[0] = v
    a_out[0] = a
    for k in range(1, K):
        v, a = _advance(v, a, jerk, a_cap, ds)
        if v >= v_lim[k]:
            v = v_lim[k]
            a = 0.0
        v_out[k] = v
        a_out[k] = a
    return v_out, a_out


def generate_reference(limits: LimitProfile, v_start: float, weights: ProfileWeights | None = None,
                       a_start: float = 0.0) -> ReferenceProfile:
    """Jerk/acceleration-limited reference: pointwise min of a backward and a forward sweep.

    The backward sweep runs from the horizon end towards the ego as a speed
    build-up with ``|j_min|`` and ``|a_min|``, which read forwards is a
    limited deceleration into every drop of the limit. The forward sweep
    starts at ``(v_start, a_start)`` with ``j_max`` and ``a_max``. Both clamp
    to the limit after every step and reset the acceleration when clamped.

    ``a_start`` (clipped to ``[0, a_max]``) lets a receding-horizon caller
    continue the previous acceleration ramp instead of restarting it.

    When ``v_start`` lies above the braking envelope the reference is floored
    at the full-deceleration decay ``sqrt(v_start**2 + 2 a_min s)``, so the
    optimizer brakes at ``a_min`` until the limit is met. The floor is never
    active for feasible starts.
    """
    w = weights or ProfileWeights()
    if v_start < 0.0:
        raise ValueError("v_start must be non-negative")
    v_lim = limits.v_lim
    ds = limits.grid.ds
    rev = np.ascontiguousarray(v_lim[::-1])
    vb, ab = _sweep(rev, float(rev[0]), 0.0, -w.j_min, -w.a_min, ds)
    v_bwd = vb[::-1].copy()
    a_bwd = -ab[::-1]
    v_fwd, a_fwd = _sweep(np.ascontiguousarray(v_lim), max(float(v_start), w.v_min), float(a_start),
                          w.j_max, w.a_max, ds)
    v_ref = np.minimum(v_bwd, v_fwd)
    if v_start > v_bwd[0]:
        floor = np.sqrt(np.maximum(v_start * v_start + 2.0 * w.a_min * (limits.grid.s - limits.grid.s0), 0.0))
        v_ref = np.maximum(v_ref, floor)
    return ReferenceProfile(limits.grid, v_ref, v_bwd, v_fwd, a_bwd, a_fwd)


# -- profile optimization ---------------------------------------------------

def tmin_residual(t_at_sc: float, v_at_sc: float, t_min: float, v_min: float = 1.0) -> float:
    """``(t_min - t) * (v - v_min)``; non-positive when the minimum arrival time holds."""
    return (t_min - t_at_sc) * (v_at_sc - v_min)


def tmin_weight(s, s_c: float, alpha: float = 10.0, beta: float = 5e-3):
    """Velocity-tracking weight that vanishes at ``s_c + alpha``."""
    if alpha < 0.0 or not (0.0 < beta < 1.0):
        raise ValueError("need alpha >= 0 and 0 < beta < 1")
    return np.minimum(1.0, ((np.asarray(s, dtype=float) - s_c - alpha) * beta) ** 2)


@numba.njit(cache=True)
def _velocity_step(x, u, p):
    ds = p[0]
    vg = max(x[0], p[1])
    out = np.empty(2)
    out[0] = x[0] + ds * u[0] / vg
    out[1] = x[1] + ds / vg
    return out


@numba.njit(cache=True)
def _velocity_shoot(x0, X, U, kff, Kfb, alpha, p):
    K = U.shape[0]
    Xn = np.empty((K, 2))
    Un = np.empty_like(U)
    Xn[0] = x0
    for k in range(K):
        for i in range(U.shape[1]):
            acc = U[k, i] + alpha * kff[k, i]
            for j in range(X.shape[1]):
                acc += Kfb[k, i, j] * (Xn[k, j] - X[k, j])
            Un[k, i] = acc
        if k + 1 < K:
            Xn[k + 1] = _velocity_step(Xn[k], Un[k], p)
            if not np.all(np.isfinite(Xn[k + 1])):
                return Xn, Un, k + 1
    return Xn, Un, -1


def _velocity_jacobians(X, U, p):
    ds, guard = p[0], p[1]
    K = X.shape[0]
    v = X[:, 0]
    live = v > guard
    vg = np.maximum(v, guard)
    A = np.zeros((K, 2, 2))
    A[:, 0, 0] = 1.0 - np.where(live, ds * U[:, 0] / (vg * vg), 0.0)
    A[:, 1, 0] = -np.where(live, ds / (vg * vg), 0.0)
    A[:, 1, 1] = 1.0
    B = np.zeros((K, 2, 1))
    B[:, 0, 0] = ds / vg
    return A, B


def velocity_problem(v_ref: np.ndarray, v_start: float, grid: SpatialGrid, w_v: np.ndarray,
                     weights: ProfileWeights) -> ilqr.DiscreteProblem:
    ds = grid.ds
    vr = np.asarray(v_ref, dtype=float)
    wv = ds * np.broadcast_to(np.asarray(w_v, dtype=float), vr.shape)
    wa = ds * weights.w_a

    def cost(X, U, k):
        return wv[k] * (X[:, 0] - vr[k]) ** 2 + wa * U[:, 0] ** 2

    def cost_derivatives(X, U, k):
        N = len(k)
        lx = np.zeros((N, 2))
        lx[:, 0] = 2.0 * wv[k] * (X[:, 0] - vr[k])
        lu = 2.0 * wa * U
        lxx = np.zeros((N, 2, 2))
        lxx[:, 0, 0] = 2.0 * wv[k]
        luu = np.full((N, 1, 1), 2.0 * wa)
        lux = np.zeros((N, 1, 2))
        return lx, lu, lxx, luu, lux

    return ilqr.DiscreteProblem(
        n=2, m=1, x0=np.array([max(v_start, weights.v_min), 0.0]),
        step=_velocity_step, jacobians=_velocity_jacobians, cost=cost, cost_derivatives=cost_derivatives,
        params=np.array([ds, V_GUARD]), shoot=_velocity_shoot,
    )


def _bound(name, fun, hx_row, hu_row, mu=al.MU_DEFAULT, lam_max=al.LAMBDA_MAX_DEFAULT, mask=None):
    hx_row = np.asarray(hx_row, dtype=float)
    hu_row = np.asarray(hu_row, dtype=float)

    def grad(X, U, k):
        return np.broadcast_to(hx_row, X.shape), np.broadcast_to(hu_row, U.shape)

    return al.Constraint(name, fun, grad, mu, lam_max, mask)


def profile_constraints(v_ref: np.ndarray, grid: SpatialGrid, weights: ProfileWeights,
                        spatiotemporal: Sequence[SpatioTemporalConstraint] = (),
                        mu: float = al.MU_DEFAULT, lam_max: float = al.LAMBDA_MAX_DEFAULT,
                        mu_tmax: float = al.MU_TMAX, lam_max_tmax: float = al.LAMBDA_MAX_TMAX
                        ) -> al.ConstraintSet:
    """Box constraints on ``v`` and ``a`` plus arrival-time constraints.

    ``spatiotemporal`` entries must already be relative to the plan origin;
    those outside the grid are skipped.
    """
    vr = np.asarray(v_ref, dtype=float)
    v_min, a_min, a_max = weights.v_min, weights.a_min, weights.a_max
    cons = al.ConstraintSet([
        _bound("v_le_vref", lambda X, U, k: X[:, 0] - vr[k], [1.0, 0.0], [0.0], mu, lam_max),
        _bound("v_ge_vmin", lambda X, U, k: v_min - X[:, 0], [-1.0, 0.0], [0.0], mu, lam_max),
        _bound("a_le_amax", lambda X, U, k: U[:, 0] - a_max, [0.0, 0.0], [1.0], mu, lam_max),
        _bound("a_ge_amin", lambda X, U, k: a_min - U[:, 0], [0.0, 0.0], [-1.0], mu, lam_max),
    ])
    for c in spatiotemporal:
        kc = grid.nearest(c.s_c)
        if kc is None:
            continue
        mask = np.zeros(grid.K, dtype=bool)
        mask[kc] = True
        if c.kind == "max":
            t_max = c.t
            cons.append(_bound(c.label, lambda X, U, k, t_max=t_max: X[:, 1] - t_max,
                               [0.0, 1.0], [0.0], mu_tmax, lam_max_tmax, mask))
        else:
            cons.append(_tmin_constraint(c.label, c.t, v_min, mask, mu, lam_max))
    return cons


def _tmin_constraint(name, t_min, v_min, mask, mu, lam_max):
    def fun(X, U, k):
        return (t_min - X[:, 1]) * (X[:, 0] - v_min)

    def grad(X, U, k):
        hx = np.empty_like(X)
        hx[:, 0] = t_min - X[:, 1]
        hx[:, 1] = -(X[:, 0] - v_min)
        return hx, np.zeros_like(U)

    def hess(X, U, k):
        N = X.shape[0]
        hxx = np.zeros((N, 2, 2))
        hxx[:, 0, 1] = -1.0
        hxx[:, 1, 0] = -1.0
        return hxx, np.zeros((N, 1, 1)), np.zeros((N, 1, 2))

    return al.Constraint(name, fun, grad, mu, lam_max, mask, hess)


def tracking_weight(grid: SpatialGrid, weights: ProfileWeights,
                    spatiotemporal: Sequence[SpatioTemporalConstraint] = ()) -> np.ndarray:
    """Per-sample velocity-tracking weight; min constraints in the horizon replace it by their shaping."""
    shaped = [tmin_weight(grid.s, c.s_c, c.alpha, c.beta) for c in spatiotemporal
              if c.kind == "min" and grid.nearest(c.s_c) is not None]
    if not shaped:
        return np.full(grid.K, weights.w_v)
    return np.min(shaped, axis=0)


def optimize_profile(v_ref, v_start: float, spatiotemporal: Sequence[SpatioTemporalConstraint] = (),
                     weights: ProfileWeights | None = None, warm_start: tuple | None = None,
                     settings: ilqr.IlqrSettings | None = None, grid: SpatialGrid | None = None,
                     mu: float = al.MU_DEFAULT, lam_max: float = al.LAMBDA_MAX_DEFAULT,
                     mu_tmax: float = al.MU_TMAX, lam_max_tmax: float = al.LAMBDA_MAX_TMAX
                     ) -> VelocityTrajectory:
    """One AL-ILQR cycle of the velocity objective.

    ``v_ref`` is a :class:`ReferenceProfile` or a plain array (then ``grid``
    is required). The reference is floored at ``v_min`` so that the lower
    speed bound and the reference bound stay compatible near stops.
    """
    w = weights or ProfileWeights()
    if isinstance(v_ref, ReferenceProfile):
        grid = v_ref.grid
        v_ref = v_ref.v_ref
    if grid is None:
        grid = SpatialGrid(K=len(v_ref))
    vr = np.maximum(np.asarray(v_ref, dtype=float), w.v_min)
    wv = tracking_weight(grid, w, spatiotemporal)
    problem = velocity_problem(vr, v_start, grid, wv, w)
    constraints = profile_constraints(vr, grid, w, spatiotemporal, mu, lam_max, mu_tmax, lam_max_tmax)
    if warm_start is None:
        U0, state = np.zeros((grid.K, 1)), None
    else:
        U0, state = warm_start
        if state is not None:
            state = state.remap(constraints)
    traj, new_state, report = al.solve_constrained(problem, constraints, U0, state, settings)
    return VelocityTrajectory(grid, traj.X[:, 0].copy(), traj.X[:, 1].copy(), traj.U[:, 0].copy(),
                              v_ref=vr, controls=traj.U.copy(), al_state=new_state, report=report)


def postprocess_standstill(traj: VelocityTrajectory, limits: LimitProfile, v_min: float = 1.0,
                           tol: float = STANDSTILL_TOL) -> VelocityTrajectory:
    """Snap creeping samples at a zero limit to exact standstill.

    Samples with ``v_lim == 0`` and ``v <= v_min + tol`` get ``v = 0`` and
    ``a = 0``; within each contiguous stopped segment ``t`` stays at its
    value on the first stopped sample.
    """
    stopped = (limits.v_lim <= 0.0) & (traj.v <= v_min + tol)
    if not stopped.any():
        return traj
    v = np.where(stopped, 0.0, traj.v)
    a = np.where(stopped, 0.0, traj.a)
    t = traj.t.copy()
    for k in range(1, len(t)):
        if stopped[k] and stopped[k - 1]:
            t[k] = t[k - 1]
    return replace(traj, v=v, t=t, a=a, standstill=True)


def write_profile_csv(path, grid: SpatialGrid, v_lim, v_ref, v_star, a_star, t_star) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "v_lim", "v_ref", "v_star", "a_star", "t_star"])
        for row in zip(grid.s, v_lim, v_ref, v_star, a_star, t_star):
            w.writerow([f"{x:.9g}" for x in row])

"""Reference-path smoothing over arc length.

The path state is ``[x, y, heading]`` with curvature as control; the
objective trades position error against curvature effort and keeps the
curvature inside a box via the augmented-Lagrangian solver.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from . import al, ilqr
from .grid import SpatialGrid
from .velocity import LimitProfile

KAPPA_EPS = 1e-6


@dataclass(frozen=True)
class PathWeights:
    w_d: float = 1.0
    w_kappa: float = 20.0

    def __post_init__(self) -> None:
        if self.w_d <= 0.0 or self.w_kappa <= 0.0:
            raise ValueError("path weights must be positive")


@dataclass
class ReferencePolyline:
    """Reference points resampled to the uniform grid."""

    grid: SpatialGrid
    x: np.ndarray
    y: np.ndarray

    @classmethod
    def from_points(cls, points, ds: float = 0.5, K: Optional[int] = None, s_start: float = 0.0
                    ) -> "ReferencePolyline":
        """Resample a raw polyline by linear interpolation along its arc length."""
        pts = _dedupe(np.asarray(points, dtype=float))
        s_raw = arclength(pts)
        if K is None:
            K = int(np.floor((s_raw[-1] - s_start) / ds)) + 1
        grid = SpatialGrid(s0=s_start, ds=ds, K=K)
        x, y = interpolate(pts, s_raw, grid.s)
        return cls(grid, x, y)

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])


def _dedupe(points: np.ndarray) -> np.ndarray:
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError(f"polyline must be an (N, 2) array, got shape {points.shape}")
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(points, axis=0), axis=1) > 1e-9
    pts = points[keep]
    if len(pts) < 2:
        raise ValueError("degenerate polyline: fewer than 2 distinct points")
    return pts


def arclength(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def interpolate(points: np.ndarray, s_raw: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation of a polyline at arc lengths ``s``; extrapolates along the end segments."""
    idx = np.clip(np.searchsorted(s_raw, s, side="right") - 1, 0, len(s_raw) - 2)
    seg = s_raw[idx + 1] - s_raw[idx]
    t = (s - s_raw[idx]) / seg
    p = points[idx] + t[:, None] * (points[idx + 1] - points[idx])
    return p[:, 0], p[:, 1]


@dataclass
class SmoothedPath:
    grid: SpatialGrid
    x: np.ndarray
    y: np.ndarray
    phi: np.ndarray
    kappa: np.ndarray
    controls: Optional[np.ndarray] = None
    al_state: Optional[al.ALState] = None
    report: Optional[al.ALReport] = None

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "x_r", "y_r", "phi_r", "kappa"])
            for row in zip(self.grid.s, self.x, self.y, self.phi, self.kappa):
                w.writerow([f"{v:.9g}" for v in row])


@numba.njit(cache=True)
def _path_step(x, u, p):
    ds = p[0]
    out = np.empty(3)
    out[0] = x[0] + ds * np.cos(x[2])
    out[1] = x[1] + ds * np.sin(x[2])
    out[2] = x[2] + ds * u[0]
    return out


@numba.njit(cache=True)
def _path_shoot(x0, X, U, kff, Kfb, alpha, p):
    K = U.shape[0]
    Xn = np.empty((K, 3))
    Un = np.empty_like(U)
    Xn[0] = x0
    for k in range(K):
        for i in range(U.shape[1]):
            acc = U[k, i] + alpha * kff[k, i]
            for j in range(X.shape[1]):
                acc += Kfb[k, i, j] * (Xn[k, j] - X[k, j])
            Un[k, i] = acc
        if k + 1 < K:
            Xn[k + 1] = _path_step(Xn[k], Un[k], p)
            if not np.all(np.isfinite(Xn[k + 1])):
                return Xn, Un, k + 1
    return Xn, Un, -1


def _path_jacobians(X, U, p):
    ds = p[0]
    K = X.shape[0]
    A = np.zeros((K, 3, 3))
    A[:, 0, 0] = 1.0
    A[:, 1, 1] = 1.0
    A[:, 2, 2] = 1.0
    A[:, 0, 2] = -ds * np.sin(X[:, 2])
    A[:, 1, 2] = ds * np.cos(X[:, 2])
    B = np.zeros((K, 3, 1))
    B[:, 2, 0] = ds
    return A, B


def path_problem(ref: ReferencePolyline, weights: PathWeights | None = None) -> ilqr.DiscreteProblem:
    """Discrete path-smoothing problem anchored at the first reference sample."""
    weights = weights or PathWeights()
    ds = ref.grid.ds
    xr, yr = ref.x, ref.y
    heading0 = np.arctan2(yr[1] - yr[0], xr[1] - xr[0])
    wd = ds * weights.w_d
    wk = ds * weights.w_kappa

    def cost(X, U, k):
        return wd * ((xr[k] - X[:, 0]) ** 2 + (yr[k] - X[:, 1]) ** 2) + wk * U[:, 0] ** 2

    def cost_derivatives(X, U, k):
        N = len(k)
        lx = np.zeros((N, 3))
        lx[:, 0] = 2.0 * wd * (X[:, 0] - xr[k])
        lx[:, 1] = 2.0 * wd * (X[:, 1] - yr[k])
        lu = 2.0 * wk * U
        lxx = np.zeros((N, 3, 3))
        lxx[:, 0, 0] = 2.0 * wd
        lxx[:, 1, 1] = 2.0 * wd
        luu = np.full((N, 1, 1), 2.0 * wk)
        lux = np.zeros((N, 1, 3))
        return lx, lu, lxx, luu, lux

    return ilqr.DiscreteProblem(
        n=3, m=1, x0=np.array([xr[0], yr[0], heading0]),
        step=_path_step, jacobians=_path_jacobians, cost=cost, cost_derivatives=cost_derivatives,
        params=np.array([ds]), shoot=_path_shoot,
    )


def curvature_constraints(kappa_min: float = -3.0, kappa_max: float = 3.0, mu: float = al.MU_DEFAULT,
                          lam_max: float = al.LAMBDA_MAX_DEFAULT) -> al.ConstraintSet:
    def upper(X, U, k):
        return U[:, 0] - kappa_max

    def lower(X, U, k):
        return kappa_min - U[:, 0]

    def upper_grad(X, U, k):
        return np.zeros_like(X), np.ones_like(U)

    def lower_grad(X, U, k):
        return np.zeros_like(X), -np.ones_like(U)

    return al.ConstraintSet([
        al.Constraint("kappa_max", upper, upper_grad, mu, lam_max),
        al.Constraint("kappa_min", lower, lower_grad, mu, lam_max),
    ])


def smooth_path(ref: ReferencePolyline, weights: PathWeights | None = None,
                kappa_bounds: tuple = (-3.0, 3.0), warm_start: tuple | None = None,
                settings: ilqr.IlqrSettings | None = None, mu: float = al.MU_DEFAULT,
                lam_max: float = al.LAMBDA_MAX_DEFAULT) -> SmoothedPath:
    """One AL-ILQR cycle of path smoothing.

    ``warm_start`` is ``(controls, al_state)`` from a previous (shifted)
    solution; a cold start uses the three-point curvature of the reference,
    clipped to the bounds.
    """
    if ref.grid.K < 2:
        raise ValueError("degenerate polyline: fewer than 2 samples")
    problem = path_problem(ref, weights)
    constraints = curvature_constraints(kappa_bounds[0], kappa_bounds[1], mu, lam_max)
    K = ref.grid.K
    if warm_start is None:
        U0 = np.clip(local_curvature(ref.points), kappa_bounds[0], kappa_bounds[1])[:, None]
        lam0 = None
    else:
        U0, lam0 = warm_start
        if lam0 is not None:
            lam0 = lam0.remap(constraints)
    traj, state, report = al.solve_constrained(problem, constraints, U0, lam0, settings)
    kappa = traj.U[:, 0].copy()
    # the last control only enters the cost, so report the previous curvature there
    kappa[-1] = kappa[-2]
    return SmoothedPath(ref.grid, traj.X[:, 0].copy(), traj.X[:, 1].copy(), traj.X[:, 2].copy(), kappa,
                        traj.U.copy(), state, report)


def local_curvature(points) -> np.ndarray:
    """Signed curvature of the circle through each interior triple of points.

    Endpoints copy their neighbour so the output has one value per point.
    """
    if isinstance(points, ReferencePolyline):
        points = points.points
    p = np.asarray(points, dtype=float)
    if len(p) < 3:
        raise ValueError("local curvature needs at least 3 points")
    a = p[:-2]
    b = p[1:-1]
    c = p[2:]
    ab = b - a
    bc = c - b
    ac = c - a
    cross = ab[:, 0] * bc[:, 1] - ab[:, 1] * bc[:, 0]
    denom = np.linalg.norm(ab, axis=1) * np.linalg.norm(bc, axis=1) * np.linalg.norm(ac, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(denom > 0.0, 2.0 * cross / denom, 0.0)
    return np.concatenate([[k[0]], k, [k[-1]]])


def curvature_speed_limit(kappa, v_lg, a_lat: float = 2.5, grid: SpatialGrid | None = None,
                          eps: float = KAPPA_EPS) -> LimitProfile:
    """Legal limit capped by the lateral-acceleration limit ``sqrt(a_lat / |kappa|)``."""
    if a_lat <= 0.0:
        raise ValueError("a_lat must be positive")
    kappa = np.asarray(kappa, dtype=float)
    v_lg = np.broadcast_to(np.asarray(v_lg, dtype=float), kappa.shape)
    v = np.minimum(v_lg, np.sqrt(a_lat / np.maximum(np.abs(kappa), eps)))
    if grid is None:
        grid = SpatialGrid(K=len(kappa))
    return LimitProfile(grid, v.copy())

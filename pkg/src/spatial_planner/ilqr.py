"""Single-shooting iterative LQR.

The solver works on a :class:`DiscreteProblem` whose stage functions are
vectorized over the grid index: ``cost(X, U, k)`` receives the stacked
states ``X`` (len x n), controls ``U`` (len x m) and the integer indices
``k`` and returns one value per row. Derivatives follow the same layout.

Only the dynamics are evaluated step by step. A problem may ship a
numba-compiled ``shoot`` kernel for that loop; otherwise a plain Python
loop over ``step`` is used.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numba
import numpy as np

LOG = logging.getLogger(__name__)

_EMPTY = np.zeros(0)


class RolloutDiverged(RuntimeError):
    def __init__(self, index: int):
        super().__init__(f"rollout diverged: non-finite state at index {index}")
        self.index = index


class BackwardPassFailed(RuntimeError):
    def __init__(self, index: int, regularization: float):
        super().__init__(
            f"backward pass failed: control Hessian not positive definite at index {index} "
            f"(regularization {regularization:g})"
        )
        self.index = index
        self.regularization = regularization


@dataclass
class DiscreteProblem:
    """Discrete-time optimal control problem ``min sum_k l(x_k, u_k, k)``.

    ``step(x, u, params)`` advances one sample. ``jacobians(X, U, params)``
    returns ``A`` (K x n x n) and ``B`` (K x n x m). ``cost(X, U, k)`` returns
    per-stage costs and ``cost_derivatives(X, U, k)`` returns
    ``(lx, lu, lxx, luu, lux)`` stacked along the first axis.
    """

    n: int
    m: int
    x0: np.ndarray
    step: Callable
    jacobians: Callable
    cost: Callable
    cost_derivatives: Callable
    params: np.ndarray = field(default_factory=lambda: _EMPTY)
    shoot: Optional[Callable] = None

    def __post_init__(self) -> None:
        self.x0 = np.asarray(self.x0, dtype=float).reshape(self.n)
        self.params = np.asarray(self.params, dtype=float)


@dataclass
class Trajectory:
    X: np.ndarray
    U: np.ndarray
    cost: float

    @property
    def K(self) -> int:
        return self.U.shape[0]


@dataclass(frozen=True)
class IlqrSettings:
    max_iter: int = 5
    tol: float = 1e-6
    reg_init: float = 1e-6
    reg_growth: float = 10.0
    reg_max: float = 1e6
    steps: tuple = tuple(0.5**i for i in range(11))
    accept_ratio: float = 1e-4

    def __post_init__(self) -> None:
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if not self.steps or any(not (0.0 < a <= 1.0) for a in self.steps):
            raise ValueError("line-search steps must lie in (0, 1]")


@dataclass
class Gains:
    kff: np.ndarray  # K x m
    Kfb: np.ndarray  # K x m x n
    d1: float  # sum k^T Qu
    d2: float  # 0.5 * sum k^T Quu k

    def expected_reduction(self, alpha: float) -> float:
        return -(alpha * self.d1 + alpha * alpha * self.d2)


@dataclass
class IlqrReport:
    status: str  # "converged" | "iteration-capped" | "stalled"
    iterations: int
    accepted: int
    costs: list
    regularization: float

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _python_shoot(problem: DiscreteProblem, X, U, kff, Kfb, alpha):
    K = U.shape[0]
    Xn = np.empty((K, problem.n))
    Un = np.empty_like(U)
    Xn[0] = problem.x0
    for k in range(K):
        Un[k] = U[k] + alpha * kff[k] + Kfb[k] @ (Xn[k] - X[k])
        if k + 1 < K:
            Xn[k + 1] = problem.step(Xn[k], Un[k], problem.params)
            if not np.all(np.isfinite(Xn[k + 1])):
                return Xn, Un, k + 1
    return Xn, Un, -1


def _shoot(problem: DiscreteProblem, X, U, kff, Kfb, alpha):
    if problem.shoot is not None:
        return problem.shoot(problem.x0, X, U, kff, Kfb, alpha, problem.params)
    return _python_shoot(problem, X, U, kff, Kfb, alpha)


def total_cost(problem: DiscreteProblem, X: np.ndarray, U: np.ndarray) -> float:
    return float(np.sum(problem.cost(X, U, np.arange(U.shape[0]))))


def rollout(problem: DiscreteProblem, controls: np.ndarray) -> Trajectory:
    """Integrate the dynamics from ``x0`` under ``controls``."""
    U = np.asarray(controls, dtype=float).reshape(-1, problem.m)
    if not np.all(np.isfinite(problem.x0)):
        raise RolloutDiverged(0)
    K = U.shape[0]
    zeros_k = np.zeros((K, problem.m))
    zeros_K = np.zeros((K, problem.m, problem.n))
    X, U, bad = _shoot(problem, np.zeros((K, problem.n)), U, zeros_k, zeros_K, 0.0)
    if bad >= 0:
        raise RolloutDiverged(int(bad))
    return Trajectory(X, U, total_cost(problem, X, U))


@numba.njit(cache=True)
def _cholesky(M):
    m = M.shape[0]
    L = np.zeros_like(M)
    for i in range(m):
        for j in range(i + 1):
            acc = M[i, j]
            for p in range(j):
                acc -= L[i, p] * L[j, p]
            if i == j:
                if acc <= 0.0 or not np.isfinite(acc):
                    return L, False
                L[i, i] = np.sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
    return L, True


@numba.njit(cache=True)
def _chol_solve(L, b):
    # b: m x r
    m = L.shape[0]
    r = b.shape[1]
    y = np.empty_like(b)
    for c in range(r):
        for i in range(m):
            acc = b[i, c]
            for p in range(i):
                acc -= L[i, p] * y[p, c]
            y[i, c] = acc / L[i, i]
        for i in range(m - 1, -1, -1):
            acc = y[i, c]
            for p in range(i + 1, m):
                acc -= L[p, i] * y[p, c]
            y[i, c] = acc / L[i, i]
    return y


@numba.njit(cache=True)
def _riccati(A, B, lx, lu, lxx, luu, lux, reg):
    K = lx.shape[0]
    n = lx.shape[1]
    m = lu.shape[1]
    kff = np.zeros((K, m))
    Kfb = np.zeros((K, m, n))
    Vx = np.zeros(n)
    Vxx = np.zeros((n, n))
    Qx = np.empty(n)
    Qu = np.empty(m)
    Qxx = np.empty((n, n))
    Quu = np.empty((m, m))
    Qux = np.empty((m, n))
    VA = np.empty((n, n))
    VB = np.empty((n, m))
    rhs = np.empty((m, n + 1))
    d1 = 0.0
    d2 = 0.0
    for k in range(K - 1, -1, -1):
        Qx[:] = lx[k]
        Qu[:] = lu[k]
        Qxx[:, :] = lxx[k]
        Quu[:, :] = luu[k]
        Qux[:, :] = lux[k]
        if k < K - 1:
            Ak = A[k]
            Bk = B[k]
            for i in range(n):
                for j in range(n):
                    acc = 0.0
                    for p in range(n):
                        acc += Vxx[i, p] * Ak[p, j]
                    VA[i, j] = acc
                for j in range(m):
                    acc = 0.0
                    for p in range(n):
                        acc += Vxx[i, p] * Bk[p, j]
                    VB[i, j] = acc
            for i in range(n):
                acc = 0.0
                for p in range(n):
                    acc += Ak[p, i] * Vx[p]
                Qx[i] += acc
                for j in range(n):
                    acc = 0.0
                    for p in range(n):
                        acc += Ak[p, i] * VA[p, j]
                    Qxx[i, j] += acc
            for i in range(m):
                acc = 0.0
                for p in range(n):
                    acc += Bk[p, i] * Vx[p]
                Qu[i] += acc
                for j in range(m):
                    acc = 0.0
                    for p in range(n):
                        acc += Bk[p, i] * VB[p, j]
                    Quu[i, j] += acc
                for j in range(n):
                    acc = 0.0
                    for p in range(n):
                        acc += Bk[p, i] * VA[p, j]
                    Qux[i, j] += acc
        for i in range(m):
            Quu[i, i] += reg
        L, ok = _cholesky(Quu)
        if not ok:
            return kff, Kfb, d1, d2, k
        for i in range(m):
            rhs[i, 0] = Qu[i]
            for j in range(n):
                rhs[i, j + 1] = Qux[i, j]
        sol = _chol_solve(L, rhs)
        for i in range(m):
            kff[k, i] = -sol[i, 0]
            for j in range(n):
                Kfb[k, i, j] = -sol[i, j + 1]
        kk = kff[k]
        KK = Kfb[k]
        for i in range(m):
            d1 += kk[i] * Qu[i]
            for j in range(m):
                d2 += 0.5 * kk[i] * Quu[i, j] * kk[j]
        # Vx = Qx + K^T Quu k + K^T Qu + Qux^T k ; Vxx = Qxx + K^T Quu K + K^T Qux + Qux^T K
        for i in range(n):
            acc = Qx[i]
            for p in range(m):
                qk = 0.0
                for q in range(m):
                    qk += Quu[p, q] * kk[q]
                acc += KK[p, i] * (qk + Qu[p]) + Qux[p, i] * kk[p]
            Vx[i] = acc
        for i in range(n):
            for j in range(n):
                acc = Qxx[i, j]
                for p in range(m):
                    qK = 0.0
                    for q in range(m):
                        qK += Quu[p, q] * KK[q, j]
                    acc += KK[p, i] * (qK + Qux[p, j]) + Qux[p, i] * KK[p, j]
                Vxx[i, j] = acc
        for i in range(n):
            for j in range(i + 1, n):
                sym = 0.5 * (Vxx[i, j] + Vxx[j, i])
                Vxx[i, j] = sym
                Vxx[j, i] = sym
    return kff, Kfb, d1, d2, -1


def backward_pass(traj: Trajectory, problem: DiscreteProblem, regularization: float = 0.0) -> Gains:
    """Riccati recursion on the Gauss-Newton expansion around ``traj``."""
    if regularization < 0.0:
        raise ValueError("regularization must be non-negative")
    k_idx = np.arange(traj.K)
    A, B = problem.jacobians(traj.X, traj.U, problem.params)
    lx, lu, lxx, luu, lux = problem.cost_derivatives(traj.X, traj.U, k_idx)
    kff, Kfb, d1, d2, bad = _riccati(
        np.ascontiguousarray(A, dtype=float),
        np.ascontiguousarray(B, dtype=float),
        np.ascontiguousarray(lx, dtype=float),
        np.ascontiguousarray(lu, dtype=float),
        np.ascontiguousarray(lxx, dtype=float),
        np.ascontiguousarray(luu, dtype=float),
        np.ascontiguousarray(lux, dtype=float),
        float(regularization),
    )
    if bad >= 0:
        raise BackwardPassFailed(int(bad), regularization)
    return Gains(kff, Kfb, float(d1), float(d2))


def forward_pass(traj: Trajectory, gains: Gains, problem: DiscreteProblem, steps=None,
                 accept_ratio: float = 1e-4) -> tuple[Trajectory, bool]:
    """Backtracking line search over ``steps``.

    Returns the first trajectory whose actual cost decrease exceeds
    ``accept_ratio`` times the predicted one, or ``(traj, False)``.
    """
    if steps is None:
        steps = IlqrSettings().steps
    for alpha in steps:
        X, U, bad = _shoot(problem, traj.X, traj.U, gains.kff, gains.Kfb, alpha)
        if bad >= 0:
            LOG.debug("line search: rollout diverged at index %d for alpha=%g", bad, alpha)
            continue
        cost = total_cost(problem, X, U)
        if not np.isfinite(cost):
            continue
        expected = gains.expected_reduction(alpha)
        actual = traj.cost - cost
        if expected > 0.0:
            if actual / expected > accept_ratio:
                return Trajectory(X, U, cost), True
        elif actual > 0.0:
            return Trajectory(X, U, cost), True
    return traj, False


def solve(problem: DiscreteProblem, controls: np.ndarray, settings: IlqrSettings | None = None
          ) -> tuple[Trajectory, IlqrReport]:
    """Run ILQR iterations until the relative cost change drops below ``tol``."""
    settings = settings or IlqrSettings()
    traj = rollout(problem, controls)
    costs = [traj.cost]
    reg = settings.reg_init
    accepted = 0
    status = "iteration-capped"
    it = 0
    last_failed = False
    while it < settings.max_iter:
        it += 1
        gains = None
        while gains is None:
            try:
                gains = backward_pass(traj, problem, reg)
            except BackwardPassFailed:
                reg *= settings.reg_growth
                if reg > settings.reg_max:
                    break
        if gains is None:
            status = "stalled"
            break
        expected = gains.expected_reduction(1.0)
        if expected <= settings.tol * abs(traj.cost) or expected < 1e-14:
            status = "converged"
            break
        new, ok = forward_pass(traj, gains, problem, settings.steps, settings.accept_ratio)
        last_failed = not ok
        if not ok:
            reg *= settings.reg_growth
            if reg > settings.reg_max:
                status = "stalled"
                break
            continue
        accepted += 1
        rel = (traj.cost - new.cost) / max(abs(traj.cost), 1e-300)
        traj = new
        costs.append(traj.cost)
        reg = max(reg / settings.reg_growth, settings.reg_init)
        if rel < settings.tol:
            status = "converged"
            break
    if status == "iteration-capped" and last_failed:
        status = "stalled"
    return traj, IlqrReport(status, it, accepted, costs, reg)


def with_cost(problem: DiscreteProblem, cost: Callable, cost_derivatives: Callable) -> DiscreteProblem:
    """Copy of ``problem`` with a different stage cost."""
    return replace(problem, cost=cost, cost_derivatives=cost_derivatives)

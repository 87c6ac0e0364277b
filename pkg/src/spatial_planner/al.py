"""Augmented-Lagrangian wrapper around :mod:`spatial_planner.ilqr`.

Each planning cycle runs one ILQR solve on the augmented cost followed by a
single clamped multiplier update. Barrier weights stay fixed and multipliers
are capped so that infeasible warm starts keep the cost finite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import ilqr

MU_DEFAULT = 1e2
LAMBDA_MAX_DEFAULT = 1e2
MU_TMAX = 1e3
LAMBDA_MAX_TMAX = 1e3


@dataclass
class Constraint:
    """Inequality ``h(x_k, u_k, k) <= 0``, vectorized like the stage cost.

    ``grad`` returns ``(hx, hu)``; ``hess`` (optional, zero if omitted)
    returns ``(hxx, huu, hux)``. ``mask`` selects the grid indices where the
    constraint binds; ``None`` means everywhere.
    """

    name: str
    fun: Callable
    grad: Callable
    mu: float = MU_DEFAULT
    lam_max: float = LAMBDA_MAX_DEFAULT
    mask: Optional[np.ndarray] = None
    hess: Optional[Callable] = None

    def __post_init__(self) -> None:
        if self.mu <= 0.0 or self.lam_max <= 0.0:
            raise ValueError(f"constraint {self.name!r}: mu and lam_max must be positive")


class ConstraintSet(list):
    """Ordered list of :class:`Constraint` objects."""

    @property
    def names(self) -> list:
        return [c.name for c in self]

    @property
    def mu(self) -> np.ndarray:
        return np.array([c.mu for c in self], dtype=float)

    @property
    def lam_max(self) -> np.ndarray:
        return np.array([c.lam_max for c in self], dtype=float)

    def masks(self, k: np.ndarray) -> np.ndarray:
        out = np.ones((len(k), len(self)), dtype=bool)
        for i, c in enumerate(self):
            if c.mask is not None:
                out[:, i] = np.asarray(c.mask, dtype=bool)[k]
        return out

    def values(self, X: np.ndarray, U: np.ndarray, k: np.ndarray) -> np.ndarray:
        H = np.zeros((len(k), len(self)))
        for i, c in enumerate(self):
            H[:, i] = c.fun(X, U, k)
        return H


@dataclass
class ALState:
    """Multipliers ``lam`` (K x I) for the constraints named in ``names``."""

    lam: np.ndarray
    names: list = field(default_factory=list)

    @classmethod
    def zeros(cls, K: int, constraints: Sequence[Constraint]) -> "ALState":
        return cls(np.zeros((K, len(constraints))), [c.name for c in constraints])

    def check(self, constraints: ConstraintSet) -> None:
        if list(self.names) != constraints.names:
            raise ValueError(f"multiplier state {self.names} does not match constraints {constraints.names}")

    def remap(self, constraints: Sequence[Constraint]) -> "ALState":
        """Carry multipliers over by constraint name; new constraints start at zero."""
        lam = np.zeros((self.lam.shape[0], len(constraints)))
        index = {name: i for i, name in enumerate(self.names)}
        for j, c in enumerate(constraints):
            if c.name in index:
                lam[:, j] = np.clip(self.lam[:, index[c.name]], 0.0, c.lam_max)
        return ALState(lam, [c.name for c in constraints])


@dataclass
class StageExpansion:
    value: np.ndarray
    lx: np.ndarray
    lu: np.ndarray
    lxx: np.ndarray
    luu: np.ndarray
    lux: np.ndarray


def penalty(X, U, k, constraints: ConstraintSet, lam: np.ndarray) -> np.ndarray:
    """Per-stage sum of ``lam*h + mu*h^2`` over active constraints."""
    if not len(constraints):
        return np.zeros(len(k))
    H = constraints.values(X, U, k)
    lam_k = lam[k]
    # penalty applies only to violated constraints or those with a positive multiplier
    active = constraints.masks(k) & ((H > 0.0) | (lam_k > 0.0))
    terms = np.where(active, lam_k * H + constraints.mu * H * H, 0.0)
    return terms.sum(axis=1)


def penalty_derivatives(X, U, k, constraints: ConstraintSet, lam: np.ndarray) -> StageExpansion:
    N, n = X.shape
    m = U.shape[1]
    value = np.zeros(N)
    lx = np.zeros((N, n))
    lu = np.zeros((N, m))
    lxx = np.zeros((N, n, n))
    luu = np.zeros((N, m, m))
    lux = np.zeros((N, m, n))
    if not len(constraints):
        return StageExpansion(value, lx, lu, lxx, luu, lux)
    masks = constraints.masks(k)
    lam_k = lam[k]
    for i, c in enumerate(constraints):
        h = c.fun(X, U, k)
        act = masks[:, i] & ((h > 0.0) | (lam_k[:, i] > 0.0))
        if not act.any():
            continue
        w = np.where(act, 1.0, 0.0)
        li = lam_k[:, i]
        value += w * (li * h + c.mu * h * h)
        hx, hu = c.grad(X, U, k)
        g = w * (li + 2.0 * c.mu * h)
        lx += g[:, None] * hx
        lu += g[:, None] * hu
        two_mu = 2.0 * c.mu * w
        lxx += two_mu[:, None, None] * hx[:, :, None] * hx[:, None, :]
        luu += two_mu[:, None, None] * hu[:, :, None] * hu[:, None, :]
        lux += two_mu[:, None, None] * hu[:, :, None] * hx[:, None, :]
        if c.hess is not None:
            hxx, huu, hux = c.hess(X, U, k)
            lxx += g[:, None, None] * hxx
            luu += g[:, None, None] * huu
            lux += g[:, None, None] * hux
    return StageExpansion(value, lx, lu, lxx, luu, lux)


def augmented_cost(x, u, k: int, problem: ilqr.DiscreteProblem, constraints: ConstraintSet,
                   al_state: ALState) -> StageExpansion:
    """Augmented stage cost and its derivatives at a single grid index."""
    X = np.asarray(x, dtype=float).reshape(1, -1)
    U = np.asarray(u, dtype=float).reshape(1, -1)
    kk = np.array([k])
    base = problem.cost(X, U, kk)
    lx, lu, lxx, luu, lux = problem.cost_derivatives(X, U, kk)
    pen = penalty_derivatives(X, U, kk, constraints, al_state.lam)
    return StageExpansion(
        float(base[0] + pen.value[0]),
        (lx + pen.lx)[0],
        (lu + pen.lu)[0],
        (lxx + pen.lxx)[0],
        (luu + pen.luu)[0],
        (lux + pen.lux)[0],
    )


def augment(problem: ilqr.DiscreteProblem, constraints: ConstraintSet, al_state: ALState) -> ilqr.DiscreteProblem:
    """The unconstrained problem minimized by ILQR inside one AL cycle."""
    lam = al_state.lam

    def cost(X, U, k):
        return problem.cost(X, U, k) + penalty(X, U, k, constraints, lam)

    def cost_derivatives(X, U, k):
        lx, lu, lxx, luu, lux = problem.cost_derivatives(X, U, k)
        pen = penalty_derivatives(X, U, k, constraints, lam)
        return lx + pen.lx, lu + pen.lu, lxx + pen.lxx, luu + pen.luu, lux + pen.lux

    return ilqr.with_cost(problem, cost, cost_derivatives)


def update_multipliers(al_state: ALState, traj: ilqr.Trajectory, constraints: ConstraintSet) -> ALState:
    """``lam <- clip(lam + mu * h, 0, lam_max)`` at every binding index."""
    k = np.arange(traj.K)
    H = constraints.values(traj.X, traj.U, k)
    masks = constraints.masks(k)
    lam = al_state.lam + constraints.mu * H
    lam = np.clip(lam, 0.0, constraints.lam_max)
    lam = np.where(masks, lam, 0.0)
    return ALState(lam, list(al_state.names))


def violations(traj: ilqr.Trajectory, constraints: ConstraintSet) -> dict:
    """Maximum positive part of each constraint over its binding indices."""
    if not len(constraints):
        return {}
    k = np.arange(traj.K)
    H = np.where(constraints.masks(k), constraints.values(traj.X, traj.U, k), -np.inf)
    worst = np.max(H, axis=0)
    return {c.name: float(max(worst[i], 0.0)) for i, c in enumerate(constraints)}


@dataclass
class ALReport:
    ilqr: ilqr.IlqrReport
    violation: dict
    base_cost: float

    @property
    def max_violation(self) -> float:
        return max(self.violation.values(), default=0.0)


def solve_constrained(problem: ilqr.DiscreteProblem, constraints: Sequence[Constraint],
                      controls: np.ndarray, al_state: ALState | None = None,
                      settings: ilqr.IlqrSettings | None = None
                      ) -> tuple[ilqr.Trajectory, ALState, ALReport]:
    """One planning cycle: ILQR on the augmented cost, then one multiplier update."""
    constraints = ConstraintSet(constraints)
    U0 = np.asarray(controls, dtype=float).reshape(-1, problem.m)
    if al_state is None:
        al_state = ALState.zeros(U0.shape[0], constraints)
    if al_state.lam.shape != (U0.shape[0], len(constraints)):
        raise ValueError(
            f"multiplier shape {al_state.lam.shape} does not match horizon {U0.shape[0]} "
            f"and {len(constraints)} constraints"
        )
    al_state.check(constraints)
    aug = augment(problem, constraints, al_state)
    traj, report = ilqr.solve(aug, U0, settings)
    new_state = update_multipliers(al_state, traj, constraints)
    base = ilqr.total_cost(problem, traj.X, traj.U)
    return traj, new_state, ALReport(report, violations(traj, constraints), base)


def shift_warm_start(controls: np.ndarray, al_state: ALState, advance: float, ds: float
                     ) -> tuple[np.ndarray, ALState, bool]:
    """Shift controls and multipliers by the distance travelled.

    Rows move back by ``round(advance / ds)``; the control tail repeats the
    last row and the multiplier tail is zero. Returns ``reinitialized=True``
    with an all-zero warm start when the shift exceeds the horizon.
    """
    if advance < 0.0:
        raise ValueError("advance must be non-negative")
    U = np.asarray(controls, dtype=float)
    K = U.shape[0]
    shift = int(round(advance / ds))
    if shift >= K:
        return np.zeros_like(U), ALState(np.zeros_like(al_state.lam), list(al_state.names)), True
    if shift == 0:
        return U.copy(), ALState(al_state.lam.copy(), list(al_state.names)), False
    U_new = np.empty_like(U)
    U_new[: K - shift] = U[shift:]
    U_new[K - shift:] = U[-1]
    lam = np.zeros_like(al_state.lam)
    lam[: K - shift] = al_state.lam[shift:]
    return U_new, ALState(lam, list(al_state.names)), False

"""Acceptance suite: one group of tests per criterion, tagged with ``criterion(n)``.

The terminal summary prints one pass/fail line per criterion.
"""
import time

import numpy as np
import pytest

from spatial_planner import al, ilqr
from spatial_planner.cli import main
from spatial_planner.grid import SpatialGrid
from spatial_planner.path import (
    PathWeights,
    ReferencePolyline,
    _path_jacobians,
    _path_step,
    local_curvature,
    path_problem,
)
from spatial_planner.scenario import bundled, bundled_dir, with_overrides
from spatial_planner.sim import run_scenario
from spatial_planner.velocity import (
    LimitProfile,
    ProfileWeights,
    SpatioTemporalConstraint,
    _velocity_jacobians,
    _velocity_step,
    apply_static_constraint,
    generate_reference,
    optimize_profile,
    profile_constraints,
    velocity_problem,
)

import double_integrator as di
from fdcheck import check_constraint, check_dynamics, check_stage
from test_ilqr import dense_lqr_optimum, linear_problem
from test_path import END_LAYER_M, circle_points, noisy_line, solve_cycles
from test_velocity import BRAKING_DISTANCE_ORACLE, braking_distance_oracle

A_TOL = 2.5 + 0.05
T_TOL = 0.1
MERGE_S, MERGE_T = 44.5, 5.75
LIGHT_S, LIGHT_T = 114.5, 14.0


# -- criterion 1 ------------------------------------------------------------

@pytest.fixture(scope="module")
def fig1_runs():
    sc = bundled("fig1_merge_light")
    return {cs: run_scenario(sc, constraint_set=cs) for cs in ("none", "tmin", "tmin_tmax")}


@pytest.mark.criterion(1)
def test_fig1_full_constraint_set(fig1_runs):
    res = fig1_runs["tmin_tmax"]
    v = res.verdict
    assert not v.collision
    assert v.arrival(MERGE_S).time >= MERGE_T - T_TOL
    assert v.arrival(LIGHT_S).time <= LIGHT_T + T_TOL
    assert not v.red_light_violations
    accel = np.array([lg.accel for lg in res.logs])
    a_plan = np.array([lg.a_plan for lg in res.logs])
    assert np.all(np.abs(accel) <= A_TOL)
    assert np.all(np.abs(a_plan) <= A_TOL)


@pytest.mark.criterion(1)
def test_fig1_without_constraints_collides(fig1_runs):
    assert fig1_runs["none"].verdict.collision


@pytest.mark.criterion(1)
def test_fig1_min_time_only_misses_the_light(fig1_runs):
    v = fig1_runs["tmin"].verdict
    assert not v.collision
    t_light = v.arrival(LIGHT_S).time
    assert t_light is None or t_light > LIGHT_T


# -- criterion 2 ------------------------------------------------------------

GRID = SpatialGrid(0.0, 0.5, 250)


def _stop_at_100():
    return apply_static_constraint(LimitProfile.constant(GRID, 10.0), 100.0)


@pytest.mark.criterion(2)
def test_reference_envelope_with_huge_jerk():
    ref = generate_reference(_stop_at_100(), 10.0, ProfileWeights(j_min=-1e3, j_max=1e3))
    s = GRID.s
    sel = (s >= 80.0) & (s <= 99.0)
    envelope = np.minimum(10.0, np.sqrt(2.0 * 2.5 * (100.0 - s[sel])))
    assert np.max(np.abs(ref.v_bwd[sel] / envelope - 1.0)) <= 0.02


@pytest.mark.criterion(2)
def test_reference_braking_distance_with_table_jerk():
    oracle = braking_distance_oracle()
    assert oracle == pytest.approx(BRAKING_DISTANCE_ORACLE, rel=1e-9)
    v = generate_reference(_stop_at_100(), 10.0).v_bwd
    k0 = int(np.argmax(v < 10.0 - 1e-9))
    slope = (v[k0] ** 2 - v[k0 + 1] ** 2) / GRID.ds
    distance = 100.0 - (GRID.s[k0] - (100.0 - v[k0] ** 2) / slope)
    assert distance == pytest.approx(oracle, rel=0.02)


# -- criterion 3 ------------------------------------------------------------

@pytest.mark.criterion(3)
def test_scalar_lqr_closed_form():
    traj, _ = ilqr.solve(linear_problem(1.1, 0.5, 1.0, 0.1, 3.0), np.zeros((20, 1)))
    _, c_opt = dense_lqr_optimum(1.1, 0.5, 1.0, 0.1, 3.0, 20)
    assert abs(traj.cost - c_opt) <= 1e-8 * max(1.0, c_opt)


@pytest.mark.criterion(3)
def test_box_constrained_double_integrator_brute_force():
    _, c_opt = di.brute_force_optimum()
    cons = di.box_constraints()
    U, state = np.zeros((di.K, 1)), None
    for _ in range(5):
        traj, state, rep = al.solve_constrained(di.problem(), cons, U, state)
        U = traj.U
    assert abs(rep.base_cost - c_opt) <= 0.01 * c_opt
    assert rep.max_violation <= 1e-2


# -- criterion 4 ------------------------------------------------------------

FD_TOL = 1e-5


@pytest.mark.criterion(4)
def test_fd_path_dynamics():
    def sample(rng):
        return rng.normal(size=3) * [50, 50, 3], rng.normal(size=1)

    assert check_dynamics(_path_step, _path_jacobians, np.array([0.5]), sample) < FD_TOL


@pytest.mark.criterion(4)
def test_fd_velocity_dynamics():
    def sample(rng):
        return np.array([rng.uniform(0.5, 20.0), rng.uniform(0, 10)]), rng.normal(size=1) * 2

    assert check_dynamics(_velocity_step, _velocity_jacobians, np.array([0.5, 0.1]), sample) < FD_TOL


def _stage_check(problem, K, sample):
    def value(x, u, k):
        return problem.cost(x[None], u[None], np.array([k]))[0]

    def derivs(x, u, k):
        return tuple(a[0] for a in problem.cost_derivatives(x[None], u[None], np.array([k])))

    return check_stage(value, derivs, sample)


@pytest.mark.criterion(4)
def test_fd_path_cost():
    ref = ReferencePolyline.from_points(circle_points(), 0.5, K=60)
    prob = path_problem(ref, PathWeights(1.0, 20.0))

    def sample(rng):
        return rng.normal(size=3) * 10, rng.normal(size=1), int(rng.integers(60))

    assert _stage_check(prob, 60, sample) < FD_TOL


def _velocity_setup(K=40):
    grid = SpatialGrid(0.0, 0.5, K)
    w = ProfileWeights()
    vr = np.linspace(12.0, 4.0, K)
    st = [SpatioTemporalConstraint("min", 10.0, 3.0), SpatioTemporalConstraint("max", 15.0, 2.0)]
    cons = profile_constraints(vr, grid, w, st)
    prob = velocity_problem(vr, 10.0, grid, np.linspace(0.01, 1.0, K), w)

    def sample(rng):
        return (np.array([rng.uniform(0.5, 15.0), rng.uniform(0.0, 6.0)]), np.array([rng.uniform(-4, 4)]),
                int(rng.integers(K)))

    return prob, cons, sample


@pytest.mark.criterion(4)
def test_fd_velocity_cost():
    prob, _, sample = _velocity_setup()
    assert _stage_check(prob, 40, sample) < FD_TOL


@pytest.mark.criterion(4)
def test_fd_constraint_gradients():
    _, cons, sample = _velocity_setup()
    names = [c.name for c in cons]
    assert any(n.startswith("tmin") for n in names) and any(n.startswith("tmax") for n in names)
    for con in list(cons) + list(di.box_constraints()):
        assert check_constraint(con, sample if con in cons else _di_sample) < FD_TOL, con.name


def _di_sample(rng):
    return rng.normal(size=2) * 3, rng.normal(size=1) * 3, int(rng.integers(di.K))


@pytest.mark.criterion(4)
@pytest.mark.parametrize("which", ["double_integrator", "velocity"])
def test_fd_augmented_lagrangian(which):
    if which == "velocity":
        prob, cons, sample = _velocity_setup()
        K = 40
    else:
        prob, cons, sample, K = di.problem(), di.box_constraints(), _di_sample, di.K
    rng = np.random.default_rng(3)
    state = al.ALState(rng.uniform(0.1, 100.0, size=(K, len(cons))), cons.names)

    def value(x, u, k):
        return al.augmented_cost(x, u, k, prob, cons, state).value

    def derivs(x, u, k):
        e = al.augmented_cost(x, u, k, prob, cons, state)
        return e.lx, e.lu, e.lxx, e.luu, e.lux

    assert check_stage(value, derivs, sample) < FD_TOL


# -- criterion 5 ------------------------------------------------------------

@pytest.mark.criterion(5)
def test_circle_curvature_within_five_percent():
    ref = ReferencePolyline.from_points(circle_points(turn=2.2 * np.pi, n=2000), 0.5, K=250)
    path = solve_cycles(ref)
    keep = ref.grid.s <= ref.grid.s_end - END_LAYER_M
    assert np.all(np.abs(path.kappa[keep] / 0.05 - 1.0) <= 0.05)


@pytest.mark.criterion(5)
def test_noisy_line_variance_ratio():
    pts = noisy_line(sigma=0.1)
    path = solve_cycles(ReferencePolyline.from_points(pts, 0.5, K=250))
    assert np.var(local_curvature(pts)) / np.var(path.kappa) >= 10.0


# -- criterion 6 ------------------------------------------------------------

@pytest.fixture(scope="module")
def cut_in_run():
    sc = bundled("cut_in")
    return sc, run_scenario(sc, duration=sc.actors[0].spawn_time + 2.0)


@pytest.mark.criterion(6)
def test_cut_in_stays_finite(cut_in_run):
    _, res = cut_in_run
    for lg in res.logs:
        assert np.isfinite([lg.vel_cost, lg.v, lg.s, lg.accel, lg.a_plan, lg.v_plan]).all()
        assert not lg.planner_error


@pytest.mark.criterion(6)
def test_cut_in_brakes_at_a_min_and_recovers_monotonically(cut_in_run):
    sc, res = cut_in_run
    k0 = int(round(sc.actors[0].spawn_time / sc.sim.dt))
    assert res.logs[k0 - 1].n_obstacles == 0 and res.logs[k0].n_obstacles == 1
    window = res.logs[k0:k0 + 11]
    viol = np.array([lg.limit_violation for lg in window])
    assert viol[0] > 0.0
    assert np.all(np.diff(viol) < 0.0)
    a_plan = np.array([lg.a_plan for lg in window])
    np.testing.assert_allclose(a_plan, sc.params.a_min, atol=0.05)


# -- criterion 7 ------------------------------------------------------------

@pytest.mark.criterion(7)
def test_cycle_mean_below_ten_ms(fig1_runs):
    totals = np.array([lg.t_total_ms for lg in fig1_runs["tmin_tmax"].logs[1:]])
    assert totals.mean() < 10.0


def _time_longitudinal(K, repeats=7):
    grid = SpatialGrid(0.0, 0.5, K)
    limits = apply_static_constraint(LimitProfile.constant(grid, 13.89), 0.2 * K)
    ref = generate_reference(limits, 10.0)
    settings = ilqr.IlqrSettings(max_iter=5, tol=1e-300)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        optimize_profile(ref, 10.0, settings=settings)
        best = min(best, time.perf_counter() - t0)
    return best


@pytest.mark.criterion(7)
def test_longitudinal_solve_scales_linearly():
    _time_longitudinal(125, 1)
    times = [_time_longitudinal(K) for K in (125, 250, 500, 1000)]
    ratios = np.array(times[1:]) / np.array(times[:-1])
    assert np.all(ratios <= 2.5), ratios


@pytest.mark.criterion(7)
def test_bench_row_format(capsys):
    assert main(["bench", "fig1_merge_light", "--cycles", "100"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert "K = 250" in lines[0]
    assert [ln[:32].strip() for ln in lines[2:]] == ["lateral", "longitudinal", "total (lat. + lon. + preproc.)"]
    for ln in lines[2:]:
        assert len(ln[32:].split()) == 3


# -- criterion 8 ------------------------------------------------------------

@pytest.mark.criterion(8)
def test_leader_following_steady_state():
    sc = bundled("leader_follow")
    res = run_scenario(sc, duration=30.0)
    leader = sc.actors[0]
    tail = res.logs[-200:]
    for lg in tail:
        gap = leader.s0 + leader.v * lg.time - lg.s - 0.5 * (sc.ego.length + leader.length)
        d_safe = sc.sim.d_safe_const + sc.sim.d_safe_time * lg.v
        assert abs(lg.v - leader.v) <= 0.2
        assert d_safe - 0.5 <= gap <= d_safe + 2.0
    assert not res.verdict.collision


# -- criterion 9 ------------------------------------------------------------

@pytest.mark.criterion(9)
@pytest.mark.parametrize("name", sorted(p.stem for p in bundled_dir().glob("*.json")))
def test_repeated_runs_are_byte_identical(name, tmp_path):
    sc = with_overrides(bundled(name), profile_stride=25)
    outs = []
    for i in range(2):
        res = run_scenario(sc, duration=1.0, seed=11, out_dir=tmp_path / str(i))
        outs.append({k: res.outputs[k].read_bytes() for k in ("cycles", "profiles")})
    assert outs[0] == outs[1]
    assert outs[0]["cycles"].count(b"\n") == 101

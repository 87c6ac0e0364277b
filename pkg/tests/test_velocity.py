import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spatial_planner.grid import SpatialGrid
from spatial_planner.velocity import (
    LimitProfile,
    ProfileWeights,
    SpatioTemporalConstraint,
    VelocityTrajectory,
    _velocity_jacobians,
    _velocity_step,
    apply_dynamic_constraint,
    apply_static_constraint,
    generate_reference,
    optimize_profile,
    postprocess_standstill,
    profile_constraints,
    tmin_residual,
    tmin_weight,
    velocity_problem,
)

from fdcheck import check_constraint, check_dynamics, check_stage

GRID = SpatialGrid(0.0, 0.5, 250)
P = np.array([0.5, 0.1])

# time-domain jerk-limited stop from 10 m/s (|j| = 1.5, |a| <= 2.5), dt = 1e-4
BRAKING_DISTANCE_ORACLE = 20.290018514633804


def braking_distance_oracle(v0=10.0, jerk=1.5, a_cap=2.5, dt=1e-4):
    # the sweep ramps deceleration up from the stop; integrate that build-up from rest
    v = a = x = 0.0
    while v < v0:
        a = min(a + jerk * dt, a_cap)
        v += a * dt
        x += v * dt
    return x


def stop_limits(v=10.0, s_stop=100.0):
    return apply_static_constraint(LimitProfile.constant(GRID, v), s_stop)


def cycles(v_ref, v_start, n=3, **kw):
    warm = None
    for _ in range(n):
        traj = optimize_profile(v_ref, v_start, warm_start=warm, **kw)
        warm = (traj.controls, traj.al_state)
    return traj


def test_velocity_dynamics_jacobians():
    def sample(rng):
        return np.array([rng.uniform(0.5, 20.0), rng.uniform(0, 10)]), rng.normal(size=1) * 2

    assert check_dynamics(_velocity_step, _velocity_jacobians, P, sample) < 1e-5


def test_rollout_recurrence_matches_hand_evaluation():
    v = [10.0]
    for _ in range(4):
        v.append(v[-1] + 0.5 * 2.0 / v[-1])
    out = _velocity_step(np.array([10.0, 0.0]), np.array([2.0]), P)
    assert out[0] == pytest.approx(10.1, abs=1e-12)
    x = np.array([10.0, 0.0])
    for k in range(4):
        x = _velocity_step(x, np.array([2.0]), P)
        assert x[0] == pytest.approx(v[k + 1], abs=1e-12)
    assert v[2] == pytest.approx(10.19901, abs=1e-5)


def test_velocity_cost_derivatives():
    vr = np.linspace(12.0, 3.0, 40)
    w = ProfileWeights()
    prob = velocity_problem(vr, 10.0, SpatialGrid(0, 0.5, 40), np.linspace(0.01, 1.0, 40), w)

    def value(x, u, k):
        return prob.cost(x[None], u[None], np.array([k]))[0]

    def derivs(x, u, k):
        return tuple(a[0] for a in prob.cost_derivatives(x[None], u[None], np.array([k])))

    def sample(rng):
        return rng.normal(size=2) * 5, rng.normal(size=1), int(rng.integers(40))

    assert check_stage(value, derivs, sample) < 1e-5


def test_velocity_constraint_gradients():
    grid = SpatialGrid(0.0, 0.5, 40)
    st_cons = [SpatioTemporalConstraint("min", 10.0, 3.0), SpatioTemporalConstraint("max", 15.0, 2.0)]
    cons = profile_constraints(np.linspace(12.0, 4.0, 40), grid, ProfileWeights(), st_cons)

    def sample(rng):
        return np.array([rng.uniform(0.5, 15.0), rng.uniform(0, 6)]), rng.normal(size=1), int(rng.integers(40))

    assert len(cons) == 6
    for con in cons:
        assert check_constraint(con, sample) < 1e-5, con.name


def test_static_constraint_examples():
    base = LimitProfile.constant(GRID, 13.9)
    out = apply_static_constraint(base, 100.0)
    assert out.v_lim[GRID.nearest(100.0)] == 0.0
    assert np.count_nonzero(out.v_lim != 13.9) == 1
    np.testing.assert_array_equal(apply_static_constraint(base, 50.0, 20.0).v_lim, base.v_lim)
    assert apply_static_constraint(base, 50.0, 5.0).v_lim[100] == 5.0
    np.testing.assert_array_equal(apply_static_constraint(base, 500.0).v_lim, base.v_lim)


def test_dynamic_constraint_ramp():
    out = apply_dynamic_constraint(LimitProfile.constant(GRID, 13.9), 30.0, 5.0, 15.0)
    assert out.v_lim[GRID.nearest(15.0)] == pytest.approx(5.0)
    assert out.v_lim[GRID.nearest(22.5)] == pytest.approx(2.5)
    assert out.v_lim[GRID.nearest(30.0)] == pytest.approx(0.0)
    assert out.v_lim[GRID.nearest(14.0)] == 13.9
    assert out.v_lim[GRID.nearest(31.0)] == 13.9
    zero = apply_dynamic_constraint(LimitProfile.constant(GRID, 13.9), 30.0, 0.0, 15.0)
    sel = (GRID.s >= 15.0) & (GRID.s <= 30.0)
    np.testing.assert_array_equal(zero.v_lim[sel], 0.0)
    behind = apply_dynamic_constraint(LimitProfile.constant(GRID, 13.9), -5.0, 5.0, 15.0)
    np.testing.assert_array_equal(behind.v_lim, 13.9)


def test_predicted_gap_ramp_reduces_to_static_for_standing_obstacle():
    base = LimitProfile.constant(GRID, 13.9)
    t_pred = GRID.s / 7.0
    pred = apply_dynamic_constraint(base, 30.0, 0.0, 15.0, t_pred).v_lim
    ahead = GRID.s <= 30.0
    np.testing.assert_allclose(pred[ahead], apply_dynamic_constraint(base, 30.0, 0.0, 15.0).v_lim[ahead])
    # past the obstacle the predicted gap is negative, so the road stays blocked
    np.testing.assert_array_equal(pred[~ahead], 0.0)
    moving = apply_dynamic_constraint(base, 30.0, 5.0, 15.0, GRID.s / 5.0)
    # ego and leader at equal speed keep the gap at 30 m, beyond d_safe
    np.testing.assert_array_equal(moving.v_lim, 13.9)


def test_dynamic_constraint_validation():
    base = LimitProfile.constant(GRID, 10.0)
    with pytest.raises(ValueError):
        apply_dynamic_constraint(base, 30.0, -1.0, 15.0)
    with pytest.raises(ValueError):
        apply_dynamic_constraint(base, 30.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        LimitProfile(GRID, np.full(GRID.K, -1.0))


def test_reference_at_limit_is_constant():
    ref = generate_reference(LimitProfile.constant(GRID, 10.0), 10.0)
    np.testing.assert_allclose(ref.v_ref, 10.0)


def test_reference_huge_jerk_matches_constant_deceleration_envelope():
    w = ProfileWeights(j_min=-1e3, j_max=1e3)
    ref = generate_reference(stop_limits(), 10.0, w)
    s = GRID.s
    sel = (s >= 80.0) & (s <= 99.0)
    envelope = np.minimum(10.0, np.sqrt(2.0 * 2.5 * (100.0 - s[sel])))
    assert np.max(np.abs(ref.v_bwd[sel] / envelope - 1.0)) <= 0.02
    assert ref.v_bwd[GRID.nearest(80.0)] == pytest.approx(10.0, abs=1e-6)


def test_reference_braking_distance_matches_time_domain_oracle():
    assert braking_distance_oracle() == pytest.approx(BRAKING_DISTANCE_ORACLE, rel=1e-9)
    ref = generate_reference(stop_limits(), 10.0)
    v = ref.v_bwd
    k0 = int(np.argmax(v < 10.0 - 1e-9))
    # constant deceleration near the top: v^2 is linear in s, extrapolate to the 10 m/s crossing
    slope = (v[k0] ** 2 - v[k0 + 1] ** 2) / GRID.ds
    s_start = GRID.s[k0] - (100.0 - v[k0] ** 2) / slope
    assert 100.0 - s_start == pytest.approx(BRAKING_DISTANCE_ORACLE, rel=0.02)


def test_reference_respects_acceleration_and_jerk_bounds():
    limits = LimitProfile.constant(GRID, 13.9)
    limits.v_lim[GRID.s > 60] = 6.0
    limits = apply_static_constraint(limits, 110.0)
    w = ProfileWeights()
    ref = generate_reference(limits, 3.0, w)
    v = ref.v_ref
    a = np.diff(v * v) / (2.0 * GRID.ds)
    tol_a = 0.05 * (w.a_max - w.a_min)
    assert np.all(a >= w.a_min - tol_a) and np.all(a <= w.a_max + tol_a)
    assert np.all(v <= limits.v_lim + 1e-12)


def test_infeasible_start_brakes_at_a_min():
    ref = generate_reference(LimitProfile.constant(GRID, 5.0), 10.0)
    traj = cycles(ref, 10.0)
    assert np.all(np.isfinite(traj.v)) and np.all(np.isfinite(traj.a)) and np.all(np.isfinite(traj.t))
    k = int(np.argmax(traj.v <= 5.05))
    assert k > 0
    np.testing.assert_allclose(traj.a[:k], -2.5, atol=0.05)


def test_reference_floor_inactive_for_feasible_start():
    limits = stop_limits()
    ref = generate_reference(limits, 8.0)
    np.testing.assert_array_equal(ref.v_ref, np.minimum(ref.v_bwd, ref.v_fwd))


def test_fixed_point_tracking():
    traj = optimize_profile(np.full(GRID.K, 10.0), 10.0, grid=GRID)
    np.testing.assert_allclose(traj.v, 10.0, atol=1e-9)
    np.testing.assert_allclose(traj.a, 0.0, atol=1e-9)
    assert traj.report.base_cost == pytest.approx(0.0, abs=1e-12)


def test_time_state_is_prefix_sum():
    ref = generate_reference(stop_limits(), 8.0)
    traj = cycles(ref, 8.0)
    expected = np.concatenate([[0.0], np.cumsum(GRID.ds / np.maximum(traj.v[:-1], 0.1))])
    np.testing.assert_allclose(traj.t, expected, atol=1e-9)


def test_solved_profile_within_tolerance_band():
    limits = stop_limits()
    ref = generate_reference(limits, 8.0)
    traj = cycles(ref, 8.0)
    vr = np.maximum(ref.v_ref, 1.0)
    assert np.all(traj.v <= vr + 0.1)
    assert np.all(traj.a >= -2.55) and np.all(traj.a <= 2.55)
    assert np.all(traj.v >= 1.0 - 0.05)


def test_tmax_constraint_is_met():
    ref = generate_reference(LimitProfile.constant(GRID, 13.9), 5.0)
    sc = SpatioTemporalConstraint("max", 60.0, 6.0)
    traj = cycles(ref, 5.0, n=5, spatiotemporal=[sc])
    assert traj.t[GRID.nearest(60.0)] <= 6.0 + 0.1
    free = cycles(ref, 5.0, n=5)
    assert free.t[GRID.nearest(60.0)] > 6.1


def test_tmin_constraint_is_decisive():
    ref = generate_reference(LimitProfile.constant(GRID, 13.9), 10.0)
    sc = SpatioTemporalConstraint("min", 40.0, 6.0)
    traj = cycles(ref, 10.0, n=8, spatiotemporal=[sc])
    k = GRID.nearest(40.0)
    assert tmin_residual(traj.t[k], traj.v[k], 6.0) <= 1e-2 or min(6.0 - traj.t[k], traj.v[k] - 1.0) <= 0.1


def test_tmin_residual_examples():
    assert tmin_residual(5.75, 7.0, 5.75) == 0.0
    assert tmin_residual(3.0, 1.0, 5.75) == 0.0
    assert tmin_residual(4.0, 5.0, 5.75) == pytest.approx(7.0)


def test_tmin_weight_examples():
    assert tmin_weight(20.0, 10.0, 10.0, 5e-3) == 0.0
    assert tmin_weight(20.0 + 1 / 5e-3, 10.0, 10.0, 5e-3) == 1.0
    assert tmin_weight(10.0, 10.0, 10.0, 5e-3) == pytest.approx(0.0025)
    with pytest.raises(ValueError):
        tmin_weight(0.0, 0.0, -1.0, 0.5)
    with pytest.raises(ValueError):
        SpatioTemporalConstraint("min", 1.0, 1.0, beta=1.0)
    with pytest.raises(ValueError):
        SpatioTemporalConstraint("sometime", 1.0, 1.0)


def _traj(v, t=None):
    v = np.asarray(v, dtype=float)
    grid = SpatialGrid(0.0, 0.5, len(v))
    t = np.arange(len(v), dtype=float) if t is None else t
    return VelocityTrajectory(grid, v, t, np.full(len(v), -0.3))


def test_standstill_identity_without_stop():
    traj = _traj([5.0, 4.0, 3.0])
    limits = LimitProfile.constant(traj.grid, 10.0)
    assert postprocess_standstill(traj, limits) is traj


def test_standstill_segment():
    traj = _traj([3.0, 1.02, 1.0, 1.0, 1.03, 1.0, 2.0])
    v_lim = np.array([10.0, 0, 0, 0, 0, 0, 10.0])
    out = postprocess_standstill(traj, LimitProfile(traj.grid, v_lim))
    assert out.standstill
    np.testing.assert_array_equal(out.v, [3.0, 0, 0, 0, 0, 0, 2.0])
    np.testing.assert_array_equal(out.a[1:6], 0.0)
    np.testing.assert_array_equal(out.t, [0, 1, 1, 1, 1, 1, 6])


def test_standstill_leaves_fast_samples():
    traj = _traj([3.0, 2.0, 1.0])
    out = postprocess_standstill(traj, LimitProfile(traj.grid, [10.0, 0.0, 0.0]))
    np.testing.assert_array_equal(out.v, [3.0, 2.0, 0.0])


def test_empty_road_profile_tracks_limit():
    limits = LimitProfile.constant(GRID, 13.89)
    ref = generate_reference(limits, 13.89)
    traj = cycles(ref, 13.89, n=5)
    np.testing.assert_allclose(ref.v_ref, 13.89)
    np.testing.assert_allclose(traj.v, 13.89, atol=0.1)


def test_weights_validation():
    with pytest.raises(ValueError):
        ProfileWeights(w_v=0.0)
    with pytest.raises(ValueError):
        ProfileWeights(a_min=1.0)
    with pytest.raises(ValueError):
        ProfileWeights(j_max=-1.0)
    with pytest.raises(ValueError):
        ProfileWeights(v_min=0.0)


@settings(max_examples=40, deadline=None)
@given(levels=st.lists(st.floats(0.0, 20.0), min_size=5, max_size=5), v_start=st.floats(0.0, 20.0))
def test_reference_below_limit(levels, v_start):
    v_lim = np.repeat(levels, GRID.K // 5)
    ref = generate_reference(LimitProfile(GRID, v_lim), v_start)
    assert np.all(np.isfinite(ref.v_ref))
    if v_start <= ref.v_bwd[0]:
        assert np.all(ref.v_ref <= v_lim + 1e-12)


@settings(max_examples=25, deadline=None)
@given(levels=st.lists(st.floats(0.5, 20.0), min_size=5, max_size=5), cut=st.floats(0.0, 1.0),
       v_start=st.floats(0.0, 15.0))
def test_reference_is_monotone_in_limits_without_jerk_bound(levels, cut, v_start):
    # with finite jerk a clamp resets the ramp, and a slower start can regain speed in fewer metres
    w = ProfileWeights(j_min=-1e6, j_max=1e6)
    hi = np.repeat(levels, GRID.K // 5)
    lo = hi * cut
    r_hi = generate_reference(LimitProfile(GRID, hi), v_start, w)
    r_lo = generate_reference(LimitProfile(GRID, lo), v_start, w)
    if v_start <= r_lo.v_bwd[0]:
        assert np.all(r_lo.v_ref <= r_hi.v_ref + 1e-9)

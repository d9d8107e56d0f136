
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from formation_planner import oracles
from formation_planner.mppi import (
    CONTROL_DIM,
    ControlInput,
    CostContext,
    MppiParams,
    RunningCostParams,
    UavState,
    hover_state,
    importance_weights,
    mppi_step,
    propagate,
    rollout,
    running_cost,
    shift_horizon,
    wrap_angle,
)
from formation_planner.world import (
    DistanceField,
    OccupancyGrid,
    ScenarioSpec,
    build_edt,
    generate_scenario,
    query_distance,
)


def free_field(size=(20.0, 20.0, 3.0), res=0.2):
    dims = tuple(int(round(s / res)) for s in size)
    return build_edt(OccupancyGrid(np.zeros(3), res, np.zeros(dims, bool)))


def const_field(value, dims=(4, 4, 4), res=1.0):
    return DistanceField(np.zeros(3), res, np.full(dims, float(value)), 5.0)


# -- propagate ----------------------------------------------------------------


def test_propagate_fixed_point():
    x = hover_state([1.0, 2.0, 3.0], psi=0.4)
    assert_array_equal(propagate(x, np.zeros(4), 0.1), x)


def test_propagate_velocity_term():
    x = hover_state([0.0, 0.0, 0.0])
    x[3] = 1.0
    assert_allclose(propagate(x, np.zeros(4), 0.1)[0:3], [0.1, 0.0, 0.0])


def test_propagate_matches_matrix_powers():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x0 = rng.normal(size=10)
        x0[9] = wrap_angle(x0[9])
        u = rng.normal(size=(20, 4))
        chained = rollout(x0, u, 0.1)[-1]
        closed = oracles.propagate_many(x0, u, 0.1)
        assert_allclose(chained[:9], closed[:9], rtol=0, atol=1e-12)
        assert abs(wrap_angle(chained[9] - closed[9])) < 1e-12


def test_wrap_angle_range():
    psi = wrap_angle(np.array([-np.pi, np.pi, 3 * np.pi, -3 * np.pi + 1e-3, 0.0]))
    assert np.all((psi > -np.pi) & (psi <= np.pi))
    assert psi[0] == np.pi


def test_state_and_control_arrays():
    s = UavState(np.array([1.0, 2, 3]), psi=4.0)
    x = s.to_array()
    assert x.shape == (10,)
    assert x[9] == pytest.approx(4.0 - 2 * np.pi)
    assert_array_equal(UavState.from_array(x).p, [1, 2, 3])
    assert_array_equal(ControlInput(np.array([1.0, 0, 0]), 0.5).to_array(), [1, 0, 0, 0.5])


# -- running cost -------------------------------------------------------------


def _ctx(field, params, waypoint=(0.0, 0.0, 0.0), neighbors=None, P=3):
    wp = np.tile(np.asarray(waypoint, float), (P, 1))
    return CostContext(wp, field, params, 0.1, neighbors=neighbors)


def test_running_cost_all_zero_branches():
    prm = RunningCostParams()
    x = hover_state([2.0, 2.0, 2.0])
    ctx = _ctx(const_field(4.0), prm, waypoint=(2.0, 2.0, 2.0))
    assert running_cost(x, np.zeros(4), 0, ctx) == 0.0


def test_obstacle_barrier_saturates():
    prm = RunningCostParams()
    x = hover_state([2.0, 2.0, 2.0])
    ctx = _ctx(const_field(prm.d_obs_min / 2), prm, waypoint=(2.0, 2.0, 2.0))
    assert running_cost(x, np.zeros(4), 0, ctx) == prm.k_obs


def test_obstacle_barrier_midpoint_linear():
    prm = RunningCostParams(beta=1.0)
    x = hover_state([2.0, 2.0, 2.0])
    ctx = _ctx(const_field(0.5 * (prm.d_obs_min + prm.d_obs_max)), prm, waypoint=(2.0, 2.0, 2.0))
    assert running_cost(x, np.zeros(4), 0, ctx) == pytest.approx(prm.k_obs / 2)


def test_downwash_scales_vertical_range():
    prm = RunningCostParams(k_obs=0.0)
    x = hover_state([2.0, 2.0, 2.0])
    for d, active in [(4 * prm.d_mut_max - 0.01, True), (4 * prm.d_mut_max + 0.01, False)]:
        nb = np.tile([2.0, 2.0, 2.0 + d], (1, 4, 1))
        ctx = _ctx(const_field(4.0), prm, waypoint=(2.0, 2.0, 2.0), neighbors=nb)
        assert (running_cost(x, np.zeros(4), 0, ctx) > 0) == active
    nb = np.tile([2.0 + prm.d_mut_max - 0.01, 2.0, 2.0], (1, 4, 1))
    ctx = _ctx(const_field(4.0), prm, waypoint=(2.0, 2.0, 2.0), neighbors=nb)
    assert running_cost(x, np.zeros(4), 0, ctx) > 0


def test_dynamic_indicator_fires_above_limits():
    prm = RunningCostParams()
    ctx = _ctx(const_field(4.0), prm, waypoint=(2.0, 2.0, 2.0))
    x = hover_state([2.0, 2.0, 2.0])
    x[3] = prm.v_max * 1.01
    assert running_cost(x, np.zeros(4), 0, ctx) == prm.k_dyn
    x[3] = prm.v_max
    assert running_cost(x, np.zeros(4), 0, ctx) == 0.0
    x[3], x[6] = 0.0, prm.a_max * 1.01
    assert running_cost(x, np.zeros(4), 0, ctx) == prm.k_dyn


def _random_params(rng):
    lo, hi = sorted(rng.uniform(0.1, 1.5, 2))
    mlo, mhi = sorted(rng.uniform(0.2, 2.0, 2))
    return RunningCostParams(
        k_f=rng.uniform(0, 10), k_dyn=rng.uniform(0, 1e3), v_max=rng.uniform(0.5, 2.0),
        a_max=rng.uniform(1.0, 4.0), k_smo=rng.uniform(0, 1), k_obs=rng.uniform(0, 1e3),
        beta=rng.uniform(0.5, 3), d_obs_min=lo, d_obs_max=hi + 1e-3, k_mut=rng.uniform(0, 1e3),
        alpha=rng.uniform(0.5, 3), d_mut_min=mlo, d_mut_max=mhi + 1e-3,
        downwash_lambda=rng.uniform(0.05, 0.95))


def test_running_cost_matches_recoding():
    grid = generate_scenario(ScenarioSpec(obstacle_count=150, seed=5))
    field = build_edt(grid)
    rng = np.random.default_rng(6)
    for _ in range(1000):
        prm = _random_params(rng)
        P = 5
        k = int(rng.integers(0, P))
        x = rng.normal(size=10)
        x[0:3] = [*rng.uniform([1, 1], [49, 39]), rng.uniform(0.5, 2.5)]
        x[3:6] *= 1.2
        x[6:9] *= 3.0
        u = rng.normal(size=4) * 3
        wp = x[0:3] + rng.normal(size=(P, 3))
        nb = x[0:3] + rng.normal(size=(int(rng.integers(0, 6)), P + 1, 3))
        ctx = CostContext(wp, field, prm, 0.1, neighbors=nb)
        got = running_cost(x, u, k, ctx)
        # same interpolated distance into both, so only the formula is compared
        d = float(query_distance(field, x[0:3]))
        want = oracles.running_cost(x, u, wp[k], d, nb[:, k + 1], prm, 0.1)
        assert abs(got - want) <= 1e-12 * max(1.0, abs(want))


def test_running_cost_batches():
    prm = RunningCostParams()
    rng = np.random.default_rng(7)
    field = free_field()
    x = rng.uniform(1, 2, (4, 6, 10))
    u = rng.normal(size=(4, 6, 4))
    ctx = CostContext(rng.uniform(1, 2, (3, 3)), field, prm, 0.1,
                      neighbors=rng.uniform(1, 2, (2, 4, 3)))
    batch = running_cost(x, u, 1, ctx)
    single = [[running_cost(x[i, j], u[i, j], 1, ctx) for j in range(6)] for i in range(4)]
    assert_allclose(batch, single, rtol=1e-15)


# -- weights ------------------------------------------------------------------


def test_weights_uniform_on_ties():
    w = importance_weights(np.full(8, 3.0), 1.0)
    assert_array_equal(w, np.full(8, 1 / 8))


def test_weights_concentrate_at_low_temperature():
    w = importance_weights(np.array([3.0, 1.0, 2.0]), 1e-6)
    assert_array_equal(w, [0.0, 1.0, 0.0])


def test_weights_drop_non_finite():
    w = importance_weights(np.array([1.0, np.inf, np.nan, 1.0]), 1.0)
    assert_array_equal(w, [0.5, 0.0, 0.0, 0.5])


def test_weights_sum_to_one_1000_calls():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        w = importance_weights(rng.exponential(50.0, int(rng.integers(1, 300))),
                               rng.uniform(0.01, 10))
        assert np.all(w >= 0)
        assert abs(w.sum() - 1.0) <= 1e-12


def _small_params(**kw):
    return MppiParams(rollouts=64, horizon_steps=5, **kw)


def _step_ctx(P=5, waypoint=(5.0, 5.0, 1.5)):
    return CostContext(np.tile(np.asarray(waypoint, float), (P, 1)), free_field(), RunningCostParams(), 0.1)


def test_mppi_tied_costs_give_mean_update():
    prm = _small_params()
    nominal = np.zeros((5, 4))
    traj, _, info = mppi_step(hover_state([4.0, 5.0, 1.5]), nominal, _step_ctx(), prm,
                              np.random.default_rng(0), cost_hook=lambda c: np.zeros_like(c),
                              return_info=True)
    assert_array_equal(info["weights"], np.full(64, 1 / 64))
    assert_allclose(traj.controls, info["noise"].mean(axis=0), rtol=0, atol=1e-14)


def test_mppi_baseline_shift_is_bitwise_invariant():
    prm = _small_params()
    nominal = np.random.default_rng(1).normal(size=(5, 4))
    x0 = hover_state([4.0, 5.0, 1.5])
    # costs on a 2**-20 grid make the shifted sums exact, so any change is the solver's
    def grid(c):
        return np.round(c * 2.0 ** 20) / 2.0 ** 20

    base, nb, info = mppi_step(x0, nominal, _step_ctx(), prm, np.random.default_rng(2),
                               cost_hook=grid, return_info=True)
    shift = 2.0 ** 10
    moved, nm, info2 = mppi_step(x0, nominal, _step_ctx(), prm, np.random.default_rng(2),
                                 cost_hook=lambda c: grid(c) + shift, return_info=True)
    assert_array_equal(info2["costs"] - shift, info["costs"])
    assert_array_equal(info["weights"], info2["weights"])
    assert_array_equal(base.controls, moved.controls)
    assert_array_equal(nb, nm)


def test_mppi_shift_semantics_and_consistency():
    prm = _small_params()
    u_init = np.array([0.1, 0.2, 0.3, 0.4])
    x0 = hover_state([4.0, 5.0, 1.5])
    traj, nxt = mppi_step(x0, np.zeros((5, 4)), _step_ctx(), prm, np.random.default_rng(3),
                          u_init=u_init, t0=2.0)
    assert_array_equal(nxt[:-1], traj.controls[1:])
    assert_array_equal(nxt[-1], u_init)
    assert_array_equal(traj.states, rollout(x0, traj.controls, prm.dt))
    for k in range(5):
        assert_array_equal(traj.states[k + 1], propagate(traj.states[k], traj.controls[k], prm.dt))
    assert_allclose(traj.timestamps, 2.0 + 0.1 * np.arange(6))
    assert_allclose(traj.position_at(traj.timestamps), traj.positions, atol=1e-12)


def test_mppi_deterministic():
    prm = _small_params()
    x0 = hover_state([4.0, 5.0, 1.5])
    a = mppi_step(x0, np.zeros((5, 4)), _step_ctx(), prm, np.random.default_rng(4))
    b = mppi_step(x0, np.zeros((5, 4)), _step_ctx(), prm, np.random.default_rng(4))
    assert_array_equal(a[0].states, b[0].states)


def test_mppi_contract_errors():
    prm = _small_params()
    with pytest.raises(ValueError):
        mppi_step(hover_state([4.0, 5.0, 1.5]), np.zeros((4, 4)), _step_ctx(), prm)
    with pytest.raises(ValueError):
        mppi_step(hover_state([4.0, 5.0, 1.5]), np.zeros((5, 4)), _step_ctx(P=6), prm)


@pytest.mark.parametrize("bad", [dict(lambda_temp=0.0), dict(rollouts=0), dict(dt=0.0),
                                 dict(sigma=np.diag([1.0, 1.0, 1.0, -1.0]))])
def test_mppi_params_validation(bad):
    with pytest.raises(ValueError):
        MppiParams(**bad)


def test_running_params_validation():
    with pytest.raises(ValueError):
        RunningCostParams(d_obs_min=1.0, d_obs_max=0.5)
    with pytest.raises(ValueError):
        RunningCostParams(downwash_lambda=1.0)


# -- shift_horizon ------------------------------------------------------------


def test_shift_two():
    z = np.array([9.0, 9, 9, 9])
    out = shift_horizon(np.array([[0.0, 0, 0, 0], [1.0, 1, 1, 1]]), z)
    assert_array_equal(out, [[1, 1, 1, 1], z])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_shift_P_times_gives_constant(P, seed):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=4)
    seq = rng.normal(size=(P, 4))
    assert_array_equal(shift_horizon(np.tile(u, (P, 1)), u), np.tile(u, (P, 1)))
    for _ in range(P):
        seq = shift_horizon(seq, u)
    assert_array_equal(seq, np.tile(u, (P, 1)))


# -- convergence harness ----------------------------------------------------


def converge(iterations=50, seed=0):
    prm = MppiParams()
    ctx = CostContext(np.tile([7.0, 5.0, 1.5], (prm.horizon_steps, 1)), free_field(),
                      RunningCostParams(), prm.dt)
    rng = np.random.default_rng(seed)
    x = hover_state([5.0, 5.0, 1.5])
    nominal = np.zeros((prm.horizon_steps, CONTROL_DIM))
    errors = []
    for _ in range(iterations):
        traj, nominal = mppi_step(x, nominal, ctx, prm, rng)
        x = traj.states[1]
        errors.append(np.linalg.norm(x[0:3] - [7.0, 5.0, 1.5]))
    return np.array(errors)


def test_convergence_harness():
    err = converge()
    medians = [np.median(err[i:i + 10]) for i in range(0, 50, 10)]
    assert np.all(np.diff(medians) < 0)
    assert err[-1] < 0.1

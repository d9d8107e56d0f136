import dataclasses

import numpy as np
import numpy.testing as npt
import pytest

from formation_planner import oracles
from formation_planner.config import ConfigError
from formation_planner.formation_front import FormationConfig, formation_targets
from formation_planner.swarm_sim import (TRACE_COLUMNS, DegenerateShapeError, SwarmConfig,
                                         SwarmSim, formation_similarity, gamma_distances,
                                         run_episode, triangle_shape)
from formation_planner.world import OccupancyGrid, ScenarioSpec, build_edt, generate_scenario


def _instance(rng, n=6):
    shape = rng.normal(size=(n, 3))
    shape -= shape.mean(axis=0)
    return shape


# -- similarity metric ---------------------------------------------------------

def test_similarity_zero_on_exact_targets():
    rng = np.random.default_rng(0)
    for _ in range(50):
        shape = _instance(rng)
        c = rng.normal(size=3) * 10
        s = rng.uniform(0.1, 3.0)
        targets = formation_targets(FormationConfig(s, c, shape))
        assert formation_similarity(targets, shape) == pytest.approx(0.0, abs=1e-20)


def test_similarity_increases_with_displacement():
    rng = np.random.default_rng(1)
    shape = _instance(rng)
    base = formation_targets(FormationConfig(1.0, np.zeros(3), shape))
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    values = []
    for delta in np.linspace(0.0, 0.2, 11):
        p = base.copy()
        p[2] += delta * direction
        values.append(formation_similarity(p, shape))
    assert values[0] == pytest.approx(0.0, abs=1e-20)
    assert np.all(np.diff(values) > 0)


def test_similarity_matches_nested_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        shape = _instance(rng, n)
        pos = rng.uniform(0.3, 2.0) * shape + rng.normal(size=3) + rng.normal(scale=0.3, size=(n, 3))
        want = oracles.similarity_nested(pos, shape)
        got = formation_similarity(pos, shape)
        assert abs(got - want) <= 1e-9 * max(1.0, abs(want))


def test_similarity_invariant_to_translation_and_scale():
    rng = np.random.default_rng(3)
    for _ in range(50):
        shape = _instance(rng)
        pos = shape + rng.normal(scale=0.4, size=shape.shape)
        f = formation_similarity(pos, shape)
        k = rng.uniform(0.2, 5.0)
        t = rng.normal(size=3) * 20
        npt.assert_allclose(formation_similarity(k * pos + t, shape), f, rtol=1e-9)


def test_similarity_inverted_is_inf():
    shape = triangle_shape()
    assert formation_similarity(-shape, shape) == np.inf


def test_similarity_errors():
    with pytest.raises(DegenerateShapeError):
        formation_similarity(np.ones((3, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        formation_similarity(np.zeros((3, 3)), np.zeros((4, 3)))


def test_gamma_distances_shrink_vertical():
    p = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [3.0, 4.0, 0.0]])
    npt.assert_allclose(gamma_distances(p, 0.25), [0.25, 5.0, np.hypot(5.0, 0.25)])


def test_triangle_shape():
    q = triangle_shape(rows=3, spacing=2.0)
    assert q.shape == (6, 3)
    npt.assert_allclose(q.mean(axis=0), 0.0, atol=1e-12)
    d = np.linalg.norm(q[:, None] - q[None], axis=-1)
    assert d[d > 0].min() == pytest.approx(2.0)
    assert np.argmax(q[:, 0]) == 0  # apex leads along +x


# -- configuration ------------------------------------------------------------

def test_config_round_trip():
    cfg = SwarmConfig(shape=triangle_shape(spacing=2.5), stall_window=12, master_seed=7)
    back = SwarmConfig.from_text(cfg.to_text())
    assert back.to_text() == cfg.to_text()
    npt.assert_array_equal(back.shape, cfg.shape)
    assert back.stall_window == 12 and back.master_seed == 7


def test_config_unknown_key_is_error():
    with pytest.raises(ConfigError, match="mppi.horizon") as info:
        SwarmConfig.from_text("s_des = 1.0\nmppi.horizon = 20\n")
    assert info.value.lineno == 2


@pytest.mark.parametrize("text", [
    "n_uavs = 1\nshape = 0,0,0\n",
    "replan_period = 0.25\n",
    "s_des = 0.2\n",
    "sample.T_S = 10\n",
    "mppi_iterations = 0\n",
])
def test_config_validation(text):
    with pytest.raises(ConfigError):
        SwarmConfig.from_text(text)


# -- episodes -----------------------------------------------------------------

def _empty(extent=(30.0, 12.0), start=(4.0, 6.0, 1.5), goal=(24.0, 6.0, 1.5)):
    return ScenarioSpec(extent=extent, start=start, goal=goal)


def test_hold_at_goal_in_empty_world():
    spec = _empty(goal=(4.0, 6.0, 1.5))
    cfg = SwarmConfig(master_seed=1)
    grid = generate_scenario(spec)
    sim = SwarmSim(cfg, grid, build_edt(grid), spec.start, spec.goal)
    for _ in range(6):
        before = sim.states[:, 0:3].copy()
        sim.step_cycle()
        drift = np.linalg.norm(sim.states[:, 0:3] - before, axis=1)
        assert drift.max() < 0.05


def test_straight_transit_succeeds():
    report = run_episode(SwarmConfig(master_seed=3), _empty())
    assert report.success, report.reason
    assert report.avg_similarity < 0.01
    assert report.max_similarity >= report.avg_similarity >= 0.0
    assert report.min_obstacle_clearance >= 0.0


def test_blocked_world_times_out():
    spec = _empty(extent=(20.0, 12.0), goal=(16.0, 6.0, 1.5))
    clean = generate_scenario(spec)
    cells = clean.cells.copy()
    cells[50:52, :, :] = True  # 0.4 m wall across x = 10 m, full width and height
    grid = OccupancyGrid(clean.origin, clean.resolution, cells)
    cfg = dataclasses.replace(SwarmConfig(master_seed=2), episode_timeout=15.0)
    report = run_episode(cfg, spec, grid=grid)
    assert not report.success
    assert report.reason == "timeout"
    assert report.completion_time == pytest.approx(15.0)
    assert report.min_obstacle_clearance >= cfg.uav_radius


def test_episode_is_deterministic():
    spec = ScenarioSpec(obstacle_count=50, seed=4)
    cfg = dataclasses.replace(SwarmConfig(master_seed=4), episode_timeout=6.0)
    a = run_episode(cfg, spec)
    b = run_episode(cfg, spec)
    assert a.to_text() == b.to_text()
    assert a.trace_csv() == b.trace_csv()
    c = run_episode(cfg.with_seed(5), spec)
    assert c.trace_csv() != a.trace_csv()


def test_trace_layout():
    cfg = dataclasses.replace(SwarmConfig(master_seed=1), episode_timeout=2.0)
    report = run_episode(cfg, _empty())
    lines = report.trace_csv().splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert len(lines) == 1 + cfg.n_uavs * (report.cycles + 1)
    times = sorted({float(line.split(",")[0]) for line in lines[1:]})
    npt.assert_allclose(times, np.arange(report.cycles + 1) * cfg.replan_period)

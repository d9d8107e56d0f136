"""Oracle suites: each fast path against its independent reference.

Implementations are looked up through their modules at call time so a fault
injected into one of them shows up in exactly one suite.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import assignment, formation_front, mppi, oracles, swarm_sim, world
from .corridor import FormationSafeRegion, generate_sfc


@dataclass
class SuiteResult:
    name: str
    passed: bool
    cases: int
    detail: str = ""


def check_edt(seed=0, grids=20, max_dim=48):
    rng = np.random.default_rng(seed)
    for k in range(grids):
        dims = tuple(int(d) for d in rng.integers(4, max_dim + 1, 3))
        cells = rng.random(dims) < rng.uniform(0.0005, 0.01)
        grid = world.OccupancyGrid(np.zeros(3), 0.2, cells)
        got = world.build_edt(grid, d_cap=5.0).values
        want = oracles.edt_brute_force(cells, 0.2, 5.0)
        if not np.array_equal(got, want):
            bad = int(np.count_nonzero(got != want))
            return SuiteResult("edt", False, k + 1, f"grid {k} {dims}: {bad} cells differ")
    return SuiteResult("edt", True, grids)


def check_assignment(seed=0, instances=500, eps=1e-6):
    rng = np.random.default_rng(seed)
    exact = 0
    for k in range(instances):
        n = int(rng.integers(1, 8))
        c = rng.uniform(0.0, 10.0, (n, n))
        res = assignment.auction_assign(assignment.AssignmentProblem(c), eps)
        best, best_perm = oracles.assignment_brute_force(c)
        if sorted(res.perm) != list(range(n)) or res.total_cost - best > n * eps + 1e-12:
            return SuiteResult("assignment", False, k + 1,
                               f"instance {k}: cost {res.total_cost} vs optimum {best}")
        totals = sorted(sum(c[i, p[i]] for i in range(n))
                        for p in itertools.permutations(range(n)))
        if len(totals) == 1 or totals[1] - totals[0] > n * eps:
            if not np.array_equal(res.perm, best_perm):
                return SuiteResult("assignment", False, k + 1, f"instance {k}: not optimal")
            exact += 1
    return SuiteResult("assignment", True, instances, f"{exact} with a clear optimum matched exactly")


def _front_case(rng, grid):
    n = int(rng.integers(2, 8))
    shape = rng.normal(size=(n, 3))
    shape -= shape.mean(axis=0)
    center = np.array([*rng.uniform([5, 5], [45, 35]), rng.uniform(1.0, 2.0)])
    positions = center + rng.normal(scale=1.5, size=(n, 3))
    positions[:, 2] = np.clip(positions[:, 2], 0.3, 2.7)
    polys = []
    for i in range(n):
        while grid.occupied_at(positions[i]):
            positions[i, :2] += rng.normal(scale=0.5, size=2)
        polys.append(generate_sfc(positions[i], grid, sensing_half_extent=rng.uniform(1.0, 4.0)))
    weights = formation_front.FrontWeights(
        k_g=rng.uniform(0, 5), k_s=rng.uniform(0, 5), k_safe=rng.uniform(0, 1e6),
        k_sc=rng.uniform(0, 2), k_ac=rng.uniform(0, 2), d_risk=rng.uniform(0, 2),
        s_des=rng.uniform(0.4, 1.0))
    fc = formation_front.FormationConfig(rng.uniform(0.4, 1.0),
                                         center + rng.normal(scale=0.3, size=3), shape)
    prev = prev_dir = None
    if rng.random() < 0.8:
        prev = formation_front.FormationConfig(rng.uniform(0.4, 1.0), center, shape)
        if rng.random() < 0.8:
            prev_dir = rng.normal(size=3)
    ctx = formation_front.EvalContext(
        np.array([*rng.uniform([0, 0], [50, 40]), 1.5]), FormationSafeRegion(polys), positions,
        rng.uniform(0, 3, n), rng.permutation(n), weights, prev, prev_dir)
    return fc, ctx


def check_front_cost(seed=0, cases=1000, rtol=1e-12):
    rng = np.random.default_rng(seed)
    grid = world.generate_scenario(world.ScenarioSpec(obstacle_count=100, seed=seed))
    worst = 0.0
    for k in range(cases):
        fc, ctx = _front_case(rng, grid)
        got = formation_front.evaluate_fc(fc, ctx)
        want = oracles.front_cost(
            fc.center, fc.scale, fc.shape, ctx.c_goal,
            [(p.normals, p.offsets) for p in ctx.region], ctx.current_positions, ctx.d_obs,
            ctx.temp_assignment, ctx.weights,
            None if ctx.prev_fc is None else ctx.prev_fc.center,
            None if ctx.prev_fc is None else ctx.prev_fc.scale, ctx.prev_direction)
        err = abs(got - want) / max(1.0, abs(want))
        worst = max(worst, err)
        if not err <= rtol:
            return SuiteResult("front_cost", False, k + 1, f"case {k}: {got} vs {want}")
    return SuiteResult("front_cost", True, cases, f"max relative error {worst:.1e}")


def _cost_params(rng):
    lo, hi = sorted(rng.uniform(0.1, 1.5, 2))
    mlo, mhi = sorted(rng.uniform(0.2, 2.0, 2))
    return mppi.RunningCostParams(
        k_f=rng.uniform(0, 10), k_dyn=rng.uniform(0, 1e3), v_max=rng.uniform(0.5, 2.0),
        a_max=rng.uniform(1.0, 4.0), k_smo=rng.uniform(0, 1), k_obs=rng.uniform(0, 1e3),
        beta=rng.uniform(0.5, 3), d_obs_min=lo, d_obs_max=hi + 1e-3, k_mut=rng.uniform(0, 1e3),
        alpha=rng.uniform(0.5, 3), d_mut_min=mlo, d_mut_max=mhi + 1e-3,
        downwash_lambda=rng.uniform(0.05, 0.95))


def check_running_cost(seed=0, cases=1000, rtol=1e-12):
    """Formula check; both sides see the same interpolated obstacle distance."""
    rng = np.random.default_rng(seed)
    field = world.build_edt(world.generate_scenario(world.ScenarioSpec(obstacle_count=150,
                                                                       seed=seed)))
    worst = 0.0
    P = 5
    for k in range(cases):
        prm = _cost_params(rng)
        step = int(rng.integers(0, P))
        x = rng.normal(size=10)
        x[0:3] = [*rng.uniform([1, 1], [49, 39]), rng.uniform(0.5, 2.5)]
        x[3:6] *= 1.2
        x[6:9] *= 3.0
        u = rng.normal(size=4) * 3.0
        wp = x[0:3] + rng.normal(size=(P, 3))
        nb = x[0:3] + rng.normal(size=(int(rng.integers(0, 6)), P + 1, 3))
        ctx = mppi.CostContext(wp, field, prm, 0.1, neighbors=nb)
        got = float(mppi.running_cost(x, u, step, ctx))
        d = float(world.query_distance(field, x[0:3]))
        want = oracles.running_cost(x, u, wp[step], d, nb[:, step + 1], prm, 0.1)
        err = abs(got - want) / max(1.0, abs(want))
        worst = max(worst, err)
        if not err <= rtol:
            return SuiteResult("running_cost", False, k + 1, f"case {k}: {got} vs {want}")
    return SuiteResult("running_cost", True, cases, f"max relative error {worst:.1e}")


def check_similarity(seed=0, cases=100, tol=1e-9):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(cases):
        n = int(rng.integers(2, 9))
        shape = rng.normal(size=(n, 3))
        pos = rng.uniform(0.3, 2.0) * shape + rng.normal(size=3) + rng.normal(scale=0.3, size=(n, 3))
        got = swarm_sim.formation_similarity(pos, shape)
        want = oracles.similarity_nested(pos, shape)
        err = abs(got - want)
        worst = max(worst, err)
        if not err <= tol * max(1.0, abs(want)):
            return SuiteResult("similarity", False, k + 1, f"case {k}: {got} vs {want}")
    return SuiteResult("similarity", True, cases, f"max error {worst:.1e}")


def check_propagate(seed=0, cases=20, tol=1e-12):
    rng = np.random.default_rng(seed)
    for k in range(cases):
        x0 = rng.normal(size=10)
        x0[9] = mppi.wrap_angle(x0[9])
        u = rng.normal(size=(20, 4))
        chained = mppi.rollout(x0, u, 0.1)[-1]
        closed = oracles.propagate_many(x0, u, 0.1)
        if (np.max(np.abs(chained[:9] - closed[:9])) > tol
                or abs(mppi.wrap_angle(chained[9] - closed[9])) > tol):
            return SuiteResult("propagate", False, k + 1, f"case {k} differs")
    return SuiteResult("propagate", True, cases)


SUITES = {
    "edt": check_edt,
    "assignment": check_assignment,
    "front_cost": check_front_cost,
    "running_cost": check_running_cost,
    "similarity": check_similarity,
    "propagate": check_propagate,
}


def run_all(seed=0):
    return [fn(seed=seed) for fn in SUITES.values()]

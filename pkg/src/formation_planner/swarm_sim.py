"""Deterministic episode engine: leader planning, per-UAV MPPI, execution and metrics.

Each cycle runs four barrier-separated phases. UAVs report state, the leader
plans and broadcasts guidance, every UAV optimises its trajectory, and all
UAVs execute the first ``replan_period`` of it. Messages go through an
in-process bus using the binary wire formats, so the encoders are exercised
on every cycle.
"""

from __future__ import annotations

import dataclasses
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from . import config as cfg
from .corridor import (DEFAULT_HALF_EXTENT, DEFAULT_SAFETY_MARGIN, FormationSafeRegion,
                       SfcError, contains, generate_sfc)
from .formation_front import (FormationConfig, FrontWeights, NoSafeFormationStep,
                              SampleParams, decode_guidance, decode_state_report,
                              encode_guidance, encode_state_report, footprint_offsets,
                              plan_formation_paths)
from .mppi import (CONTROL_DIM, CostContext, MppiParams, RunningCostParams, Trajectory,
                   hover_state, mppi_step, shift_horizon)
from .guide import local_subgoal
from .bus import BusMessage, GuidanceBroadcast, StateReport, TrajectoryShare
from .world import DEFAULT_D_CAP, build_edt, generate_scenario, query_distance

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("time", "uav", "x", "y", "z", "vx", "vy", "vz", "f", "d_obs", "scale")


class DegenerateShapeError(ValueError):
    pass


def triangle_shape(rows=3, spacing=3.0):
    """Planar triangle pointing along +x with ``rows`` rows, centroid at the origin."""
    pts = []
    h = spacing * np.sqrt(3.0) / 2.0
    for r in range(rows):
        x = (rows - 1 - r) * h
        for c in range(r + 1):
            pts.append([x, (c - r / 2.0) * spacing, 0.0])
    pts = np.array(pts)
    return pts - pts.mean(axis=0)


def formation_similarity(positions, shape):
    """Normalised residual of the best translation + uniform-scale fit of ``shape``.

    ``f = min_t ||p - (s* q + t)||^2 / (N s*^2)`` with the least-squares scale
    ``s* = <p~, q~> / ||q~||^2`` on centred coordinates. Zero iff the positions
    are an exact scaled translate of the shape; ``inf`` when the best scale is
    not positive (the formation is inverted or collapsed).
    """
    p = np.asarray(positions, dtype=float)
    q = np.asarray(shape, dtype=float)
    if p.shape != q.shape or p.shape[0] < 2:
        raise ValueError("positions and shape must both be (N >= 2, 3)")
    qc = q - q.mean(axis=0)
    qq = np.sum(qc * qc)
    if qq <= 1e-12 * max(1.0, np.max(np.abs(q)) ** 2):
        raise DegenerateShapeError("shape points are coincident")
    pc = p - p.mean(axis=0)
    s = np.sum(pc * qc) / qq
    if not s > 0:
        return float("inf")
    resid = pc - s * qc
    return float(np.sum(resid * resid) / (p.shape[0] * s * s))


def gamma_distances(positions, downwash_lambda):
    """Pairwise ``||diag(1, 1, lambda) (p_i - p_j)||`` for i < j."""
    p = np.asarray(positions, dtype=float) * np.array([1.0, 1.0, downwash_lambda])
    d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
    iu = np.triu_indices(p.shape[0], k=1)
    return d[iu]


@dataclass
class SfcParams:
    sensing_half_extent: float = DEFAULT_HALF_EXTENT
    safety_margin: float = DEFAULT_SAFETY_MARGIN


@dataclass
class SwarmConfig:
    n_uavs: int = 6
    shape: np.ndarray = field(default_factory=lambda: triangle_shape(spacing=1.5))
    s_des: float = 1.0
    s_min: float = 0.4
    s_max: float = 1.0
    goal_center: tuple = None  # None: take the scenario goal
    replan_period: float = 0.5
    episode_timeout: float = 240.0
    uav_radius: float = 0.15
    goal_tolerance: float = 0.5
    distortion_threshold: float = 0.5
    d_cap: float = DEFAULT_D_CAP
    assign_epsilon: float = 1e-3
    mppi_iterations: int = 1  # refinement passes per cycle, warm-started
    escape_steps: int = 1  # retry with full-circle sampling below this many steps
    stall_window: int = 0  # cycles without stall_progress towards the goal; 0 = off
    stall_progress: float = 0.5
    escape_cycles: int = 10  # full-circle cycles after a stall
    escape_detour: float = 0.0  # sideways goal offset (m) during a stall escape; 0 = off
    footprint_check: bool = True  # reject configurations whose hull covers an obstacle
    guide_lookahead: float = 3.0  # aim this far along a local route (m); 0 = straight at goal
    guide_inflate: float = 0.95  # routes avoid cells closer than this to obstacles
    master_seed: int = 0
    sample: SampleParams = field(default_factory=SampleParams)
    front: FrontWeights = field(default_factory=lambda: FrontWeights(k_s=4.0, suspend_penalty_per_step=1e4))
    mppi: MppiParams = field(default_factory=MppiParams)
    cost: RunningCostParams = field(default_factory=lambda: RunningCostParams(
        d_obs_min=0.15, d_obs_max=0.25, d_mut_min=0.3, d_mut_max=0.7))
    sfc: SfcParams = field(default_factory=SfcParams)

    def __post_init__(self):
        self.shape = np.asarray(self.shape, dtype=float).reshape(-1, 3)
        if self.n_uavs < 2:
            raise ValueError("need at least two UAVs")
        if self.shape.shape[0] != self.n_uavs:
            raise ValueError(f"shape has {self.shape.shape[0]} points for {self.n_uavs} UAVs")
        if not np.allclose(self.shape.mean(axis=0), 0.0, atol=1e-9):
            raise ValueError("shape centroid must be the origin")
        ratio = self.replan_period / self.mppi.dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("replan_period must be a positive multiple of dt")
        if self.mppi_iterations < 1:
            raise ValueError("mppi_iterations must be >= 1")
        if self.stall_window < 0 or self.escape_cycles < 0:
            raise ValueError("stall_window and escape_cycles must be >= 0")
        if not self.s_min <= self.s_des <= self.s_max:
            raise ValueError("need s_min <= s_des <= s_max")
        # shared scale bounds and horizon contracts
        self.sample.s_min, self.sample.s_max = self.s_min, self.s_max
        self.front.s_des = self.s_des
        if self.sample.T_S != self.mppi.horizon_steps:
            raise ValueError("T_S must equal the MPPI horizon P")

    @property
    def exec_steps(self):
        return int(round(self.replan_period / self.mppi.dt))

    def with_seed(self, seed):
        return dataclasses.replace(self, master_seed=int(seed))

    # -- text configuration -------------------------------------------------

    def to_text(self):
        values = cfg.flat_fields(self)
        values["shape"] = [tuple(row) for row in self.shape]
        values["mppi.sigma"] = tuple(np.asarray(self.mppi.sigma).ravel())
        values["mppi.control_weight"] = tuple(np.asarray(self.mppi.control_weight).ravel())
        return cfg.dump_fields(values, SWARM_SCHEMA)

    @classmethod
    def from_text(cls, text, source=None):
        entries = cfg.parse_kv(text, source)
        values = cfg.load_fields(entries, SWARM_SCHEMA, source)
        blocks = {"sample": {}, "front": {}, "mppi": {}, "cost": {}, "sfc": {}}
        top = {}
        for key, value in values.items():
            head, _, rest = key.partition(".")
            if rest:
                blocks[head][rest] = value
            else:
                top[key] = value
        for key in ("mppi.sigma", "mppi.control_weight"):
            if key in values:
                blocks["mppi"][key.split(".")[1]] = np.array(values[key]).reshape(4, 4)
        try:
            sample = SampleParams(**blocks["sample"])
            front = FrontWeights(**blocks["front"])
            mppi = MppiParams(**blocks["mppi"])
            cost = RunningCostParams(**blocks["cost"])
            sfc = SfcParams(**blocks["sfc"])
            if "shape" in top:
                top["shape"] = np.array(top["shape"])
            if "n_uavs" in top and "shape" not in top:
                raise ValueError("n_uavs given without a shape")
            if "shape" in top and "n_uavs" not in top:
                top["n_uavs"] = len(top["shape"])
            return cls(sample=sample, front=front, mppi=mppi, cost=cost, sfc=sfc, **top)
        except (TypeError, ValueError, np.linalg.LinAlgError) as exc:
            raise cfg.ConfigError(str(exc), source=source) from None

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read(), source=str(path))


def _schema():
    schema = {
        "n_uavs": cfg.INT, "shape": cfg.VEC_LIST, "s_des": cfg.FLOAT, "s_min": cfg.FLOAT,
        "s_max": cfg.FLOAT, "goal_center": cfg.VEC, "replan_period": cfg.FLOAT,
        "episode_timeout": cfg.FLOAT, "uav_radius": cfg.FLOAT, "goal_tolerance": cfg.FLOAT,
        "distortion_threshold": cfg.FLOAT, "d_cap": cfg.FLOAT, "assign_epsilon": cfg.FLOAT,
        "mppi_iterations": cfg.INT, "escape_steps": cfg.INT,
        "stall_window": cfg.INT, "stall_progress": cfg.FLOAT, "escape_cycles": cfg.INT,
        "escape_detour": cfg.FLOAT, "footprint_check": cfg.BOOL,
        "guide_lookahead": cfg.FLOAT, "guide_inflate": cfg.FLOAT,
        "master_seed": cfg.INT,
    }
    blocks = {"sample": SampleParams(), "front": FrontWeights(), "mppi": MppiParams(),
              "cost": RunningCostParams(), "sfc": SfcParams()}
    for name, obj in blocks.items():
        for f in dataclasses.fields(obj):
            default = getattr(obj, f.name)
            if isinstance(default, np.ndarray):
                kind = cfg.VEC
            elif isinstance(default, (bool, np.bool_)):
                kind = cfg.BOOL
            elif isinstance(default, (int, np.integer)):
                kind = cfg.INT
            else:
                kind = cfg.FLOAT
            schema[f"{name}.{f.name}"] = kind
    return schema


SWARM_SCHEMA = _schema()


@dataclass
class EpisodeReport:
    success: bool
    reason: str
    avg_similarity: float
    max_similarity: float
    min_obstacle_clearance: float
    min_mutual_distance: float
    completion_time: float
    max_speed: float
    max_accel: float
    min_scale: float
    final_scale: float
    cycles: int
    planner_holds: int
    planner_escapes: int
    planner_stalls: int
    guidance_violations: int
    scales: list = field(default_factory=list)
    trace: list = field(default_factory=list, repr=False)

    def summary(self):
        out = dataclasses.asdict(self)
        out.pop("trace")
        return out

    def to_text(self):
        """Structured report with a fixed key order (trace excluded)."""
        return json.dumps(self.summary(), indent=2, allow_nan=True) + "\n"

    def trace_csv(self):
        buf = io.StringIO()
        buf.write(",".join(TRACE_COLUMNS) + "\n")
        for row in self.trace:
            buf.write(",".join(_fmt_cell(v) for v in row) + "\n")
        return buf.getvalue()


def _fmt_cell(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class SwarmSim:
    """All agent state of one episode; advance with :meth:`step_cycle`."""

    def __init__(self, config, grid, field_, start_center, goal_center):
        self.config = config
        self.grid = grid
        self.field = field_
        n = config.n_uavs
        self.n = n
        self.shape = config.shape
        self.goal = np.asarray(goal_center, dtype=float)
        seeds = np.random.SeedSequence(config.master_seed).spawn(n + 1)
        self.leader_rng = np.random.default_rng(seeds[0])
        self.uav_rngs = [np.random.default_rng(s) for s in seeds[1:]]

        start = np.asarray(start_center, dtype=float) + config.s_des * self.shape
        self.states = np.array([hover_state(p) for p in start])
        P = config.mppi.horizon_steps
        self.nominal = np.zeros((n, P, CONTROL_DIM))
        self.sigma = np.arange(n)
        self.scale = config.s_des
        self.prev_direction = None
        self.shared = None  # last TrajectoryShare trajectories, (n, P + 1, 3)
        self.time = 0.0
        self.cycle = 0
        self.bus = []
        self.holds = 0
        self.escapes = 0
        self.stalls = 0
        self._best_gap = np.inf  # closest approach to the goal so far
        self._last_gain = 0  # cycle of the last stall_progress gain
        self._escape_until = -1
        self._detour = None  # temporary goal while escaping
        self._footprint = footprint_offsets(self.shape) if config.footprint_check else None
        self.guidance_violations = 0

    # -- phases ---------------------------------------------------------------

    def _report_phase(self):
        cfg_ = self.config
        msgs = []
        for i in range(self.n):
            p = self.states[i, 0:3]
            d = float(query_distance(self.field, p))
            poly = generate_sfc(p, self.grid, cfg_.sfc.sensing_half_extent,
                                cfg_.sfc.safety_margin)
            msg = BusMessage(i, self.cycle, StateReport(encode_state_report(p, d, poly)))
            msgs.append(msg)
        self.bus.extend(msgs)
        return msgs

    def _plan_phase(self, reports):
        cfg_ = self.config
        decoded = [decode_state_report(m.payload.data) for m in sorted(reports, key=lambda m: m.sender)]
        positions = np.array([d[0] for d in decoded])
        d_obs = np.array([d[1] for d in decoded])
        region = FormationSafeRegion([d[2] for d in decoded])
        c_0 = positions.mean(axis=0)
        stalled = self._stalled(c_0)
        if stalled and self._detour is not None:
            target = self._detour
        elif cfg_.guide_lookahead > 0:
            target = local_subgoal(self.field, c_0, self.goal, cfg_.sfc.sensing_half_extent,
                                   cfg_.guide_inflate, cfg_.guide_lookahead)
        else:
            target = self.goal
        goal = FormationConfig(cfg_.s_des, target, self.shape)
        args = (c_0, self.scale, region, self.sigma, positions, goal)
        kwargs = dict(d_obs=d_obs, prev_direction=self.prev_direction,
                      assign_epsilon=cfg_.assign_epsilon, footprint=self._footprint,
                      occupied=self.grid.occupied_at)
        escape = dataclasses.replace(cfg_.sample, full_sphere=True)
        sample = escape if stalled else cfg_.sample
        try:
            guidance, sigma = plan_formation_paths(*args, sample, cfg_.front,
                                                   self.leader_rng, **kwargs)
        except NoSafeFormationStep:
            guidance = None
        # wedged: also consider backing off and take the cheaper plan
        if guidance is None or guidance.sequence.steps_completed < cfg_.escape_steps:
            try:
                alt = plan_formation_paths(*args, escape, cfg_.front, self.leader_rng, **kwargs)
            except NoSafeFormationStep:
                alt = None
            if alt is not None and (guidance is None
                                    or alt[0].sequence.total_cost < guidance.sequence.total_cost):
                guidance, sigma = alt
                self.escapes += 1
        if guidance is None:
            log.info("cycle %d: no safe formation step, holding", self.cycle)
            self.holds += 1
            return None, region
        for i, poly in enumerate(region):
            if not np.all(contains(poly, guidance.paths[i])):
                self.guidance_violations += 1
        first = guidance.sequence.configs[0]
        self.prev_direction = first.center - c_0
        self.scale = first.scale
        self.sigma = sigma
        msg = BusMessage(0, self.cycle, GuidanceBroadcast(encode_guidance(sigma, guidance.paths)))
        self.bus.append(msg)
        return msg, region

    def _stalled(self, c_0):
        """True while a stall escape is active; starts one after no progress."""
        cfg_ = self.config
        if not cfg_.stall_window:
            return False
        gap = float(np.linalg.norm(c_0 - self.goal))
        if gap < self._best_gap - cfg_.stall_progress or not np.isfinite(self._best_gap):
            self._best_gap = gap
            self._last_gain = self.cycle
        elif self.cycle >= self._escape_until and self.cycle - self._last_gain >= cfg_.stall_window:
            self.stalls += 1
            self._escape_until = self.cycle + cfg_.escape_cycles
            self._last_gain = self._escape_until  # fresh window after the escape
            self._best_gap = gap
            self._detour = self._detour_point(c_0)
        return self.cycle < self._escape_until

    def _detour_point(self, c_0):
        """Goal offset sideways from the goal direction, on the clearer side."""
        off = self.config.escape_detour
        ahead = (self.goal - c_0)[:2]
        if off <= 0 or not np.linalg.norm(ahead) > 0:
            return None
        side = np.array([-ahead[1], ahead[0], 0.0]) / np.linalg.norm(ahead)
        cands = [c_0 + off * side, c_0 - off * side]
        clear = [float(query_distance(self.field, np.clip(c, self.grid.origin, self.grid.upper)))
                 for c in cands]
        # alternate on ties so repeated stalls try both sides
        if clear[0] == clear[1]:
            return cands[self.stalls % 2]
        return cands[int(np.argmax(clear))]

    def _neighbor_paths(self, i):
        P = self.config.mppi.horizon_steps
        others = [j for j in range(self.n) if j != i]
        if self.shared is None:
            return np.repeat(self.states[others, None, 0:3], P + 1, axis=1)
        return self.shared[others]

    def _optimise_phase(self, guidance_msg):
        cfg_ = self.config
        P = cfg_.mppi.horizon_steps
        if guidance_msg is None:
            paths = np.repeat(self.states[:, None, 0:3], P, axis=1)
        else:
            _, paths = decode_guidance(guidance_msg.payload.data)
        trajs = []
        for i in range(self.n):
            ctx = CostContext(paths[i], self.field, cfg_.cost, cfg_.mppi.dt,
                              neighbors=self._neighbor_paths(i))
            nominal = self.nominal[i]
            for _ in range(cfg_.mppi_iterations - 1):
                traj, _ = mppi_step(self.states[i], nominal, ctx, cfg_.mppi,
                                    self.uav_rngs[i], t0=self.time)
                nominal = traj.controls
            traj, nominal = mppi_step(self.states[i], nominal, ctx, cfg_.mppi,
                                      self.uav_rngs[i], t0=self.time)
            for _ in range(cfg_.exec_steps - 1):
                nominal = shift_horizon(nominal, np.zeros(CONTROL_DIM))
            self.nominal[i] = nominal
            trajs.append(traj)
            self.bus.append(BusMessage(i, self.cycle, TrajectoryShare(traj)))
        return trajs

    def _execute_phase(self, trajs):
        k = self.config.exec_steps
        P = self.config.mppi.horizon_steps
        executed = np.stack([t.states[1:k + 1] for t in trajs], axis=1)  # (k, n, 10)
        self.states = executed[-1].copy()
        # neighbours see the remainder of each plan, held at its final point
        rest = np.stack([t.states[k:, 0:3] for t in trajs])
        pad = np.repeat(rest[:, -1:], P + 1 - rest.shape[1], axis=1)
        self.shared = np.concatenate([rest, pad], axis=1)
        return executed

    def step_cycle(self):
        """Run one full replanning cycle; returns the executed sub-step states."""
        self.bus = []
        reports = self._report_phase()
        guidance, _ = self._plan_phase(reports)
        trajs = self._optimise_phase(guidance)
        executed = self._execute_phase(trajs)
        self.time += self.config.replan_period
        self.cycle += 1
        return executed


def step_cycle(sim):
    return sim.step_cycle()


class _Monitor:
    def __init__(self, sim):
        self.sim = sim
        self.times = []
        self.f = []
        self.min_clear = np.inf
        self.min_mut = np.inf
        self.max_speed = 0.0
        self.max_accel = 0.0
        self.trace = []
        self.scales = []

    def similarity(self, positions):
        sim = self.sim
        # UAV i flies towards slot sigma[i]
        ordered = np.empty_like(positions)
        ordered[sim.sigma] = positions
        return formation_similarity(ordered, sim.shape)

    def sample(self, t, states):
        cfg_ = self.sim.config
        pos = states[:, 0:3]
        f = self.similarity(pos)
        d = query_distance(self.sim.field, pos)
        self.times.append(t)
        self.f.append(f)
        self.min_clear = min(self.min_clear, float(d.min()))
        self.min_mut = min(self.min_mut, float(gamma_distances(pos, cfg_.cost.downwash_lambda).min()))
        self.max_speed = max(self.max_speed, float(np.linalg.norm(states[:, 3:6], axis=1).max()))
        self.max_accel = max(self.max_accel, float(np.linalg.norm(states[:, 6:9], axis=1).max()))
        return f, d

    def trace_rows(self, t, states, f, d):
        for i in range(self.sim.n):
            x = states[i]
            self.trace.append((t, i, x[0], x[1], x[2], x[3], x[4], x[5], f, d[i], self.sim.scale))


def run_episode(config, scenario, grid=None, field_=None):
    """Fly one seeded episode and summarise it.

    Success requires reaching the goal before the timeout with no obstacle
    or mutual collision and a maximum similarity error below
    ``distortion_threshold``.
    """
    if grid is None:
        grid = generate_scenario(scenario)
    if field_ is None:
        field_ = build_edt(grid, config.d_cap)
    goal = np.asarray(config.goal_center if config.goal_center is not None else scenario.goal,
                      dtype=float)
    sim = SwarmSim(config, grid, field_, scenario.start, goal)
    mon = _Monitor(sim)
    dt = config.mppi.dt
    f0, d0 = mon.sample(0.0, sim.states)
    mon.trace_rows(0.0, sim.states, f0, d0)

    reason = "timeout"
    reached = False
    while sim.time < config.episode_timeout - 1e-9:
        try:
            executed = sim.step_cycle()
        except SfcError:
            reason = "collision"
            break
        t_start = sim.time - config.replan_period
        for k, states in enumerate(executed, start=1):
            f, d = mon.sample(t_start + k * dt, states)
        mon.trace_rows(sim.time, sim.states, f, d)
        mon.scales.append(sim.scale)
        if mon.min_clear < config.uav_radius or mon.min_mut < 2 * config.uav_radius:
            reason = "collision"
            break
        center = sim.states[:, 0:3].mean(axis=0)
        if np.linalg.norm(center - goal) <= config.goal_tolerance:
            reached = True
            reason = "reached"
            break

    if reached and max(mon.f) >= config.distortion_threshold:
        reason = "distortion"
    times = np.array(mon.times)
    fs = np.array(mon.f)
    span = times[-1] - times[0]
    avg = float(trapezoid(fs, times) / span) if span > 0 else float(fs[0])
    success = (reached and mon.min_clear >= config.uav_radius
               and mon.min_mut >= 2 * config.uav_radius
               and float(fs.max()) < config.distortion_threshold)
    return EpisodeReport(
        success=bool(success),
        reason=reason,
        avg_similarity=avg,
        max_similarity=float(fs.max()),
        min_obstacle_clearance=float(mon.min_clear),
        min_mutual_distance=float(mon.min_mut),
        completion_time=float(sim.time),
        max_speed=mon.max_speed,
        max_accel=mon.max_accel,
        min_scale=float(min(mon.scales)) if mon.scales else float(config.s_des),
        final_scale=float(sim.scale),
        cycles=sim.cycle,
        planner_holds=sim.holds,
        planner_escapes=sim.escapes,
        planner_stalls=sim.stalls,
        guidance_violations=sim.guidance_violations,
        scales=[float(s) for s in mon.scales],
        trace=mon.trace,
    )

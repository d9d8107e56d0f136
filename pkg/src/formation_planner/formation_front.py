"""Leader-side guidance: sample formation-configuration sequences, score them,
pick the cheapest, assign targets and emit per-UAV waypoint paths.

A formation configuration is ``(scale, center)`` over a fixed shape; UAV
targets are ``center + scale * shape[j]``.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass

import numpy as np

from .assignment import AssignmentProblem, auction_assign
from .corridor import CONTAINS_TOL, contains, polytope_from_bytes, polytope_to_bytes


class NoSafeFormationStep(RuntimeError):
    """Every sampled sequence was unsafe at its first step."""


@dataclass(frozen=True, eq=False)
class FormationConfig:
    scale: float
    center: np.ndarray
    shape: np.ndarray  # (N, 3) desired relative positions, shared by a run

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        shape = np.asarray(self.shape, dtype=float).reshape(-1, 3)
        if shape.shape[0] == 0:
            raise ValueError("shape must not be empty")
        object.__setattr__(self, "shape", shape)

    def targets(self):
        return self.center + self.scale * self.shape


def formation_targets(fc):
    """Target of UAV slot ``i``: ``c + s * p_d^i``."""
    return fc.targets()


@dataclass
class SampleParams:
    r_min: float = 0.15  # v_max * dt
    gamma_max: float = 1.0
    s_min: float = 0.4
    s_max: float = 1.0
    scale_samples: int = 7
    T_F: int = 64
    T_S: int = 20
    seed: int = 0
    planar: bool = True  # horizontal steps; altitude follows the goal axis
    max_scale_step: int = 1  # grid levels a scale may move per step; 0 = free
    full_sphere: bool = False  # drop the forward-half restriction (escape mode)

    def __post_init__(self):
        if not self.r_min > 0:
            raise ValueError("r_min must be positive")
        if not 0 <= self.gamma_max <= 1:
            raise ValueError("gamma_max must lie in [0, 1]")
        if not 0 < self.s_min <= self.s_max:
            raise ValueError("need 0 < s_min <= s_max")
        if self.T_F < 1 or self.T_S < 1 or self.scale_samples < 1:
            raise ValueError("T_F, T_S and scale_samples must be >= 1")
        if self.max_scale_step < 0:
            raise ValueError("max_scale_step must be >= 0")

    def scale_grid(self):
        return np.linspace(self.s_min, self.s_max, self.scale_samples)


@dataclass
class FrontWeights:
    k_g: float = 2.0
    k_s: float = 1.0
    k_safe: float = 1e6
    k_sc: float = 1.0
    k_ac: float = 0.5
    d_risk: float = 0.6
    s_des: float = 1.0
    suspend_penalty_per_step: float = 50.0


@dataclass(frozen=True, eq=False)
class FormationSequence:
    configs: tuple
    total_cost: float
    steps_completed: int


@dataclass(frozen=True, eq=False)
class GuidancePathSet:
    paths: np.ndarray  # (N, T_S, 3); paths[i, k] is waypoint k of UAV i
    sequence: FormationSequence = None
    scales: np.ndarray = None  # per-waypoint scale of the selected sequence
    candidate_costs: np.ndarray = None  # total cost of every sampled sequence
    candidate_steps: np.ndarray = None

    def __len__(self):
        return self.paths.shape[0]

    def __getitem__(self, i):
        return self.paths[i]


@dataclass
class EvalContext:
    """Everything :func:`evaluate_fc` needs besides the configuration itself."""

    c_goal: np.ndarray
    region: object  # FormationSafeRegion
    current_positions: np.ndarray  # (N, 3)
    d_obs: np.ndarray  # (N,)
    temp_assignment: np.ndarray  # sigma_0; UAV i is scored on target sigma_0[i]
    weights: FrontWeights
    prev_fc: FormationConfig = None
    prev_direction: np.ndarray = None


# -- sampling ---------------------------------------------------------------


def sample_centers(c_prev, c_goal, params, rng):
    """Vectorised hemisphere step: one new center per row of ``c_prev``.

    The radius is ``(1 + gamma) * r_min`` with ``gamma ~ U[0, gamma_max]``, the
    direction is uniform on the hemisphere facing the goal. With
    ``params.planar`` the direction is drawn on the horizontal half-circle
    facing the goal and tilted by the goal axis' vertical component, so the
    altitude changes only towards the goal. When the goal is closer than the
    drawn radius the step lands exactly on the goal. ``params.full_sphere``
    lifts the forward-half restriction.
    Random draws are consumed identically whichever branch is taken.
    """
    c_prev = np.atleast_2d(np.asarray(c_prev, dtype=float))
    m = c_prev.shape[0]
    gamma = rng.uniform(0.0, params.gamma_max, size=m)
    z = rng.standard_normal((m, 3))
    r = (1.0 + gamma) * params.r_min
    axis = np.asarray(c_goal, dtype=float) - c_prev
    dist = np.linalg.norm(axis, axis=1)
    safe_dist = np.where(dist > 0, dist, 1.0)
    axis = axis / safe_dist[:, None]
    if params.planar:
        lift = axis[:, 2].copy()
        flat = axis.copy()
        flat[:, 2] = 0.0
        fn = np.linalg.norm(flat, axis=1)
        flat = np.where((fn > 0)[:, None], flat / np.where(fn > 0, fn, 1.0)[:, None], 0.0)
        z[:, 2] = 0.0
        zn = np.linalg.norm(z, axis=1)
        z = np.where((zn > 0)[:, None], z / np.where(zn > 0, zn, 1.0)[:, None], flat)
        if not params.full_sphere:
            along = np.sum(z * flat, axis=1)
            z = np.where((along < 0)[:, None], z - 2.0 * along[:, None] * flat, z)
        z = z * np.sqrt(1.0 - lift * lift)[:, None]
        z[:, 2] = lift
    else:
        z /= np.linalg.norm(z, axis=1)[:, None]
        if not params.full_sphere:
            along = np.sum(z * axis, axis=1)
            z = np.where((along < 0)[:, None], z - 2.0 * along[:, None] * axis, z)
    out = c_prev + r[:, None] * z
    snap = dist <= r
    out[snap] = np.asarray(c_goal, dtype=float)
    return out


def sample_center(c_prev, c_goal, params, rng):
    return sample_centers(c_prev, c_goal, params, rng)[0]


# -- evaluation -------------------------------------------------------------


def _angle_between(a, b):
    """Angle (rad) between row vectors; 0 where either is zero length."""
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.arctan2(cross, dot)


def risk_weights(d_obs, d_risk):
    d = np.asarray(d_obs, dtype=float)
    total = d.sum()
    if total <= 0:
        return np.zeros_like(d)
    return np.where(d > d_risk, d / total, 0.0)


def batch_costs(centers, scales, shape, ctx, prev_centers=None, prev_scales=None,
                prev_dirs=None):
    """Cost of every (center, scale) pair.

    ``centers`` is ``(M, 3)``, ``scales`` is ``(K,)``; ``prev_*`` hold one row
    per center (``None`` or NaN rows mean "no previous"). Returns ``(cost,
    safe)``, both ``(M, K)``; ``safe`` is the all-targets-inside predicate.
    """
    w = ctx.weights
    centers = np.atleast_2d(centers)
    scales = np.atleast_1d(np.asarray(scales, dtype=float))
    m, k = centers.shape[0], scales.shape[0]
    sigma = np.asarray(ctx.temp_assignment)
    rel = shape[sigma]  # rel[i] = offset of the target UAV i is scored against
    pos = np.asarray(ctx.current_positions, dtype=float)
    w_risk = risk_weights(ctx.d_obs, w.d_risk)

    c_g = w.k_g * np.linalg.norm(centers - ctx.c_goal, axis=1)[:, None]
    c_s = w.k_s * np.abs(scales - w.s_des)[None, :]

    n_outside = np.zeros((m, k))
    c_risk = np.zeros((m, k))
    for i, poly in enumerate(ctx.region):
        tgt = centers[:, None, :] + scales[None, :, None] * rel[i]
        inside = np.all(tgt @ poly.normals.T <= poly.offsets + CONTAINS_TOL, axis=-1)
        n_outside += ~inside
        if w_risk[i] != 0.0:
            c_risk += w_risk[i] * np.linalg.norm(tgt - pos[i], axis=-1)
    c_safe = w.k_safe * n_outside

    c_con = np.zeros((m, k))
    if prev_scales is not None:
        prev_scales = np.broadcast_to(np.asarray(prev_scales, dtype=float), (m,))
        has_prev = np.isfinite(prev_scales)
        c_con += np.where(has_prev[:, None],
                          w.k_sc * np.abs(scales[None, :] - prev_scales[:, None]), 0.0)
        if prev_dirs is not None and prev_centers is not None:
            prev_dirs = np.broadcast_to(np.asarray(prev_dirs, dtype=float), (m, 3))
            prev_centers = np.broadcast_to(np.asarray(prev_centers, dtype=float), (m, 3))
            has_dir = has_prev & np.all(np.isfinite(prev_dirs), axis=1)
            cur_dir = centers - prev_centers
            theta = _angle_between(cur_dir, np.where(has_dir[:, None], prev_dirs, 0.0))
            c_con += np.where(has_dir, w.k_ac * theta, 0.0)[:, None]

    return c_g + c_s + c_safe + c_risk + c_con, n_outside == 0


def evaluate_fc(fc, ctx):
    """Single-configuration cost: goal + scale + safe region + risk + continuity."""
    prev = ctx.prev_fc
    prev_c = None if prev is None else prev.center[None, :]
    prev_s = None if prev is None else np.array([prev.scale])
    prev_d = None if ctx.prev_direction is None else np.asarray(ctx.prev_direction, float)[None, :]
    cost, _ = batch_costs(fc.center[None, :], [fc.scale], fc.shape, ctx,
                          prev_c, prev_s, prev_d)
    return float(cost[0, 0])


def is_safe(fc, ctx):
    """SafeCheck: every scored target inside its owner's polytope."""
    targets = fc.targets()[np.asarray(ctx.temp_assignment)]
    return all(contains(poly, targets[i]) for i, poly in enumerate(ctx.region))


# -- Algorithm: sampling-based formation configuration path generation -------


def footprint_offsets(shape, divisions=8):
    """Points covering the hull of ``shape``: barycentric grids on every triangle of
    shape points. Exact cover for planar shapes."""
    q = np.asarray(shape, dtype=float)
    ticks = [(a, b, divisions - a - b) for a in range(divisions + 1)
             for b in range(divisions + 1 - a)]
    w = np.array(ticks, dtype=float) / divisions
    pts = [q]
    for i, j, k in itertools.combinations(range(len(q)), 3):
        pts.append(w @ q[[i, j, k]])
    return np.unique(np.round(np.vstack(pts), 12), axis=0)


def plan_formation_paths(c_0, s_0, region, sigma_0, P_cur, fc_goal, params, weights,
                         rng, d_obs=None, prev_direction=None, assign_epsilon=1e-3,
                         footprint=None, occupied=None):
    """Sample ``T_F`` configuration sequences of up to ``T_S`` steps; return the
    guidance paths of the cheapest one and the optimal assignment.

    A sequence stops at its first unsafe configuration (which is not kept) and
    pays ``suspend_penalty_per_step`` for every step it did not complete.
    Early-stopped winners are padded by holding their last configuration.
    Sequence ``j`` may not exceed scale level ``j % scale_samples`` (except
    while descending towards it) and moves at most ``max_scale_step`` levels
    per step, so the batch covers early-shrinking as well as full-size
    candidates.
    With ``footprint`` offsets (see :func:`footprint_offsets`) and an
    ``occupied(points) -> bool`` map, a configuration whose scaled footprint
    covers an occupied point is unsafe, so the formation never encloses an
    obstacle.
    Returns ``(GuidancePathSet, sigma_star)``.
    """
    shape = np.asarray(fc_goal.shape, dtype=float)
    n = shape.shape[0]
    P_cur = np.asarray(P_cur, dtype=float).reshape(n, 3)
    sigma_0 = np.asarray(sigma_0, dtype=int)
    if len(region) != n:
        raise ValueError(f"region has {len(region)} polytopes for {n} UAVs")
    if d_obs is None:
        d_obs = np.zeros(n)
    ctx = EvalContext(
        c_goal=np.asarray(fc_goal.center, dtype=float),
        region=region,
        current_positions=P_cur,
        d_obs=np.asarray(d_obs, dtype=float),
        temp_assignment=sigma_0,
        weights=weights,
    )
    T_F, T_S = params.T_F, params.T_S
    scales = params.scale_grid()

    c_prev = np.tile(np.asarray(c_0, dtype=float), (T_F, 1))
    s_prev = np.full(T_F, np.nan if s_0 is None else float(s_0))
    if prev_direction is None:
        d_prev = np.full((T_F, 3), np.nan)
    else:
        d_prev = np.tile(np.asarray(prev_direction, dtype=float), (T_F, 1))
    levels = np.arange(scales.size)
    cap = np.arange(T_F) % scales.size  # sequence j never grows past level cap[j]
    if s_0 is None:
        lvl = cap.copy()
    else:
        lvl = np.full(T_F, int(np.argmin(np.abs(scales - float(s_0)))))
    alive = np.ones(T_F, dtype=bool)
    steps = np.zeros(T_F, dtype=int)
    cost = np.zeros(T_F)
    seq_c = np.zeros((T_F, T_S, 3))
    seq_s = np.zeros((T_F, T_S))
    rows = np.arange(T_F)

    # sequences j with equal j // K share center draws, so scale caps compete on
    # identical centers and step-length noise cannot favour one scale
    group = rows // scales.size
    n_groups = int(group[-1]) + 1
    for j in range(T_S):
        # representative: first live member of each group (else the first member)
        key = np.where(alive, rows, T_F + rows)
        rep = np.full(n_groups, T_F * 2)
        np.minimum.at(rep, group, key)
        rep = np.where(rep >= T_F, rep - T_F, rep)
        centers = sample_centers(c_prev[rep], ctx.c_goal, params, rng)[group]
        step_cost, safe = batch_costs(centers, scales, shape, ctx, c_prev, s_prev, d_prev)
        if footprint is not None:
            pts = (centers[:, None, None, :]
                   + scales[None, :, None, None] * footprint[None, None, :, :])
            hit = np.asarray(occupied(pts.reshape(-1, 3))).reshape(pts.shape[:3])
            covered = hit.any(axis=2)
            safe &= ~covered
            step_cost = step_cost + weights.k_safe * covered
        if params.max_scale_step:
            top = np.maximum(cap, lvl - params.max_scale_step)
            allowed = (levels[None, :] <= top[:, None]) & (
                np.abs(levels[None, :] - lvl[:, None]) <= params.max_scale_step)
        else:
            allowed = levels[None, :] <= cap[:, None]
        best = np.argmin(np.where(allowed, step_cost, np.inf), axis=1)
        ok = alive & safe[rows, best]
        seq_c[ok, j] = centers[ok]
        seq_s[ok, j] = scales[best[ok]]
        cost[ok] += step_cost[rows, best][ok]
        steps[ok] += 1
        d_prev[ok] = centers[ok] - c_prev[ok]
        c_prev[ok] = centers[ok]
        s_prev[ok] = scales[best[ok]]
        lvl[ok] = best[ok]
        alive = ok
        if not alive.any():
            break

    cost += weights.suspend_penalty_per_step * (T_S - steps)
    if steps.max() == 0:
        raise NoSafeFormationStep("no safe formation step")
    # stable argmin: lowest sequence index wins ties; empty sequences never win
    masked = np.where(steps > 0, cost, np.inf)
    win = int(np.argmin(masked))
    t_s = int(steps[win])
    centers = seq_c[win, :t_s]
    seq_scales = seq_s[win, :t_s]
    configs = tuple(FormationConfig(s, c, shape) for s, c in zip(seq_scales, centers))
    sequence = FormationSequence(configs, float(cost[win]), t_s)

    # pad to T_S by holding the last safe configuration
    pad_c = np.vstack([centers, np.repeat(centers[-1:], T_S - t_s, axis=0)])
    pad_s = np.concatenate([seq_scales, np.repeat(seq_scales[-1:], T_S - t_s)])

    first = configs[0].targets()
    result = auction_assign(AssignmentProblem.from_points(P_cur, first), assign_epsilon)
    sigma_star = np.array(result.perm)
    paths = _paths_for(pad_c, pad_s, shape, sigma_star)
    if not _paths_inside(paths, region):
        # the auction may hand a UAV a target that was only vetted for another
        # UAV's corridor; the sigma_0 pairing was checked at every step
        sigma_star = sigma_0.copy()
        paths = _paths_for(pad_c, pad_s, shape, sigma_star)
    guidance = GuidancePathSet(paths, sequence, pad_s, cost.copy(), steps.copy())
    return guidance, sigma_star


def _paths_for(centers, scales, shape, sigma):
    # paths[i, k] = c_k + s_k * shape[sigma[i]]
    return centers[None, :, :] + scales[None, :, None] * shape[sigma][:, None, :]


def _paths_inside(paths, region):
    return all(np.all(contains(poly, paths[i])) for i, poly in enumerate(region))


# -- leader messages ----------------------------------------------------------
# StateReport: position (3 x f64), d_obs (f64), polytope payload.
# GuidanceBroadcast: N, T_S (u32 each), sigma (N x u32), N*T_S*3 f64 waypoints.

_REPORT_HEAD = struct.Struct("<4d")
_GUIDE_HEAD = struct.Struct("<2I")


def encode_state_report(position, d_obs, polytope):
    return _REPORT_HEAD.pack(*np.asarray(position, float), float(d_obs)) + polytope_to_bytes(polytope)


def decode_state_report(data):
    x, y, z, d = _REPORT_HEAD.unpack_from(data, 0)
    pos = np.array([x, y, z])
    poly, used = polytope_from_bytes(data, _REPORT_HEAD.size, seed_point=pos)
    if _REPORT_HEAD.size + used != len(data):
        raise ValueError("trailing bytes in state report")
    return pos, d, poly


def encode_guidance(sigma, paths):
    paths = np.asarray(paths, dtype="<f8")
    n, t_s, _ = paths.shape
    sigma = np.asarray(sigma, dtype="<u4")
    return _GUIDE_HEAD.pack(n, t_s) + sigma.tobytes() + paths.tobytes()


def decode_guidance(data):
    n, t_s = _GUIDE_HEAD.unpack_from(data, 0)
    off = _GUIDE_HEAD.size
    sigma = np.frombuffer(data, dtype="<u4", count=n, offset=off).astype(int)
    off += 4 * n
    paths = np.frombuffer(data, dtype="<f8", count=n * t_s * 3, offset=off).reshape(n, t_s, 3)
    if off + paths.nbytes != len(data):
        raise ValueError("guidance payload size mismatch")
    return sigma, paths.copy()

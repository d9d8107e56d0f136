"""Per-UAV model predictive path integral (MPPI) trajectory optimisation.

States are flat-output vectors ``[p(3), v(3), a(3), psi]`` driven by jerk and
yaw-rate controls ``[j(3), psi_rate]`` through a chain of integrators. All
functions take arrays with arbitrary leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .world import query_distance

STATE_DIM = 10
CONTROL_DIM = 4


def wrap_angle(psi):
    """Wrap to (-pi, pi]; angles already in range are returned unchanged."""
    psi = np.asarray(psi, dtype=float)
    w = np.mod(psi + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return np.where((psi > -np.pi) & (psi <= np.pi), psi, w)


@dataclass
class UavState:
    p: np.ndarray
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    psi: float = 0.0

    def to_array(self):
        return np.concatenate([np.asarray(self.p, float), np.asarray(self.v, float),
                               np.asarray(self.a, float), [wrap_angle(self.psi)]])

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:6].copy(), x[6:9].copy(), float(x[9]))


@dataclass
class ControlInput:
    jerk: np.ndarray
    psi_rate: float = 0.0

    def to_array(self):
        return np.concatenate([np.asarray(self.jerk, float), [self.psi_rate]])


def hover_state(p, psi=0.0):
    x = np.zeros(STATE_DIM)
    x[0:3] = p
    x[9] = psi
    return x


@dataclass
class MppiParams:
    lambda_temp: float = 1.0
    sigma: np.ndarray = field(default_factory=lambda: np.diag([2.0, 2.0, 2.0, 0.5]) ** 2)
    rollouts: int = 1024
    horizon_steps: int = 20
    dt: float = 0.1
    control_weight: np.ndarray = field(default_factory=lambda: 0.05 * np.eye(CONTROL_DIM))
    seed: int = 0

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.control_weight = np.asarray(self.control_weight, dtype=float)
        if not self.lambda_temp > 0:
            raise ValueError("lambda_temp must be positive")
        if self.rollouts < 1 or self.horizon_steps < 1:
            raise ValueError("rollouts and horizon_steps must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name in ("sigma", "control_weight"):
            m = getattr(self, name)
            if m.shape != (CONTROL_DIM, CONTROL_DIM) or not np.allclose(m, m.T):
                raise ValueError(f"{name} must be a symmetric 4x4 matrix")
            np.linalg.cholesky(m)  # raises unless positive definite


@dataclass
class RunningCostParams:
    k_f: float = 4.0
    k_dyn: float = 1e3
    v_max: float = 1.5
    a_max: float = 3.0
    k_smo: float = 0.05
    k_obs: float = 1e3
    beta: float = 2.0
    d_obs_min: float = 0.3
    d_obs_max: float = 1.2
    k_mut: float = 1e3
    alpha: float = 2.0
    d_mut_min: float = 0.6
    d_mut_max: float = 1.5
    downwash_lambda: float = 0.25
    k_yaw: float = 0.0  # optional heading-tracking term, off by default

    def __post_init__(self):
        if not (self.d_obs_min < self.d_obs_max and self.d_mut_min < self.d_mut_max):
            raise ValueError("need d_min < d_max for obstacle and mutual ranges")
        if not 0 < self.downwash_lambda < 1:
            raise ValueError("downwash_lambda must lie in (0, 1)")


@dataclass
class CostContext:
    """Read-only inputs of the running cost for one UAV over one horizon.

    ``neighbors[j, k]`` is neighbour j's position at horizon time ``k * dt``
    (``k = 0..P``); ``waypoints[k]`` is the guidance point for step ``k``.
    """

    waypoints: np.ndarray  # (P, 3)
    field: object  # DistanceField
    params: RunningCostParams
    dt: float
    neighbors: np.ndarray = None  # (J, P + 1, 3)
    yaw_ref: np.ndarray = None  # (P,)


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray  # (P + 1, 10)
    controls: np.ndarray  # (P, 4)
    timestamps: np.ndarray  # (P + 1,)

    @property
    def positions(self):
        return self.states[:, 0:3]

    def position_at(self, t):
        """Dense position via cubic Hermite interpolation of (p, v) knots."""
        spline = CubicHermiteSpline(self.timestamps, self.states[:, 0:3], self.states[:, 3:6])
        return spline(np.clip(t, self.timestamps[0], self.timestamps[-1]))


def propagate(x, mu, dt):
    """One explicit Euler step of the integrator chain."""
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    out = np.empty(np.broadcast_shapes(x.shape, mu.shape[:-1] + (STATE_DIM,)))
    out[..., 0:3] = x[..., 0:3] + x[..., 3:6] * dt
    out[..., 3:6] = x[..., 3:6] + x[..., 6:9] * dt
    out[..., 6:9] = x[..., 6:9] + mu[..., 0:3] * dt
    out[..., 9] = wrap_angle(x[..., 9] + mu[..., 3] * dt)
    return out


def rollout(x0, controls, dt):
    """States ``(P + 1, 10)`` from applying ``controls`` in order."""
    states = [np.asarray(x0, dtype=float)]
    for u in controls:
        states.append(propagate(states[-1], u, dt))
    return np.stack(states)


def barrier(d, k, power, d_min, d_max):
    """Saturated below ``d_min``, polynomial ramp up to ``d_max``, zero beyond."""
    ramp = k * np.clip((d_max - d) / (d_max - d_min), 0.0, 1.0) ** power
    return np.where(d <= d_min, k, np.where(d > d_max, 0.0, ramp))


def _norm(d):
    return np.sqrt(np.einsum("...i,...i->...", d, d))


def running_cost(x, u, k, ctx):
    """Stage cost of reaching state ``x`` at step ``k + 1`` under control ``u``.

    Sum of guidance tracking, the dynamic-limit indicator, control smoothness,
    obstacle and mutual-collision barriers (and an optional yaw term).
    """
    prm = ctx.params
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    p, v, a = x[..., 0:3], x[..., 3:6], x[..., 6:9]

    cost = prm.k_f * _norm(p - ctx.waypoints[k])
    over = (_norm(v) > prm.v_max) | (_norm(a) > prm.a_max)
    cost = cost + np.where(over, prm.k_dyn, 0.0)
    cost = cost + prm.k_smo * np.einsum("...i,...i->...", u, u) * ctx.dt
    d_obs = query_distance(ctx.field, p)
    cost = cost + barrier(d_obs, prm.k_obs, prm.beta, prm.d_obs_min, prm.d_obs_max)
    if ctx.neighbors is not None and len(ctx.neighbors):
        gamma = np.array([1.0, 1.0, prm.downwash_lambda])
        diff = (p[..., None, :] - ctx.neighbors[:, k + 1]) * gamma
        d_mut = _norm(diff)
        cost = cost + barrier(d_mut, prm.k_mut, prm.alpha, prm.d_mut_min, prm.d_mut_max).sum(axis=-1)
    if prm.k_yaw and ctx.yaw_ref is not None:
        cost = cost + prm.k_yaw * np.abs(wrap_angle(x[..., 9] - ctx.yaw_ref[k]))
    return cost


def shift_horizon(nominal, u_init):
    """Drop the first control and append ``u_init`` at the tail."""
    nominal = np.asarray(nominal, dtype=float)
    return np.concatenate([nominal[1:], np.asarray(u_init, dtype=float)[None, :]], axis=0)


def importance_weights(costs, lambda_temp):
    """Softmax of ``-(S - S_min) / lambda``; non-finite costs get weight 0."""
    costs = np.asarray(costs, dtype=float)
    finite = np.isfinite(costs)
    if not finite.any():
        return np.full(costs.shape, 1.0 / costs.size)
    s_min = np.min(costs[finite])
    w = np.zeros_like(costs)
    w[finite] = np.exp(-(costs[finite] - s_min) / lambda_temp)
    return w / np.sum(w)


def mppi_step(x0, nominal, ctx, params, rng=None, u_init=None, t0=0.0,
              cost_hook=None, return_info=False):
    """One MPPI iteration from state ``x0`` around the ``nominal`` control sequence.

    Returns ``(trajectory, next_nominal)`` where ``trajectory`` is the optimal
    sequence propagated from ``x0`` and ``next_nominal`` is that sequence
    shifted one step with ``u_init`` appended. ``cost_hook`` may transform the
    vector of rollout costs before weighting (used to test baseline
    invariance). With ``return_info`` a dict of costs, weights and noise is
    returned as a third element.
    """
    P, R, dt = params.horizon_steps, params.rollouts, params.dt
    nominal = np.asarray(nominal, dtype=float)
    if nominal.shape != (P, CONTROL_DIM):
        raise ValueError(f"nominal must be ({P}, {CONTROL_DIM}), got {nominal.shape}")
    if ctx.waypoints.shape[0] != P:
        raise ValueError(f"expected {P} guidance waypoints, got {ctx.waypoints.shape[0]}")
    if rng is None:
        rng = np.random.default_rng(params.seed)
    if u_init is None:
        u_init = np.zeros(CONTROL_DIM)
    x0 = np.asarray(x0, dtype=float)

    chol = np.linalg.cholesky(params.sigma)
    noise = rng.standard_normal((R, P, CONTROL_DIM)) @ chol.T

    x = np.broadcast_to(x0, (R, STATE_DIM))
    costs = np.zeros(R)
    for n in range(P):
        mu = nominal[n] + noise[:, n]
        x = propagate(x, mu, dt)
        costs += running_cost(x, mu, n, ctx) * dt
    if cost_hook is not None:
        costs = cost_hook(costs)

    weights = importance_weights(costs, params.lambda_temp)
    optimal = nominal + np.einsum("m,mnk->nk", weights, noise)
    states = rollout(x0, optimal, dt)
    traj = Trajectory(states, optimal, t0 + dt * np.arange(P + 1))
    next_nominal = shift_horizon(optimal, u_init)
    if return_info:
        return traj, next_nominal, {"costs": costs, "weights": weights, "noise": noise}
    return traj, next_nominal

"""Independent reference implementations used to cross-check the fast paths.

Everything here is written for clarity over speed: explicit loops, scalar
``math`` calls and brute-force search. None of it imports the code it checks
beyond plain data containers.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import brentq

# -- distance transform -------------------------------------------------------


def edt_brute_force(cells, resolution, d_cap):
    """Distance from each cell centre to the nearest occupied centre, capped.

    All pairs: every occupied cell lowers the running squared-index minimum of
    the whole grid, so the result is exact integer arithmetic until the root.
    """
    cells = np.asarray(cells, dtype=bool)
    occ = np.argwhere(cells)
    if len(occ) == 0:
        return np.full(cells.shape, float(d_cap))
    ix, iy, iz = np.indices(cells.shape)
    best = np.full(cells.shape, np.iinfo(np.int64).max)
    for ox, oy, oz in occ:
        np.minimum(best, (ix - ox) ** 2 + (iy - oy) ** 2 + (iz - oz) ** 2, out=best)
    return np.minimum(resolution * np.sqrt(best), float(d_cap))


def trilinear(values, origin, resolution, p):
    """Scalar trilinear interpolation of a cell-centred field, clamped at the border."""
    dims = values.shape
    idx, frac = [], []
    for ax in range(3):
        u = (p[ax] - origin[ax]) / resolution - 0.5
        u = min(max(u, 0.0), dims[ax] - 1)
        i = min(int(math.floor(u)), max(dims[ax] - 2, 0))
        idx.append(i)
        frac.append(u - i)
    total = 0.0
    for corner in itertools.product((0, 1), repeat=3):
        w = 1.0
        at = []
        for ax, bit in enumerate(corner):
            w *= frac[ax] if bit else 1.0 - frac[ax]
            at.append(min(idx[ax] + bit, dims[ax] - 1))
        total += w * values[tuple(at)]
    return total


# -- assignment ---------------------------------------------------------------


def assignment_brute_force(costs):
    """Exhaustive minimum-cost permutation; returns ``(cost, perm)``."""
    costs = np.asarray(costs, dtype=float)
    n = costs.shape[0]
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(n)):
        c = sum(costs[i, perm[i]] for i in range(n))
        if c < best:
            best, best_perm = c, perm
    return best, np.array(best_perm)


# -- front-end cost -----------------------------------------------------------


def _inside(normals, offsets, p, tol=1e-9):
    for n, b in zip(normals, offsets):
        if n[0] * p[0] + n[1] * p[1] + n[2] * p[2] > b + tol:
            return False
    return True


def _angle(a, b):
    la = math.sqrt(sum(x * x for x in a))
    lb = math.sqrt(sum(x * x for x in b))
    if la == 0.0 or lb == 0.0:
        return 0.0
    # Kahan's form stays accurate for nearly (anti)parallel vectors
    ua = [x / la for x in a]
    ub = [x / lb for x in b]
    diff = math.sqrt(sum((x - y) ** 2 for x, y in zip(ua, ub)))
    summ = math.sqrt(sum((x + y) ** 2 for x, y in zip(ua, ub)))
    return 2.0 * math.atan2(diff, summ)


def front_cost(center, scale, shape, c_goal, polytopes, positions, d_obs, sigma,
               weights, prev_center=None, prev_scale=None, prev_direction=None):
    """Goal, scale preference, safe-region, risk and continuity terms.

    ``polytopes`` is a list of ``(normals, offsets)`` pairs; ``sigma[i]`` is
    the shape slot whose target UAV ``i`` is scored against.
    """
    w = weights
    c_g = w.k_g * math.dist(center, c_goal)
    c_s = w.k_s * abs(scale - w.s_des)
    c_safe = 0.0
    c_risk = 0.0
    total_d = sum(d_obs)
    for i, (normals, offsets) in enumerate(polytopes):
        q = shape[sigma[i]]
        target = [center[a] + scale * q[a] for a in range(3)]
        if not _inside(normals, offsets, target):
            c_safe += w.k_safe
        if d_obs[i] > w.d_risk and total_d > 0:
            c_risk += d_obs[i] / total_d * math.dist(target, positions[i])
    c_con = 0.0
    if prev_scale is not None:
        c_con += w.k_sc * abs(scale - prev_scale)
        if prev_direction is not None and prev_center is not None:
            cur = [center[a] - prev_center[a] for a in range(3)]
            c_con += w.k_ac * _angle(cur, prev_direction)
    return c_g + c_s + c_safe + c_risk + c_con


# -- running cost -------------------------------------------------------------


def _sign(x):
    return (x > 0) - (x < 0)


def _ramp(d, k, power, d_min, d_max):
    if d < d_min:
        return k
    if d <= d_max:
        return k * ((d_max - d) / (d_max - d_min)) ** power
    return 0.0


def running_cost(x, u, waypoint, d_obs, neighbors, params, dt):
    """Stage cost for one state written term by term.

    ``neighbors`` holds the neighbour positions at the same instant. The
    dynamic term uses the sign sum ``sign(|v| - v_max) + sign(|a| - a_max)``.
    """
    prm = params
    p, v, a = x[0:3], x[3:6], x[6:9]
    h_f = prm.k_f * math.dist(p, waypoint)
    d_dyn = _sign(math.hypot(*v) - prm.v_max) + _sign(math.hypot(*a) - prm.a_max)
    h_d = prm.k_dyn if d_dyn >= 0 else 0.0
    h_s = prm.k_smo * sum(c * c for c in u) * dt
    h_safe = _ramp(d_obs, prm.k_obs, prm.beta, prm.d_obs_min, prm.d_obs_max)
    h_mut = 0.0
    for q in neighbors:
        dx, dy, dz = p[0] - q[0], p[1] - q[1], prm.downwash_lambda * (p[2] - q[2])
        h_mut += _ramp(math.sqrt(dx * dx + dy * dy + dz * dz), prm.k_mut, prm.alpha,
                       prm.d_mut_min, prm.d_mut_max)
    return h_f + h_d + h_s + h_safe + h_mut


# -- dynamics -----------------------------------------------------------------


def transition_matrices(dt):
    """``(A, B)`` of the discrete integrator chain on ``[p, v, a, psi]``."""
    A = np.eye(10)
    B = np.zeros((10, 4))
    for ax in range(3):
        A[ax, 3 + ax] = dt
        A[3 + ax, 6 + ax] = dt
        B[6 + ax, ax] = dt
    B[9, 3] = dt
    return A, B


def propagate_many(x0, controls, dt):
    """State after applying ``controls`` in order, via powers of ``A``.

    The heading is returned unwrapped; compare modulo ``2 pi``.
    """
    A, B = transition_matrices(dt)
    n = len(controls)
    x = np.linalg.matrix_power(A, n) @ np.asarray(x0, dtype=float)
    for k, u in enumerate(controls):
        x = x + np.linalg.matrix_power(A, n - 1 - k) @ B @ np.asarray(u, dtype=float)
    return x


# -- similarity ---------------------------------------------------------------


def _residual(p, q, sigma, t):
    return float(np.sum((p - sigma * q - t) ** 2))


def _best_translation(p, q, sigma):
    # each axis separately: root of the derivative in t_axis
    t = np.zeros(3)
    for ax in range(3):
        def grad(ta, ax=ax):
            return float(-2.0 * np.sum(p[:, ax] - sigma * q[:, ax] - ta))
        lo = float(np.min(p[:, ax] - sigma * q[:, ax])) - 1.0
        hi = float(np.max(p[:, ax] - sigma * q[:, ax])) + 1.0
        t[ax] = brentq(grad, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return t


def similarity_nested(positions, shape):
    """Translation + scale fit residual by nested one-dimensional root finding.

    The outer loop finds the stationary scale of ``g(sigma) = min_t residual``
    from a central difference of ``g``; the inner loop solves for ``t``.
    """
    p = np.asarray(positions, dtype=float)
    q = np.asarray(shape, dtype=float)
    n = p.shape[0]

    def g(sigma):
        return _residual(p, q, sigma, _best_translation(p, q, sigma))

    def dg(sigma, h=1e-3):
        return (g(sigma + h) - g(sigma - h)) / (2.0 * h)

    lo, hi = -1.0, 1.0
    while dg(lo) >= 0.0 or dg(hi) <= 0.0:
        lo, hi = 2.0 * lo, 2.0 * hi
    sigma = brentq(dg, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    if not sigma > 0:
        return math.inf
    return g(sigma) / (n * sigma * sigma)

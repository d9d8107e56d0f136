"""Local route guidance: an intermediate goal from the sensed window around the formation.

The leader runs a shortest-path search over the occupancy slice at flight
altitude, restricted to a square window around the formation center. Cells
closer to an obstacle than ``inflate`` are allowed but cost ``penalty`` times
more, so routes prefer gaps the formation fits through. The route leaves the
window at the boundary cell minimising path length plus straight-line
distance to the goal (or ends at the goal when it is inside the window).
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

_STEPS = ((1, 0), (0, 1), (1, 1), (1, -1))


def _window(field, center, half):
    res = field.resolution
    nx, ny, nz = field.dims
    lo = np.floor((center[:2] - half - field.origin[:2]) / res).astype(int)
    hi = np.floor((center[:2] + half - field.origin[:2]) / res).astype(int) + 1
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, [nx, ny])
    kz = int(np.clip(np.floor((center[2] - field.origin[2]) / res), 0, nz - 1))
    return lo, hi, kz


def route(field, center, goal, half_window, inflate, penalty=20.0):
    """Cell-centre polyline from ``center`` towards ``goal`` inside the window, ``(K, 2)``."""
    center = np.asarray(center, dtype=float)
    goal = np.asarray(goal, dtype=float)
    res = field.resolution
    lo, hi, kz = _window(field, center, half_window)
    d = field.values[lo[0]:hi[0], lo[1]:hi[1], kz]
    w, h = d.shape
    ids = np.arange(w * h).reshape(w, h)
    weight = np.where(d > inflate, 1.0, 1.0 + penalty)
    weight = np.where(d > 0, weight, np.inf)
    ii, jj = np.meshgrid(np.arange(w), np.arange(h), indexing="ij")
    rows, cols, vals = [], [], []
    for dx, dy in _STEPS:
        i2, j2 = ii + dx, jj + dy
        valid = (i2 >= 0) & (i2 < w) & (j2 >= 0) & (j2 < h)
        a, b = ids[ii[valid], jj[valid]], ids[i2[valid], j2[valid]]
        cost = 0.5 * res * np.hypot(dx, dy) * (weight.ravel()[a] + weight.ravel()[b])
        ok = np.isfinite(cost)
        rows += [a[ok], b[ok]]
        cols += [b[ok], a[ok]]
        vals += [cost[ok], cost[ok]]
    graph = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(w * h, w * h)).tocsr()

    start = np.clip(np.floor((center[:2] - field.origin[:2]) / res).astype(int) - lo, 0, [w - 1, h - 1])
    dist, pred = dijkstra(graph, indices=int(ids[start[0], start[1]]), return_predecessors=True)
    dist = dist.reshape(w, h)
    xy = field.origin[:2] + (np.stack(np.meshgrid(np.arange(w), np.arange(h), indexing="ij"), -1)
                             + lo + 0.5) * res
    g_cell = np.floor((goal[:2] - field.origin[:2]) / res).astype(int) - lo
    if np.all(g_cell >= 0) and np.all(g_cell < [w, h]) and np.isfinite(dist[g_cell[0], g_cell[1]]):
        end = tuple(g_cell)
    else:
        edge = np.zeros((w, h), bool)
        edge[[0, -1], :] = True
        edge[:, [0, -1]] = True
        total = np.where(edge, dist + np.linalg.norm(xy - goal[:2], axis=-1), np.inf)
        if not np.isfinite(total).any():
            return np.array([center[:2], goal[:2]])
        end = np.unravel_index(int(np.argmin(total)), total.shape)
    path = []
    node = int(ids[end])
    while node >= 0:
        path.append(xy.reshape(-1, 2)[node])
        node = int(pred[node])
    return np.array(path[::-1])


def local_subgoal(field, center, goal, half_window, inflate, lookahead, penalty=20.0):
    """Point ``lookahead`` metres along :func:`route`, at the goal's altitude."""
    goal = np.asarray(goal, dtype=float)
    path = route(field, center, goal, half_window, inflate, penalty)
    if np.linalg.norm(goal[:2] - np.asarray(center, float)[:2]) <= lookahead:
        return goal.copy()
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    along = np.concatenate([[0.0], np.cumsum(seg)])
    k = int(np.searchsorted(along, lookahead))
    point = path[min(k, len(path) - 1)]
    return np.array([point[0], point[1], goal[2]])

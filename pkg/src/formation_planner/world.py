"""Voxel worlds: scenario generation, exact distance transforms and queries.

Obstacles are vertical pillars or wall slabs extruded over the full world
height, so the 3-D distance field below coincides with the planar one.
"""

from __future__ import annotations

import dataclasses
import functools
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import config as cfg

DEFAULT_RESOLUTION = 0.2
DEFAULT_HEIGHT = 3.0
DEFAULT_D_CAP = 5.0


class ScenarioError(ValueError):
    """The scenario cannot be realised (e.g. too many pillars for the area)."""


def _readonly(arr, dtype):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Dense boolean voxel grid; ``origin`` is the lower corner of cell (0, 0, 0)."""

    origin: np.ndarray
    resolution: float
    cells: np.ndarray

    def __post_init__(self):
        origin = _readonly(self.origin, float).reshape(3)
        cells = np.asarray(self.cells, dtype=bool)
        if cells.ndim != 3 or min(cells.shape) < 1:
            raise ValueError(f"cells must be a non-empty 3-D array, got shape {cells.shape}")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "cells", _readonly(cells, bool))

    @property
    def dims(self):
        return self.cells.shape

    @property
    def upper(self):
        return self.origin + self.resolution * np.array(self.dims, dtype=float)

    def cell_center(self, index):
        return self.origin + (np.asarray(index, dtype=float) + 0.5) * self.resolution

    def index_of(self, points):
        """Integer cell index containing each point (not clipped)."""
        pts = np.asarray(points, dtype=float)
        return np.floor((pts - self.origin) / self.resolution).astype(np.int64)

    def in_bounds(self, points):
        idx = self.index_of(points)
        return np.all((idx >= 0) & (idx < np.array(self.dims)), axis=-1)

    def occupied_at(self, points):
        """Occupancy of the cell containing each point; outside the grid counts as occupied."""
        idx = self.index_of(points)
        inside = np.all((idx >= 0) & (idx < np.array(self.dims)), axis=-1)
        clipped = np.clip(idx, 0, np.array(self.dims) - 1)
        occ = self.cells[clipped[..., 0], clipped[..., 1], clipped[..., 2]]
        return np.where(inside, occ, True)

    @functools.cached_property
    def occupied_centers(self):
        idx = np.argwhere(self.cells)
        return _readonly(self.origin + (idx + 0.5) * self.resolution, float)


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Per-cell distance (m) to the nearest occupied cell centre, capped at ``d_cap``."""

    origin: np.ndarray
    resolution: float
    values: np.ndarray
    d_cap: float

    @property
    def dims(self):
        return self.values.shape


@dataclass
class ScenarioSpec:
    kind: str = "pillar_field"
    extent: tuple = (50.0, 40.0)
    obstacle_count: int = 0
    pillar_radius_range: tuple = (0.25, 0.5)
    corridor_width: float = 2.5
    corridor_span: tuple = None  # x-range of the narrow part; None = middle third
    corridor_taper: float = 0.0  # length of the linear funnel at each mouth
    seed: int = 0
    start: tuple = (4.0, 20.0, 1.5)
    goal: tuple = (46.0, 20.0, 1.5)
    resolution: float = DEFAULT_RESOLUTION
    clearance_radius: float = 4.5
    max_attempts: int = 200

    def __post_init__(self):
        if self.kind not in ("pillar_field", "corridor"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if len(self.extent) not in (2, 3) or min(self.extent) <= 0:
            raise ValueError("extent must be 2 or 3 positive lengths")
        if self.obstacle_count < 0:
            raise ValueError("obstacle_count must be >= 0")
        if self.corridor_taper < 0:
            raise ValueError("corridor_taper must be >= 0")

    @property
    def size(self):
        if len(self.extent) == 3:
            return np.array(self.extent, dtype=float)
        return np.array([*self.extent, DEFAULT_HEIGHT], dtype=float)

    def with_seed(self, seed):
        return dataclasses.replace(self, seed=int(seed))

    # -- text configuration -------------------------------------------------

    @classmethod
    def from_text(cls, text, source=None):
        entries = cfg.parse_kv(text, source)
        values = cfg.load_fields(entries, SCENARIO_SCHEMA, source)
        try:
            return cls(**values)
        except (TypeError, ValueError) as exc:
            raise cfg.ConfigError(str(exc), source=source) from None

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read(), source=str(path))

    def to_text(self):
        return cfg.dump_fields(dataclasses.asdict(self), SCENARIO_SCHEMA)


SCENARIO_SCHEMA = {
    "kind": cfg.STR,
    "extent": cfg.VEC,
    "obstacle_count": cfg.INT,
    "pillar_radius_range": cfg.VEC,
    "corridor_width": cfg.FLOAT,
    "corridor_span": cfg.VEC,
    "corridor_taper": cfg.FLOAT,
    "seed": cfg.INT,
    "start": cfg.VEC,
    "goal": cfg.VEC,
    "resolution": cfg.FLOAT,
    "clearance_radius": cfg.FLOAT,
    "max_attempts": cfg.INT,
}


def _empty_grid(spec):
    size = spec.size
    dims = np.maximum(np.round(size / spec.resolution).astype(int), 1)
    return np.zeros(dims, dtype=bool)


def _centers_1d(n, res):
    return (np.arange(n) + 0.5) * res


def generate_pillars(spec):
    """Rejection-sample ``(centers_xy, radii)`` for a pillar field.

    Pillars keep a two-cell gap from each other so that every pillar stays a
    separate connected component after rasterisation, and stay clear of the
    start and goal discs.
    """
    rng = np.random.default_rng(spec.seed)
    size = spec.size
    r_lo, r_hi = spec.pillar_radius_range
    gap = 2.0 * spec.resolution
    keep_out = [np.asarray(spec.start, float)[:2], np.asarray(spec.goal, float)[:2]]
    centers, radii = [], []
    budget = spec.max_attempts * max(spec.obstacle_count, 1)
    attempts = 0
    while len(centers) < spec.obstacle_count:
        if attempts >= budget:
            raise ScenarioError(
                f"placed only {len(centers)} of {spec.obstacle_count} pillars "
                f"after {attempts} attempts"
            )
        attempts += 1
        r = rng.uniform(r_lo, r_hi)
        c = rng.uniform([r, r], [size[0] - r, size[1] - r])
        if any(np.hypot(*(c - k)) < r + spec.clearance_radius for k in keep_out):
            continue
        if centers:
            d = np.hypot(*(np.array(centers) - c).T)
            if np.any(d < np.array(radii) + r + gap):
                continue
        centers.append(c)
        radii.append(r)
    return np.array(centers).reshape(-1, 2), np.array(radii)


def generate_scenario(spec):
    """Rasterise ``spec`` into an :class:`OccupancyGrid` (pure function of spec)."""
    cells = _empty_grid(spec)
    nx, ny, _ = cells.shape
    res = spec.resolution
    xs = _centers_1d(nx, res)[:, None]
    ys = _centers_1d(ny, res)[None, :]
    if spec.kind == "pillar_field":
        centers, radii = generate_pillars(spec)
        plane = np.zeros((nx, ny), dtype=bool)
        for (cx, cy), r in zip(centers, radii):
            plane |= (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    else:
        plane = corridor_walls(xs, ys, spec)
    cells[:] = plane[:, :, None]
    grid = OccupancyGrid(origin=np.zeros(3), resolution=res, cells=cells)
    for name in ("start", "goal"):
        p = np.asarray(getattr(spec, name), float)
        if not grid.in_bounds(p) or grid.occupied_at(p):
            raise ScenarioError(f"{name} {tuple(p)} is not in free space")
    return grid


def corridor_walls(xs, ys, spec):
    """Wall mask over cell centres: two slabs leaving a channel of ``corridor_width``.

    With a taper the channel widens linearly outside the span, reaching the
    full map width ``corridor_taper`` metres before and after it.
    """
    size = spec.size
    x0, x1 = spec.corridor_span if spec.corridor_span else (size[0] / 3, 2 * size[0] / 3)
    y_mid = size[1] / 2
    half = np.full(np.shape(xs), spec.corridor_width / 2)
    if spec.corridor_taper > 0:
        gap = np.maximum(x0 - xs, xs - x1)
        half = half + np.maximum(gap, 0.0) * (y_mid - spec.corridor_width / 2) / spec.corridor_taper
    else:
        half = np.where((xs >= x0) & (xs < x1), half, np.inf)
    return np.abs(ys - y_mid) >= half


def build_edt(grid, d_cap=DEFAULT_D_CAP):
    """Exact Euclidean distance from every cell centre to the nearest occupied centre.

    Distances are ``resolution * sqrt(k)`` for the integer squared index
    distance ``k`` of the nearest occupied cell, then clamped to ``d_cap``.
    """
    if not d_cap > 0:
        raise ValueError("d_cap must be positive")
    if not grid.cells.any():
        values = np.full(grid.dims, float(d_cap))
    else:
        # feature transform gives the nearest occupied index (exact algorithm)
        _, nearest = ndimage.distance_transform_edt(~grid.cells, return_indices=True)
        here = np.indices(grid.dims)
        sq = np.sum((nearest - here) ** 2, axis=0)
        values = np.minimum(grid.resolution * np.sqrt(sq), float(d_cap))
    return DistanceField(
        origin=grid.origin,
        resolution=grid.resolution,
        values=_readonly(values, float),
        d_cap=float(d_cap),
    )


def query_distance(field, p):
    """Trilinear interpolation of the distance field at ``p`` (shape ``(..., 3)``).

    Points outside the grid are clamped onto the boundary cell centres.
    """
    p = np.asarray(p, dtype=float)
    dims = np.array(field.dims)
    u = (p - field.origin) / field.resolution - 0.5
    u = np.clip(u, 0.0, dims - 1)
    i0 = np.minimum(np.floor(u).astype(np.int64), np.maximum(dims - 2, 0))
    t = u - i0
    i1 = np.minimum(i0 + 1, dims - 1)
    v = field.values.ravel()
    sy, sz = dims[1] * dims[2], dims[2]
    base = i0[..., 0] * sy + i0[..., 1] * sz + i0[..., 2]
    dx = (i1[..., 0] - i0[..., 0]) * sy
    dy = (i1[..., 1] - i0[..., 1]) * sz
    dz = i1[..., 2] - i0[..., 2]
    tx, ty, tz = t[..., 0], t[..., 1], t[..., 2]
    c00 = v.take(base) * (1 - tx) + v.take(base + dx) * tx
    c10 = v.take(base + dy) * (1 - tx) + v.take(base + dy + dx) * tx
    c01 = v.take(base + dz) * (1 - tx) + v.take(base + dz + dx) * tx
    c11 = v.take(base + dy + dz) * (1 - tx) + v.take(base + dy + dz + dx) * tx
    c0 = c00 * (1 - ty) + c10 * ty
    c1 = c01 * (1 - ty) + c11 * ty
    return c0 * (1 - tz) + c1 * tz


# -- portable binary layout ------------------------------------------------
# header: dims (3 x uint32), resolution (float64), origin (3 x float64), all
# little-endian; body: one byte per cell in row-major (x, y, z) order.

_GRID_HEADER = struct.Struct("<3I4d")


def grid_to_bytes(grid):
    header = _GRID_HEADER.pack(*grid.dims, grid.resolution, *grid.origin)
    return header + np.ascontiguousarray(grid.cells, dtype=np.uint8).tobytes(order="C")


def grid_from_bytes(data):
    nx, ny, nz, res, ox, oy, oz = _GRID_HEADER.unpack_from(data, 0)
    body = np.frombuffer(data, dtype=np.uint8, offset=_GRID_HEADER.size)
    if body.size != nx * ny * nz:
        raise ValueError(f"grid body has {body.size} bytes, header says {nx * ny * nz}")
    return OccupancyGrid(origin=np.array([ox, oy, oz]), resolution=res,
                         cells=body.reshape(nx, ny, nz).astype(bool))


def save_grid(grid, path):
    with open(path, "wb") as fh:
        fh.write(grid_to_bytes(grid))


def load_grid(path):
    with open(path, "rb") as fh:
        return grid_from_bytes(fh.read())

"""Safe flight corridors: convex polytopes ``{p : A p <= b}`` around each UAV.

Corridors are built by iterative nearest-obstacle cutting inside a local
sensing box. Occupied cells are treated as cubes, so a cell only counts as
excluded once its centre lies at least half a cell diagonal outside some
face; that keeps every point of the polytope out of occupied voxels, not just
away from their centres.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

CONTAINS_TOL = 1e-9
DEFAULT_HALF_EXTENT = 5.0
DEFAULT_SAFETY_MARGIN = 0.25  # uav radius 0.15 + 0.1 inflation
MAX_FACES = 30

_BOX_NORMALS = np.array([
    [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
])


class SfcError(ValueError):
    """Corridor generation was asked for an occupied or out-of-map seed."""


@dataclass(frozen=True, eq=False)
class Polytope:
    normals: np.ndarray  # (n_l, 3) unit outward normals
    offsets: np.ndarray  # (n_l,)
    seed_point: np.ndarray = None

    def __post_init__(self):
        A = np.array(self.normals, dtype=float).reshape(-1, 3)
        b = np.array(self.offsets, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise ValueError("normals and offsets disagree in length")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "normals", A)
        object.__setattr__(self, "offsets", b)
        if self.seed_point is not None:
            seed = np.array(self.seed_point, dtype=float).reshape(3)
            seed.setflags(write=False)
            object.__setattr__(self, "seed_point", seed)

    @property
    def n_faces(self):
        return self.normals.shape[0]

    def slack(self, p):
        """``b - A p`` for each face; negative entries are violated faces."""
        return self.offsets - np.asarray(p, dtype=float) @ self.normals.T

    def to_bytes(self):
        return polytope_to_bytes(self)


@dataclass(frozen=True, eq=False)
class FormationSafeRegion:
    polytopes: tuple

    def __post_init__(self):
        object.__setattr__(self, "polytopes", tuple(self.polytopes))

    def __len__(self):
        return len(self.polytopes)

    def __getitem__(self, i):
        return self.polytopes[i]

    def __iter__(self):
        return iter(self.polytopes)


def contains(poly, p, tol=CONTAINS_TOL):
    """True where ``normals @ p <= offsets + tol``; ``p`` may be ``(..., 3)``."""
    p = np.asarray(p, dtype=float)
    return np.all(p @ poly.normals.T <= poly.offsets + tol, axis=-1)


def sensing_box(position, half_extent, lower=None, upper=None):
    """Axis-aligned box polytope around ``position`` clipped to ``[lower, upper]``."""
    p = np.asarray(position, dtype=float)
    lo = p - half_extent
    hi = p + half_extent
    if lower is not None:
        lo = np.maximum(lo, lower)
    if upper is not None:
        hi = np.minimum(hi, upper)
    offsets = np.array([hi[0], -lo[0], hi[1], -lo[1], hi[2], -lo[2]])
    return Polytope(_BOX_NORMALS, offsets, p)


def generate_sfc(position, grid, sensing_half_extent=DEFAULT_HALF_EXTENT,
                 safety_margin=DEFAULT_SAFETY_MARGIN, max_faces=MAX_FACES):
    """Convex obstacle-free polytope containing ``position``.

    Starts from the sensing box (clipped to the map) and repeatedly cuts off
    the nearest occupied cell still inside with a plane ``safety_margin``
    before it, normal along ``obstacle - position``. If the face budget runs
    out the box is shrunk and the cutting restarts.
    """
    p = np.asarray(position, dtype=float).reshape(3)
    if not grid.in_bounds(p):
        raise SfcError(f"position {tuple(p)} is outside the map")
    if grid.occupied_at(p):
        raise SfcError(f"position {tuple(p)} is inside an occupied cell")
    half_diag = 0.5 * np.sqrt(3.0) * grid.resolution
    occ = grid.occupied_centers
    half = float(sensing_half_extent)
    while True:
        box = sensing_box(p, half, grid.origin, grid.upper)
        lo, hi = -box.offsets[1::2], box.offsets[0::2]
        near = np.all((occ >= lo - half_diag) & (occ <= hi + half_diag), axis=1)
        pts = occ[near]
        normals = [row for row in box.normals]
        offsets = list(box.offsets)
        dist = np.linalg.norm(pts - p, axis=1)
        remaining = np.ones(len(pts), dtype=bool)
        while remaining.any() and len(normals) < max_faces:
            j = np.flatnonzero(remaining)[np.argmin(dist[remaining])]
            d = dist[j]
            n = (pts[j] - p) / d
            if d > half_diag:
                gap = min(safety_margin, 0.5 * (d + half_diag))
            else:
                gap = 0.5 * d
            b = float(n @ pts[j]) - gap
            normals.append(n)
            offsets.append(b)
            remaining &= pts @ n <= b + half_diag
            remaining[j] = False
        if not remaining.any():
            return Polytope(np.array(normals), np.array(offsets), p)
        half *= 0.75


def check_connectivity(fc_m, fc_n, region, assignment):
    """Both configurations' assigned targets lie in every owner's polytope.

    ``assignment[i]`` is the target index (in both configurations) of UAV i.
    By convexity the straight segment between the two targets is then inside
    ``region[i]`` as well.
    """
    tm = fc_m.targets()
    tn = fc_n.targets()
    for i, poly in enumerate(region):
        j = assignment[i]
        if not (contains(poly, tm[j]) and contains(poly, tn[j])):
            return False
    return True


# -- leader-bound payload --------------------------------------------------
# n_l as uint32, then n_l rows of (nx, ny, nz, offset) as float64, little-endian.

_COUNT = struct.Struct("<I")


def polytope_to_bytes(poly):
    rows = np.hstack([poly.normals, poly.offsets[:, None]]).astype("<f8")
    return _COUNT.pack(poly.n_faces) + rows.tobytes()


def polytope_from_bytes(data, offset=0, seed_point=None):
    """Decode a polytope; returns ``(polytope, bytes_consumed)``."""
    (n,) = _COUNT.unpack_from(data, offset)
    start = offset + _COUNT.size
    rows = np.frombuffer(data, dtype="<f8", count=4 * n, offset=start).reshape(n, 4)
    poly = Polytope(rows[:, :3], rows[:, 3], seed_point)
    return poly, _COUNT.size + rows.nbytes

"""Occupancy-grid maps, racelines and curvilinear (Frenet) arithmetic.

Lateral offsets are positive to the left of the local raceline tangent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from PIL import Image
from scipy import ndimage


@dataclass(frozen=True)
class OccupancyGrid:
    """Row ``i`` of the arrays is the row of cells at ``y = origin_y + (i + 0.5) * resolution``."""

    resolution: float
    origin: tuple[float, float, float]
    occupied: np.ndarray
    distance_field: np.ndarray = field(repr=False)

    @property
    def height_cells(self) -> int:
        return self.occupied.shape[0]

    @property
    def width_cells(self) -> int:
        return self.occupied.shape[1]

    @classmethod
    def from_occupancy(cls, occupied, resolution, origin=(0.0, 0.0, 0.0)):
        occupied = np.ascontiguousarray(occupied, dtype=bool)
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        if occupied.ndim != 2 or occupied.size == 0:
            raise ValueError("occupancy must be a non-empty 2D array")
        occupied.setflags(write=False)
        return cls(float(resolution), tuple(float(v) for v in origin), occupied,
                   distance_transform(occupied, resolution))

    def world_to_cell(self, x, y):
        """Return ``(row, col)`` of the cell containing world point ``(x, y)``."""
        ox, oy, oth = self.origin
        c, s = math.cos(oth), math.sin(oth)
        dx, dy = x - ox, y - oy
        lx, ly = c * dx + s * dy, -s * dx + c * dy
        return int(math.floor(ly / self.resolution)), int(math.floor(lx / self.resolution))

    def distance_at(self, x, y):
        """Distance field at a world point; 0 outside the map."""
        return _grid_distance(self.distance_field, self.resolution, self.origin[0],
                              self.origin[1], self.origin[2], x, y)

    def kernel_args(self):
        ox, oy, oth = self.origin
        return self.distance_field, self.resolution, ox, oy, oth


def distance_transform(occupied, resolution):
    """Exact Euclidean distance (meters) from each cell center to the nearest occupied cell center.

    Maps without any occupied cell get the grid diagonal everywhere, which is
    at least the largest extent of the map.
    """
    occupied = np.asarray(occupied, dtype=bool)
    if not occupied.any():
        h, w = occupied.shape
        return np.full(occupied.shape, math.hypot(h, w) * resolution)
    return ndimage.distance_transform_edt(~occupied) * resolution


def load_grid(image_path, meta_path) -> OccupancyGrid:
    """Load a grayscale map image and its ``key: value`` metadata sidecar."""
    meta = read_keyvalue(meta_path)
    try:
        resolution = float(meta["resolution"])
        origin = (float(meta.get("origin_x", 0.0)), float(meta.get("origin_y", 0.0)),
                  float(meta.get("origin_theta", 0.0)))
        thresh = float(meta.get("occupied_thresh", 0.65))
    except KeyError as exc:
        raise ValueError(f"map metadata missing key {exc}") from None
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if not 0.0 <= thresh <= 1.0:
        raise ValueError("occupied_thresh must lie in [0, 1]")
    image_path = Path(image_path)
    if not image_path.exists():
        raise FileNotFoundError(image_path)
    with Image.open(image_path) as img:
        pixels = np.asarray(img.convert("L"), dtype=np.float64)
    if pixels.size == 0:
        raise ValueError("map image is empty")
    darkness = (255.0 - pixels) / 255.0
    # image row 0 is the top of the map
    occupied = darkness[::-1] >= thresh
    return OccupancyGrid.from_occupancy(occupied, resolution, origin)


def save_grid(grid: OccupancyGrid, image_path, meta_path, occupied_thresh=0.65):
    pixels = np.where(grid.occupied[::-1], 0, 254).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(image_path)
    ox, oy, oth = grid.origin
    write_keyvalue(meta_path, {"resolution": grid.resolution, "origin_x": ox, "origin_y": oy,
                               "origin_theta": oth, "occupied_thresh": occupied_thresh})


def read_keyvalue(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key: value'")
        key, value = line.split(":", 1)
        out[key.strip()] = value.strip()
    return out


def write_keyvalue(path, values: dict):
    lines = [f"{k}: {v!r}" if isinstance(v, float) else f"{k}: {v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    theta: float
    v: float


@dataclass(frozen=True)
class Raceline:
    """Piecewise-linear global race line.

    ``cum_s[i]`` is the arc length at waypoint ``i``.  A closed raceline has an
    implicit segment from the last waypoint back to the first, included in
    ``total_length``.
    """

    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    v: np.ndarray
    cum_s: np.ndarray
    total_length: float
    closed: bool

    @classmethod
    def from_arrays(cls, x, y, theta, v, closed):
        arrs = [np.ascontiguousarray(a, dtype=np.float64) for a in (x, y, theta, v)]
        n = len(arrs[0])
        if n < 2:
            raise ValueError("a raceline needs at least 2 waypoints")
        if any(len(a) != n for a in arrs):
            raise ValueError("waypoint columns differ in length")
        if not all(np.isfinite(a).all() for a in arrs):
            raise ValueError("non-finite waypoint value")
        if (arrs[3] < 0).any():
            raise ValueError("waypoint velocity must be non-negative")
        seg = np.hypot(np.diff(arrs[0]), np.diff(arrs[1]))
        if (seg <= 0).any():
            raise ValueError("consecutive waypoints must be distinct")
        cum_s = np.concatenate([[0.0], np.cumsum(seg)])
        total = cum_s[-1]
        if closed:
            closing = math.hypot(arrs[0][0] - arrs[0][-1], arrs[1][0] - arrs[1][-1])
            if closing <= 0:
                raise ValueError("closed raceline must not repeat its first waypoint")
            total += closing
        for a in arrs + [cum_s]:
            a.setflags(write=False)
        return cls(*arrs, cum_s, float(total), bool(closed))

    @property
    def waypoints(self) -> list[Waypoint]:
        return [Waypoint(*map(float, row)) for row in zip(self.x, self.y, self.theta, self.v)]

    def __len__(self):
        return len(self.x)

    def kernel_args(self):
        return self.x, self.y, self.v, self.cum_s, self.total_length, self.closed

    def wrap(self, s):
        return s % self.total_length if self.closed else s

    def pose_at(self, s):
        """Interpolated ``(x, y, tangent heading, v)`` at arc length ``s``."""
        return _pose_at(self.x, self.y, self.v, self.cum_s, self.total_length, self.closed, s)

    def offset(self, d) -> "Raceline":
        """Lateral copy of this raceline shifted ``d`` meters to the left."""
        nx, ny = -np.sin(self.theta), np.cos(self.theta)
        return Raceline.from_arrays(self.x + d * nx, self.y + d * ny, self.theta, self.v, self.closed)


def load_raceline(csv_path, closed: bool) -> Raceline:
    """Read an ``x,y,theta,v`` CSV with header row."""
    csv_path = Path(csv_path)
    with csv_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["x", "y", "theta", "v"]:
            raise ValueError(f"{csv_path}: header must be x,y,theta,v, got {header}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ValueError(f"{csv_path}:{lineno}: expected 4 columns")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ValueError(f"{csv_path}:{lineno}: malformed number") from None
    if len(rows) < 2:
        raise ValueError("a raceline needs at least 2 waypoints")
    data = np.array(rows)
    return Raceline.from_arrays(data[:, 0], data[:, 1], data[:, 2], data[:, 3], closed)


def save_raceline(raceline: Raceline, csv_path):
    with Path(csv_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "theta", "v"])
        for row in zip(raceline.x, raceline.y, raceline.theta, raceline.v):
            w.writerow([repr(float(c)) for c in row])


@dataclass(frozen=True)
class FrenetPose:
    s: float
    d: float


def project(raceline: Raceline, point) -> FrenetPose:
    s, d, _ = _project(raceline.x, raceline.y, raceline.cum_s, raceline.total_length,
                       raceline.closed, float(point[0]), float(point[1]), 0, -1)
    return FrenetPose(s, d)


def progress_delta(raceline: Raceline, s_from, s_to):
    """Signed progress from ``s_from`` to ``s_to``, wrapping on closed tracks."""
    return _progress_delta(s_from, s_to, raceline.total_length, raceline.closed)


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _progress_delta(s_from, s_to, total, closed):
    raw = s_to - s_from
    if closed:
        if raw < -0.5 * total:
            raw += total
        elif raw > 0.5 * total:
            raw -= total
    return raw


@njit(cache=True)
def _grid_distance(dist, res, ox, oy, oth, x, y):
    c = math.cos(oth)
    s = math.sin(oth)
    dx = x - ox
    dy = y - oy
    col = int(math.floor((c * dx + s * dy) / res))
    row = int(math.floor((-s * dx + c * dy) / res))
    if row < 0 or col < 0 or row >= dist.shape[0] or col >= dist.shape[1]:
        return 0.0
    return dist[row, col]


@njit(cache=True)
def _segment(xs, ys, n, closed, i):
    j = i + 1
    if j == n:
        j = 0
    return xs[i], ys[i], xs[j], ys[j]


@njit(cache=True)
def _project(xs, ys, cum_s, total, closed, px, py, hint, window):
    """Closest point on the polyline.

    Searches all segments when ``window < 0``, else segments ``hint - window``
    .. ``hint + window`` (wrapping on closed lines).  Returns ``(s, d, seg)``;
    ties resolve to the smaller ``s``.
    """
    n = xs.shape[0]
    nseg = n if closed else n - 1
    if window < 0 or 2 * window + 1 >= nseg:
        start = 0
        count = nseg
    else:
        start = hint - window
        count = 2 * window + 1
    best_d2 = np.inf
    best_s = 0.0
    best_d = 0.0
    best_seg = 0
    for k in range(count):
        i = start + k
        if closed:
            i = i % nseg
        elif i < 0 or i >= nseg:
            continue
        x0, y0, x1, y1 = _segment(xs, ys, n, closed, i)
        ex = x1 - x0
        ey = y1 - y0
        seg_len2 = ex * ex + ey * ey
        t = ((px - x0) * ex + (py - y0) * ey) / seg_len2
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        qx = x0 + t * ex
        qy = y0 + t * ey
        d2 = (px - qx) ** 2 + (py - qy) ** 2
        seg_len = math.sqrt(seg_len2)
        s = cum_s[i] + t * seg_len
        if closed and s >= total:
            s -= total
        if d2 < best_d2 - 1e-18 or (abs(d2 - best_d2) <= 1e-18 and s < best_s):
            best_d2 = d2
            best_s = s
            cross = ex * (py - y0) - ey * (px - x0)
            best_d = math.sqrt(d2) if cross >= 0.0 else -math.sqrt(d2)
            best_seg = i
    return best_s, best_d, best_seg


@njit(cache=True)
def _locate(cum_s, total, closed, s):
    """Segment index and fractional position of arc length ``s``."""
    n = cum_s.shape[0]
    if closed:
        s = s % total
    else:
        if s < 0.0:
            s = 0.0
        if s > cum_s[n - 1]:
            s = cum_s[n - 1]
    i = np.searchsorted(cum_s, s, side="right") - 1
    if i < 0:
        i = 0
    if not closed and i >= n - 1:
        i = n - 2
    if i == n - 1:
        seg_len = total - cum_s[i]
    else:
        seg_len = cum_s[i + 1] - cum_s[i]
    return i, (s - cum_s[i]) / seg_len


@njit(cache=True)
def _pose_at(xs, ys, vs, cum_s, total, closed, s):
    n = xs.shape[0]
    i, t = _locate(cum_s, total, closed, s)
    j = i + 1
    if j == n:
        j = 0
    x = xs[i] + t * (xs[j] - xs[i])
    y = ys[i] + t * (ys[j] - ys[i])
    v = vs[i] + t * (vs[j] - vs[i])
    heading = math.atan2(ys[j] - ys[i], xs[j] - xs[i])
    return x, y, heading, v


@njit(cache=True)
def _speed_at(vs, cum_s, total, closed, s):
    n = vs.shape[0]
    i, t = _locate(cum_s, total, closed, s)
    j = i + 1
    if j == n:
        j = 0
    return vs[i] + t * (vs[j] - vs[i])

"""Generate the bundled tracks from closed parametric centerlines.

The raceline is the resampled centerline with a curvature-limited speed
profile; it stands in for a precomputed optimal race line.
"""

import numpy as np
from scipy.spatial import cKDTree

from ..track import OccupancyGrid, Raceline, save_grid, save_raceline
from . import MAP_DIR

HALF_WIDTH = 1.2
RESOLUTION = 0.05
SPACING = 0.1
V_CAP = 7.0
A_LAT = 7.0
A_ACC = 4.0
A_DEC = 6.0


def _centerline(name, phi):
    if name == "A":
        x = 12.0 * np.cos(phi) + 0.6 * np.cos(2 * phi)
        y = 7.0 * np.sin(phi) - 0.6 * np.sin(2 * phi)
    else:
        x = 11.0 * np.cos(phi) - 0.6 * np.cos(3 * phi)
        y = 8.5 * np.sin(phi) + 1.0 * np.sin(3 * phi)
    return x, y


def _resample(x, y, spacing):
    seg = np.hypot(np.diff(x, append=x[:1]), np.diff(y, append=y[:1]))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    n = int(round(total / spacing))
    t = np.linspace(0.0, total, n, endpoint=False)
    xx = np.interp(t, s, np.append(x, x[0]))
    yy = np.interp(t, s, np.append(y, y[0]))
    return xx, yy


def speed_profile(x, y):
    dx = np.gradient(np.append(np.append(x[-1], x), x[0]))[1:-1]
    dy = np.gradient(np.append(np.append(y[-1], y), y[0]))[1:-1]
    ddx = np.gradient(np.append(np.append(dx[-1], dx), dx[0]))[1:-1]
    ddy = np.gradient(np.append(np.append(dy[-1], dy), dy[0]))[1:-1]
    kappa = np.abs(dx * ddy - dy * ddx) / np.power(dx * dx + dy * dy, 1.5)
    v = np.minimum(V_CAP, np.sqrt(A_LAT / np.maximum(kappa, 1e-9)))
    ds = np.hypot(np.diff(x, append=x[:1]), np.diff(y, append=y[:1]))
    n = len(v)
    for _ in range(2):  # two laps settle the wrap-around
        for i in range(n):
            j = (i + 1) % n
            v[j] = min(v[j], np.sqrt(v[i] ** 2 + 2 * A_ACC * ds[i]))
        for i in range(n - 1, -1, -1):
            j = (i + 1) % n
            v[i] = min(v[i], np.sqrt(v[j] ** 2 + 2 * A_DEC * ds[i]))
    return v, kappa


def build(name):
    phi = np.linspace(0, 2 * np.pi, 20000, endpoint=False)
    cx, cy = _centerline(name, phi)
    x, y = _resample(cx, cy, SPACING)
    theta = np.arctan2(np.roll(y, -1) - np.roll(y, 1), np.roll(x, -1) - np.roll(x, 1))
    v, _ = speed_profile(x, y)
    line = Raceline.from_arrays(x, y, theta, v, closed=True)

    margin = HALF_WIDTH + 1.0
    ox, oy = cx.min() - margin, cy.min() - margin
    w = int(np.ceil((cx.max() + margin - ox) / RESOLUTION))
    h = int(np.ceil((cy.max() + margin - oy) / RESOLUTION))
    gx, gy = np.meshgrid(ox + (np.arange(w) + 0.5) * RESOLUTION, oy + (np.arange(h) + 0.5) * RESOLUTION)
    dist, _ = cKDTree(np.c_[cx, cy]).query(np.c_[gx.ravel(), gy.ravel()])
    occupied = (dist > HALF_WIDTH).reshape(h, w)
    grid = OccupancyGrid.from_occupancy(occupied, RESOLUTION, (ox, oy, 0.0))
    save_grid(grid, MAP_DIR / f"{name}.png", MAP_DIR / f"{name}.txt")
    save_raceline(line, MAP_DIR / f"{name}_raceline.csv")
    return grid, line


if __name__ == "__main__":
    for name in ("A", "B"):
        grid, line = build(name)
        print(name, grid.occupied.shape, f"length={line.total_length:.2f} m",
              f"v=[{line.v.min():.2f}, {line.v.max():.2f}] m/s")

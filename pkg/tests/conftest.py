import numpy as np
import pytest

from gtrace.rollout import Track, load_track
from gtrace.track import OccupancyGrid, Raceline

CORRIDOR_RES = 0.05


def corridor_track(length=80.0, width=3.0, speed=3.0, name="corridor"):
    """Straight walled corridor along +x with an open raceline down the middle."""
    h = int(round((width + 1.0) / CORRIDOR_RES))
    w = int(round((length + 10.0) / CORRIDOR_RES))
    occ = np.zeros((h, w), dtype=bool)
    wall = int(round(0.5 / CORRIDOR_RES))
    occ[:wall, :] = occ[-wall:, :] = True
    grid = OccupancyGrid.from_occupancy(occ, CORRIDOR_RES, (-5.0, -h * CORRIDOR_RES / 2, 0.0))
    x = np.linspace(0.0, length, 321)
    line = Raceline.from_arrays(x, np.zeros_like(x), np.zeros_like(x), np.full_like(x, speed), False)
    return Track.build(name, grid, line)


@pytest.fixture(scope="session")
def corridor():
    return corridor_track()


@pytest.fixture(scope="session")
def track_a():
    return load_track("A")

"""Bundled race tracks.

``A`` is used for every offline stage; ``B`` is held out as the unseen map.
Each track ships as ``<name>.png`` + ``<name>.txt`` (map metadata) and
``<name>_raceline.csv``.  Regenerate with ``python -m gtrace.maps.build``.
"""

from pathlib import Path

from ..track import load_grid, load_raceline

MAP_DIR = Path(__file__).resolve().parent
MAP_NAMES = ("A", "B")


def map_paths(name):
    if name not in MAP_NAMES:
        raise KeyError(f"unknown map {name!r}; choose from {MAP_NAMES}")
    return MAP_DIR / f"{name}.png", MAP_DIR / f"{name}.txt", MAP_DIR / f"{name}_raceline.csv"


def load_map(name):
    """Return ``(grid, raceline)`` for a bundled track."""
    image, meta, line = map_paths(name)
    return load_grid(image, meta), load_raceline(line, closed=True)

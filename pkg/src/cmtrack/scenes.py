"""Standard floor plans and walking paths used by tests and experiment scripts."""
from __future__ import annotations

import numpy as np

from .channel import Environment


def lawnmower(bounds, spacing: float, margin: float = 0.5) -> list[tuple[float, float]]:
    """Back-and-forth survey path over ``bounds`` with rows ``spacing`` apart."""
    xmin, ymin, xmax, ymax = bounds
    ys = np.arange(ymin + margin, ymax - margin + 1e-9, spacing)
    wp = []
    for i, y in enumerate(ys):
        row = [(xmin + margin, y), (xmax - margin, y)]
        wp.extend(row if i % 2 == 0 else row[::-1])
    return [(float(x), float(y)) for x, y in wp]


def open_room() -> Environment:
    """10 m x 8 m hall without obstacles; every link is line-of-sight."""
    return Environment.room(10.0, 8.0, [(0.5, 0.5), (9.5, 0.5), (5.0, 7.5)])


def open_room_path() -> list[tuple[float, float]]:
    return [(2.0, 2.0), (8.0, 2.0), (8.0, 6.0), (5.0, 4.0), (2.0, 6.0), (2.0, 2.0), (7.0, 3.0)]


# two long shelves forming an aisle; deep inside it every anchor is blocked
AISLE_SHELVES = [(11.0, 6.0, 18.0, 6.6), (11.0, 10.0, 18.0, 10.6)]


def shelf_hall() -> Environment:
    """20 m x 14 m hall with a shelf aisle in its right half."""
    return Environment.room(20.0, 14.0, [(0.5, 0.5), (19.5, 0.5), (10.0, 13.5)],
                            obstacles=AISLE_SHELVES)


def shelf_hall_path() -> list[tuple[float, float]]:
    """Loop that walks the aisle twice, turning in the gap behind the shelves.

    Blocked stretches stay close to the shelves, where a proximity-based
    survey still has data.
    """
    return [(3.0, 3.0), (9.0, 3.0), (9.5, 8.3), (19.0, 8.3), (19.0, 4.5), (10.0, 4.5),
            (10.0, 8.3), (19.0, 8.3), (19.0, 12.0), (11.5, 12.0), (9.5, 10.5), (8.0, 6.0),
            (6.0, 3.0), (3.0, 3.0)]


SCENES = {
    "open_room": (open_room, open_room_path),
    "shelf_hall": (shelf_hall, shelf_hall_path),
}


def load_scene(name: str):
    """``(environment, walking path)`` of a named scene."""
    if name not in SCENES:
        raise KeyError(f"unknown scene {name!r}; known: {sorted(SCENES)}")
    env_fn, path_fn = SCENES[name]
    return env_fn(), path_fn()

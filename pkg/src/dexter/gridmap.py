"""Occupancy grid with named feature/station locations and travel times.

Cells are (x, y) integer pairs; movement is 4-connected over free,
explored cells.  Travel time is shortest path length in cells times the
cell size, divided by the robot velocity; unreachable pairs come back as
infinity.  Features and stations are keyed by kind and may have several
instances, so callers can pick the nearest one.
"""

from __future__ import annotations

import math
from typing import Optional

Cell = tuple[int, int]


class UnknownCell(Exception):
    """Endpoint is unexplored (or outside the grid)."""


class GridMap:
    def __init__(
        self,
        width: int,
        height: int,
        cell_m: float = 1.0,
        obstacles: Optional[set[Cell]] = None,
        unknown: Optional[set[Cell]] = None,
    ):
        if width <= 0 or height <= 0 or cell_m <= 0:
            raise ValueError("grid dimensions and cell size must be positive")
        self.width = width
        self.height = height
        self.cell_m = cell_m
        self.obstacles: set[Cell] = set(obstacles or ())
        self.unknown: set[Cell] = set(unknown or ())
        self.features: dict[str, list[Cell]] = {}
        self.stations: dict[str, list[Cell]] = {}
        self._version = 0
        self._dist_cache: dict[tuple[int, Cell], dict[Cell, int]] = {}

    def copy(self) -> "GridMap":
        g = GridMap(self.width, self.height, self.cell_m,
                    set(self.obstacles), set(self.unknown))
        g.features = {k: list(v) for k, v in self.features.items()}
        g.stations = {k: list(v) for k, v in self.stations.items()}
        return g

    def in_bounds(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and cell not in self.obstacles

    def is_explored(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and cell not in self.unknown

    def explore(self, cells) -> None:
        before = len(self.unknown)
        self.unknown.difference_update(cells)
        if len(self.unknown) != before:
            self._bump()

    def add_feature(self, kind: str, cell: Cell) -> bool:
        """Record one feature instance; returns False on a duplicate."""
        cells = self.features.setdefault(kind, [])
        if cell in cells:
            return False
        cells.append(cell)
        cells.sort()
        self._bump()
        return True

    def add_station(self, kind: str, cell: Cell) -> bool:
        cells = self.stations.setdefault(kind, [])
        if cell in cells:
            return False
        cells.append(cell)
        cells.sort()
        self._bump()
        return True

    def locations_of(self, name: str) -> list[Cell]:
        """Instances of a feature or station kind, sorted."""
        return list(self.features.get(name, [])) + list(self.stations.get(name, []))

    def _bump(self) -> None:
        self._version += 1
        self._dist_cache.clear()

    def _distances_from(self, src: Cell) -> dict[Cell, int]:
        key = (self._version, src)
        cached = self._dist_cache.get(key)
        if cached is not None:
            return cached
        dist = {src: 0}
        frontier = [src]
        while frontier:
            nxt = []
            for (x, y) in frontier:
                d = dist[(x, y)]
                for cell in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                    if (
                        cell not in dist
                        and self.is_free(cell)
                        and self.is_explored(cell)
                    ):
                        dist[cell] = d + 1
                        nxt.append(cell)
            frontier = nxt
        self._dist_cache[key] = dist
        return dist

    def shortest_path(self, src: Cell, dst: Cell) -> Optional[list[Cell]]:
        """Cells from src to dst inclusive, or None when unreachable."""
        dist = self._distances_from(src)
        if dst not in dist:
            return None
        path = [dst]
        cur = dst
        while cur != src:
            x, y = cur
            for cell in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)):
                if dist.get(cell, -1) == dist[cur] - 1:
                    path.append(cell)
                    cur = cell
                    break
        path.reverse()
        return path


def travel_time(grid: GridMap, src: Cell, dst: Cell, velocity: float) -> float:
    """Seconds to move between two explored free cells at ``velocity``.

    Raises UnknownCell for unexplored endpoints; returns infinity when no
    4-connected path over explored free cells exists.
    """
    if velocity <= 0:
        raise ValueError("velocity must be positive")
    for cell in (src, dst):
        if not grid.in_bounds(cell) or not grid.is_explored(cell):
            raise UnknownCell(f"cell {cell} is not explored")
        if not grid.is_free(cell):
            raise ValueError(f"cell {cell} is an obstacle")
    if src == dst:
        return 0.0
    steps = grid._distances_from(src).get(dst)
    if steps is None:
        return math.inf
    return steps * grid.cell_m / velocity


def grid_from_obj(data: dict) -> GridMap:
    grid = GridMap(
        width=data["width"],
        height=data["height"],
        cell_m=data.get("cell_m", 1.0),
        obstacles={tuple(c) for c in data.get("obstacles", [])},
        unknown={tuple(c) for c in data.get("unknown", [])},
    )
    for kind, cells in data.get("features", {}).items():
        for cell in cells:
            grid.add_feature(kind, tuple(cell))
    for kind, cells in data.get("stations", {}).items():
        for cell in cells:
            grid.add_station(kind, tuple(cell))
    return grid

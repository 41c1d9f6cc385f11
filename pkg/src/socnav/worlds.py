"""Desk-scale scenes: a grid of walkways for imitation data and a U-shaped
walkway around a lawn whose straight-line crossing is a non-compliant
shortcut."""

from __future__ import annotations

import numpy as np

from .grid_world import SemanticGrid
from .planner import RoadNetwork, build_road_graph

RESOLUTION = 0.5


def _carve(blocked: np.ndarray, x0: float, x1: float, y0: float, y1: float, res: float) -> None:
    c0, c1 = int(round(x0 / res)), int(round(x1 / res))
    r0, r1 = int(round(y0 / res)), int(round(y1 / res))
    blocked[r0:r1, c0:c1] = False


def corridor_world(size_m: float = 40.0, lanes=(6.0, 20.0, 34.0), width_m: float = 3.0,
                   res: float = RESOLUTION) -> tuple[SemanticGrid, RoadNetwork]:
    """Square grid of straight walkways; nodes at every intersection."""
    n = int(round(size_m / res))
    blocked = np.ones((n, n), dtype=bool)
    lo, hi = lanes[0] - width_m / 2, lanes[-1] + width_m / 2
    for c in lanes:
        _carve(blocked, c - width_m / 2, c + width_m / 2, lo, hi, res)
        _carve(blocked, lo, hi, c - width_m / 2, c + width_m / 2, res)
    grid = SemanticGrid(blocked, res)
    k = len(lanes)
    nodes = [(x, y) for y in lanes for x in lanes]
    edges = []
    for r in range(k):
        for c in range(k):
            i = r * k + c
            if c + 1 < k:
                edges.append((i, i + 1))
            if r + 1 < k:
                edges.append((i, i + k))
    return grid, build_road_graph(grid, nodes, edges)


def shortcut_world(width: float = 26.0, height: float = 22.0, walk_m: float = 3.0,
                   res: float = RESOLUTION) -> tuple[SemanticGrid, RoadNetwork]:
    """U-shaped walkway (left, top, right arms) around a central lawn.

    Start/goal pairs on opposite arms tempt a straight walk across the lawn;
    the compliant route goes around through the top arm.
    """
    nx, ny = int(round(width / res)), int(round(height / res))
    blocked = np.ones((ny, nx), dtype=bool)
    m = 1.0
    left_c, right_c = m + walk_m / 2, width - m - walk_m / 2
    top_c = height - m - walk_m / 2
    bottom = m
    _carve(blocked, m, m + walk_m, bottom, height - m, res)
    _carve(blocked, width - m - walk_m, width - m, bottom, height - m, res)
    _carve(blocked, m, width - m, height - m - walk_m, height - m, res)
    grid = SemanticGrid(blocked, res)
    y_end = bottom + walk_m / 2
    nodes = [(left_c, y_end), (left_c, (y_end + top_c) / 2), (left_c, top_c),
             ((left_c + right_c) / 2, top_c),
             (right_c, top_c), (right_c, (y_end + top_c) / 2), (right_c, y_end)]
    edges = [(i, i + 1) for i in range(len(nodes) - 1)]
    return grid, build_road_graph(grid, nodes, edges)


WORLDS = {"corridor": corridor_world, "shortcut": shortcut_world}

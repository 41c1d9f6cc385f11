"""Non-reactive pedestrians that walk shortest routes on the road network."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NoPath
from .grid_world import DistanceField, SemanticGrid, distance_transform
from .planner import (
    RoadNetwork,
    Trajectory,
    TrajectoryKind,
    arc_lengths,
    astar_node_path,
    make_rng,
    point_at_arc,
    segment_is_clear,
)

PEDESTRIAN_RADIUS = 0.3
SPEED_MEAN = 1.0
SPEED_STD = 0.2
SPEED_MIN = 0.4
SPEED_MAX = 1.6
MAX_PER_100M = 6
BAND = (0.5, 1.0)


@dataclass(frozen=True, eq=False)
class Pedestrian:
    position: np.ndarray
    speed: float
    route: Trajectory
    route_progress: float = 0.0
    route_nodes: tuple[int, ...] = ()
    """Road-network node indices visited by ``route`` (the last one is the current goal)."""


def sample_speeds(rng, n: int) -> np.ndarray:
    """Normal(1.0, 0.2) m/s truncated to [0.4, 1.6] by rejection."""
    rng = make_rng(rng)
    out = np.empty(n)
    filled = 0
    while filled < n:
        draw = rng.normal(SPEED_MEAN, SPEED_STD, size=n - filled)
        draw = draw[(draw >= SPEED_MIN) & (draw <= SPEED_MAX)]
        out[filled:filled + len(draw)] = draw
        filled += len(draw)
    return out


def max_pedestrians(path_length_m: float) -> int:
    return int(math.floor(MAX_PER_100M * path_length_m / 100.0 + 1e-9))


def _closest_on_edges(net: RoadNetwork, p: np.ndarray):
    """Closest point on any edge: (point, edge index, fraction along the edge)."""
    best = None
    for k, (i, j) in enumerate(net.edges):
        a, b = net.nodes[i], net.nodes[j]
        ab = b - a
        t = float(np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0))
        q = a + t * ab
        d = float(np.linalg.norm(p - q))
        if best is None or d < best[0]:
            best = (d, q, k, t)
    return best[1], best[2], best[3]


def _route_points(net: RoadNetwork, node_path: list[int], lead=()) -> np.ndarray:
    pts = [np.asarray(p, dtype=float) for p in lead] + [net.nodes[i] for i in node_path]
    out = [pts[0]]
    for p in pts[1:]:
        if np.linalg.norm(p - out[-1]) > 1e-9:
            out.append(p)
    return np.array(out)


def _new_route(net: RoadNetwork, at_node: int, rng: np.random.Generator):
    """Shortest route from ``at_node`` to a random reachable node, or None."""
    candidates = [k for k in range(net.n_nodes) if k != at_node]
    order = rng.permutation(len(candidates))
    for idx in order[:16]:
        goal = candidates[int(idx)]
        try:
            path, _ = astar_node_path(net, at_node, goal)
        except NoPath:
            continue
        pts = net.nodes[path]
        route = Trajectory(pts, TrajectoryKind.STANDARD, pts[0], pts[-1])
        return route, tuple(path)
    return None


def spawn_pedestrians(grid: SemanticGrid, net: RoadNetwork, path_length_m: float, rng,
                      field: DistanceField | None = None,
                      density_per_100m: float = MAX_PER_100M) -> list[Pedestrian]:
    """Place pedestrians in the 0.5-1.0 m clearance band next to walkway borders.

    Each one first walks straight to the nearest road-network edge and then
    follows a shortest route to a random node.  At most
    ``floor(6 * path_length_m / 100)`` are spawned; fewer if placement fails.
    """
    if path_length_m <= 0:
        raise ValueError("path_length_m must be positive")
    rng = make_rng(rng)
    if field is None:
        field = distance_transform(grid)
    cap = max_pedestrians(path_length_m)
    target = min(cap, int(math.floor(min(density_per_100m, MAX_PER_100M) * path_length_m / 100.0 + 1e-9)))
    if target == 0 or net.n_nodes < 2 or not net.edges:
        return []
    vals = field.values
    band = (~grid.blocked) & (vals >= BAND[0]) & (vals <= BAND[1])
    rows, cols = np.nonzero(band)
    if len(rows) == 0:
        return []
    order = rng.permutation(len(rows))
    peds = []
    for idx in order:
        if len(peds) >= target:
            break
        pos = grid.cell_center(int(rows[idx]), int(cols[idx]))
        q, k, t = _closest_on_edges(net, pos)
        if not segment_is_clear(grid, pos, q):
            continue
        i, j = net.edges[k]
        first = i if t < 0.5 else j
        nxt = _new_route(net, first, rng)
        if nxt is None:
            continue
        _, node_path = nxt
        pts = _route_points(net, list(node_path), lead=(pos, q))
        if len(pts) < 2:
            continue
        route = Trajectory(pts, TrajectoryKind.STANDARD, pts[0], pts[-1])
        speed = float(sample_speeds(rng, 1)[0])
        peds.append(Pedestrian(pos, speed, route, 0.0, node_path))
    return peds


def _advance(ped: Pedestrian, distance: float, net: RoadNetwork,
             rng: np.random.Generator) -> Pedestrian:
    route, progress, nodes = ped.route, ped.route_progress + distance, ped.route_nodes
    total = arc_lengths(route.points)[-1]
    hops = 0
    while progress >= total and hops < 64:
        remainder = progress - total
        nxt = _new_route(net, nodes[-1], rng) if nodes else None
        if nxt is None:
            return replace(ped, position=route.points[-1].copy(), route_progress=total)
        route, nodes = nxt
        total = arc_lengths(route.points)[-1]
        progress = remainder
        hops += 1
    return replace(ped, position=point_at_arc(route.points, progress), route=route,
                   route_progress=progress, route_nodes=nodes)


def step_pedestrians(peds: list[Pedestrian], dt: float, net: RoadNetwork, rng) -> list[Pedestrian]:
    """Advance every pedestrian ``speed * dt`` meters of arc length.

    A pedestrian that finishes its route draws a new random goal and spends
    the leftover distance on the new route.  Robots are ignored entirely.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    rng = make_rng(rng)
    if dt == 0:
        return list(peds)
    return [_advance(p, p.speed * dt, net, rng) for p in peds]


def positions(peds: list[Pedestrian]) -> np.ndarray:
    if not peds:
        return np.zeros((0, 2))
    return np.array([p.position for p in peds])

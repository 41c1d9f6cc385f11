"""Road-network graph, A* routing and expert trajectory synthesis.

Standard trajectories are A* shortest paths between sampled road-network
nodes, densified to a fixed waypoint spacing.  Recovery trajectories start
from a laterally displaced, misaligned pose and merge back into the
standard path a fixed distance ahead of its start.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateQuery,
    EdgeBlocked,
    NodeOffRoad,
    NoFeasiblePair,
    NoPath,
    NoValidRecovery,
    ParseError,
    ValidationError,
)
from .grid_world import (
    DistanceField,
    SemanticGrid,
    clearance_many,
    distance_transform,
    traversable_many,
)

EDGE_CHECK_STEP = 0.05
WAYPOINT_SPACING = 0.25
L_MIN = 50.0


def make_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


class TrajectoryKind(str, Enum):
    STANDARD = "standard"
    RECOVERY = "recovery"
    ROLLOUT = "rollout"


@dataclass(frozen=True, eq=False)
class Trajectory:
    points: np.ndarray
    kind: TrajectoryKind
    start: np.ndarray
    goal: np.ndarray
    seed: int | None = None
    initial_heading_deg: float | None = None
    """Initial heading relative to the path-forward direction (recovery only)."""

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        if len(pts) < 2:
            raise ValidationError("a trajectory needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("trajectory points must be finite")
        kind = TrajectoryKind(self.kind)
        # rollouts come straight from a sampler and may legitimately stand still
        if kind is not TrajectoryKind.ROLLOUT:
            steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            if np.any(steps == 0.0):
                raise ValidationError("consecutive trajectory points must be distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "start", np.array(self.start, dtype=float))
        object.__setattr__(self, "goal", np.array(self.goal, dtype=float))

    def __len__(self):
        return len(self.points)

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())

    def to_record(self) -> dict:
        rec = {
            "kind": self.kind.value,
            "points": self.points.tolist(),
            "start": self.start.tolist(),
            "goal": self.goal.tolist(),
            "seed": self.seed,
        }
        if self.initial_heading_deg is not None:
            rec["initial_heading_deg"] = self.initial_heading_deg
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Trajectory":
        return cls(
            points=rec["points"],
            kind=rec["kind"],
            start=rec["start"],
            goal=rec["goal"],
            seed=rec.get("seed"),
            initial_heading_deg=rec.get("initial_heading_deg"),
        )


def write_trajectories(trajs, path, extra: dict | None = None) -> None:
    with open(path, "w") as fh:
        for traj in trajs:
            rec = traj.to_record()
            if extra:
                rec.update(extra)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_trajectories(path) -> list[Trajectory]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(Trajectory.from_record(json.loads(line)))
    return out


# ------------------------------------------------------------------ polylines

def arc_lengths(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def point_at_arc(points: np.ndarray, s: float) -> np.ndarray:
    """Point at arc length ``s`` along a polyline (clamped to its ends)."""
    cum = arc_lengths(points)
    if s <= 0:
        return points[0].copy()
    if s >= cum[-1]:
        return points[-1].copy()
    i = int(np.searchsorted(cum, s, side="right")) - 1
    seg = cum[i + 1] - cum[i]
    frac = (s - cum[i]) / seg if seg > 0 else 0.0
    return points[i] + frac * (points[i + 1] - points[i])


def densify(points: np.ndarray, spacing: float) -> np.ndarray:
    """Resample a polyline at multiples of ``spacing``, always keeping the end point."""
    points = np.asarray(points, dtype=float)
    cum = arc_lengths(points)
    total = cum[-1]
    if total == 0:
        return points[:1].copy()
    n = int(math.floor(total / spacing + 1e-9))
    s = np.arange(n + 1) * spacing
    x = np.interp(s, cum, points[:, 0])
    y = np.interp(s, cum, points[:, 1])
    out = np.column_stack([x, y])
    if total - s[-1] > 1e-9:
        out = np.vstack([out, points[-1]])
    else:
        out[-1] = points[-1]
    return out


def resample(points: np.ndarray, n: int) -> np.ndarray:
    """Arc-length resampling to exactly ``n`` points."""
    points = np.asarray(points, dtype=float)
    cum = arc_lengths(points)
    if cum[-1] == 0:
        return np.repeat(points[:1], n, axis=0)
    s = np.linspace(0.0, cum[-1], n)
    return np.column_stack([np.interp(s, cum, points[:, 0]), np.interp(s, cum, points[:, 1])])


def segment_is_clear(grid: SemanticGrid, a, b, step: float = EDGE_CHECK_STEP) -> bool:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = max(int(math.ceil(np.linalg.norm(b - a) / step)), 1)
    ts = np.linspace(0.0, 1.0, n + 1)[:, None]
    return bool(traversable_many(grid, a + ts * (b - a)).all())


# --------------------------------------------------------------- road network

@dataclass(frozen=True, eq=False)
class RoadNetwork:
    grid: SemanticGrid
    nodes: np.ndarray
    edges: tuple[tuple[int, int], ...]
    lengths: tuple[float, ...]
    disconnected: bool = False
    adjacency: tuple = field(default=(), repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def total_length(self) -> float:
        return float(sum(self.lengths))

    def neighbors(self, i: int):
        return self.adjacency[i]


def build_road_graph(grid: SemanticGrid, nodes, edges) -> RoadNetwork:
    """Validate nodes/edges against the grid and build an undirected graph.

    Raises :class:`NodeOffRoad` for nodes on NonTraversable cells and
    :class:`EdgeBlocked` for edges whose straight segment leaves the
    traversable area.  A disconnected graph is allowed; ``disconnected`` is set.
    """
    pts = np.array(nodes, dtype=float).reshape(-1, 2)
    ok = traversable_many(grid, pts)
    if not ok.all():
        bad = int(np.flatnonzero(~ok)[0])
        raise NodeOffRoad(f"node {bad} at {pts[bad].tolist()} is not on a traversable cell")
    adj = [[] for _ in range(len(pts))]
    clean_edges = []
    lengths = []
    seen = set()
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if not (0 <= i < len(pts) and 0 <= j < len(pts)) or i == j:
            raise ValidationError(f"invalid edge {list(e)}")
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        length = float(np.linalg.norm(pts[i] - pts[j]))
        if length <= 0:
            raise ValidationError(f"edge {list(e)} has zero length")
        if not segment_is_clear(grid, pts[i], pts[j]):
            raise EdgeBlocked(f"edge {i}-{j} crosses a non-traversable cell")
        seen.add(key)
        clean_edges.append((i, j))
        lengths.append(length)
        adj[i].append((j, length))
        adj[j].append((i, length))
    pts.setflags(write=False)
    net = RoadNetwork(grid, pts, tuple(clean_edges), tuple(lengths),
                      adjacency=tuple(tuple(a) for a in adj))
    comps = _components(net)
    if len(set(comps)) > 1:
        net = RoadNetwork(grid, pts, net.edges, net.lengths, True, net.adjacency)
    return net


def _components(net: RoadNetwork) -> list[int]:
    label = [-1] * net.n_nodes
    for root in range(net.n_nodes):
        if label[root] >= 0:
            continue
        label[root] = root
        stack = [root]
        while stack:
            u = stack.pop()
            for v, _ in net.adjacency[u]:
                if label[v] < 0:
                    label[v] = root
                    stack.append(v)
    return label


def network_from_dict(grid: SemanticGrid, data: dict, source: str = "road network") -> RoadNetwork:
    try:
        nodes, edges = data["nodes"], data["edges"]
        nodes = np.array(nodes, dtype=float).reshape(-1, 2)
        edges = [(int(e[0]), int(e[1])) for e in edges]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ParseError(f"{source}: malformed road network ({exc})") from exc
    return build_road_graph(grid, nodes, edges)


def load_network(grid: SemanticGrid, path) -> RoadNetwork:
    try:
        data = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: malformed road network ({exc})") from exc
    return network_from_dict(grid, data, str(path))


def network_to_dict(net: RoadNetwork) -> dict:
    return {"nodes": net.nodes.tolist(), "edges": [list(e) for e in net.edges]}


def save_network(net: RoadNetwork, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net)) + "\n")


def astar_node_path(net: RoadNetwork, s: int, g: int) -> tuple[list[int], float]:
    """A* over the road network with the straight-line heuristic."""
    if not (0 <= s < net.n_nodes and 0 <= g < net.n_nodes):
        raise ValidationError(f"node index out of range: {s}, {g}")
    if s == g:
        raise DegenerateQuery("start and goal are the same node")
    goal = net.nodes[g]

    def h(i):
        return math.hypot(*(net.nodes[i] - goal))

    best = {s: 0.0}
    parent = {s: None}
    closed = set()
    heap = [(h(s), 0.0, s)]
    while heap:
        _, cost, u = heapq.heappop(heap)
        if u in closed:
            continue
        if u == g:
            path = [u]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1], cost
        closed.add(u)
        for v, w in net.adjacency[u]:
            nc = cost + w
            if nc < best.get(v, math.inf):
                best[v] = nc
                parent[v] = u
                heapq.heappush(heap, (nc + h(v), nc, v))
    raise NoPath(f"no path between nodes {s} and {g}")


def astar_shortest_path(net: RoadNetwork, s: int, g: int) -> Trajectory:
    path, _ = astar_node_path(net, s, g)
    pts = net.nodes[path]
    return Trajectory(pts, TrajectoryKind.STANDARD, pts[0], pts[-1])


def sample_standard_trajectory(net: RoadNetwork, rng, l_min: float = L_MIN,
                               spacing: float = WAYPOINT_SPACING,
                               max_attempts: int = 10_000) -> Trajectory:
    """Sample node pairs uniformly until their geodesic distance reaches ``l_min``."""
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = make_rng(rng)
    if net.n_nodes < 2:
        raise NoFeasiblePair("network has fewer than two nodes")
    for _ in range(max_attempts):
        s, g = (int(v) for v in rng.integers(0, net.n_nodes, size=2))
        if s == g:
            continue
        try:
            path, cost = astar_node_path(net, s, g)
        except NoPath:
            continue
        if cost >= l_min:
            pts = densify(net.nodes[path], spacing)
            return Trajectory(pts, TrajectoryKind.STANDARD, pts[0], pts[-1], seed=seed)
    raise NoFeasiblePair(f"no node pair with geodesic distance >= {l_min} m "
                         f"after {max_attempts} attempts")


@dataclass(frozen=True)
class RecoveryParams:
    converge_ahead_m: float = 5.0
    offset_min_m: float = 0.5
    offset_max_m: float = 2.0
    heading_min_deg: float = 45.0
    heading_max_deg: float = 90.0
    step_m: float = 0.05
    noise_std_m: float = 0.01
    clearance_margin_m: float = 0.1
    max_retries: int = 100


def _rotate(v: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def recovery_segment(s_rec, heading_dir, p_conv, step: float, noise, ) -> np.ndarray:
    """Dense start segment: one step along the heading, then a chord to ``p_conv``.

    ``noise`` has one row per interior chord point and is added verbatim.
    """
    s_rec = np.asarray(s_rec, dtype=float)
    q_head = s_rec + step * np.asarray(heading_dir, dtype=float)
    n = chord_steps(q_head, p_conv, step)
    ts = (np.arange(1, n) / n)[:, None]
    interior = q_head + ts * (np.asarray(p_conv) - q_head) + noise[: n - 1]
    return np.vstack([s_rec, q_head, interior, p_conv])


def chord_steps(a, b, step: float) -> int:
    return max(int(round(float(np.linalg.norm(np.asarray(b) - np.asarray(a))) / step)), 1)


def sample_recovery_trajectory(standard: Trajectory, grid: SemanticGrid, rng,
                               params: RecoveryParams = RecoveryParams(),
                               field: DistanceField | None = None) -> Trajectory:
    """Build a recovery trajectory that merges into ``standard``.

    Left offsets get a heading in [-90, -45] degrees relative to path-forward,
    right offsets [45, 90] (angles counter-clockwise positive).  The first
    step follows that heading; the rest is a noisy 5 cm chord to the
    convergence point, followed by the remainder of the standard path.
    """
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = make_rng(rng)
    pts = standard.points
    cum = arc_lengths(pts)
    if cum[-1] < params.converge_ahead_m:
        raise ValidationError("standard trajectory is shorter than the convergence distance")
    if field is None:
        field = distance_transform(grid)
    p_conv = point_at_arc(pts, params.converge_ahead_m)
    tail = pts[cum > params.converge_ahead_m + 1e-9]
    forward = pts[1] - pts[0]
    forward = forward / np.linalg.norm(forward)
    left = np.array([-forward[1], forward[0]])

    for _ in range(params.max_retries):
        side = 1.0 if rng.random() < 0.5 else -1.0
        magnitude = rng.uniform(params.offset_min_m, params.offset_max_m)
        angle = rng.uniform(params.heading_min_deg, params.heading_max_deg)
        heading_deg = -angle if side > 0 else angle
        s_rec = pts[0] + side * magnitude * left
        heading_dir = _rotate(forward, math.radians(heading_deg))
        q_head = s_rec + params.step_m * heading_dir
        n = chord_steps(q_head, p_conv, params.step_m)
        noise = rng.standard_normal((max(n - 1, 0), 2)) * params.noise_std_m
        seg = recovery_segment(s_rec, heading_dir, p_conv, params.step_m, noise)
        full = np.vstack([seg, tail])
        if np.any(np.linalg.norm(np.diff(full, axis=0), axis=1) == 0):
            continue
        if not traversable_many(grid, full).all():
            continue
        if np.any(clearance_many(field, full) < params.clearance_margin_m):
            continue
        return Trajectory(full, TrajectoryKind.RECOVERY, s_rec, standard.goal,
                          seed=seed, initial_heading_deg=float(heading_deg))
    raise NoValidRecovery(f"no valid recovery trajectory after {params.max_retries} retries")

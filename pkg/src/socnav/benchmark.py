"""Closed-loop episodes: holonomic disc robot, receding-horizon flow policy,
non-reactive pedestrians, debounced collision counting."""

from __future__ import annotations

import functools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InfeasibleScene
from .grid_world import (
    DistanceField,
    SemanticGrid,
    disc_hits_blocked,
    distance_transform,
    is_traversable,
)
from .metrics import (
    MAX_COLLISIONS,
    SUCCESS_RADIUS_M,
    EpisodeResult,
    LatticeGeodesic,
    dcr_tcr_terms,
    rc,
    spl_terms,
    success,
    summarize,
)
from .pedestrians import PEDESTRIAN_RADIUS, MAX_PER_100M, positions, spawn_pedestrians, step_pedestrians
from .planner import RoadNetwork, Trajectory, TrajectoryKind
from .policy import FlowPolicy, build_context, sample_ode

ROBOT_RADIUS = 0.3
MAX_SPEED = 1.0
DT = 0.25
BUCKETS_M = (20.0, 100.0)
PAIRS_PER_BUCKET = 10


@functools.lru_cache(maxsize=16)
def scene_field(grid: SemanticGrid) -> DistanceField:
    return distance_transform(grid)


@functools.lru_cache(maxsize=16)
def scene_lattice(grid: SemanticGrid) -> LatticeGeodesic:
    return LatticeGeodesic(grid)


@dataclass
class EpisodeConfig:
    grid: SemanticGrid
    net: RoadNetwork
    start: np.ndarray
    goal: np.ndarray
    max_steps: int = 200
    dt: float = DT
    replan_period: int = 1
    robot_radius: float = ROBOT_RADIUS
    pedestrian_seed: int = 0
    policy_seed: int = 0
    max_speed: float = MAX_SPEED
    pedestrian_density: float = MAX_PER_100M
    record_log: bool = False

    def validate(self) -> None:
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if self.replan_period < 1:
            raise ConfigError("replan_period must be >= 1")
        for name in ("start", "goal"):
            if not is_traversable(self.grid, getattr(self, name)):
                raise ConfigError(f"{name} {list(getattr(self, name))} is not traversable")


def run_episode(policy: FlowPolicy, cfg: EpisodeConfig) -> EpisodeResult:
    """Drive the robot with ``policy`` until success, three collisions or ``max_steps``.

    Every ``replan_period`` steps a chunk is sampled with the ODE sampler;
    the robot executes one waypoint per step, clipped to ``max_speed * dt``.
    Distance and time are compliant when the step midpoint lies on a
    Traversable cell.  Contact with a NonTraversable cell or a pedestrian
    counts as one collision per contiguous contact.
    """
    cfg.validate()
    grid, net = cfg.grid, cfg.net
    field_ = scene_field(grid)
    start = np.asarray(cfg.start, dtype=float)
    goal = np.asarray(cfg.goal, dtype=float)
    noise_rng = np.random.default_rng(cfg.policy_seed)
    ped_rng = np.random.default_rng(cfg.pedestrian_seed)
    peds = spawn_pedestrians(grid, net, max(net.total_length(), 1e-9), ped_rng, field_,
                             density_per_100m=cfg.pedestrian_density)
    pos = start.copy()
    history = [pos.copy()]
    path = [pos.copy()]
    d_actual = d_compliant = t_actual = t_compliant = 0.0
    collisions = 0
    in_contact = False
    max_step = cfg.max_speed * cfg.dt
    log = []
    chunk, chunk_i = None, 0
    steps = 0
    for step in range(cfg.max_steps):
        if np.linalg.norm(pos - goal) <= SUCCESS_RADIUS_M:
            break
        if chunk is None or chunk_i >= min(cfg.replan_period, len(chunk)):
            ctx = build_context(field_, history, goal, policy.cfg)
            chunk, chunk_i = sample_ode(policy, ctx, noise_rng), 0
        disp = np.array(chunk[chunk_i], dtype=float)
        chunk_i += 1
        norm = float(np.linalg.norm(disp))
        if norm > max_step:
            disp *= max_step / norm
            norm = max_step
        new = pos + disp
        compliant = is_traversable(grid, 0.5 * (pos + new))
        d_actual += norm
        t_actual += cfg.dt
        if compliant:
            d_compliant += norm
            t_compliant += cfg.dt
        peds = step_pedestrians(peds, cfg.dt, net, ped_rng)
        ped_pos = positions(peds)
        contact = disc_hits_blocked(grid, new, cfg.robot_radius)
        if not contact and len(ped_pos):
            gap = np.linalg.norm(ped_pos - new, axis=1).min()
            contact = bool(gap < cfg.robot_radius + PEDESTRIAN_RADIUS)
        if contact and not in_contact:
            collisions += 1
        in_contact = contact
        pos = new
        history.append(pos.copy())
        history = history[-(policy.cfg.history + 1):]
        path.append(pos.copy())
        steps = step + 1
        if cfg.record_log:
            log.append({
                "step": steps,
                "pose": pos.tolist(),
                "action": disp.tolist(),
                "pedestrians": ped_pos.tolist(),
                "compliant": bool(compliant),
                "collisions": collisions,
            })
        if collisions >= MAX_COLLISIONS:
            break
    lattice = scene_lattice(grid)
    from_start = lattice.distances_from(start)
    g_sg = float(from_start[lattice.node_of(goal)])
    g_sf = float(from_start[lattice.node_of(pos)])
    g_rem = lattice.distance(pos, goal)
    pts = np.array(path)
    traj = Trajectory(pts if len(pts) > 1 else np.vstack([pts, pts]), TrajectoryKind.ROLLOUT, start, goal)
    ok = success(None, goal, pos, collisions=collisions)
    return EpisodeResult(ok, traj, collisions, d_actual, min(d_compliant, d_actual), t_actual,
                         min(t_compliant, t_actual), g_sg, g_rem, g_sf, steps, log)


# ------------------------------------------------------------------ benchmark

@dataclass
class Case:
    scene: int
    index: int
    bucket_m: float
    start: np.ndarray
    goal: np.ndarray
    geodesic_m: float
    pedestrian_seed: int
    policy_seed: int

    def to_dict(self) -> dict:
        return {"scene": self.scene, "index": self.index, "bucket_m": self.bucket_m,
                "start": self.start.tolist(), "goal": self.goal.tolist(),
                "geodesic_m": self.geodesic_m, "pedestrian_seed": self.pedestrian_seed,
                "policy_seed": self.policy_seed}


@dataclass
class BenchmarkReport:
    cases: list[Case]
    episodes: list[EpisodeResult]
    scenes: list = field(default_factory=list, repr=False)
    summary: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def episode_rows(self) -> list[dict]:
        rows = []
        for case, ep in zip(self.cases, self.episodes):
            dcr, tcr = dcr_tcr_terms(ep)
            rows.append({
                "scene": case.scene,
                "case": case.index,
                "bucket_m": case.bucket_m,
                "start_x": case.start[0], "start_y": case.start[1],
                "goal_x": case.goal[0], "goal_y": case.goal[1],
                "success": int(ep.success),
                "collisions": ep.collisions,
                "steps": ep.steps,
                "d_actual": ep.d_actual,
                "d_compliant": ep.d_compliant,
                "t_actual": ep.t_actual,
                "t_compliant": ep.t_compliant,
                "geodesic_start_goal": ep.geodesic_start_goal,
                "geodesic_remaining": ep.geodesic_remaining,
                "rc": rc(ep),
                "spl": float(spl_terms([ep])[0]),
                "dcr": dcr,
                "tcr": tcr,
            })
        return rows


def _point_on_network(net: RoadNetwork, rng: np.random.Generator) -> np.ndarray:
    lengths = np.array(net.lengths)
    k = int(rng.choice(len(lengths), p=lengths / lengths.sum()))
    i, j = net.edges[k]
    return net.nodes[i] + rng.uniform() * (net.nodes[j] - net.nodes[i])


def bucket_targets(grid: SemanticGrid, net: RoadNetwork, buckets=BUCKETS_M) -> tuple[float, ...]:
    """Target geodesic distances, scaled down (ratio kept) when the scene is too small."""
    lattice = scene_lattice(grid)
    diam = 0.0
    for p in net.nodes:
        d = lattice.distances_from(p)[[lattice.node_of(q) for q in net.nodes]]
        diam = max(diam, float(np.max(d[np.isfinite(d)])))
    far = max(buckets)
    if diam >= 1.1 * far:
        return tuple(buckets)
    scale = diam / 1.25 / far
    return tuple(b * scale for b in buckets)


def sample_cases(grid: SemanticGrid, net: RoadNetwork, scene: int, rng, targets,
                 pairs: int = PAIRS_PER_BUCKET, band: float = 0.1,
                 max_attempts: int = 20_000) -> list[Case]:
    rng = np.random.default_rng(rng)
    lattice = scene_lattice(grid)
    cases = []
    for target in targets:
        found = 0
        for _ in range(max_attempts):
            s = _point_on_network(net, rng)
            g = _point_on_network(net, rng)
            d = lattice.distance(s, g)
            if abs(d - target) <= band * target:
                seeds = rng.integers(0, 2**31 - 1, size=2)
                cases.append(Case(scene, len(cases), float(target), s, g, d, int(seeds[0]), int(seeds[1])))
                found += 1
                if found == pairs:
                    break
        if found < pairs:
            raise InfeasibleScene(f"scene {scene}: could not fill the {target:.1f} m bucket")
    return cases


def n_threads() -> int:
    try:
        return max(1, int(os.environ.get("SOCNAV_THREADS", "1")))
    except ValueError:
        return 1


def run_cases(policy: FlowPolicy, scenes, cases: list[Case], max_steps_factor: float = 3.0,
              pedestrian_density: float = MAX_PER_100M, record_log: bool = False) -> list[EpisodeResult]:
    def one(case: Case) -> EpisodeResult:
        grid, net = scenes[case.scene]
        steps = int(math.ceil(max_steps_factor * case.geodesic_m / (MAX_SPEED * DT))) + 20
        cfg = EpisodeConfig(grid, net, case.start, case.goal, max_steps=steps,
                            pedestrian_seed=case.pedestrian_seed, policy_seed=case.policy_seed,
                            pedestrian_density=pedestrian_density, record_log=record_log)
        return run_episode(policy, cfg)

    workers = min(n_threads(), max(len(cases), 1))
    if workers == 1:
        return [one(c) for c in cases]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(one, cases))


def run_benchmark(policy: FlowPolicy, scenes, rng=0, buckets=BUCKETS_M,
                  pairs: int = PAIRS_PER_BUCKET, pedestrian_density: float = MAX_PER_100M,
                  record_log: bool = False, meta: dict | None = None,
                  max_steps_factor: float = 3.0) -> BenchmarkReport:
    """``pairs`` start/goal pairs per distance bucket per scene, run closed loop."""
    root = np.random.SeedSequence(rng if isinstance(rng, (int, np.integer)) else 0)
    scene_seeds = root.spawn(len(scenes))
    cases = []
    for k, (grid, net) in enumerate(scenes):
        targets = bucket_targets(grid, net, buckets)
        cases += sample_cases(grid, net, k, scene_seeds[k], targets, pairs)
    episodes = run_cases(policy, scenes, cases, max_steps_factor, pedestrian_density, record_log)
    return BenchmarkReport(cases, episodes, list(scenes), summarize(episodes), dict(meta or {}))

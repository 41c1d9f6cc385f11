"""Glue between trajectory synthesis, imitation samples and RL tasks."""

from __future__ import annotations

import numpy as np

from .errors import NoValidRecovery, ValidationError
from .grid_world import DistanceField, SemanticGrid
from .planner import (
    RecoveryParams,
    RoadNetwork,
    Trajectory,
    TrajectoryKind,
    sample_recovery_trajectory,
    sample_standard_trajectory,
)
from .policy import PolicyConfig, build_context, featurize, trajectory_samples


def child_seed(root: int, *key: int) -> int:
    """Deterministic 32-bit seed for the child stream ``key`` of ``root``."""
    return int(np.random.SeedSequence(int(root), spawn_key=tuple(int(k) for k in key)).generate_state(1)[0])


def generate_trajectories(grid: SemanticGrid, net: RoadNetwork, field: DistanceField,
                          n_standard: int, n_recovery: int, seed: int, l_min: float,
                          params: RecoveryParams = RecoveryParams(), max_failures: int = 1000):
    """Exactly ``n_standard`` standard and ``n_recovery`` recovery trajectories.

    Trajectory ``i`` of each kind draws from its own child seed; a recovery
    draw that fails moves on to the next child seed.
    """
    standard = [sample_standard_trajectory(net, child_seed(seed, 0, i), l_min=l_min)
                for i in range(n_standard)]
    recovery = []
    i = failures = 0
    while len(recovery) < n_recovery:
        s = child_seed(seed, 1, i)
        i += 1
        base = sample_standard_trajectory(net, s, l_min=l_min)
        try:
            recovery.append(sample_recovery_trajectory(base, grid, s + 1, params, field))
        except NoValidRecovery:
            failures += 1
            if failures > max_failures:
                raise
    return standard, recovery


def il_arrays(trajs: list[Trajectory], field: DistanceField, cfg: PolicyConfig):
    """Encoder features and flattened expert chunks for every waypoint."""
    feats, chunks = [], []
    for traj in trajs:
        for ctx, chunk, _, _ in trajectory_samples(traj.points, traj.goal, field, cfg):
            feats.append(featurize(ctx, cfg))
            chunks.append(chunk.ravel())
    if not feats:
        raise ValidationError("no imitation samples")
    return np.array(feats), np.array(chunks)


def grpo_tasks(trajs: list[Trajectory], field: DistanceField, cfg: PolicyConfig,
               stride: int = 2, cold_start: bool = True) -> list:
    """(Context, expert chunk trajectory) pairs along each path.

    The expert trajectory is the agent pose followed by the next ``m``
    waypoints, in world coordinates.  With ``cold_start`` every pose is also
    added with a stationary history, the situation at the start of an episode.
    """
    tasks = []
    for traj in trajs:
        samples = trajectory_samples(traj.points, traj.goal, field, cfg, full_chunks_only=True)
        for ctx, _, i, pts in samples[::stride]:
            seg = pts[i:i + cfg.chunk + 1]
            expert = Trajectory(seg, TrajectoryKind.STANDARD, seg[0], traj.goal)
            tasks.append((ctx, expert))
            if cold_start and i > 0:
                still = build_context(field, pts[i:i + 1], traj.goal, cfg)
                tasks.append((still, expert))
    return tasks

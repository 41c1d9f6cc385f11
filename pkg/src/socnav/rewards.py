"""Trajectory rewards: social clearance, expert similarity, smoothness and
path efficiency, plus their weighted total."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import TooShort, ValidationError
from .grid_world import DistanceField, clearance_many
from .planner import Trajectory, resample

EXPERT_RESAMPLE_POINTS = 16


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class RewardWeights:
    lambda_expert: float = 1.0
    lambda_smooth: float = 1.0
    lambda_eff: float = 1.0
    lambda_social: float = 1.0      # 0 ablates the social term
    alpha: float = 0.5
    beta: float = 2.0
    w_d: float = 0.7
    w_theta: float = 0.3
    tau_d: float = 1.0
    alpha_s: float = 0.8
    alpha_l: float = 5.0
    beta_l: float = 2.0

    def __post_init__(self):
        for name in ("lambda_expert", "lambda_smooth", "lambda_eff", "lambda_social"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        for name in ("alpha", "beta", "tau_d", "alpha_s", "alpha_l", "beta_l"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be strictly positive")
        if self.w_d < 0 or self.w_theta < 0 or abs(self.w_d + self.w_theta - 1.0) > 1e-12:
            raise ValidationError("w_d and w_theta must be non-negative and sum to 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RewardBreakdown:
    social: float
    expert: float
    smooth: float
    efficiency: float
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


def _points(traj) -> np.ndarray:
    pts = traj.points if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    return pts.reshape(-1, 2)


def mean_clearance(traj, field: DistanceField) -> float:
    return float(np.mean(clearance_many(field, _points(traj))))


def reward_social(pred, expert, field: DistanceField, w: RewardWeights = RewardWeights()) -> float:
    """``beta * sigmoid((mean clearance(pred) - mean clearance(expert)) / alpha)``."""
    d_pred = mean_clearance(pred, field)
    d_gt = mean_clearance(expert, field)
    return w.beta * sigmoid((d_pred - d_gt) / w.alpha)


def _angle_between(a: np.ndarray, b: np.ndarray) -> float:
    ang = abs(math.atan2(a[1], a[0]) - math.atan2(b[1], b[0]))
    return 2 * math.pi - ang if ang > math.pi else ang


def reward_expert(pred, expert, w: RewardWeights = RewardWeights(),
                  n_points: int = EXPERT_RESAMPLE_POINTS) -> float:
    """Spatial proximity plus heading agreement with the expert.

    Both paths are arc-length resampled to ``n_points``.  Heading differences
    come from corresponding consecutive displacements; pairs where either
    displacement has zero length are skipped (all skipped -> aligned).
    """
    p = resample(_points(pred), n_points)
    g = resample(_points(expert), n_points)
    r_dist = math.exp(-float(np.mean(np.linalg.norm(p - g, axis=1))) / w.tau_d)
    dp, dg = np.diff(p, axis=0), np.diff(g, axis=0)
    angles = [_angle_between(a, b) for a, b in zip(dp, dg)
              if np.any(a != 0.0) and np.any(b != 0.0)]
    dtheta = float(np.mean(angles)) if angles else 0.0
    r_dir = 0.5 * (math.cos(dtheta) + 1.0)
    return w.w_d * r_dist + w.w_theta * r_dir


def reward_smooth(pred, w: RewardWeights = RewardWeights()) -> float:
    """``exp(-std(step lengths) / alpha_s)`` with the population std."""
    pts = _points(pred)
    if len(pts) < 3:
        raise TooShort("smoothness needs at least 3 points")
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return math.exp(-float(np.std(steps)) / w.alpha_s)


def reward_efficiency(pred, expert, w: RewardWeights = RewardWeights()) -> float:
    p, g = _points(pred), _points(expert)
    net_p = float(np.linalg.norm(p[-1] - p[0]))
    net_g = float(np.linalg.norm(g[-1] - g[0]))
    return w.beta_l * sigmoid((net_p - net_g) / w.alpha_l)


def total_reward(pred, expert, field: DistanceField,
                 w: RewardWeights = RewardWeights()) -> RewardBreakdown:
    social = reward_social(pred, expert, field, w)
    expert_r = reward_expert(pred, expert, w)
    smooth = reward_smooth(pred, w)
    eff = reward_efficiency(pred, expert, w)
    total = (w.lambda_social * social + w.lambda_expert * expert_r
             + w.lambda_smooth * smooth + w.lambda_eff * eff)
    return RewardBreakdown(social, expert_r, smooth, eff, total)

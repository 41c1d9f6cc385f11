"""Group-relative policy optimization over SDE flow rollouts.

For each task a group of G chunks is sampled with Euler-Maruyama noise,
scored with :func:`socnav.rewards.total_reward`, standardized within the
group and used in a clipped likelihood-ratio surrogate.  The ratio of a
chunk is the product of its per-step Gaussian transition densities, so only
the velocity field (never the encoder) receives gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergedTraining, NonFiniteRatio, ValidationError
from .grid_world import DistanceField
from .planner import Trajectory, TrajectoryKind, make_rng
from .policy import Context, FlowPolicy, SDESample, sample_sde
from .rewards import RewardBreakdown, RewardWeights, mean_clearance, total_reward

ADV_EPS = 1e-8


@dataclass
class RolloutGroup:
    context: Context
    expert: Trajectory
    sample: SDESample
    rewards: list[RewardBreakdown]
    trajectories: list[Trajectory]

    @property
    def G(self) -> int:
        return len(self.rewards)

    @property
    def z(self) -> np.ndarray:
        return self.sample.z

    @property
    def old_log_probs(self) -> np.ndarray:
        return self.sample.log_probs

    def totals(self) -> np.ndarray:
        return np.array([r.total for r in self.rewards])


@dataclass
class Advantage:
    values: np.ndarray


def chunk_to_world(origin, chunk) -> np.ndarray:
    """Agent pose followed by the cumulative sum of the chunk displacements."""
    origin = np.asarray(origin, dtype=float)
    steps = np.asarray(chunk, dtype=float).reshape(-1, 2)
    return np.vstack([origin, origin + np.cumsum(steps, axis=0)])


def rollout_group(policy: FlowPolicy, ctx: Context, expert: Trajectory, field: DistanceField,
                  G: int, rng, weights: RewardWeights = RewardWeights()) -> RolloutGroup:
    """Sample G chunks from one shared latent and score them against ``expert``.

    ``expert.points[0]`` is the agent pose the chunks start from.
    """
    if G < 2:
        raise ValidationError("group size must be at least 2")
    sample = sample_sde(policy, ctx, rng, group=G)
    origin = expert.points[0]
    trajs, rewards = [], []
    for chunk in sample.chunks:
        pts = chunk_to_world(origin, chunk)
        traj = Trajectory(pts, TrajectoryKind.ROLLOUT, origin, expert.goal)
        trajs.append(traj)
        rewards.append(total_reward(traj, expert, field, weights))
    return RolloutGroup(ctx, expert, sample, rewards, trajs)


def compute_advantages(group: RolloutGroup | np.ndarray) -> Advantage:
    """``(R_i - mean R) / (std R + 1e-8)`` with the population std."""
    r = group.totals() if isinstance(group, RolloutGroup) else np.asarray(group, dtype=float)
    if len(r) < 2:
        raise ValidationError("group size must be at least 2")
    return Advantage((r - r.mean()) / (r.std() + ADV_EPS))


@dataclass
class GRPOConfig:
    iterations: int = 200
    group_size: int = 8
    tasks_per_iter: int = 8
    clip: float = 0.2
    lr: float = 1e-3
    sigma: float = 0.15
    seed: int = 0
    weights: RewardWeights = field(default_factory=RewardWeights)


def _stack_transitions(groups: list[RolloutGroup]):
    xs, ts, zs, nxt = [], [], [], []
    for g in groups:
        states = g.sample.states
        K, G, D = states.shape[0] - 1, states.shape[1], states.shape[2]
        xs.append(states[:-1].reshape(K * G, D))
        nxt.append(states[1:].reshape(K * G, D))
        ts.append(np.repeat(np.arange(K) / K, G))
        zs.append(np.broadcast_to(g.z, (K * G, g.z.shape[0])))
    return np.concatenate(xs), np.concatenate(ts), np.concatenate(zs), np.concatenate(nxt)


def surrogate(policy: FlowPolicy, groups: list[RolloutGroup], advantages: list[Advantage],
              clip: float, with_grad: bool = True):
    """Clipped surrogate (mean over all samples) and its velocity-parameter gradient.

    Returns ``(objective, grads, log_ratios)``; grads follow ``policy.velocity.params``.
    At an exact tie between the clipped and unclipped branch the unclipped
    gradient is used.
    """
    K, sig = policy.K, policy.sigma
    if sig <= 0:
        raise ValidationError("the surrogate needs sigma > 0")
    dt = 1.0 / K
    x, t, z, x_next = _stack_transitions(groups)
    v, cache = policy.velocity_forward(x, t, z)
    resid = x_next - (x + v * dt)
    var = sig * sig * dt
    D = x.shape[1]
    lp_new = -0.5 * (resid ** 2).sum(axis=1) / var - 0.5 * D * (math.log(2 * math.pi) + math.log(var))

    objective = 0.0
    coefs = np.zeros(len(x))
    log_ratios = []
    n_total = sum(g.G for g in groups)
    offset = 0
    for g, adv in zip(groups, advantages):
        G = g.G
        new = lp_new[offset:offset + K * G].reshape(K, G).T
        log_ratio = (new - g.old_log_probs).sum(axis=1)
        if not np.all(np.isfinite(log_ratio)):
            raise NonFiniteRatio("transition density ratio is not finite")
        rho = np.exp(log_ratio)
        if not np.all(np.isfinite(rho)):
            raise NonFiniteRatio("transition density ratio overflowed")
        A = adv.values
        clipped = np.clip(rho, 1.0 - clip, 1.0 + clip)
        objective += float(np.minimum(rho * A, clipped * A).sum())
        active = ~(((A > 0) & (rho > 1.0 + clip)) | ((A < 0) & (rho < 1.0 - clip)))
        c = np.where(active, A * rho, 0.0) / n_total
        coefs[offset:offset + K * G] = np.tile(c, K)
        log_ratios.append(log_ratio)
        offset += K * G
    objective /= n_total
    if not with_grad:
        return objective, None, log_ratios
    # d log p / d v = resid / sigma^2 (per transition)
    dv = coefs[:, None] * resid / (sig * sig)
    grads, _ = policy.velocity.backward(cache, dv)
    return objective, grads, log_ratios


def grpo_update(policy: FlowPolicy, groups: list[RolloutGroup], advantages: list[Advantage],
                clip: float = 0.2, lr: float = 1e-3) -> FlowPolicy:
    """One gradient-ascent step on the clipped surrogate; returns a new policy."""
    new = policy.copy()
    _, grads, _ = surrogate(new, groups, advantages, clip)
    for p, g in zip(new.velocity.params, grads):
        p += lr * g
    if not new.is_finite():
        raise DivergedTraining("parameters became non-finite")
    return new


CURVE_COLUMNS = ("iteration", "mean_total", "mean_social", "mean_expert", "mean_smooth",
                 "mean_efficiency", "mean_clearance_m")


def train_safe_grpo(policy: FlowPolicy, tasks, field: DistanceField,
                    config: GRPOConfig = GRPOConfig(), progress=None):
    """Run ``config.iterations`` rounds of rollout -> advantages -> update.

    ``tasks`` is a list of ``(Context, expert Trajectory)``.  Returns the
    trained policy and one curve row per iteration.
    """
    if not tasks:
        raise ValidationError("no training tasks")
    policy = policy.with_sigma(config.sigma)
    rng = make_rng(config.seed)
    curve = []
    n = len(tasks)
    for it in range(1, config.iterations + 1):
        pick = rng.choice(n, size=min(config.tasks_per_iter, n), replace=False)
        groups = [rollout_group(policy, tasks[int(i)][0], tasks[int(i)][1], field,
                                config.group_size, rng, config.weights) for i in pick]
        advs = [compute_advantages(g) for g in groups]
        try:
            policy = grpo_update(policy, groups, advs, config.clip, config.lr)
        except NonFiniteRatio as exc:
            raise DivergedTraining(str(exc)) from exc
        rewards = [r for g in groups for r in g.rewards]
        clear = [mean_clearance(t, field) for g in groups for t in g.trajectories]
        row = {
            "iteration": it,
            "mean_total": float(np.mean([r.total for r in rewards])),
            "mean_social": float(np.mean([r.social for r in rewards])),
            "mean_expert": float(np.mean([r.expert for r in rewards])),
            "mean_smooth": float(np.mean([r.smooth for r in rewards])),
            "mean_efficiency": float(np.mean([r.efficiency for r in rewards])),
            "mean_clearance_m": float(np.mean(clear)),
        }
        curve.append(row)
        if progress is not None:
            progress(row)
    policy.encoder_calls = 0
    return policy, curve

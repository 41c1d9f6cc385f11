"""Flow-matching waypoint policy.

A small dense encoder maps the navigation context (pose history, relative
goal, local distance-field patch) to a latent ``z``; a velocity-field network
``v(x, t; z)`` is trained with conditional flow matching on the linear path
``x_t = (1 - t) x_0 + t x_1`` and sampled by K-step Euler (ODE) or
Euler-Maruyama (SDE) integration from ``x_0 ~ N(0, I)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DivergedTraining,
    NonFiniteLoss,
    NonFiniteState,
    ShapeMismatch,
    ValidationError,
    VersionMismatch,
)
from .grid_world import DistanceField, clearance_many
from .nn import MLP
from .planner import densify, make_rng

FORMAT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PolicyConfig:
    history: int = 5                 # n: past poses besides the current one
    chunk: int = 5                   # m: predicted waypoints
    patch_size: int = 9              # w: distance-field window is w x w
    patch_spacing_m: float = 0.5
    goal_clip_m: float = 5.0
    clearance_clip_m: float = 3.0
    latent_dim: int = 64
    encoder_hidden: tuple = (64,)
    velocity_hidden: tuple = (128, 128, 128)
    K: int = 5
    sigma: float = 0.15
    init_seed: int = 0

    @property
    def action_dim(self) -> int:
        return 2 * self.chunk

    @property
    def feature_dim(self) -> int:
        return 2 * (self.history + 1) + 2 + self.patch_size ** 2

    def encoder_sizes(self) -> tuple:
        return (self.feature_dim, *self.encoder_hidden, self.latent_dim)

    def velocity_sizes(self) -> tuple:
        return (self.action_dim + 1 + self.latent_dim, *self.velocity_hidden, self.action_dim)


@dataclass(frozen=True, eq=False)
class Context:
    """Agent-centric observation: the current pose is the origin."""

    history_positions: np.ndarray   # (n + 1, 2), last row is (0, 0)
    goal: np.ndarray                # (2,)
    local_patch: np.ndarray         # (w * w,) distance-field values, meters

    def __post_init__(self):
        for name in ("history_positions", "goal", "local_patch"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))


def patch_offsets(cfg: PolicyConfig) -> np.ndarray:
    half = (cfg.patch_size - 1) / 2.0
    ticks = (np.arange(cfg.patch_size) - half) * cfg.patch_spacing_m
    gx, gy = np.meshgrid(ticks, ticks)
    return np.column_stack([gx.ravel(), gy.ravel()])


def build_context(field: DistanceField, history_world, goal_world, cfg: PolicyConfig) -> Context:
    """Context from absolute poses; ``history_world[-1]`` is the current pose.

    Histories shorter than ``n + 1`` are padded by repeating the oldest pose.
    """
    hist = np.asarray(history_world, dtype=float).reshape(-1, 2)[-(cfg.history + 1):]
    if len(hist) < cfg.history + 1:
        pad = np.repeat(hist[:1], cfg.history + 1 - len(hist), axis=0)
        hist = np.vstack([pad, hist])
    cur = hist[-1]
    patch = clearance_many(field, cur + patch_offsets(cfg))
    return Context(hist - cur, np.asarray(goal_world, dtype=float) - cur, patch)


def featurize(ctx: Context, cfg: PolicyConfig) -> np.ndarray:
    """Fixed (non-learned) scaling of a context into the encoder input."""
    hist = ctx.history_positions
    patch = ctx.local_patch
    if hist.shape != (cfg.history + 1, 2) or ctx.goal.shape != (2,) or patch.shape != (cfg.patch_size ** 2,):
        raise ShapeMismatch(
            f"context shapes {hist.shape}, {ctx.goal.shape}, {patch.shape} do not match "
            f"history={cfg.history}, patch_size={cfg.patch_size}")
    dist = float(np.linalg.norm(ctx.goal))
    goal = ctx.goal * (min(dist, cfg.goal_clip_m) / dist / cfg.goal_clip_m) if dist > 0 else ctx.goal
    return np.concatenate([
        hist.ravel(),
        goal,
        np.minimum(patch, cfg.clearance_clip_m) / cfg.clearance_clip_m,
    ])


def chunk_from_points(points: np.ndarray, i: int, m: int) -> np.ndarray:
    """Next ``m`` step displacements after index ``i`` (zero-padded past the end)."""
    out = np.zeros((m, 2))
    nxt = points[i + 1:i + 1 + m]
    prev = points[i:i + len(nxt)]
    out[:len(nxt)] = nxt - prev
    return out


def trajectory_samples(traj_points, goal, field: DistanceField, cfg: PolicyConfig,
                       spacing: float = 0.25, full_chunks_only: bool = False):
    """(Context, chunk, index, resampled points) for every waypoint of a path.

    The path is resampled to ``spacing`` first so every chunk uses the same
    step granularity the robot executes.
    """
    pts = densify(np.asarray(traj_points, dtype=float), spacing)
    out = []
    last = len(pts) - cfg.chunk if full_chunks_only else len(pts) - 1
    for i in range(max(last, 0)):
        ctx = build_context(field, pts[max(0, i - cfg.history):i + 1], goal, cfg)
        out.append((ctx, chunk_from_points(pts, i, cfg.chunk), i, pts))
    return out


class FlowPolicy:
    """Encoder + velocity-field parameters and sampling settings."""

    def __init__(self, cfg: PolicyConfig = PolicyConfig(), encoder: MLP | None = None,
                 velocity: MLP | None = None):
        if cfg.K < 1:
            raise ValidationError("K must be >= 1")
        if cfg.sigma < 0:
            raise ValidationError("sigma must be >= 0")
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        self.encoder = encoder if encoder is not None else MLP(cfg.encoder_sizes(), rng)
        self.velocity = velocity if velocity is not None else MLP(cfg.velocity_sizes(), rng, out_scale=0.1)
        if self.encoder.sizes != cfg.encoder_sizes() or self.velocity.sizes != cfg.velocity_sizes():
            raise ShapeMismatch("network layer sizes disagree with the policy config")
        self.encoder_calls = 0

    @property
    def K(self) -> int:
        return self.cfg.K

    @property
    def sigma(self) -> float:
        return self.cfg.sigma

    def params(self) -> list[np.ndarray]:
        return self.encoder.params + self.velocity.params

    def n_encoder_params(self) -> int:
        return len(self.encoder.params)

    def copy(self) -> "FlowPolicy":
        return FlowPolicy(self.cfg, self.encoder.copy(), self.velocity.copy())

    def with_sigma(self, sigma: float) -> "FlowPolicy":
        cfg = PolicyConfig(**{**asdict(self.cfg), "sigma": float(sigma)})
        return FlowPolicy(cfg, self.encoder.copy(), self.velocity.copy())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    # -- network evaluation -------------------------------------------------

    def encode_features(self, feats: np.ndarray):
        self.encoder_calls += 1
        return self.encoder.forward(np.atleast_2d(feats))

    def velocity_forward(self, x: np.ndarray, t: np.ndarray, z: np.ndarray):
        inp = np.concatenate([x, np.asarray(t, dtype=float).reshape(-1, 1), z], axis=1)
        return self.velocity.forward(inp)


def encode_context(ctx: Context, policy: FlowPolicy) -> np.ndarray:
    """Latent conditioning vector (width ``latent_dim``) for one context."""
    z, _ = policy.encode_features(featurize(ctx, policy.cfg))
    return z[0]


# ------------------------------------------------------------------ flow loss

def cfm_batch(policy: FlowPolicy, feats: np.ndarray, x1: np.ndarray, t: np.ndarray,
              x0: np.ndarray, train_encoder: bool = True):
    """CFM loss and gradients for explicit ``(t, x0)`` draws.

    Loss is the mean over batch and action dimensions of
    ``(v(x_t, t; z) - (x1 - x0))^2``.  Returns ``(loss, grads)`` with grads
    ordered like :meth:`FlowPolicy.params`; encoder grads are None when
    ``train_encoder`` is False.
    """
    z, enc_cache = policy.encode_features(feats)
    xt = (1.0 - t)[:, None] * x0 + t[:, None] * x1
    v, vcache = policy.velocity_forward(xt, t, z)
    resid = v - (x1 - x0)
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.mean(resid ** 2))
    if not math.isfinite(loss):
        raise NonFiniteLoss("CFM loss is not finite")
    dv = 2.0 * resid / resid.size
    vgrads, dinp = policy.velocity.backward(vcache, dv)
    if train_encoder:
        dz = dinp[:, policy.cfg.action_dim + 1:]
        egrads, _ = policy.encoder.backward(enc_cache, dz)
    else:
        egrads = [None] * policy.n_encoder_params()
    return loss, egrads + vgrads


def cfm_loss(policy: FlowPolicy, ctx: Context, expert_chunk, rng, n_samples: int = 1):
    """Conditional flow-matching loss for one (context, expert chunk) pair.

    Draws ``t ~ U(0, 1)`` and ``x0 ~ N(0, I)`` from ``rng`` and returns
    ``(loss, grads)``.
    """
    rng = make_rng(rng)
    x1 = np.asarray(expert_chunk, dtype=float).reshape(1, -1)
    if x1.shape[1] != policy.cfg.action_dim:
        raise ShapeMismatch(f"expert chunk has {x1.shape[1]} values, expected {policy.cfg.action_dim}")
    if not np.all(np.isfinite(x1)):
        raise ValidationError("expert chunk must be finite")
    t = rng.uniform(0.0, 1.0, size=n_samples)
    x0 = rng.standard_normal((n_samples, policy.cfg.action_dim))
    feats = np.repeat(featurize(ctx, policy.cfg)[None], n_samples, axis=0)
    return cfm_batch(policy, feats, np.repeat(x1, n_samples, axis=0), t, x0)


# -------------------------------------------------------------------- sampling

def _integrate(policy: FlowPolicy, z: np.ndarray, x0: np.ndarray, noise: np.ndarray | None):
    """Euler(-Maruyama) integration; returns visited states (K + 1, B, D)."""
    K = policy.K
    dt = 1.0 / K
    states = [x0]
    x = x0
    for k in range(K):
        v, _ = policy.velocity_forward(x, np.full(len(x), k * dt), z)
        x = x + v * dt
        if noise is not None:
            x = x + noise[k]
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(f"flow state became non-finite at step {k}")
        states.append(x)
    return np.stack(states)


def sample_ode(policy: FlowPolicy, ctx: Context, noise_seed=0) -> np.ndarray:
    """Deterministic K-step Euler sample, shape (m, 2).  ``noise_seed`` fixes x0."""
    rng = make_rng(noise_seed)
    z = encode_context(ctx, policy)[None]
    x0 = rng.standard_normal((1, policy.cfg.action_dim))
    states = _integrate(policy, z, x0, None)
    return states[-1, 0].reshape(policy.cfg.chunk, 2)


def sample_ode_batch(policy: FlowPolicy, feats: np.ndarray, x0: np.ndarray) -> np.ndarray:
    z, _ = policy.encode_features(feats)
    return _integrate(policy, z, x0, None)[-1]


@dataclass
class SDESample:
    chunks: np.ndarray          # (G, m, 2)
    states: np.ndarray          # (K + 1, G, D) visited flow states
    log_probs: np.ndarray | None  # (G, K) per-transition Gaussian log-densities
    z: np.ndarray               # (latent_dim,) shared conditioning latent
    deterministic: bool = False

    @property
    def chunk(self) -> np.ndarray:
        return self.chunks[0]


def transition_log_probs(policy: FlowPolicy, z: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Log N(x_{k+1}; x_k + v dt, sigma^2 dt I) for every stored transition, shape (G, K)."""
    K, dt, sig = policy.K, 1.0 / policy.K, policy.sigma
    G, D = states.shape[1], states.shape[2]
    x = states[:-1].reshape(K * G, D)
    t = np.repeat(np.arange(K) * dt, G)
    zz = np.broadcast_to(z, (K * G, z.shape[-1]))
    v, _ = policy.velocity_forward(x, t, zz)
    mean = x + v * dt
    resid = states[1:].reshape(K * G, D) - mean
    var = sig * sig * dt
    lp = -0.5 * (resid ** 2).sum(axis=1) / var - 0.5 * D * (LOG_2PI + math.log(var))
    return lp.reshape(K, G).T


def sample_sde(policy: FlowPolicy, ctx: Context, rng, group: int = 1) -> SDESample:
    """Euler-Maruyama sampling with per-step noise std ``sigma * sqrt(dt)``.

    The conditioning latent is computed once and held fixed for every step
    and every group member.  With ``sigma == 0`` this is exactly the ODE
    sampler (same ``x0`` draw) and no log-densities are returned.
    """
    rng = make_rng(rng)
    D, K = policy.cfg.action_dim, policy.K
    z = encode_context(ctx, policy)
    x0 = rng.standard_normal((group, D))
    zz = np.broadcast_to(z, (group, z.shape[0]))
    if policy.sigma == 0.0:
        states = _integrate(policy, zz, x0, None)
        return SDESample(states[-1].reshape(group, -1, 2), states, None, z, deterministic=True)
    noise = rng.standard_normal((K, group, D)) * (policy.sigma * math.sqrt(1.0 / K))
    states = _integrate(policy, zz, x0, noise)
    log_probs = transition_log_probs(policy, z, states)
    return SDESample(states[-1].reshape(group, -1, 2), states, log_probs, z)


# -------------------------------------------------------------------- training

@dataclass
class ILConfig:
    steps: int = 5000
    batch_size: int = 128
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    freeze_encoder: bool = False
    eval_size: int = 512
    log_every: int = 100


@dataclass
class ILResult:
    policy: FlowPolicy
    curve: list = field(default_factory=list)      # (step, train loss, eval loss)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")


def stack_dataset(dataset, cfg: PolicyConfig):
    """Turn ``[(Context, chunk), ...]`` into feature and target arrays."""
    if isinstance(dataset, tuple) and len(dataset) == 2 and isinstance(dataset[0], np.ndarray):
        return dataset
    feats = np.array([featurize(c, cfg) for c, _ in dataset])
    chunks = np.array([np.asarray(a, dtype=float).ravel() for _, a in dataset])
    return feats, chunks


def evaluate_cfm(policy: FlowPolicy, feats, chunks, seed: int = 12345, size: int = 512) -> float:
    """CFM loss on a fixed subset with fixed (t, x0) draws."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(feats), size=min(size, len(feats)), replace=len(feats) < size)
    t = rng.uniform(0.0, 1.0, size=len(idx))
    x0 = rng.standard_normal((len(idx), policy.cfg.action_dim))
    loss, _ = cfm_batch(policy, feats[idx], chunks[idx], t, x0, train_encoder=False)
    return loss


def train_il(policy: FlowPolicy, dataset, config: ILConfig = ILConfig()) -> ILResult:
    """Mini-batch momentum SGD on the CFM loss.

    ``freeze_encoder`` keeps the encoder untouched (fine-tuning stage).
    The input policy is not modified; a trained copy is returned.
    """
    feats, chunks = stack_dataset(dataset, policy.cfg)
    if len(feats) == 0:
        raise ValidationError("empty dataset")
    policy = policy.copy()
    rng = np.random.default_rng(config.seed)
    params = policy.params()
    n_enc = policy.n_encoder_params()
    velocity = [np.zeros_like(p) for p in params]
    initial = evaluate_cfm(policy, feats, chunks, size=config.eval_size)
    result = ILResult(policy, initial_loss=initial)
    result.curve.append((0, initial, initial))
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(feats), size=config.batch_size)
        t = rng.uniform(0.0, 1.0, size=config.batch_size)
        x0 = rng.standard_normal((config.batch_size, policy.cfg.action_dim))
        try:
            loss, grads = cfm_batch(policy, feats[idx], chunks[idx], t, x0,
                                    train_encoder=not config.freeze_encoder)
        except NonFiniteLoss as exc:
            raise DivergedTraining(f"loss became non-finite at step {step}") from exc
        for k, (p, g) in enumerate(zip(params, grads)):
            if g is None or (config.freeze_encoder and k < n_enc):
                continue
            velocity[k] *= config.momentum
            velocity[k] -= config.lr * g
            p += velocity[k]
        if step % config.log_every == 0 or step == config.steps:
            ev = evaluate_cfm(policy, feats, chunks, size=config.eval_size)
            if not math.isfinite(ev):
                raise DivergedTraining(f"evaluation loss non-finite at step {step}")
            result.curve.append((step, loss, ev))
    if not policy.is_finite():
        raise DivergedTraining("parameters became non-finite")
    result.final_loss = evaluate_cfm(policy, feats, chunks, size=config.eval_size)
    policy.encoder_calls = 0
    return result


# ------------------------------------------------------------------ checkpoint

def policy_to_dict(policy: FlowPolicy, meta: dict | None = None) -> dict:
    cfg = asdict(policy.cfg)
    cfg["encoder_hidden"] = list(cfg["encoder_hidden"])
    cfg["velocity_hidden"] = list(cfg["velocity_hidden"])
    return {
        "format_version": FORMAT_VERSION,
        "config": cfg,
        "layer_sizes": {"encoder": list(policy.encoder.sizes), "velocity": list(policy.velocity.sizes)},
        "K": policy.K,
        "sigma": policy.sigma,
        "encoder": {"W": [w.tolist() for w in policy.encoder.W], "b": [b.tolist() for b in policy.encoder.b]},
        "velocity": {"W": [w.tolist() for w in policy.velocity.W], "b": [b.tolist() for b in policy.velocity.b]},
        "meta": meta or {},
    }


def policy_from_dict(data: dict) -> FlowPolicy:
    if not isinstance(data, dict) or data.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported checkpoint format {data.get('format_version') if isinstance(data, dict) else None!r}")
    try:
        cfg_d = dict(data["config"])
        cfg_d["encoder_hidden"] = tuple(cfg_d["encoder_hidden"])
        cfg_d["velocity_hidden"] = tuple(cfg_d["velocity_hidden"])
        cfg_d["K"] = int(data["K"])
        cfg_d["sigma"] = float(data["sigma"])
        cfg = PolicyConfig(**cfg_d)
        enc = MLP(cfg.encoder_sizes(), weights=data["encoder"]["W"], biases=data["encoder"]["b"])
        vel = MLP(cfg.velocity_sizes(), weights=data["velocity"]["W"], biases=data["velocity"]["b"])
    except (KeyError, TypeError, ValueError) as exc:
        raise VersionMismatch(f"checkpoint is corrupt: {exc}") from exc
    policy = FlowPolicy(cfg, enc, vel)
    if not policy.is_finite():
        raise VersionMismatch("checkpoint contains non-finite weights")
    return policy


def save_policy(policy: FlowPolicy, path, meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps(policy_to_dict(policy, meta)) + "\n")


def load_policy(path) -> FlowPolicy:
    try:
        data = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise VersionMismatch(f"{path}: checkpoint is not valid JSON") from exc
    try:
        return policy_from_dict(data)
    except VersionMismatch as exc:
        raise VersionMismatch(f"{path}: {exc}") from exc

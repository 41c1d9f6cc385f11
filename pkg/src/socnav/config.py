"""Run configuration: defaults, JSON loading, overrides and seed streams."""

from __future__ import annotations

import copy
import json
import zlib
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grid_world import SemanticGrid, load_scenario
from .planner import RoadNetwork, load_network
from .policy import ILConfig, PolicyConfig
from .rewards import RewardWeights
from .worlds import WORLDS

_POLICY = {k: v for k, v in asdict(PolicyConfig()).items() if k != "init_seed"}
_POLICY["encoder_hidden"] = list(_POLICY["encoder_hidden"])
_POLICY["velocity_hidden"] = list(_POLICY["velocity_hidden"])

DEFAULT_CONFIG = {
    "seed": 0,
    "scenes": {"data": ["corridor"], "grpo": ["shortcut"], "eval": ["shortcut"]},
    "data": {"n_standard": 250, "n_recovery": 250, "n_heldout": 20, "l_min_m": 20.0},
    "policy": _POLICY,
    "il": {"steps": 5000, "batch_size": 128, "lr": 0.05, "momentum": 0.9, "log_every": 100},
    "finetune": {"steps": 1000, "batch_size": 128, "lr": 0.01, "momentum": 0.9, "log_every": 100},
    "grpo": {"iterations": 200, "group_size": 8, "tasks_per_iter": 8, "clip": 0.2, "lr": 3e-4,
             "sigma": 0.3, "n_standard": 40, "n_recovery": 40, "task_stride": 2,
             "cold_start": True},
    "rewards": asdict(RewardWeights()),
    "eval": {"buckets_m": [20.0, 100.0], "pairs": 10, "pedestrian_density": 6.0,
             "max_steps_factor": 3.0},
}


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key '{where}{key}'")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key '{where}{key}' must be an object")
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file at ``path``, then ``overrides`` (flags win)."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            cfg = _merge(cfg, json.loads(p.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def stream_seed(root: int, name: str) -> int:
    """Seed of the named sub-stream (data, init, train, rollout, pedestrians, ...)."""
    key = zlib.crc32(name.encode())
    return int(np.random.SeedSequence(int(root), spawn_key=(key,)).generate_state(1)[0])


def policy_config(cfg: dict) -> PolicyConfig:
    p = dict(cfg["policy"])
    p["encoder_hidden"] = tuple(p["encoder_hidden"])
    p["velocity_hidden"] = tuple(p["velocity_hidden"])
    try:
        return PolicyConfig(**p, init_seed=stream_seed(cfg["seed"], "init"))
    except TypeError as exc:
        raise ConfigError(f"bad policy config: {exc}") from exc


def il_config(cfg: dict, stage: str = "il") -> ILConfig:
    names = {f.name for f in fields(ILConfig)}
    sec = {k: v for k, v in cfg[stage].items() if k in names}
    return ILConfig(**sec, seed=stream_seed(cfg["seed"], f"train-{stage}"),
                    freeze_encoder=(stage == "finetune"))


def reward_weights(cfg: dict) -> RewardWeights:
    try:
        return RewardWeights(**cfg["rewards"])
    except TypeError as exc:
        raise ConfigError(f"bad reward config: {exc}") from exc


def load_scene(spec: str) -> tuple[SemanticGrid, RoadNetwork]:
    """A built-in world name, or ``SCENARIO.json[,NETWORK.json]``.

    Without an explicit network the file ``<stem>.network.json`` next to the
    scenario is used.
    """
    if spec in WORLDS:
        return WORLDS[spec]()
    scen, _, net = spec.partition(",")
    scen_path = Path(scen)
    if not scen_path.is_file():
        raise ConfigError(f"scenario file not found: {scen_path}")
    net_path = Path(net) if net else scen_path.with_name(scen_path.stem + ".network.json")
    if not net_path.is_file():
        raise ConfigError(f"road network file not found: {net_path}")
    grid = load_scenario(scen_path)
    return grid, load_network(grid, net_path)

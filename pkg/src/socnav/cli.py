"""Command-line entry point: ``socnav {make-worlds,gen-data,train,eval,report}``.

A run lives in one output directory::

    OUT/data/{standard,recovery,heldout}.jsonl
    OUT/{il,finetune,grpo}/{policy.json,curve.csv}
    OUT/eval/...            closed-loop report (CSV, JSON, JSONL, SVG)
    OUT/eval_open_loop/...  MAOE summary
    OUT/report/*.png        figures

Exit codes: 0 success, 1 internal error, 2 user or configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import errors
from .benchmark import run_benchmark, scene_field
from .config import (
    il_config,
    load_config,
    load_scene,
    policy_config,
    reward_weights,
    stream_seed,
)
from .grid_world import save_scenario
from .metrics import aoe, maoe
from .pipeline import child_seed, generate_trajectories, grpo_tasks, il_arrays
from .planner import Trajectory, save_network
from .policy import FlowPolicy, load_policy, sample_ode, save_policy, train_il, trajectory_samples
from .report import (
    SUMMARY_COLUMNS,
    config_hash,
    emit_report,
    render_figures,
    write_csv,
    write_json,
)
from .safe_grpo import CURVE_COLUMNS, GRPOConfig, train_safe_grpo
from .worlds import WORLDS

USER_ERRORS = (
    errors.ParseError,
    errors.ValidationError,
    errors.ConfigError,
    errors.MissingCheckpoint,
    errors.VersionMismatch,
    errors.InfeasibleScene,
    errors.NoFeasiblePair,
)

IL_CURVE_COLUMNS = ("step", "train_loss", "eval_loss")


class Run:
    """Resolved config plus the derived hash, seed and paths of one invocation."""

    def __init__(self, args):
        overrides = {"seed": args.seed} if args.seed is not None else {}
        self.config = load_config(args.config, overrides)
        self.seed = int(self.config["seed"])
        self.hash = config_hash(self.config)
        self.out = Path(args.out)
        self.stamp = {"config_hash": self.hash, "seed": self.seed}

    def scenes(self, role: str, override=None):
        specs = override or self.config["scenes"][role]
        return specs, [load_scene(s) for s in specs]

    def sub(self, name: str) -> Path:
        path = self.out / name
        path.mkdir(parents=True, exist_ok=True)
        return path


def _split(n: int, k: int) -> list[int]:
    return [n // k + (i < n % k) for i in range(k)]


def _write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _read_dataset(path):
    """``[(scene index, Trajectory), ...]`` from a gen-data JSONL file."""
    if not Path(path).is_file():
        raise errors.ConfigError(f"dataset file not found: {path}")
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append((int(rec.get("scene", 0)), Trajectory.from_record(rec)))
    return out


def _traj_records(trajs, scene: int, stamp: dict):
    for t in trajs:
        yield {**t.to_record(), "scene": scene, "config_hash": stamp["config_hash"],
               "root_seed": stamp["seed"]}


def _checkpoint(run: Run, given, *defaults) -> Path:
    candidates = [Path(given)] if given else [run.out / d / "policy.json" for d in defaults]
    for c in candidates:
        if c.is_file():
            return c
    names = ", ".join(str(c) for c in candidates)
    raise errors.MissingCheckpoint(f"checkpoint not found: {names}")


# ------------------------------------------------------------------ commands

def cmd_make_worlds(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, make in sorted(WORLDS.items()):
        grid, net = make()
        save_scenario(grid, out / f"{name}.json")
        save_network(net, out / f"{name}.network.json")
        print(f"wrote {out / name}.json and {out / name}.network.json")
    return 0


def cmd_gen_data(args) -> int:
    run = Run(args)
    specs, scenes = run.scenes("data", args.scenes)
    d = run.config["data"]
    n_std = d["n_standard"] if args.n_standard is None else args.n_standard
    n_rec = d["n_recovery"] if args.n_recovery is None else args.n_recovery
    root = stream_seed(run.seed, "data")
    held_root = stream_seed(run.seed, "heldout")
    out = run.sub("data")
    std_recs, rec_recs, held_recs = [], [], []
    for k, (grid, net) in enumerate(scenes):
        field = scene_field(grid)
        a, b = _split(n_std, len(scenes))[k], _split(n_rec, len(scenes))[k]
        std, rec = generate_trajectories(grid, net, field, a, b, child_seed(root, k), d["l_min_m"])
        held, _ = generate_trajectories(grid, net, field, _split(d["n_heldout"], len(scenes))[k], 0,
                                        child_seed(held_root, k), d["l_min_m"])
        std_recs += _traj_records(std, k, run.stamp)
        rec_recs += _traj_records(rec, k, run.stamp)
        held_recs += _traj_records(held, k, run.stamp)
    _write_jsonl(out / "standard.jsonl", std_recs)
    _write_jsonl(out / "recovery.jsonl", rec_recs)
    _write_jsonl(out / "heldout.jsonl", held_recs)
    write_json(out / "manifest.json", {**run.stamp, "scenes": specs, "n_standard": len(std_recs),
                                       "n_recovery": len(rec_recs), "n_heldout": len(held_recs)})
    print(f"standard={len(std_recs)} recovery={len(rec_recs)} heldout={len(held_recs)} -> {out}")
    return 0


def _il_data(run: Run, args, pcfg):
    data_dir = Path(args.data) if args.data else run.out / "data"
    _, scenes = run.scenes("data", args.scenes)
    pairs = _read_dataset(data_dir / "standard.jsonl") + _read_dataset(data_dir / "recovery.jsonl")
    feats, chunks = [], []
    for k, (grid, _) in enumerate(scenes):
        trajs = [t for s, t in pairs if s == k]
        if trajs:
            f, c = il_arrays(trajs, scene_field(grid), pcfg)
            feats.append(f)
            chunks.append(c)
    if not feats:
        raise errors.ConfigError(f"no trajectories for the configured scenes in {data_dir}")
    return np.concatenate(feats), np.concatenate(chunks)


def cmd_train(args) -> int:
    run = Run(args)
    stage = args.stage
    if stage == "il":
        pcfg = policy_config(run.config)
        policy = FlowPolicy(pcfg)
    else:
        default = ("il",) if stage == "finetune" else ("finetune", "il")
        ckpt = _checkpoint(run, args.checkpoint, *default)
        policy = load_policy(ckpt)
        pcfg = policy.cfg
    out = run.sub(stage)
    meta = {**run.stamp, "stage": stage}

    if stage in ("il", "finetune"):
        feats, chunks = _il_data(run, args, pcfg)
        res = train_il(policy, (feats, chunks), il_config(run.config, stage))
        rows = [{"step": s, "train_loss": a, "eval_loss": b, **run.stamp} for s, a, b in res.curve]
        write_csv(out / "curve.csv", rows, IL_CURVE_COLUMNS + ("config_hash", "seed"))
        meta.update(initial_loss=res.initial_loss, final_loss=res.final_loss, samples=len(feats))
        save_policy(res.policy, out / "policy.json", meta)
        print(f"{stage}: samples={len(feats)} loss {res.initial_loss:.4f} -> {res.final_loss:.4f} "
              f"-> {out / 'policy.json'}")
        return 0

    g = run.config["grpo"]
    _, scenes = run.scenes("grpo", args.scenes)
    root = stream_seed(run.seed, "grpo-tasks")
    tasks_by_scene = []
    for k, (grid, net) in enumerate(scenes):
        field = scene_field(grid)
        std, rec = generate_trajectories(grid, net, field, _split(g["n_standard"], len(scenes))[k],
                                         _split(g["n_recovery"], len(scenes))[k], child_seed(root, k),
                                         run.config["data"]["l_min_m"])
        tasks_by_scene.append((field, grpo_tasks(std + rec, field, pcfg, g["task_stride"],
                                                 g["cold_start"])))
    gcfg = GRPOConfig(iterations=g["iterations"], group_size=g["group_size"],
                      tasks_per_iter=g["tasks_per_iter"], clip=g["clip"], lr=g["lr"],
                      sigma=g["sigma"], seed=stream_seed(run.seed, "rollout"),
                      weights=reward_weights(run.config))
    # rewards use one distance field per run, so multi-scene training goes scene by scene
    curve = []
    for k, (field, tasks) in enumerate(tasks_by_scene):
        cfg_k = GRPOConfig(**{**gcfg.__dict__, "seed": child_seed(gcfg.seed, k),
                              "iterations": _split(gcfg.iterations, len(tasks_by_scene))[k]})
        policy, part = train_safe_grpo(policy, tasks, field, cfg_k)
        offset = len(curve)
        curve += [{**r, "iteration": r["iteration"] + offset} for r in part]
    policy = policy.with_sigma(pcfg.sigma)
    rows = [{**r, **run.stamp} for r in curve]
    write_csv(out / "curve.csv", rows, CURVE_COLUMNS + ("config_hash", "seed"))
    meta.update(iterations=len(curve), tasks=sum(len(t) for _, t in tasks_by_scene))
    save_policy(policy, out / "policy.json", meta)
    last = curve[-1] if curve else {}
    print(f"grpo: iterations={len(curve)} mean_total={last.get('mean_total', float('nan')):.4f} "
          f"mean_clearance_m={last.get('mean_clearance_m', float('nan')):.4f} "
          f"-> {out / 'policy.json'}")
    return 0


def _summary_line(summary: dict) -> str:
    return " ".join(f"{k}={summary[k]:.4f}" if isinstance(summary[k], float) else f"{k}={summary[k]}"
                    for k in SUMMARY_COLUMNS)


def cmd_eval(args) -> int:
    run = Run(args)
    ckpt = _checkpoint(run, args.checkpoint, "grpo", "finetune", "il")
    policy = load_policy(ckpt)
    if args.open_loop:
        return _eval_open_loop(run, args, policy)
    e = run.config["eval"]
    specs, scenes = run.scenes("eval", args.scenes)
    meta = {"checkpoint": ckpt.name, "scenes": specs}
    report = run_benchmark(policy, scenes, stream_seed(run.seed, "pedestrians"),
                           tuple(e["buckets_m"]), e["pairs"], e["pedestrian_density"],
                           record_log=True, meta=meta, max_steps_factor=e["max_steps_factor"])
    emit_report(report, run.sub("eval"), run.hash, run.seed)
    print(_summary_line(report.summary))
    return 0


def _eval_open_loop(run: Run, args, policy) -> int:
    path = Path(args.heldout) if args.heldout else run.out / "data" / "heldout.jsonl"
    pairs = _read_dataset(path)
    _, scenes = run.scenes("data", args.scenes)
    preds, gts = [], []
    noise = stream_seed(run.seed, "open-loop")
    for n, (k, traj) in enumerate(pairs):
        field = scene_field(scenes[k][0])
        for ctx, chunk, i, _ in trajectory_samples(traj.points, traj.goal, field, policy.cfg,
                                                   full_chunks_only=True):
            preds.append(sample_ode(policy, ctx, child_seed(noise, n, i)))
            gts.append(chunk)
    if not preds:
        raise errors.ConfigError(f"no open-loop samples in {path}")
    preds, gts = np.array(preds), np.array(gts)
    value = maoe(preds, gts)
    per_step = aoe(preds, gts)
    out = run.sub("eval_open_loop")
    row = {"maoe_rad": value, "maoe_deg": math.degrees(value), "n_samples": len(preds), **run.stamp}
    write_csv(out / "summary.csv", [row], ("maoe_rad", "maoe_deg", "n_samples", "config_hash", "seed"))
    write_json(out / "summary.json", {**row, "aoe_rad": per_step.tolist(), "checkpoint": Path(
        args.checkpoint).name if args.checkpoint else None})
    print(f"maoe_rad={value:.4f} maoe_deg={math.degrees(value):.2f} n_samples={len(preds)}")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    eval_dir = out / "eval"
    if not (eval_dir / "summary.json").is_file():
        raise errors.ConfigError(f"no evaluation found in {eval_dir}; run 'socnav eval' first")
    curves = {name: out / name / "curve.csv" for name in ("il", "finetune", "grpo")}
    written = render_figures(eval_dir, out / "report", curves)
    sys.stdout.write((eval_dir / "summary.csv").read_text())
    for name in sorted(written):
        print(f"wrote {written[name]}")
    return 0


# ------------------------------------------------------------------- parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="socnav", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config (flags win over its values)")
        p.add_argument("--seed", type=int, help="root seed")
        p.add_argument("--out", default="run", help="run directory (default: ./run)")
        p.add_argument("--scenes", nargs="+", metavar="SCENE",
                       help="built-in world name or SCENARIO.json[,NETWORK.json]")
        return p

    p = sub.add_parser("make-worlds", help="write the built-in scenes as scenario/network files")
    p.add_argument("--out", default="worlds")
    p.set_defaults(func=cmd_make_worlds)

    p = common(sub.add_parser("gen-data", help="synthesize standard and recovery trajectories"))
    p.add_argument("--n-standard", type=int)
    p.add_argument("--n-recovery", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = common(sub.add_parser("train", help="imitation, encoder-frozen fine-tuning or SAFE-GRPO"))
    p.add_argument("--stage", choices=("il", "finetune", "grpo"), required=True)
    p.add_argument("--checkpoint", help="starting checkpoint (finetune, grpo)")
    p.add_argument("--data", help="dataset directory (default: OUT/data)")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="closed-loop benchmark or open-loop MAOE"))
    p.add_argument("--checkpoint", help="policy checkpoint (default: latest stage in OUT)")
    p.add_argument("--open-loop", action="store_true", help="MAOE over held-out trajectories")
    p.add_argument("--heldout", help="held-out trajectory JSONL (default: OUT/data/heldout.jsonl)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render figures and print the summary table")
    p.add_argument("--out", default="run")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except errors.SocNavError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

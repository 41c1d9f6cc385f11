"""Benchmark artifacts: delimited tables, JSON summaries, the top-down SVG
and matplotlib figures.

Every artifact carries the run's config hash and root seed so two runs with
the same pair can be compared byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .benchmark import BenchmarkReport
from .grid_world import SemanticGrid, grid_from_dict, grid_to_dict, traversable_many
from .planner import network_to_dict

EPISODE_COLUMNS = (
    "scene", "case", "bucket_m", "start_x", "start_y", "goal_x", "goal_y", "success",
    "collisions", "steps", "d_actual", "d_compliant", "t_actual", "t_compliant",
    "geodesic_start_goal", "geodesic_remaining", "rc", "spl", "dcr", "tcr",
)
SUMMARY_COLUMNS = ("sr", "rc", "spl", "dcr", "tcr", "maoe_rad", "n_episodes", "n_success")
STAMP_COLUMNS = ("config_hash", "seed")

PX_PER_M = 10.0
GREEN = "#2e9e44"
RED = "#d62728"
BLOCKED_FILL = "#b8b8b8"


def config_hash(config: dict) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON form."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return "nan" if math.isnan(v) else repr(v)
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_csv(path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------------------------ geometry

def compliance_flags(grid: SemanticGrid, points: np.ndarray) -> np.ndarray:
    """Per-segment flag: midpoint on a Traversable cell."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return np.zeros(0, dtype=bool)
    return traversable_many(grid, 0.5 * (pts[1:] + pts[:-1]))


def noncompliant_runs(grid: SemanticGrid, points: np.ndarray) -> list[np.ndarray]:
    """Maximal runs of consecutive non-compliant segments, as polylines."""
    pts = np.asarray(points, dtype=float)
    flags = compliance_flags(grid, pts)
    runs, start = [], None
    for i, ok in enumerate(flags):
        if not ok and start is None:
            start = i
        if ok and start is not None:
            runs.append(pts[start:i + 1])
            start = None
    if start is not None:
        runs.append(pts[start:])
    return runs


def _blocked_runs(grid: SemanticGrid):
    """Horizontal runs of blocked cells: (row, first col, length)."""
    for r in range(grid.height):
        row = grid.blocked[r]
        c = 0
        while c < grid.width:
            if row[c]:
                c0 = c
                while c < grid.width and row[c]:
                    c += 1
                yield r, c0, c - c0
            else:
                c += 1


# ----------------------------------------------------------------------- SVG

def _svg_scene(grid: SemanticGrid, episodes, x_off: float, label: str) -> list[str]:
    xmin, xmax, ymin, ymax = grid.extent
    h_px = (ymax - ymin) * PX_PER_M

    def px(p):
        return (x_off + (p[0] - xmin) * PX_PER_M, h_px - (p[1] - ymin) * PX_PER_M)

    res_px = grid.resolution * PX_PER_M
    out = [f'<g class="scene" data-scene="{label}">',
           f'<rect x="{x_off:.2f}" y="0" width="{(xmax - xmin) * PX_PER_M:.2f}" '
           f'height="{h_px:.2f}" fill="white" stroke="black"/>']
    for r, c0, n in _blocked_runs(grid):
        x = x_off + c0 * res_px
        y = h_px - (r + 1) * res_px
        out.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{n * res_px:.2f}" '
                   f'height="{res_px:.2f}" fill="{BLOCKED_FILL}"/>')
    for idx, pts in episodes:
        coords = [px(p) for p in pts]
        d = "M " + " L ".join(f"{x:.2f} {y:.2f}" for x, y in coords)
        out.append(f'<path class="episode" data-episode="{idx}" d="{d}" fill="none" '
                   f'stroke="{GREEN}" stroke-width="1.5"/>')
        for run in noncompliant_runs(grid, pts):
            seg = " ".join(f"{x:.2f},{y:.2f}" for x, y in (px(p) for p in run))
            out.append(f'<polyline class="noncompliant" data-episode="{idx}" points="{seg}" '
                       f'fill="none" stroke="{RED}" stroke-width="2"/>')
    out.append("</g>")
    return out


def render_svg(scenes, episode_paths, stamp: dict) -> str:
    """Top-down view of every episode, one panel per scene.

    ``episode_paths`` is a list of ``(scene index, episode index, points)``.
    Each episode is exactly one ``<path>``; non-compliant stretches are red
    ``<polyline>`` overlays.
    """
    gap = 20.0
    widths = [(g.extent[1] - g.extent[0]) * PX_PER_M for g in scenes]
    heights = [(g.extent[3] - g.extent[2]) * PX_PER_M for g in scenes]
    total_w = sum(widths) + gap * max(len(scenes) - 1, 0)
    total_h = max(heights, default=0.0)
    meta = json.dumps(stamp, sort_keys=True)
    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w:.2f}" '
            f'height="{total_h:.2f}" viewBox="0 0 {total_w:.2f} {total_h:.2f}">',
            f"<metadata>{meta}</metadata>"]
    x_off = 0.0
    for k, grid in enumerate(scenes):
        eps = [(i, pts) for s, i, pts in episode_paths if s == k]
        body += _svg_scene(grid, eps, x_off, str(k))
        x_off += widths[k] + gap
    body.append("</svg>")
    return "\n".join(body) + "\n"


# ------------------------------------------------------------------- emitter

def _episode_points(case, ep) -> np.ndarray:
    if ep.path is not None:
        return np.asarray(ep.path.points)
    return np.vstack([case.start, case.start])


def emit_report(report: BenchmarkReport, out_dir, config_hash_: str, seed: int) -> dict:
    """Write the benchmark report into ``out_dir``.

    Files: ``episodes.csv`` (one row per episode, header only when empty),
    ``summary.csv`` and ``summary.json``, ``manifest.json`` (scenes and
    cases), ``episodes.jsonl`` (per-step logs) and ``trajectories.svg``.
    Returns the written paths by name.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stamp = {"config_hash": config_hash_, "seed": int(seed)}
    paths = {}

    rows = [{**r, **stamp} for r in report.episode_rows()]
    paths["episodes_csv"] = out / "episodes.csv"
    write_csv(paths["episodes_csv"], rows, EPISODE_COLUMNS + STAMP_COLUMNS)

    summary = {**{k: report.summary.get(k, 0 if k.startswith("n_") else 0.0) for k in SUMMARY_COLUMNS},
               **stamp}
    paths["summary_csv"] = out / "summary.csv"
    write_csv(paths["summary_csv"], [summary], SUMMARY_COLUMNS + STAMP_COLUMNS)
    paths["summary_json"] = out / "summary.json"
    write_json(paths["summary_json"], {"summary": {k: _json_num(summary[k]) for k in SUMMARY_COLUMNS},
                                       **stamp, "meta": report.meta})

    scenes = [g for g, _ in report.scenes]
    manifest = {
        **stamp,
        "scenes": [{"grid": grid_to_dict(g), "network": network_to_dict(n)} for g, n in report.scenes],
        "cases": [c.to_dict() for c in report.cases],
    }
    paths["manifest"] = out / "manifest.json"
    write_json(paths["manifest"], manifest)

    paths["episodes_jsonl"] = out / "episodes.jsonl"
    with open(paths["episodes_jsonl"], "w") as fh:
        for k, (case, ep) in enumerate(zip(report.cases, report.episodes)):
            head = {"episode": k, "scene": case.scene, "case": case.index, **stamp}
            fh.write(json.dumps({**head, "step": 0, "pose": case.start.tolist()}, sort_keys=True) + "\n")
            for row in ep.log:
                fh.write(json.dumps({**head, **row}, sort_keys=True) + "\n")

    ep_paths = [(c.scene, k, _episode_points(c, e))
                for k, (c, e) in enumerate(zip(report.cases, report.episodes))]
    paths["svg"] = out / "trajectories.svg"
    paths["svg"].write_text(render_svg(scenes, ep_paths, stamp))
    return paths


def _json_num(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


def load_eval_dir(eval_dir):
    """Summary, episode rows, scene grids and per-episode paths written by :func:`emit_report`."""
    d = Path(eval_dir)
    summary = json.loads((d / "summary.json").read_text())
    rows = read_csv(d / "episodes.csv")
    manifest = json.loads((d / "manifest.json").read_text())
    scenes = [grid_from_dict(s["grid"]) for s in manifest["scenes"]]
    paths: dict[int, list] = {}
    scene_of: dict[int, int] = {}
    with open(d / "episodes.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            paths.setdefault(rec["episode"], []).append(rec["pose"])
            scene_of[rec["episode"]] = rec["scene"]
    ep_paths = [(scene_of[k], k, np.array(paths[k])) for k in sorted(paths)]
    return summary, rows, scenes, ep_paths


# ------------------------------------------------------------------- figures

def _save(fig, path) -> None:
    # no version or date metadata so reruns are byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})


def render_figures(eval_dir, out_dir, curves: dict | None = None) -> dict:
    """Matplotlib PNGs for an evaluation directory and optional training curves.

    ``curves`` maps a name (``"il"`` or ``"grpo"``) to a curve CSV path.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.collections import LineCollection

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary, rows, scenes, ep_paths = load_eval_dir(eval_dir)
    written = {}

    n = max(len(scenes), 1)
    fig, axes = plt.subplots(1, n, figsize=(5 * n, 5), squeeze=False)
    for k, ax in enumerate(axes[0]):
        if k >= len(scenes):
            ax.axis("off")
            continue
        grid = scenes[k]
        xmin, xmax, ymin, ymax = grid.extent
        ax.imshow(grid.blocked, origin="lower", extent=(xmin, xmax, ymin, ymax),
                  cmap="Greys", vmin=0, vmax=2.5, interpolation="nearest")
        for s, _, pts in ep_paths:
            if s != k or len(pts) < 2:
                continue
            segs = np.stack([pts[:-1], pts[1:]], axis=1)
            colors = [GREEN if ok else RED for ok in compliance_flags(grid, pts)]
            ax.add_collection(LineCollection(segs, colors=colors, linewidths=1.2))
            ax.plot(*pts[0], "o", color="black", ms=3)
        ax.set_xlim(xmin, xmax)
        ax.set_ylim(ymin, ymax)
        ax.set_aspect("equal")
        ax.set_title(f"scene {k}")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
    fig.tight_layout()
    written["trajectories"] = out / "trajectories.png"
    _save(fig, written["trajectories"])
    plt.close(fig)

    metrics = ("sr", "rc", "spl", "dcr", "tcr")
    vals = [summary["summary"][m] or 0.0 for m in metrics]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar([m.upper() for m in metrics], vals, color="#4c72b0")
    for i, v in enumerate(vals):
        ax.text(i, v + 0.02, f"{v:.2f}", ha="center", fontsize=8)
    ax.set_ylim(0, 1.1)
    ax.set_title(f"closed-loop metrics ({summary['summary']['n_episodes']} episodes)")
    fig.tight_layout()
    written["metrics"] = out / "metrics.png"
    _save(fig, written["metrics"])
    plt.close(fig)

    for name, path in sorted((curves or {}).items()):
        if path is None or not Path(path).exists():
            continue
        data = read_csv(path)
        if not data:
            continue
        fig, ax = plt.subplots(figsize=(5, 3.2))
        x_key = "iteration" if "iteration" in data[0] else "step"
        x = [float(r[x_key]) for r in data]
        for key in data[0]:
            if key in (x_key, "config_hash", "seed"):
                continue
            ax.plot(x, [float(r[key]) for r in data], label=key, lw=1)
        ax.set_xlabel(x_key)
        ax.legend(fontsize=7)
        ax.set_title(f"{name} training curve")
        fig.tight_layout()
        written[f"curve_{name}"] = out / f"curve_{name}.png"
        _save(fig, written[f"curve_{name}"])
        plt.close(fig)
    return written

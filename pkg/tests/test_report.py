import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from socnav.benchmark import BenchmarkReport, run_benchmark
from socnav.grid_world import SemanticGrid
from socnav.policy import FlowPolicy, PolicyConfig
from socnav.report import (
    EPISODE_COLUMNS,
    SUMMARY_COLUMNS,
    compliance_flags,
    config_hash,
    emit_report,
    load_eval_dir,
    noncompliant_runs,
    read_csv,
    render_figures,
)
from socnav.worlds import shortcut_world

SVG = "{http://www.w3.org/2000/svg}"
SMALL = PolicyConfig(history=2, chunk=4, patch_size=3, latent_dim=4, encoder_hidden=(8,),
                     velocity_hidden=(8,), K=2)


@pytest.fixture(scope="module")
def report():
    return run_benchmark(FlowPolicy(SMALL), [shortcut_world()], rng=1, pedestrian_density=2,
                         record_log=True)


def test_config_hash_canonical():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 16


def test_compliance_runs():
    grid = SemanticGrid.from_rows(["....", ".##.", "...."], 1.0)
    pts = np.array([[0.0, 1.5], [1.0, 1.5], [2.0, 1.5], [3.0, 1.5], [4.0, 1.5]])
    np.testing.assert_array_equal(compliance_flags(grid, pts), [True, False, False, True])
    runs = noncompliant_runs(grid, pts)
    assert len(runs) == 1
    np.testing.assert_array_equal(runs[0], pts[1:4])


def test_empty_report_header_only(tmp_path):
    emit_report(BenchmarkReport([], []), tmp_path, "0" * 16, 0)
    lines = (tmp_path / "episodes.csv").read_text().splitlines()
    assert lines == [",".join(EPISODE_COLUMNS + ("config_hash", "seed"))]
    root = ET.parse(tmp_path / "trajectories.svg").getroot()
    assert root.findall(f".//{SVG}path") == []


def test_report_files(report, tmp_path):
    emit_report(report, tmp_path, "abc", 3)
    rows = read_csv(tmp_path / "episodes.csv")
    assert len(rows) == 20
    assert {r["config_hash"] for r in rows} == {"abc"} and {r["seed"] for r in rows} == {"3"}
    summary = read_csv(tmp_path / "summary.csv")
    assert len(summary) == 1 and set(SUMMARY_COLUMNS) <= set(summary[0])
    js = json.loads((tmp_path / "summary.json").read_text())
    assert js["config_hash"] == "abc" and js["seed"] == 3
    assert js["summary"]["n_episodes"] == 20
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["cases"]) == 20 and len(manifest["scenes"]) == 1


def test_svg_one_path_per_episode(report, tmp_path):
    emit_report(report, tmp_path, "abc", 3)
    root = ET.parse(tmp_path / "trajectories.svg").getroot()
    episodes = [p for p in root.iter(f"{SVG}path") if p.get("class") == "episode"]
    assert len(episodes) == len(report.episodes)
    red = [p for p in root.iter(f"{SVG}polyline") if p.get("class") == "noncompliant"]
    grid = report.scenes[0][0]
    expected = sum(len(noncompliant_runs(grid, e.path.points)) for e in report.episodes)
    assert len(red) == expected
    assert "abc" in ET.tostring(root.find(f"{SVG}metadata"), encoding="unicode")


def test_jsonl_log_reconstructs_paths(report, tmp_path):
    emit_report(report, tmp_path, "abc", 3)
    _, _, scenes, paths = load_eval_dir(tmp_path)
    assert len(scenes) == 1 and len(paths) == 20
    for (_, k, pts), ep in zip(paths, report.episodes):
        np.testing.assert_allclose(pts, ep.path.points[:len(pts)])
        assert len(pts) == ep.steps + 1


def test_emit_is_byte_identical(report, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    emit_report(report, a, "abc", 3)
    emit_report(report, b, "abc", 3)
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_figures_render_and_repeat(report, tmp_path):
    emit_report(report, tmp_path / "eval", "abc", 3)
    curve = tmp_path / "curve.csv"
    curve.write_text("step,train_loss,eval_loss\n0,1.0,1.0\n10,0.5,0.6\n")
    a = render_figures(tmp_path / "eval", tmp_path / "fa", {"il": curve})
    b = render_figures(tmp_path / "eval", tmp_path / "fb", {"il": curve})
    assert set(a) == {"trajectories", "metrics", "curve_il"}
    for name in a:
        data = a[name].read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n"
        assert data == b[name].read_bytes()

"""Acceptance criteria 1 to 11.

Each test prints one ``criterion N: PASS|FAIL`` line; the lines are repeated
in the terminal summary.  The slow behavioural criteria (7, 8, 9, 11) share
module fixtures so the imitation policy is trained once.
"""

import json
import math
import time

import networkx as nx
import numpy as np
import pytest

from socnav.benchmark import Case, run_cases, sample_cases, scene_field, scene_lattice
from socnav.cli import main
from socnav.config import DEFAULT_CONFIG, il_config, policy_config, reward_weights, stream_seed
from socnav.errors import NoPath
from socnav.grid_world import distance_transform
from socnav.metrics import EpisodeResult, dcr_tcr, maoe, spl, sr, summarize
from socnav.pipeline import child_seed, generate_trajectories, grpo_tasks, il_arrays
from socnav.planner import (
    RecoveryParams,
    arc_lengths,
    astar_node_path,
    build_road_graph,
    sample_recovery_trajectory,
    sample_standard_trajectory,
)
from socnav.policy import Context, FlowPolicy, PolicyConfig, cfm_loss, sample_ode, sample_sde, train_il
from socnav.rewards import (
    RewardWeights,
    mean_clearance,
    reward_efficiency,
    reward_expert,
    reward_smooth,
    reward_social,
)
from socnav.safe_grpo import GRPOConfig, compute_advantages, rollout_group, surrogate, train_safe_grpo
from socnav.worlds import corridor_world, shortcut_world

from conftest import brute_force_distance, random_grid

SEED = DEFAULT_CONFIG["seed"]
TRAINING_SEEDS = range(5)
N_EVAL = 50


def fd_max_rel_err(fn, params, grads, h=1e-5, floor=1e-7):
    worst = 0.0
    for p, g in zip(params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = fn()
            flat[i] = old - h
            down = fn()
            flat[i] = old
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), floor))
    return worst


def perturbed(cfg, seed, scale):
    pol = FlowPolicy(cfg)
    rng = np.random.default_rng(seed)
    for p in pol.params():
        p += rng.normal(scale=scale, size=p.shape)
    return pol


def random_context(rng, cfg):
    hist = rng.normal(scale=0.3, size=(cfg.history + 1, 2))
    hist[-1] = 0.0
    return Context(hist, rng.normal(size=2) * 3, rng.uniform(0, 3, cfg.patch_size ** 2))


# ------------------------------------------------------------------ 1 to 6

def test_c01_reward_golden_values(criterion):
    t0 = time.perf_counter()
    blocked = np.zeros((40, 80), dtype=bool)
    blocked[0, :] = blocked[-1, :] = True
    from socnav.grid_world import SemanticGrid
    field = distance_transform(SemanticGrid(blocked, 0.25))
    path = np.column_stack([2.0 + 0.25 * np.arange(17), np.full(17, 5.0)])
    steps = np.array([[0.0, 0], [1, 0], [2, 0], [3, 0], [5, 0]])
    closed_form = math.exp(-np.std([1.0, 1.0, 1.0, 2.0]) / 0.8)
    checks = {
        "social": reward_social(path, path, field) == 1.0,
        "expert": reward_expert(path, path) == pytest.approx(1.0, abs=1e-12),
        "smooth_const": reward_smooth(path) == pytest.approx(1.0, abs=1e-12),
        "efficiency": reward_efficiency(path, path) == 1.0,
        "smooth_1112": abs(reward_smooth(steps) - closed_form) <= 1e-6,
    }
    elapsed = time.perf_counter() - t0
    ok = all(checks.values()) and elapsed < 1.0
    assert criterion(1, ok, f"{checks} smooth{{1,1,1,2}}={reward_smooth(steps):.6f} "
                            f"(exp(-sqrt(3)/4/0.8)={closed_form:.6f}) in {elapsed:.3f}s")


@pytest.mark.xfail(strict=True, reason="the quoted 0.581935 disagrees with exp(-std/alpha_s) "
                                       "= 0.582011; see the decisions ledger")
def test_c01_quoted_smoothness_constant():
    steps = np.array([[0.0, 0], [1, 0], [2, 0], [3, 0], [5, 0]])
    assert reward_smooth(steps) == pytest.approx(0.581935, abs=1e-6)


def test_c02_distance_transform_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        grid = random_grid(rng, max_side=64)
        got = distance_transform(grid).values
        want = brute_force_distance(grid.blocked, grid.resolution)
        worst = max(worst, float(np.max(np.abs(got - want))) / grid.resolution)
    elapsed = time.perf_counter() - t0
    assert criterion(2, worst <= 1e-12 and elapsed < 30, f"max |DT - oracle| = {worst:.1e} cells "
                                                         f"over 200 grids in {elapsed:.1f}s")


def test_c03_astar_equals_dijkstra(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    from socnav.grid_world import SemanticGrid
    grid = SemanticGrid(np.zeros((40, 40), dtype=bool), 1.0)
    worst, compared = 0.0, 0
    for _ in range(200):
        nodes = rng.uniform(0.5, 39.5, size=(50, 2))
        edges = [(i, j) for i in range(50) for j in range(i + 1, 50) if rng.random() < 0.08]
        net = build_road_graph(grid, nodes, edges)
        oracle = nx.Graph()
        oracle.add_nodes_from(range(50))
        oracle.add_weighted_edges_from((i, j, w) for (i, j), w in zip(net.edges, net.lengths))
        s, g = (int(v) for v in rng.choice(50, 2, replace=False))
        try:
            want = nx.dijkstra_path_length(oracle, s, g)
        except nx.NetworkXNoPath:
            with pytest.raises(NoPath):
                astar_node_path(net, s, g)
            compared += 1
            continue
        worst = max(worst, abs(astar_node_path(net, s, g)[1] - want))
        compared += 1
    elapsed = time.perf_counter() - t0
    assert criterion(3, compared == 200 and worst <= 1e-9 and elapsed < 10,
                     f"200 graphs, max cost gap {worst:.1e} in {elapsed:.1f}s")


def test_c04_gradient_checks(criterion):
    t0 = time.perf_counter()
    cfg = PolicyConfig(history=2, chunk=2, patch_size=3, latent_dim=4, encoder_hidden=(6,),
                       velocity_hidden=(7, 7), K=3, sigma=0.3)
    pol = perturbed(cfg, 3, 0.5)
    rng = np.random.default_rng(5)
    ctx = random_context(rng, cfg)
    chunk = rng.normal(size=(cfg.chunk, 2))
    _, grads = cfm_loss(pol, ctx, chunk, 11, n_samples=4)
    err_cfm = fd_max_rel_err(lambda: cfm_loss(pol, ctx, chunk, 11, n_samples=4)[0], pol.params(), grads)

    blocked = np.zeros((40, 40), dtype=bool)
    blocked[:, :4] = True
    from socnav.grid_world import SemanticGrid
    from socnav.planner import Trajectory, TrajectoryKind
    field = distance_transform(SemanticGrid(blocked, 0.5))
    old = perturbed(cfg, 4, 0.4)
    groups, advs = [], []
    for k in range(3):
        pts = np.array([10.0 + k, 10.0]) + np.outer(np.arange(cfg.chunk + 1), [0.0, 0.25])
        expert = Trajectory(pts, TrajectoryKind.STANDARD, pts[0], pts[-1] + [0.0, 5.0])
        g = rollout_group(old, random_context(rng, cfg), expert, field, 4, rng)
        groups.append(g)
        advs.append(compute_advantages(g))
    new = old.copy()
    for p in new.velocity.params:
        p += rng.normal(scale=0.02, size=p.shape)
    _, sgrads, _ = surrogate(new, groups, advs, 0.2)
    err_grpo = fd_max_rel_err(lambda: surrogate(new, groups, advs, 0.2, with_grad=False)[0],
                              new.velocity.params, sgrads, floor=1e-6)
    elapsed = time.perf_counter() - t0
    ok = err_cfm <= 1e-4 and err_grpo <= 1e-4 and elapsed < 60
    assert criterion(4, ok, f"cfm rel err {err_cfm:.1e}, surrogate rel err {err_grpo:.1e} in {elapsed:.1f}s")


def test_c05_sigma_zero_consistency(criterion):
    t0 = time.perf_counter()
    pol = perturbed(PolicyConfig(), 0, 0.05).with_sigma(0.0)
    rng = np.random.default_rng(5)
    worst = 0.0
    for seed in range(100):
        ctx = random_context(rng, pol.cfg)
        worst = max(worst, float(np.max(np.abs(sample_sde(pol, ctx, seed).chunk - sample_ode(pol, ctx, seed)))))
    elapsed = time.perf_counter() - t0
    assert criterion(5, worst <= 1e-12 and elapsed < 5, f"max |SDE - ODE| = {worst:.1e} over 100 contexts "
                                                        f"in {elapsed:.2f}s")


def test_c06_metric_identities(criterion):
    rng = np.random.default_rng(6)
    gt = rng.normal(size=(32, 5, 2))
    checks = {"maoe_self": maoe(gt, gt) == 0.0, "spl_le_sr": True, "failed_zero": True, "split": True}
    for _ in range(1000):
        eps = []
        for _ in range(int(rng.integers(1, 20))):
            d, t, geo = rng.uniform(0.1, 50), rng.uniform(0.1, 60), rng.uniform(0.1, 50)
            eps.append(EpisodeResult(bool(rng.random() < 0.6), None, int(rng.integers(0, 3)), d,
                                     rng.uniform(0, d), t, rng.uniform(0, t), geo, rng.uniform(0, geo)))
        checks["spl_le_sr"] &= spl(eps) <= sr(eps) + 1e-12
        for e in eps:
            if not e.success:
                checks["failed_zero"] &= dcr_tcr([e]) == (0.0, 0.0)
            checks["split"] &= abs(e.d_compliant + e.d_noncompliant - e.d_actual) <= 1e-9
    assert criterion(6, all(checks.values()), f"{checks} over 1000 random batches")


# ----------------------------------------------------------------------- 7

@pytest.fixture(scope="module")
def il_run():
    """Criterion 7 pipeline: 250 + 250 corridor trajectories, 5000 IL steps."""
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    t0 = time.perf_counter()
    grid, net = corridor_world()
    field = scene_field(grid)
    d = cfg["data"]
    std, rec = generate_trajectories(grid, net, field, d["n_standard"], d["n_recovery"],
                                     child_seed(stream_seed(SEED, "data"), 0), d["l_min_m"])
    pcfg = policy_config(cfg)
    feats, chunks = il_arrays(std + rec, field, pcfg)
    result = train_il(FlowPolicy(pcfg), (feats, chunks), il_config(cfg, "il"))
    cases = sample_cases(grid, net, 0, stream_seed(SEED, "short-range"), [8.0], pairs=N_EVAL, band=0.25)
    episodes = run_cases(result.policy, [(grid, net)], cases)
    return {"n_traj": len(std) + len(rec), "result": result, "cases": cases, "episodes": episodes,
            "elapsed": time.perf_counter() - t0, "steps": cfg["il"]["steps"]}


def test_c07_il_learnability(il_run, criterion):
    res = il_run["result"]
    ratio = res.final_loss / res.initial_loss
    s = summarize(il_run["episodes"])
    longest = max(c.geodesic_m for c in il_run["cases"])
    ok = (il_run["n_traj"] == 500 and il_run["steps"] <= 5000 and ratio < 0.10 and s["sr"] >= 0.8
          and longest <= 10.0 and len(il_run["episodes"]) == N_EVAL and il_run["elapsed"] < 600)
    assert criterion(7, ok, f"loss {res.initial_loss:.3f} -> {res.final_loss:.3f} ({ratio:.1%}), "
                            f"SR {s['sr']:.2f} over {len(il_run['episodes'])} episodes <= {longest:.1f} m, "
                            f"{il_run['elapsed']:.0f}s")


# ------------------------------------------------------------------- 8, 9

def crossing_cases(grid, n, seed):
    """Start and goal on opposite walkway arms, so the straight line crosses the lawn."""
    lattice = scene_lattice(grid)
    rng = np.random.default_rng(seed)
    cases = []
    for k in range(n):
        ys, yg = rng.uniform(2.5, 12.0, 2)
        s, g = np.array([2.5, ys]), np.array([23.5, yg])
        if k % 2:
            s, g = g, s
        seeds = rng.integers(0, 2**31 - 1, 2)
        cases.append(Case(0, k, 0.0, s, g, lattice.distance(s, g), int(seeds[0]), int(seeds[1])))
    return cases


def evaluate(policy, scene, field, cases):
    eps = run_cases(policy, [scene], cases)
    s = summarize(eps)
    s["clearance"] = float(np.mean([mean_clearance(e.path, field) for e in eps]))
    return s


@pytest.fixture(scope="module")
def grpo_runs(il_run):
    t0 = time.perf_counter()
    cfg = DEFAULT_CONFIG
    g = cfg["grpo"]
    scene = shortcut_world()
    grid, net = scene
    field = scene_field(grid)
    base_policy = il_run["result"].policy
    std, rec = generate_trajectories(grid, net, field, g["n_standard"], g["n_recovery"],
                                     child_seed(stream_seed(SEED, "grpo-tasks"), 0), cfg["data"]["l_min_m"])
    tasks = grpo_tasks(std + rec, field, base_policy.cfg, g["task_stride"], g["cold_start"])
    cases = crossing_cases(grid, N_EVAL, stream_seed(SEED, "crossing"))
    before = evaluate(base_policy, scene, field, cases)
    runs = {}
    for name, lam in (("full", reward_weights(cfg).lambda_social), ("ablation", 0.0)):
        weights = RewardWeights(**{**reward_weights(cfg).__dict__, "lambda_social": lam})
        runs[name] = []
        for seed in TRAINING_SEEDS:
            gcfg = GRPOConfig(iterations=g["iterations"], group_size=g["group_size"],
                              tasks_per_iter=g["tasks_per_iter"], clip=g["clip"], lr=g["lr"],
                              sigma=g["sigma"], seed=seed, weights=weights)
            trained, _ = train_safe_grpo(base_policy, tasks, field, gcfg)
            runs[name].append(evaluate(trained.with_sigma(base_policy.sigma), scene, field, cases))
    return {"before": before, "runs": runs, "elapsed": time.perf_counter() - t0}


def _stats(runs, key):
    v = np.array([r[key] for r in runs])
    return float(v.mean()), float(v.std())


def test_c08_grpo_social_gain(grpo_runs, criterion):
    before, full = grpo_runs["before"], grpo_runs["runs"]["full"]
    parts, ok = [], True
    for key in ("clearance", "dcr"):
        mean, spread = _stats(full, key)
        gain = mean - before[key]
        ok &= gain > spread
        parts.append(f"{key} {before[key]:.3f} -> {mean:.3f} (gain {gain:+.3f}, seed std {spread:.3f})")
    sr_mean, _ = _stats(full, "sr")
    ok &= sr_mean >= before["sr"] - 0.05
    parts.append(f"SR {before['sr']:.2f} -> {sr_mean:.2f}")
    ok &= grpo_runs["elapsed"] < 1800
    assert criterion(8, ok, "; ".join(parts) + f"; {grpo_runs['elapsed']:.0f}s for 10 runs")


def test_c09_reward_ablation(grpo_runs, criterion):
    full, _ = _stats(grpo_runs["runs"]["full"], "dcr")
    abl, _ = _stats(grpo_runs["runs"]["ablation"], "dcr")
    assert criterion(9, abl < full, f"DCR without R_social {abl:.3f} vs full reward {full:.3f} "
                                    f"(same {len(TRAINING_SEEDS)} seeds)")


# ---------------------------------------------------------------------- 10

def test_c10_recovery_statistics(criterion):
    grid, net = corridor_world()
    field = scene_field(grid)
    params = RecoveryParams()
    base = sample_standard_trajectory(net, 1, l_min=20)
    fwd = base.points[1] - base.points[0]
    left = np.array([-fwd[1], fwd[0]])
    p_conv = base.points[np.searchsorted(arc_lengths(base.points), params.converge_ahead_m)]
    headings_ok, steps, resid = True, [], []
    seed = 0
    while sum(len(r) for r in resid) < 10_000:
        rec = sample_recovery_trajectory(base, grid, seed, params, field)
        seed += 1
        h = rec.initial_heading_deg
        is_left = (rec.points[0] - base.points[0]) @ left > 0
        headings_ok &= (-90.0 <= h <= -45.0) if is_left else (45.0 <= h <= 90.0)
        pts = rec.points
        k = int(np.argmin(np.linalg.norm(pts - p_conv, axis=1)))
        q = pts[1]
        steps.append(np.linalg.norm(pts[1] - pts[0]))
        interior = pts[2:k]
        n = len(interior) + 1
        ts = (np.arange(1, n) / n)[:, None]
        resid.append(interior - (q + ts * (p_conv - q)))
        steps.append(np.linalg.norm(p_conv - q) / n)
    steps = np.array(steps)
    std = np.concatenate(resid).std(axis=0)
    ok = (headings_ok and np.all(np.abs(steps - 0.05) <= 0.005)
          and np.all((0.009 <= std) & (std <= 0.011)))
    assert criterion(10, ok, f"{seed} trajectories, headings in range={headings_ok}, "
                             f"step {steps.min():.4f}..{steps.max():.4f} m, noise std {std.round(5)}")


# ---------------------------------------------------------------------- 11

def test_c11_end_to_end_determinism(tmp_path, criterion):
    cfg = tmp_path / "small.json"
    cfg.write_text(json.dumps({
        "data": {"n_standard": 10, "n_recovery": 10, "n_heldout": 2},
        "il": {"steps": 100, "log_every": 25},
        "grpo": {"iterations": 5, "n_standard": 4, "n_recovery": 4},
        "eval": {"pairs": 2},
    }))
    outs = []
    for name in ("first", "second"):
        out = str(tmp_path / name)
        for argv in (["gen-data"], ["train", "--stage", "il"], ["train", "--stage", "grpo"], ["eval"]):
            assert main(argv + ["--config", str(cfg), "--seed", "11", "--out", out]) == 0
        assert main(["report", "--out", out]) == 0
        outs.append(tmp_path / name)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
    differ = [str(f) for f in files if (outs[0] / f).read_bytes() != (outs[1] / f).read_bytes()]
    reports = [f for f in files if f.parts[0] in ("eval", "report")]
    ok = not differ and len(reports) >= 6
    assert criterion(11, ok, f"{len(files)} artifacts compared, {len(reports)} report files, "
                             f"differing: {differ or 'none'}")

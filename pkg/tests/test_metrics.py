import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from socnav.errors import DegenerateEpisode, ValidationError, ZeroVector
from socnav.grid_world import SemanticGrid
from socnav.metrics import (
    EpisodeResult,
    LatticeGeodesic,
    aoe,
    dcr_tcr,
    maoe,
    rc,
    spl,
    sr,
    success,
    summarize,
)

from conftest import random_grid


def episode(ok=True, d=10.0, dc=10.0, t=10.0, tc=10.0, geo=10.0, rem=0.0, sf=None, coll=0):
    sf = geo if sf is None else sf
    return EpisodeResult(ok, None, coll, d, dc, t, tc, geo, rem, sf)


def test_episode_invariants():
    with pytest.raises(ValidationError):
        episode(d=1.0, dc=2.0)
    with pytest.raises(ValidationError):
        episode(t=1.0, tc=2.0)
    with pytest.raises(ValidationError):
        episode(coll=-1)


def test_maoe_examples():
    gt = np.array([[[1.0, 0.0]] * 5])
    assert maoe(gt, gt) == 0.0
    assert maoe(-gt, gt) == pytest.approx(math.pi)
    pred = gt.copy()
    pred[0, 1] = [0.0, 1.0]
    assert maoe(pred, gt) == pytest.approx(math.pi / 2)
    np.testing.assert_allclose(aoe(pred, gt), [0, math.pi / 2, 0, 0, 0])


def test_maoe_zero_vector():
    gt = np.ones((2, 5, 2))
    pred = gt.copy()
    pred[1, 3] = 0.0
    with pytest.raises(ZeroVector):
        maoe(pred, gt)


def test_maoe_parallel_rounding():
    v = np.array([[[0.1, 0.3]] * 5])
    assert maoe(v * 3.0, v) <= 1e-15
    w = np.random.default_rng(0).normal(size=(50, 5, 2))
    assert maoe(w, w) == 0.0


nonzero = arrays(np.float64, (4, 5, 2), elements=st.floats(-10, 10, allow_nan=False)).filter(
    lambda a: np.all(np.linalg.norm(a, axis=-1) > 1e-3))


@settings(max_examples=100, deadline=None)
@given(nonzero, nonzero, arrays(np.float64, (4, 5, 1), elements=st.floats(0.01, 100)))
def test_maoe_scale_invariant_and_bounded(pred, gt, scale):
    m = maoe(pred, gt)
    assert 0.0 <= m <= math.pi
    assert maoe(pred * scale, gt) == pytest.approx(m, abs=1e-7)


def test_success_examples():
    goal = np.zeros(2)
    assert success(None, goal, [2.9, 0.0], collisions=2)
    assert not success(None, goal, [3.1, 0.0], collisions=0)
    assert not success(None, goal, [0.0, 0.0], collisions=3)
    assert success(episode(coll=1), goal, [0.0, 1.0])


def test_spl_examples():
    assert spl([episode(d=10.0, geo=10.0)]) == 1.0
    assert spl([episode(ok=False)]) == 0.0
    assert spl([episode(d=20.0, dc=20.0, geo=10.0)]) == 0.5
    assert spl([episode(d=7.0, dc=7.0)], shortest=[7.0], actual=[14.0]) == 0.5


def test_rc_examples():
    assert rc(episode(geo=10.0, sf=10.0)) == 1.0
    assert rc(episode(geo=10.0, sf=0.0)) == 0.0
    assert rc(episode(geo=10.0, sf=14.0)) == 1.0
    with pytest.raises(DegenerateEpisode):
        rc(episode(geo=0.0, sf=0.0))


def test_rc_geodesic_midpoint():
    # L-shaped corridor, 1 m cells: start and goal at the two ends
    rows = ["#####", "#...#", "###.#", "###.#", "#####"]
    grid = SemanticGrid.from_rows(rows[::-1], 1.0)
    lat = LatticeGeodesic(grid)
    start, goal = grid.cell_center(3, 1), grid.cell_center(1, 3)
    g = lat.distance(start, goal)
    mid = grid.cell_center(3, 3)
    sf = lat.distance(start, mid)
    assert g == pytest.approx(4.0) and sf == pytest.approx(2.0)
    assert rc(episode(geo=g, sf=sf)) == 0.5


def test_dcr_examples():
    assert dcr_tcr([episode()]) == (1.0, 1.0)
    assert dcr_tcr([episode(ok=False)]) == (0.0, 0.0)
    assert dcr_tcr([episode(d=10.0, dc=5.0, t=4.0, tc=1.0)]) == (0.5, 0.25)


def random_episode(rng):
    d = rng.uniform(0.1, 50)
    t = rng.uniform(0.1, 60)
    geo = rng.uniform(0.1, 50)
    return episode(bool(rng.random() < 0.6), d, rng.uniform(0, d), t, rng.uniform(0, t),
                   geo, rng.uniform(0, geo), rng.uniform(0, 1.5 * geo), int(rng.integers(0, 4)))


def test_random_batches():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        eps = [random_episode(rng) for _ in range(int(rng.integers(1, 20)))]
        s = summarize(eps)
        assert s["spl"] <= s["sr"] + 1e-12
        for key in ("sr", "rc", "spl", "dcr", "tcr"):
            assert 0.0 <= s[key] <= 1.0
        for e in eps:
            assert e.d_compliant + e.d_noncompliant == pytest.approx(e.d_actual, abs=1e-9)
            if not e.success:
                assert dcr_tcr([e]) == (0.0, 0.0)
    assert sr([]) == 0.0 and spl([]) == 0.0


def lattice_oracle(grid):
    free = ~grid.blocked
    h, w = free.shape
    g = nx.Graph()
    for r in range(h):
        for c in range(w):
            if not free[r, c]:
                continue
            g.add_node((r, c))
            for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < h and 0 <= cc < w) or not free[rr, cc]:
                    continue
                if dr and dc and not (free[r + dr, c] and free[r, c + dc]):
                    continue
                g.add_edge((r, c), (rr, cc), weight=grid.resolution * math.hypot(dr, dc))
    return g


def test_lattice_matches_networkx():
    rng = np.random.default_rng(4)
    for _ in range(10):
        grid = random_grid(rng, max_side=20, density=0.25)
        lat = LatticeGeodesic(grid)
        oracle = lattice_oracle(grid)
        free = np.argwhere(~grid.blocked)
        src = tuple(free[rng.integers(len(free))])
        expected = nx.single_source_dijkstra_path_length(oracle, src)
        got = lat.distances_from(grid.cell_center(*src))
        for cell in map(tuple, free):
            node = lat.node_of(grid.cell_center(*cell))
            if cell in expected:
                assert got[node] == pytest.approx(expected[cell], abs=1e-9)
            else:
                assert math.isinf(got[node])

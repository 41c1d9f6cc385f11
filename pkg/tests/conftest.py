import numpy as np
import pytest

from socnav.grid_world import SemanticGrid, distance_transform


def brute_force_distance(blocked: np.ndarray, resolution: float) -> np.ndarray:
    """All-pairs minimum over blocked cell centers (oracle for the DT)."""
    h, w = blocked.shape
    rr, cc = np.nonzero(blocked)
    R, C = np.mgrid[0:h, 0:w]
    sq = (R[..., None] - rr) ** 2 + (C[..., None] - cc) ** 2
    return np.sqrt(sq.min(axis=-1).astype(float)) * resolution


def random_grid(rng, max_side=64, density=None, resolution=None):
    h, w = rng.integers(1, max_side + 1, size=2)
    p = rng.uniform(0.02, 0.4) if density is None else density
    blocked = rng.random((h, w)) < p
    if not blocked.any():
        blocked[rng.integers(h), rng.integers(w)] = True
    if blocked.all():
        blocked[0, 0] = False
    res = rng.uniform(0.1, 2.0) if resolution is None else resolution
    return SemanticGrid(blocked, res, (float(rng.uniform(-5, 5)), float(rng.uniform(-5, 5))))


@pytest.fixture
def open_grid():
    """20 m x 20 m open area with a one-cell wall border (0.25 m cells)."""
    blocked = np.zeros((80, 80), dtype=bool)
    blocked[0, :] = blocked[-1, :] = blocked[:, 0] = blocked[:, -1] = True
    grid = SemanticGrid(blocked, 0.25)
    return grid, distance_transform(grid)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion and return the verdict."""
    lines = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])

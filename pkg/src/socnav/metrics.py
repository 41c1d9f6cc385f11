"""Open-loop (MAOE) and closed-loop (SR, RC, SPL, DCR, TCR) navigation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import DegenerateEpisode, ValidationError, ZeroVector
from .grid_world import SemanticGrid
from .planner import Trajectory

SUCCESS_RADIUS_M = 3.0
MAX_COLLISIONS = 3


@dataclass
class EpisodeResult:
    success: bool
    path: Trajectory | None
    collisions: int
    d_actual: float
    d_compliant: float
    t_actual: float
    t_compliant: float
    geodesic_start_goal: float
    geodesic_remaining: float
    geodesic_start_final: float = 0.0
    steps: int = 0
    log: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.collisions < 0:
            raise ValidationError("collisions must be >= 0")
        if not (0.0 <= self.d_compliant <= self.d_actual + 1e-9):
            raise ValidationError("need 0 <= d_compliant <= d_actual")
        if not (0.0 <= self.t_compliant <= self.t_actual + 1e-9):
            raise ValidationError("need 0 <= t_compliant <= t_actual")

    @property
    def d_noncompliant(self) -> float:
        return self.d_actual - self.d_compliant


# ------------------------------------------------------------------ open loop

def orientation_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Angle (radians) between matching action vectors, shape (n, m)."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise ValidationError(f"batch shapes differ: {pred.shape} vs {gt.shape}")
    np_ = np.linalg.norm(pred, axis=-1)
    ng = np.linalg.norm(gt, axis=-1)
    if np.any(np_ == 0) or np.any(ng == 0):
        bad = np.argwhere((np_ == 0) | (ng == 0))[0]
        raise ZeroVector(f"zero-length action at sample {bad[0]}, step {bad[1]}")
    # atan2 of cross and dot: exactly 0 for identical vectors, no arccos clamping needed
    cross = pred[..., 0] * gt[..., 1] - pred[..., 1] * gt[..., 0]
    dot = (pred * gt).sum(axis=-1)
    return np.arctan2(np.abs(cross), dot)


def maoe(pred_batch, gt_batch) -> float:
    """Mean over samples of the worst per-step orientation error."""
    pred = np.asarray(pred_batch, dtype=float)
    gt = np.asarray(gt_batch, dtype=float)
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    if len(pred) == 0:
        raise ValidationError("empty batch")
    theta = orientation_errors(pred, gt)
    return float(theta.max(axis=1).mean())


def aoe(pred_batch, gt_batch) -> np.ndarray:
    """Per-step average orientation error over samples."""
    pred = np.asarray(pred_batch, dtype=float)
    gt = np.asarray(gt_batch, dtype=float)
    return orientation_errors(pred, gt).mean(axis=0)


# ---------------------------------------------------------------- closed loop

def success(ep: EpisodeResult | None, goal, final_pos, collisions: int | None = None) -> bool:
    """Within 3 m of the goal with fewer than three collisions."""
    n_coll = ep.collisions if collisions is None else collisions
    dist = float(np.linalg.norm(np.asarray(final_pos, dtype=float) - np.asarray(goal, dtype=float)))
    return dist <= SUCCESS_RADIUS_M and n_coll < MAX_COLLISIONS


def spl_terms(eps, shortest=None, actual=None) -> np.ndarray:
    shortest = [e.geodesic_start_goal for e in eps] if shortest is None else shortest
    actual = [e.d_actual for e in eps] if actual is None else actual
    out = []
    for e, l, p in zip(eps, shortest, actual):
        if l <= 0:
            raise ValidationError("shortest path length must be positive")
        out.append(float(e.success) * l / max(p, l))
    return np.array(out)


def spl(eps, shortest=None, actual=None) -> float:
    if not eps:
        return 0.0
    return float(spl_terms(eps, shortest, actual).mean())


def sr(eps) -> float:
    if not eps:
        return 0.0
    return float(np.mean([float(e.success) for e in eps]))


def rc(ep: EpisodeResult) -> float:
    """geodesic(start, final) / geodesic(start, goal), capped at 1."""
    if ep.geodesic_start_goal <= 0:
        raise DegenerateEpisode("start and goal coincide")
    return float(min(ep.geodesic_start_final / ep.geodesic_start_goal, 1.0))


def dcr_tcr_terms(ep: EpisodeResult) -> tuple[float, float]:
    if not ep.success:
        return 0.0, 0.0
    dcr = ep.d_compliant / ep.d_actual if ep.d_actual > 0 else 1.0
    tcr = ep.t_compliant / ep.t_actual if ep.t_actual > 0 else 1.0
    return float(dcr), float(tcr)


def dcr_tcr(eps) -> tuple[float, float]:
    if not eps:
        return 0.0, 0.0
    terms = np.array([dcr_tcr_terms(e) for e in eps])
    return float(terms[:, 0].mean()), float(terms[:, 1].mean())


def summarize(eps, maoe_rad: float = float("nan")) -> dict:
    d, t = dcr_tcr(eps)
    return {
        "sr": sr(eps),
        "rc": float(np.mean([rc(e) for e in eps])) if eps else 0.0,
        "spl": spl(eps),
        "dcr": d,
        "tcr": t,
        "maoe_rad": maoe_rad,
        "n_episodes": len(eps),
        "n_success": int(sum(bool(e.success) for e in eps)),
    }


# ---------------------------------------------------------- lattice geodesics

class LatticeGeodesic:
    """Shortest paths over the 8-connected lattice of traversable cell centers.

    Diagonal moves require both adjacent orthogonal cells to be traversable
    (no corner cutting).  Query points snap to the nearest traversable cell.
    """

    def __init__(self, grid: SemanticGrid):
        self.grid = grid
        free = ~grid.blocked
        h, w = free.shape
        idx = np.full((h, w), -1, dtype=np.int64)
        rr, cc = np.nonzero(free)
        idx[rr, cc] = np.arange(len(rr))
        self.index = idx
        self.cells = np.column_stack([rr, cc])
        res = grid.resolution
        rows, cols, wts = [], [], []
        for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
            r0, r1 = max(0, -dr), h - max(0, dr)
            c0, c1 = max(0, -dc), w - max(0, dc)
            a = free[r0:r1, c0:c1] & free[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
            if dr and dc:
                a &= free[r0 + dr:r1 + dr, c0:c1] & free[r0:r1, c0 + dc:c1 + dc]
            ar, ac = np.nonzero(a)
            ar, ac = ar + r0, ac + c0
            rows.append(idx[ar, ac])
            cols.append(idx[ar + dr, ac + dc])
            wts.append(np.full(len(ar), res * math.hypot(dr, dc)))
        n = len(rr)
        rows, cols, wts = np.concatenate(rows), np.concatenate(cols), np.concatenate(wts)
        self.graph = coo_matrix((wts, (rows, cols)), shape=(n, n)).tocsr()
        self._cache: dict[int, np.ndarray] = {}

    def node_of(self, point) -> int:
        cell = self.grid.world_to_cell(point)
        if cell is not None and self.index[cell] >= 0:
            return int(self.index[cell])
        xs = self.grid.origin[0] + (self.cells[:, 1] + 0.5) * self.grid.resolution
        ys = self.grid.origin[1] + (self.cells[:, 0] + 0.5) * self.grid.resolution
        d = (xs - point[0]) ** 2 + (ys - point[1]) ** 2
        return int(np.argmin(d))

    def distances_from(self, point) -> np.ndarray:
        node = self.node_of(point)
        dist = self._cache.get(node)
        if dist is None:
            # local reference: episode threads may clear the cache concurrently
            dist = dijkstra(self.graph, directed=False, indices=node)
            if len(self._cache) > 256:
                self._cache.clear()
            self._cache[node] = dist
        return dist

    def distance(self, a, b) -> float:
        return float(self.distances_from(a)[self.node_of(b)])

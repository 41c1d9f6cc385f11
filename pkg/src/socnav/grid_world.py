"""Semantic occupancy grid, its exact Euclidean distance transform and
world <-> cell coordinate conversions.

Cell ``(r, c)`` covers ``[ox + c*res, ox + (c+1)*res) x [oy + r*res, oy + (r+1)*res)``;
row 0 is the minimum-y edge.  Everything off the map counts as non-traversable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

TRAVERSABLE = "."
BLOCKED = "#"


@dataclass(frozen=True, eq=False)
class SemanticGrid:
    """Binary traversability raster.

    ``blocked[r, c]`` is True for NonTraversable cells.  The array is made
    read-only on construction so grids can be shared between readers.
    """

    blocked: np.ndarray
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        blocked = np.array(self.blocked, dtype=bool)
        if blocked.ndim != 2 or blocked.shape[0] < 1 or blocked.shape[1] < 1:
            raise ValidationError(f"grid must be a non-empty 2D array, got shape {blocked.shape}")
        res = float(self.resolution)
        if not math.isfinite(res) or res <= 0:
            raise ValidationError(f"resolution must be > 0, got {self.resolution!r}")
        blocked.setflags(write=False)
        object.__setattr__(self, "blocked", blocked)
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def height(self) -> int:
        return self.blocked.shape[0]

    @property
    def width(self) -> int:
        return self.blocked.shape[1]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) in meters."""
        ox, oy = self.origin
        return ox, ox + self.width * self.resolution, oy, oy + self.height * self.resolution

    def world_to_cell(self, point) -> tuple[int, int] | None:
        """Return ``(row, col)`` containing ``point`` or None when off the map."""
        x, y = float(point[0]), float(point[1])
        c = math.floor((x - self.origin[0]) / self.resolution)
        r = math.floor((y - self.origin[1]) / self.resolution)
        if 0 <= r < self.height and 0 <= c < self.width:
            return r, c
        return None

    def cell_center(self, row: int, col: int) -> np.ndarray:
        return np.array([
            self.origin[0] + (col + 0.5) * self.resolution,
            self.origin[1] + (row + 0.5) * self.resolution,
        ])

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """World x and y coordinates of every cell center, each shaped (H, W)."""
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.resolution
        return np.meshgrid(xs, ys)

    def n_traversable(self) -> int:
        return int((~self.blocked).sum())

    def to_rows(self) -> list[str]:
        return ["".join(BLOCKED if b else TRAVERSABLE for b in row) for row in self.blocked]

    @classmethod
    def from_rows(cls, rows, resolution: float, origin=(0.0, 0.0)) -> "SemanticGrid":
        if not rows:
            raise ValidationError("scenario has no rows")
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            raise ParseError(f"rows have inconsistent widths {sorted(widths)}")
        bad = set("".join(rows)) - {TRAVERSABLE, BLOCKED}
        if bad:
            raise ParseError(f"unexpected cell characters {sorted(bad)!r}")
        blocked = np.array([[ch == BLOCKED for ch in row] for row in rows], dtype=bool)
        return cls(blocked, resolution, tuple(origin))


@dataclass(frozen=True, eq=False)
class DistanceField:
    """Per-cell distance (meters) to the nearest NonTraversable cell center."""

    grid: SemanticGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.blocked.shape:
            raise ValidationError("distance field shape does not match its grid")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def resolution(self) -> float:
        return self.grid.resolution

    @property
    def origin(self) -> tuple[float, float]:
        return self.grid.origin


# --------------------------------------------------------------------------- io

def grid_to_dict(grid: SemanticGrid) -> dict:
    return {
        "resolution_m": grid.resolution,
        "origin_m": [grid.origin[0], grid.origin[1]],
        "rows": grid.to_rows(),
    }


def grid_from_dict(data: dict) -> SemanticGrid:
    try:
        resolution = data["resolution_m"]
        origin = data.get("origin_m", [0.0, 0.0])
        rows = data["rows"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"scenario is missing field {exc}") from exc
    if not isinstance(rows, list) or not all(isinstance(r, str) for r in rows):
        raise ParseError("'rows' must be a list of strings")
    if isinstance(resolution, bool) or not isinstance(resolution, (int, float)):
        raise ParseError("'resolution_m' must be a number")
    if not isinstance(origin, (list, tuple)) or len(origin) != 2:
        raise ParseError("'origin_m' must be [x, y]")
    grid = SemanticGrid.from_rows(rows, resolution, tuple(origin))
    if grid.n_traversable() == 0:
        raise ValidationError("scenario has no traversable cells")
    return grid


def load_scenario(path) -> SemanticGrid:
    """Read a scenario JSON file (``resolution_m``, ``origin_m``, ``rows``)."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return grid_from_dict(data)


def save_scenario(grid: SemanticGrid, path) -> None:
    Path(path).write_text(json.dumps(grid_to_dict(grid), indent=1) + "\n")


# ------------------------------------------------------------ distance transform

def _edt_1d(f: list) -> list:
    """Lower envelope of parabolas ``(q - p)^2 + f[p]`` (Felzenszwalb & Huttenlocher).

    ``f`` holds squared distances in cell units, ``None`` for +inf.  Only
    finite parabolas enter the envelope so every output is an exact integer.
    """
    n = len(f)
    sites = [p for p in range(n) if f[p] is not None]
    if not sites:
        return [None] * n
    v = [sites[0]]
    z = [-math.inf, math.inf]
    for q in sites[1:]:
        fq = f[q] + q * q
        while True:
            p = v[-1]
            s = (fq - (f[p] + p * p)) / (2 * (q - p))
            # z[-2] is the left boundary of the last parabola; z[0] = -inf stops the loop
            if s > z[-2]:
                break
            v.pop()
            z.pop()
        v.append(q)
        z[-1] = s
        z.append(math.inf)
    out = [0] * n
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        out[q] = (q - p) * (q - p) + f[p]
    return out


def squared_cell_distances(blocked: np.ndarray) -> np.ndarray | None:
    """Exact squared distance (cells) to the nearest blocked cell, or None if none."""
    if not blocked.any():
        return None
    h, w = blocked.shape
    # pass 1: along each row
    rows = []
    for r in range(h):
        f = [0 if b else None for b in blocked[r]]
        rows.append(_edt_1d(f))
    out = np.zeros((h, w), dtype=np.int64)
    # pass 2: along each column over the row results
    for c in range(w):
        col = _edt_1d([rows[r][c] for r in range(h)])
        out[:, c] = col
    return out


def distance_transform(grid: SemanticGrid) -> DistanceField:
    """Exact Euclidean distance transform over cell centers, in meters.

    A grid without any NonTraversable cell gets the finite sentinel
    ``(width + height) * resolution`` everywhere.
    """
    sq = squared_cell_distances(grid.blocked)
    if sq is None:
        values = np.full(grid.blocked.shape, (grid.width + grid.height) * grid.resolution)
    else:
        values = np.sqrt(sq.astype(float)) * grid.resolution
    return DistanceField(grid, values)


def clearance_at(field: DistanceField, point) -> float:
    """Bilinear interpolation of the distance field at a world point (meters).

    Off-map points have clearance 0.  Within half a cell of the map border the
    nearest row/column of cell centers is used (flat extrapolation).
    """
    grid = field.grid
    x, y = float(point[0]), float(point[1])
    xmin, xmax, ymin, ymax = grid.extent
    if not (xmin <= x < xmax and ymin <= y < ymax):
        return 0.0
    u = (x - grid.origin[0]) / grid.resolution - 0.5
    v = (y - grid.origin[1]) / grid.resolution - 0.5
    u = min(max(u, 0.0), grid.width - 1.0)
    v = min(max(v, 0.0), grid.height - 1.0)
    c0 = min(int(math.floor(u)), grid.width - 2) if grid.width > 1 else 0
    r0 = min(int(math.floor(v)), grid.height - 2) if grid.height > 1 else 0
    fu = u - c0
    fv = v - r0
    c1 = min(c0 + 1, grid.width - 1)
    r1 = min(r0 + 1, grid.height - 1)
    vals = field.values
    top = vals[r0, c0] * (1 - fu) + vals[r0, c1] * fu
    bot = vals[r1, c0] * (1 - fu) + vals[r1, c1] * fu
    return float(top * (1 - fv) + bot * fv)


def clearance_many(field: DistanceField, points) -> np.ndarray:
    """Vectorized :func:`clearance_at` for an ``(N, 2)`` array of points."""
    grid = field.grid
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    xmin, xmax, ymin, ymax = grid.extent
    inside = (x >= xmin) & (x < xmax) & (y >= ymin) & (y < ymax)
    u = np.clip((x - grid.origin[0]) / grid.resolution - 0.5, 0.0, grid.width - 1.0)
    v = np.clip((y - grid.origin[1]) / grid.resolution - 0.5, 0.0, grid.height - 1.0)
    c0 = np.minimum(np.floor(u).astype(int), max(grid.width - 2, 0))
    r0 = np.minimum(np.floor(v).astype(int), max(grid.height - 2, 0))
    fu = u - c0
    fv = v - r0
    c1 = np.minimum(c0 + 1, grid.width - 1)
    r1 = np.minimum(r0 + 1, grid.height - 1)
    vals = field.values
    top = vals[r0, c0] * (1 - fu) + vals[r0, c1] * fu
    bot = vals[r1, c0] * (1 - fu) + vals[r1, c1] * fu
    out = top * (1 - fv) + bot * fv
    return np.where(inside, out, 0.0)


def is_traversable(grid: SemanticGrid, point) -> bool:
    cell = grid.world_to_cell(point)
    if cell is None:
        return False
    return not grid.blocked[cell]


def traversable_many(grid: SemanticGrid, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    c = np.floor((pts[:, 0] - grid.origin[0]) / grid.resolution).astype(int)
    r = np.floor((pts[:, 1] - grid.origin[1]) / grid.resolution).astype(int)
    inside = (r >= 0) & (r < grid.height) & (c >= 0) & (c < grid.width)
    out = np.zeros(len(pts), dtype=bool)
    out[inside] = ~grid.blocked[r[inside], c[inside]]
    return out


def disc_hits_blocked(grid: SemanticGrid, point, radius: float) -> bool:
    """True when a disc overlaps a NonTraversable cell or leaves the map."""
    x, y = float(point[0]), float(point[1])
    xmin, xmax, ymin, ymax = grid.extent
    if x - radius < xmin or x + radius > xmax or y - radius < ymin or y + radius > ymax:
        return True
    res = grid.resolution
    c_lo = max(int(math.floor((x - radius - grid.origin[0]) / res)), 0)
    c_hi = min(int(math.floor((x + radius - grid.origin[0]) / res)), grid.width - 1)
    r_lo = max(int(math.floor((y - radius - grid.origin[1]) / res)), 0)
    r_hi = min(int(math.floor((y + radius - grid.origin[1]) / res)), grid.height - 1)
    patch = grid.blocked[r_lo:r_hi + 1, c_lo:c_hi + 1]
    if not patch.any():
        return False
    rr, cc = np.nonzero(patch)
    x0 = grid.origin[0] + (cc + c_lo) * res
    y0 = grid.origin[1] + (rr + r_lo) * res
    dx = np.maximum(np.maximum(x0 - x, 0.0), x - (x0 + res))
    dy = np.maximum(np.maximum(y0 - y, 0.0), y - (y0 + res))
    return bool(np.any(dx * dx + dy * dy < radius * radius))

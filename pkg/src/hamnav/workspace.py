"""World models and stagewise local sensing.

Continuous workspaces are squares [0, L]^2 populated with weighted circular
obstacles; dungeon workspaces carry an occupancy grid instead and expose
circular obstacles fitted on the fly inside each sensing window.  Sensing is
windowed: the agent only ever sees obstacles intersecting an axis-aligned
square around its position, and every window is charged to a coverage raster
so the mapping budget of an episode can be audited afterwards.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


class DeadEndError(RuntimeError):
    """No obstacle-free opening on any boundary edge of the active stage."""


class OutOfBoundsError(ValueError):
    """Sensing position outside the workspace."""


@dataclass(frozen=True)
class Obstacle:
    """Weighted circular obstacle."""

    center: np.ndarray
    radius: float
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError(f"obstacle radius must be > 0, got {self.radius}")
        if self.weight < 0:
            raise ValueError(f"obstacle weight must be >= 0, got {self.weight}")


def signed_distance(obstacle: Obstacle, point) -> float:
    """Euclidean distance from point to the disc surface; negative inside."""
    return float(np.linalg.norm(np.asarray(point, float) - obstacle.center)) - obstacle.radius


def signed_distances(obstacles, point) -> np.ndarray:
    """Vectorized signed_distance over a list of obstacles."""
    if not obstacles:
        return np.empty(0)
    centers = np.stack([ob.center for ob in obstacles])
    radii = np.array([ob.radius for ob in obstacles])
    return np.linalg.norm(centers - np.asarray(point, float), axis=1) - radii


@dataclass(frozen=True)
class OccupancyGrid:
    """Boolean raster; True cells are walls.  Row index is y, column is x."""

    occupied: np.ndarray
    cell_size: float = 1.0

    def __post_init__(self):
        occ = np.asarray(self.occupied, dtype=bool)
        if occ.ndim != 2 or occ.size == 0:
            raise ValueError("occupancy grid must be a non-empty 2D array")
        object.__setattr__(self, "occupied", occ)

    @property
    def shape(self):
        return self.occupied.shape

    def extent(self):
        """(width, height) in world units."""
        ny, nx = self.occupied.shape
        return nx * self.cell_size, ny * self.cell_size

    def cell_center(self, row, col):
        return np.array([(col + 0.5) * self.cell_size, (row + 0.5) * self.cell_size])

    @classmethod
    def from_ascii(cls, text: str, cell_size: float = 1.0) -> "OccupancyGrid":
        """Parse ASCII art: '#' occupied, '.' free, one row per line."""
        rows = [line for line in text.splitlines() if line.strip()]
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise ValueError("ragged ASCII grid")
        occ = np.array([[ch == "#" for ch in row] for row in rows], dtype=bool)
        return cls(occ, cell_size)

    def to_ascii(self) -> str:
        return "\n".join("".join("#" if v else "." for v in row) for row in self.occupied)

    @classmethod
    def from_pgm(cls, text: str, cell_size: float = 1.0) -> "OccupancyGrid":
        """Parse plain-text PGM (P2); values below half of maxval are walls."""
        tokens = []
        for line in text.splitlines():
            body = line.split("#", 1)[0]
            tokens.extend(body.split())
        if not tokens or tokens[0] != "P2":
            raise ValueError("not a P2 PGM")
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        vals = np.array([int(t) for t in tokens[4 : 4 + width * height]])
        if vals.size != width * height:
            raise ValueError("PGM pixel count mismatch")
        occ = (vals < maxval / 2.0).reshape(height, width)
        return cls(occ, cell_size)


@dataclass
class Workspace:
    """Square world [0, L]^2 with circular obstacles or an occupancy grid."""

    side: float
    obstacles: list
    start: np.ndarray
    goal: np.ndarray
    grid: OccupancyGrid | None = None
    seed: int = 0

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        self.validate()

    def validate(self):
        L = self.side
        for name, pt in (("start", self.start), ("goal", self.goal)):
            if not (0 <= pt[0] <= L and 0 <= pt[1] <= L):
                raise ValueError(f"{name} {pt} outside [0,{L}]^2")
        for pt in (self.start, self.goal):
            d = signed_distances(self.obstacles, pt)
            if d.size and d.min() < 0:
                raise ValueError("start/goal penetrates an obstacle")
        if self.grid is not None:
            w, h = self.grid.extent()
            if not (np.isclose(w, L) and np.isclose(h, L)):
                raise ValueError(f"grid extent {(w, h)} inconsistent with L={L}")

    def inside(self, point) -> bool:
        return bool(0 <= point[0] <= self.side and 0 <= point[1] <= self.side)


# ---------------------------------------------------------------------------
# JSON round trip

def workspace_to_json(ws: Workspace) -> dict:
    doc = {
        "L": ws.side,
        "obstacles": [
            {"c": [float(o.center[0]), float(o.center[1])], "r": float(o.radius), "w": float(o.weight)}
            for o in ws.obstacles
        ],
        "start": [float(ws.start[0]), float(ws.start[1])],
        "goal": [float(ws.goal[0]), float(ws.goal[1])],
        "seed": int(ws.seed),
    }
    if ws.grid is not None:
        doc["grid"] = {"cell_size": ws.grid.cell_size, "ascii": ws.grid.to_ascii()}
    return doc


def workspace_from_json(doc: dict) -> Workspace:
    grid = None
    if "grid" in doc:
        grid = OccupancyGrid.from_ascii(doc["grid"]["ascii"], doc["grid"].get("cell_size", 1.0))
    return Workspace(
        side=float(doc["L"]),
        obstacles=[Obstacle(np.array(o["c"], float), o["r"], o.get("w", 1.0)) for o in doc["obstacles"]],
        start=doc["start"],
        goal=doc["goal"],
        grid=grid,
        seed=doc.get("seed", 0),
    )


def save_workspace(ws: Workspace, path):
    with open(path, "w") as fh:
        json.dump(workspace_to_json(ws), fh, indent=1, sort_keys=True)


def load_workspace(path) -> Workspace:
    with open(path) as fh:
        return workspace_from_json(json.load(fh))


# ---------------------------------------------------------------------------
# Local sensing

@dataclass
class EnvironmentContext:
    """Locally sensed world: visible obstacles plus the current stage goal."""

    stage_goal: np.ndarray
    obstacles: list  # (index, Obstacle) pairs, index stable across windows
    window_center: np.ndarray
    half_extent: float

    @property
    def constraint_count(self) -> int:
        return len(self.obstacles)

    def obstacle_list(self):
        return [ob for _, ob in self.obstacles]


def disc_intersects_window(obstacle: Obstacle, center, half_extent) -> bool:
    """Exact disc vs axis-aligned-square test by closest-point clamping."""
    c = np.asarray(center, float)
    closest = np.clip(obstacle.center, c - half_extent, c + half_extent)
    return float(np.linalg.norm(closest - obstacle.center)) <= obstacle.radius


class CircleRegistry:
    """Stable ids for discs fitted from a grid, keyed by rounded geometry."""

    def __init__(self):
        self._ids = {}
        self._obstacles = []

    def intern(self, obstacle: Obstacle) -> int:
        key = (round(obstacle.center[0], 6), round(obstacle.center[1], 6), round(obstacle.radius, 6))
        if key not in self._ids:
            self._ids[key] = len(self._obstacles)
            self._obstacles.append(obstacle)
        return self._ids[key]

    def all_pairs(self):
        return list(enumerate(self._obstacles))


def sense(workspace: Workspace, position, half_extent, stages=None, tracker=None,
          registry=None, circle_params=None, stage_index=None,
          exit_avoid=(), exit_avoid_radius=0.3) -> EnvironmentContext:
    """Sense the axis-aligned window [position +- half_extent]^2.

    Returns every obstacle whose disc intersects the window.  For dungeon
    workspaces the walls inside the window are first fitted with discs (see
    extract_circles); a registry keeps their indices stable across windows.
    The window is charged to the coverage tracker when one is given, and the
    stage manager supplies the exit goal (global goal when absent);
    ``stage_index`` / ``exit_avoid`` forward to stage_exit_goal.
    """
    position = np.asarray(position, float)
    if not workspace.inside(position):
        raise OutOfBoundsError(f"sense position {position} outside workspace")
    if workspace.grid is not None:
        params = circle_params or {}
        discs = extract_circles(workspace.grid, (position, half_extent), **params)
        if registry is None:
            pairs = list(enumerate(discs))
        else:
            pairs = [(registry.intern(ob), ob) for ob in discs]
    else:
        pairs = [
            (i, ob)
            for i, ob in enumerate(workspace.obstacles)
            if disc_intersects_window(ob, position, half_extent)
        ]
    corrupt = getattr(workspace, "corrupt_context", None)
    if corrupt is not None:
        pairs = corrupt(pairs, (position, half_extent))
    if stages is not None:
        stage_goal = stage_exit_goal(stages, workspace, position,
                                     stage_index=stage_index, avoid=exit_avoid,
                                     avoid_radius=exit_avoid_radius)
    else:
        stage_goal = workspace.goal.copy()
    if tracker is not None:
        tracker.add_window(position, half_extent)
    return EnvironmentContext(stage_goal=stage_goal, obstacles=pairs,
                              window_center=position.copy(), half_extent=half_extent)


def active_set(q_position, ctx: EnvironmentContext, d_hat: float):
    """Indices of context obstacles within activation distance d_hat."""
    if d_hat <= 0:
        raise ValueError("d_hat must be > 0")
    out = []
    for idx, ob in ctx.obstacles:
        if signed_distance(ob, q_position) <= d_hat:
            out.append(idx)
    return sorted(out)


# ---------------------------------------------------------------------------
# Stage manager

@dataclass
class StageManager:
    """Overlapping rectangular tiling of [0, L]^2.

    Exit goals sit on stage boundaries at the midpoint of the best free
    opening.  Opening widths are capped at ``passable_width`` before ranking:
    any opening at least that wide counts the same, and ties are broken by
    distance of the opening midpoint to the global goal.
    """

    side: float
    stage_w: float = 2.6
    stage_h: float = 2.0
    overlap: float = 0.3
    r_inflate: float = 0.2
    passable_width: float = 1.0

    def __post_init__(self):
        step_x = self.stage_w * (1.0 - self.overlap)
        step_y = self.stage_h * (1.0 - self.overlap)
        self.nx = max(1, int(np.ceil((self.side - self.stage_w) / step_x)) + 1) if self.side > self.stage_w else 1
        self.ny = max(1, int(np.ceil((self.side - self.stage_h) / step_y)) + 1) if self.side > self.stage_h else 1
        self.origins_x = np.minimum(np.arange(self.nx) * step_x, max(self.side - self.stage_w, 0.0))
        self.origins_y = np.minimum(np.arange(self.ny) * step_y, max(self.side - self.stage_h, 0.0))

    def stage_bounds(self, index):
        i, j = index
        x0, y0 = self.origins_x[i], self.origins_y[j]
        return (x0, y0, min(x0 + self.stage_w, self.side), min(y0 + self.stage_h, self.side))

    def stage_of(self, position, current=None):
        """Active stage: among stages containing position, nearest center.

        With ``current`` given, the current stage is sticky: it stays active
        as long as it still contains the position (hysteresis across the
        overlap bands, which prevents exit flip-flop on shared edges).
        """
        if current is not None and self.contains(current, position):
            return current
        px, py = float(position[0]), float(position[1])
        best, best_d = None, np.inf
        for i in range(self.nx):
            for j in range(self.ny):
                x0, y0, x1, y1 = self.stage_bounds((i, j))
                if x0 - 1e-12 <= px <= x1 + 1e-12 and y0 - 1e-12 <= py <= y1 + 1e-12:
                    d = (px - (x0 + x1) / 2) ** 2 + (py - (y0 + y1) / 2) ** 2
                    if d < best_d:
                        best, best_d = (i, j), d
        if best is None:
            raise OutOfBoundsError(f"position {position} not inside any stage")
        return best

    def contains(self, index, position, pad=1e-12):
        x0, y0, x1, y1 = self.stage_bounds(index)
        return x0 - pad <= position[0] <= x1 + pad and y0 - pad <= position[1] <= y1 + pad


def _free_intervals(length, blocked):
    """Complement of a union of intervals inside [0, length]."""
    events = sorted((max(0.0, a), min(length, b)) for a, b in blocked if b > 0 and a < length)
    free, cursor = [], 0.0
    for a, b in events:
        if a > cursor:
            free.append((cursor, a))
        cursor = max(cursor, b)
    if cursor < length:
        free.append((cursor, length))
    return free


def _edge_blocked_intervals(p0, p1, workspace, r_inflate):
    """Blocked sub-intervals of segment p0->p1 (circles or grid walls, inflated)."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    axis = p1 - p0
    length = float(np.linalg.norm(axis))
    u = axis / length
    blocked = []
    if workspace.grid is not None:
        sdf = grid_sdf_world(workspace.grid)
        n = max(8, int(np.ceil(length / (workspace.grid.cell_size * 0.5))))
        ts = np.linspace(0.0, length, n + 1)
        pts = p0[None, :] + ts[:, None] * u[None, :]
        clear = sdf(pts)
        bad = clear < r_inflate
        i = 0
        while i <= n:
            if bad[i]:
                j = i
                while j <= n and bad[j]:
                    j += 1
                blocked.append((ts[i] - length / n / 2, ts[min(j, n)] + length / n / 2))
                i = j
            else:
                i += 1
    else:
        for ob in workspace.obstacles:
            r = ob.radius + r_inflate
            w = ob.center - p0
            t0 = float(np.dot(w, u))
            h2 = float(np.dot(w, w)) - t0 * t0
            if h2 < r * r:
                half = np.sqrt(r * r - h2)
                blocked.append((t0 - half, t0 + half))
    return length, blocked


def stage_openings(stages: StageManager, workspace: Workspace, stage_index):
    """Free openings of a stage, ranked best first.

    Opening widths are capped at ``stages.passable_width`` (any opening at
    least that wide counts the same), ranked by capped width and then by
    midpoint distance to the global goal.  Returns (score, dist, midpoint)
    tuples; boundary edges of the workspace carry no openings.
    """
    x0, y0, x1, y1 = stages.stage_bounds(stage_index)
    L = workspace.side
    edges = []
    if y1 < L - 1e-9:
        edges.append(((x0, y1), (x1, y1)))  # north
    if y0 > 1e-9:
        edges.append(((x0, y0), (x1, y0)))  # south
    if x1 < L - 1e-9:
        edges.append(((x1, y0), (x1, y1)))  # east
    if x0 > 1e-9:
        edges.append(((x0, y0), (x0, y1)))  # west
    out = []
    for p0, p1 in edges:
        length, blocked = _edge_blocked_intervals(p0, p1, workspace, stages.r_inflate)
        u = (np.asarray(p1, float) - np.asarray(p0, float)) / length
        for a, b in _free_intervals(length, blocked):
            width = b - a
            if width <= 1e-9:
                continue
            mid = np.asarray(p0, float) + u * ((a + b) / 2.0)
            score = min(width, stages.passable_width)
            dist = float(np.linalg.norm(mid - workspace.goal))
            out.append((score, dist, mid))
    out.sort(key=lambda t: (-round(t[0], 9), t[1]))
    return out


def stage_exit_goal(stages: StageManager, workspace: Workspace, q_position,
                    stage_index=None, avoid=(), avoid_radius=0.3) -> np.ndarray:
    """Exit point for the active stage.

    Midpoint of the best free opening (widest after capping, ties to the one
    closest to the global goal); the global goal itself when it lies inside
    the stage.  ``avoid`` lists previously attained exits: candidates within
    ``avoid_radius`` of one are deferred so revisited stages hand out their
    next-best opening instead of cycling.
    """
    idx = stages.stage_of(q_position) if stage_index is None else stage_index
    x0, y0, x1, y1 = stages.stage_bounds(idx)
    goal = workspace.goal
    if x0 <= goal[0] <= x1 and y0 <= goal[1] <= y1:
        return goal.copy()
    ranked = stage_openings(stages, workspace, idx)
    if not ranked:
        raise DeadEndError(f"stage {idx} has no free opening")
    for _, _, mid in ranked:
        if all(float(np.linalg.norm(mid - np.asarray(a, float))) >= avoid_radius for a in avoid):
            return mid
    # every opening is on the avoid list: hand out the most novel one
    def novelty(mid):
        return min(float(np.linalg.norm(mid - np.asarray(a, float))) for a in avoid)

    return max(ranked, key=lambda t: novelty(t[2]))[2]


# ---------------------------------------------------------------------------
# Coverage accounting

class CoverageTracker:
    """Raster accounting of sensed area; monotone over an episode."""

    def __init__(self, side: float, cell: float):
        self.side = float(side)
        self.n = max(1, int(round(self.side / cell)))
        self.cell = self.side / self.n
        self.covered = np.zeros((self.n, self.n), dtype=bool)
        self.windows = []
        centers = (np.arange(self.n) + 0.5) * self.cell
        self._centers = centers

    def add_window(self, center, half_extent):
        self.windows.append((np.asarray(center, float).copy(), float(half_extent)))
        cx, cy = float(center[0]), float(center[1])
        in_x = np.abs(self._centers - cx) <= half_extent
        in_y = np.abs(self._centers - cy) <= half_extent
        self.covered |= np.outer(in_y, in_x)

    def covered_fraction(self) -> float:
        return float(self.covered.sum()) / float(self.n * self.n)


def mapping_ratio(tracker: CoverageTracker, L: float) -> float:
    """Fraction of [0, L]^2 ever inside a sensing window (raster area)."""
    if L <= 0:
        raise ValueError("L must be > 0")
    return float(tracker.covered.sum()) * tracker.cell ** 2 / (L * L)


# ---------------------------------------------------------------------------
# Grid signed distance and disc fitting

def grid_to_sdf(grid: OccupancyGrid) -> np.ndarray:
    """Per-cell signed distance in cell units: positive on free cells
    (distance to the nearest occupied cell), negative on occupied cells."""
    occ = grid.occupied
    ny, nx = occ.shape
    cap = float(np.hypot(nx, ny))
    if occ.all() or (~occ).all():
        warnings.warn("degenerate occupancy grid: all cells identical", RuntimeWarning)
        return np.full(occ.shape, -cap if occ.all() else cap)
    dist_out = ndimage.distance_transform_edt(~occ)
    dist_in = ndimage.distance_transform_edt(occ)
    return dist_out - dist_in


def grid_sdf_world(grid: OccupancyGrid):
    """Bilinear world-coordinate sampler of the cell SDF, in world units.

    The sampler is cached on the grid object; outside the raster it clamps to
    the border cell.
    """
    cache = getattr(grid, "_sdf_cache", None)
    if cache is None:
        sdf = grid_to_sdf(grid) * grid.cell_size
        ny, nx = sdf.shape

        def sample(points):
            pts = np.atleast_2d(np.asarray(points, float))
            fx = np.clip(pts[:, 0] / grid.cell_size - 0.5, 0, nx - 1)
            fy = np.clip(pts[:, 1] / grid.cell_size - 0.5, 0, ny - 1)
            x0 = np.clip(np.floor(fx).astype(int), 0, nx - 2) if nx > 1 else np.zeros(len(pts), int)
            y0 = np.clip(np.floor(fy).astype(int), 0, ny - 2) if ny > 1 else np.zeros(len(pts), int)
            tx, ty = fx - x0, fy - y0
            x1 = np.minimum(x0 + 1, nx - 1)
            y1 = np.minimum(y0 + 1, ny - 1)
            v = (sdf[y0, x0] * (1 - tx) * (1 - ty) + sdf[y0, x1] * tx * (1 - ty)
                 + sdf[y1, x0] * (1 - tx) * ty + sdf[y1, x1] * tx * ty)
            return v if np.asarray(points).ndim > 1 else float(v[0])

        cache = sample
        object.__setattr__(grid, "_sdf_cache", cache)
    return cache


def extract_circles(grid: OccupancyGrid, window, d_hat_cells=8.0, max_discs=16):
    """Greedy disc cover of the occupied cells inside a sensing window.

    Discs are seeded at the deepest uncovered wall cell (most negative SDF);
    the radius is the local wall half-thickness clamped to [1, d_hat_cells]
    cells.  Cells within one cell of a placed disc count as covered.  Returns
    world-coordinate obstacles, at most ``max_discs`` of them.
    """
    center, half_extent = window
    cs = grid.cell_size
    ny, nx = grid.shape
    c0 = max(0, int(np.floor((center[0] - half_extent) / cs)))
    c1 = min(nx - 1, int(np.ceil((center[0] + half_extent) / cs)))
    r0 = max(0, int(np.floor((center[1] - half_extent) / cs)))
    r1 = min(ny - 1, int(np.ceil((center[1] + half_extent) / cs)))
    if c0 > c1 or r0 > r1:
        return []
    sub = grid.occupied[r0 : r1 + 1, c0 : c1 + 1]
    if not sub.any():
        return []
    sdf = getattr(grid, "_cell_sdf", None)
    if sdf is None:
        sdf = grid_to_sdf(grid)
        object.__setattr__(grid, "_cell_sdf", sdf)
    rows, cols = np.nonzero(sub)
    rows, cols = rows + r0, cols + c0
    depth = -sdf[rows, cols]  # wall half-thickness in cells, >= 1 on walls
    # deterministic order: deepest first, then row-major
    order = np.lexsort((cols, rows, -depth))
    rows, cols, depth = rows[order], cols[order], depth[order]
    uncovered = np.ones(len(rows), dtype=bool)
    discs = []
    xy = np.stack([(cols + 0.5) * cs, (rows + 0.5) * cs], axis=1)
    while uncovered.any() and len(discs) < max_discs:
        k = int(np.argmax(uncovered))  # first uncovered in sorted order
        r_cells = float(np.clip(depth[k], 1.0, d_hat_cells))
        discs.append(Obstacle(xy[k].copy(), r_cells * cs, 1.0))
        covered = np.linalg.norm(xy - xy[k], axis=1) <= (r_cells + 1.0) * cs
        uncovered &= ~covered
    return discs

"""Procedural workspace generation.

Families are defined by density/gap knobs; instances are rejection-sampled
until start and goal are clear and a deformable-feasible corridor exists
(certified by inflated-grid A* at the squeezed robot radius).  All
randomness flows from numpy SeedSequence streams so batches reproduce
bit-exactly.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .baselines import astar_rigid
from .workspace import Obstacle, OccupancyGrid, Workspace, signed_distances


@dataclass(frozen=True)
class FamilyParams:
    side: float = 12.0
    n_obstacles: tuple = (6, 10)
    radius: tuple = (0.35, 0.65)
    start_goal_clearance: float = 0.55  # expanded ring must fit at both ends
    r_feasible: float = 0.21            # squeezed radius for the corridor check
    weight: float = 1.0
    max_tries: int = 400


FAMILIES = {
    "train": FamilyParams(),
    "test_id": FamilyParams(),  # matched statistics, disjoint seeds
    "test_ood": FamilyParams(n_obstacles=(10, 14), radius=(0.45, 0.85)),
}


class GenerationError(RuntimeError):
    """Rejection budget exhausted without a feasible instance."""


def _feasible(ws: Workspace, r_feasible: float) -> bool:
    plan = astar_rigid(ws, resolution=0.1, inflation_radius=r_feasible)
    return plan.feasible


def generate_workspace(family: str, seed: int) -> Workspace:
    """Sample one obstacle-field instance of the given family."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; have {sorted(FAMILIES)}")
    par = FAMILIES[family]
    # family name folds into the stream so train/test_id differ at equal seed
    root = np.random.SeedSequence([seed, zlib.crc32(family.encode())])
    rng = np.random.default_rng(root)
    L = par.side
    start = np.array([1.0, L / 2])
    goal = np.array([L - 1.0, L / 2])
    for _ in range(par.max_tries):
        n = int(rng.integers(par.n_obstacles[0], par.n_obstacles[1] + 1))
        obstacles = []
        for k in range(n):
            r = float(rng.uniform(*par.radius))
            if k < 3:
                # keep a few obstacles near the start-goal line so every
                # instance actually exercises avoidance
                cx = float(rng.uniform(0.3 * L, 0.7 * L))
                cy = float(L / 2 + rng.uniform(-1.2, 1.2))
                c = np.array([cx, cy])
            else:
                c = rng.uniform(r + 0.2, L - r - 0.2, size=2)
            ob = Obstacle(c, r, par.weight)
            if signed_distance_ok(ob, start, goal, par.start_goal_clearance):
                obstacles.append(ob)
        if len(obstacles) < par.n_obstacles[0] // 2:
            continue
        ws = Workspace(L, obstacles, start, goal, seed=seed)
        if _feasible(ws, par.r_feasible):
            return ws
    raise GenerationError(f"no feasible {family} workspace for seed {seed}")


def signed_distance_ok(ob: Obstacle, start, goal, clearance) -> bool:
    return (np.linalg.norm(start - ob.center) - ob.radius >= clearance
            and np.linalg.norm(goal - ob.center) - ob.radius >= clearance)


def generate_bottleneck(seed: int, gap_half_range=(0.24, 0.38), side=12.0,
                        r_fence=0.8) -> Workspace:
    """Fence of overlapping discs across the workspace with a single gap.

    The half-gap is sampled inside (s0 * r_base, r_base) so a rigid disc of
    the rest radius cannot pass while the squeezed ring can.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB07]))
    gap_half = float(rng.uniform(*gap_half_range))
    yc = float(rng.uniform(side * 0.3, side * 0.7))
    xc = float(rng.uniform(side * 0.42, side * 0.58))
    obstacles = []
    y = yc - gap_half - r_fence
    while y > -r_fence:
        obstacles.append(Obstacle(np.array([xc, y]), r_fence))
        y -= 1.2 * r_fence
    y = yc + gap_half + r_fence
    while y < side + r_fence:
        obstacles.append(Obstacle(np.array([xc, y]), r_fence))
        y += 1.2 * r_fence
    start = np.array([xc - side * 0.33, yc + float(rng.uniform(-0.5, 0.5))])
    goal = np.array([xc + side * 0.33, yc + float(rng.uniform(-0.5, 0.5))])
    return Workspace(side, obstacles, start, goal, seed=seed)


def generate_dungeon(seed: int, cells: int = 5, block: int = 4,
                     upscale: int = 2) -> Workspace:
    """Carved maze dungeon: depth-first spanning tree over a cell lattice.

    Corridors are ``block`` lattice cells wide with one-cell walls, so the
    lattice side is cells * (block + 1) + 1 and connectivity is guaranteed.
    The raster is refined ``upscale`` times (cell_size = 1 / upscale) so the
    disc fitting of walls carries sub-cell accuracy; world geometry is
    unchanged.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD06]))
    n = cells * (block + 1) + 1
    occ = np.ones((n, n), dtype=bool)

    def carve_cell(cx, cy):
        r0, c0 = 1 + cy * (block + 1), 1 + cx * (block + 1)
        occ[r0 : r0 + block, c0 : c0 + block] = False

    def carve_wall(ax, ay, bx, by):
        r0, c0 = 1 + ay * (block + 1), 1 + ax * (block + 1)
        r1, c1 = 1 + by * (block + 1), 1 + bx * (block + 1)
        rr, cc = min(r0, r1), min(c0, c1)
        if ax == bx:
            occ[rr : rr + 2 * block + 1, cc : cc + block] = False
        else:
            occ[rr : rr + block, cc : cc + 2 * block + 1] = False

    visited = np.zeros((cells, cells), dtype=bool)
    stack = [(0, 0)]
    visited[0, 0] = True
    carve_cell(0, 0)
    while stack:
        cx, cy = stack[-1]
        options = [(cx + dx, cy + dy) for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1))
                   if 0 <= cx + dx < cells and 0 <= cy + dy < cells
                   and not visited[cy + dy, cx + dx]]
        if not options:
            stack.pop()
            continue
        nx, ny = options[rng.integers(len(options))]
        visited[ny, nx] = True
        carve_cell(nx, ny)
        carve_wall(cx, cy, nx, ny)
        stack.append((nx, ny))

    if upscale > 1:
        occ = np.kron(occ, np.ones((upscale, upscale), dtype=bool))
    grid = OccupancyGrid(occ, cell_size=1.0 / upscale)
    half = (block + 1) / 2.0 + 0.5
    start = np.array([half, half])
    goal = np.array([n - half, n - half])
    return Workspace(float(n), [], start, goal, grid=grid, seed=seed)


def gap_statistics(ws: Workspace) -> dict:
    """Density and gap-width descriptors used to verify family shifts."""
    n = len(ws.obstacles)
    area = sum(np.pi * ob.radius ** 2 for ob in ws.obstacles) / ws.side ** 2
    gaps = []
    for i, ob in enumerate(ws.obstacles):
        others = ws.obstacles[:i] + ws.obstacles[i + 1 :]
        if others:
            d = signed_distances(others, ob.center) - ob.radius
            gaps.append(float(d.min()))
    return {
        "n_obstacles": n,
        "occupied_fraction": float(area),
        "mean_radius": float(np.mean([ob.radius for ob in ws.obstacles])) if n else 0.0,
        "mean_nn_gap": float(np.mean(gaps)) if gaps else float("inf"),
    }

"""Reference planners: grid A* (rigid and deformable), potential fields, DWA.

The A* planners see the full map and provide the reference path length used
by SPL and detour metrics.  PF and DWA are local reactive controllers run
under exactly the same stage manager, sensing window, and coverage
accounting as the adaptive navigator; they consume only the sensed
EnvironmentContext, never the workspace itself.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from .navigator import EpisodeConfig, EpisodeResult, ExitSelector
from .energy import POINT_LAYOUT
from .workspace import (
    CircleRegistry,
    Obstacle,
    CoverageTracker,
    DeadEndError,
    EnvironmentContext,
    StageManager,
    Workspace,
    grid_sdf_world,
    grid_to_sdf,
    sense,
    signed_distances,
)

_SQRT2 = np.sqrt(2.0)
_STEPS = [(-1, -1, _SQRT2), (-1, 0, 1.0), (-1, 1, _SQRT2), (0, -1, 1.0),
          (0, 1, 1.0), (1, -1, _SQRT2), (1, 0, 1.0), (1, 1, _SQRT2)]


@dataclass
class GridPlan:
    path_cells: list
    waypoints: np.ndarray
    length: float
    expansions: int
    feasible: bool
    resolution: float = 0.0


def clearance_raster(ws: Workspace, resolution: float):
    """Per-cell clearance (distance to the nearest obstacle surface).

    Continuous workspaces get exact circle distances at cell centers;
    dungeon workspaces reuse their grid's Euclidean distance transform.
    """
    if ws.grid is not None:
        sdf = grid_to_sdf(ws.grid) * ws.grid.cell_size
        return sdf, ws.grid.cell_size
    n = max(2, int(round(ws.side / resolution)))
    cell = ws.side / n
    centers = (np.arange(n) + 0.5) * cell
    xs, ys = np.meshgrid(centers, centers)  # row-major: [row=y, col=x]
    clear = np.full((n, n), np.inf)
    for ob in ws.obstacles:
        d = np.hypot(xs - ob.center[0], ys - ob.center[1]) - ob.radius
        clear = np.minimum(clear, d)
    return clear, cell


def _to_cell(point, cell, shape):
    col = int(np.clip(point[0] / cell, 0, shape[1] - 1))
    row = int(np.clip(point[1] / cell, 0, shape[0] - 1))
    return row, col


def _astar(free, start_rc, goal_rc, cell, edge_multiplier=None):
    """8-connected A* with octile heuristic; returns (path, cost, expansions).

    edge_multiplier(r, c) >= 1 scales the geometric cost of edges entering
    cell (r, c); the heuristic stays admissible.
    """
    ny, nx = free.shape
    if not (free[start_rc] and free[goal_rc]):
        return None, np.inf, 0

    def h(rc):
        dy, dx = abs(rc[0] - goal_rc[0]), abs(rc[1] - goal_rc[1])
        return cell * (max(dy, dx) + (_SQRT2 - 1.0) * min(dy, dx))

    g = {start_rc: 0.0}
    came = {}
    pq = [(h(start_rc), start_rc)]
    closed = set()
    expansions = 0
    while pq:
        f, cur = heapq.heappop(pq)
        if cur in closed:
            continue
        closed.add(cur)
        expansions += 1
        if cur == goal_rc:
            path = [cur]
            while cur in came:
                cur = came[cur]
                path.append(cur)
            return path[::-1], g[goal_rc], expansions
        r, c = cur
        for dr, dc, w in _STEPS:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < ny and 0 <= nc < nx) or not free[nr, nc]:
                continue
            step = w * cell
            if edge_multiplier is not None:
                step *= edge_multiplier(nr, nc)
            cand = g[cur] + step
            if cand < g.get((nr, nc), np.inf):
                g[(nr, nc)] = cand
                came[(nr, nc)] = cur
                heapq.heappush(pq, (cand + h((nr, nc)), (nr, nc)))
    return None, np.inf, expansions


def _plan_from(path, cost, expansions, cell):
    if path is None:
        return GridPlan([], np.zeros((0, 2)), np.inf, expansions, False, cell)
    wps = np.array([[(c + 0.5) * cell, (r + 0.5) * cell] for r, c in path])
    length = float(np.linalg.norm(np.diff(wps, axis=0), axis=1).sum()) if len(wps) > 1 else 0.0
    return GridPlan(path, wps, length, expansions, True, cell)


def astar_rigid(ws: Workspace, resolution: float, inflation_radius: float) -> GridPlan:
    """Optimal 8-connected path for a rigid disc of the given radius.

    Cells with clearance below the inflation radius are blocked; an
    infeasible plan certifies that the rigid disc cannot pass.
    """
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    clear, cell = clearance_raster(ws, resolution)
    free = clear >= inflation_radius
    start = _to_cell(ws.start, cell, free.shape)
    goal = _to_cell(ws.goal, cell, free.shape)
    path, cost, exp = _astar(free, start, goal, cell)
    return _plan_from(path, cost, exp, cell)


def astar_deformable(ws: Workspace, resolution: float, r_min: float,
                     penalty_gain: float = 1.0, r_rest: float = None) -> GridPlan:
    """Clearance-aware A*: squeezing below the rest radius costs extra.

    Edge cost = geometric length * (1 + gain * max(0, r_rest - clr) /
    (clr - r_min)) on cells with clearance above r_min; impassable below.
    """
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    r_rest = r_min * 2.0 if r_rest is None else r_rest
    clear, cell = clearance_raster(ws, resolution)
    free = clear > r_min

    def multiplier(r, c):
        clr = clear[r, c]
        squeeze = max(0.0, r_rest - clr)
        return 1.0 + penalty_gain * squeeze / (clr - r_min)

    start = _to_cell(ws.start, cell, free.shape)
    goal = _to_cell(ws.goal, cell, free.shape)
    path, cost, exp = _astar(free, start, goal, cell, multiplier if penalty_gain > 0 else None)
    return _plan_from(path, cost, exp, cell)


# ---------------------------------------------------------------------------
# Local reactive baselines (stagewise sensing only)

@dataclass
class PFGains:
    k_att: float = 1.0
    k_rep: float = 0.3
    d_hat: float = 0.8
    v_max: float = 1.2
    d_floor: float = 1e-3  # distance floor inside repulsion to keep it finite


def pf_step(position, ctx: EnvironmentContext, stage_goal, gains: PFGains) -> np.ndarray:
    """Attractive pull to the stage exit plus inverse-square repulsion."""
    position = np.asarray(position, float)
    v = gains.k_att * (np.asarray(stage_goal, float) - position)
    for _, ob in ctx.obstacles:
        delta = position - ob.center
        dist = float(np.linalg.norm(delta))
        d = max(dist - ob.radius, gains.d_floor)
        if d < gains.d_hat and dist > 1e-12:
            mag = gains.k_rep * (1.0 / d - 1.0 / gains.d_hat) / (d * d)
            v = v + mag * (delta / dist)
    speed = float(np.linalg.norm(v))
    if speed > gains.v_max:
        v = v * (gains.v_max / speed)
    return v


@dataclass
class DWAConfig:
    v_max: float = 1.2
    n_per_axis: int = 7
    horizon: int = 8
    dt: float = 0.1
    w_progress: float = 1.0
    w_clearance: float = 0.4
    w_speed: float = 0.05
    robot_radius: float = 0.0
    d_hat: float = 0.8
    stage_bounds: tuple = None  # (x0, y0, x1, y1); leaving it rejects a candidate


@dataclass
class DWAResult:
    velocity: np.ndarray
    blocked: bool
    score: float
    index: int


def dwa_step(position, ctx: EnvironmentContext, stage_goal, cfg: DWAConfig) -> DWAResult:
    """Sample (v_x, v_y) on a grid, roll out, score, hard-reject collisions.

    Ties go to the lowest candidate index (row-major over the grid).
    """
    position = np.asarray(position, float)
    axis = np.linspace(-cfg.v_max, cfg.v_max, cfg.n_per_axis)
    obstacles = ctx.obstacle_list()
    goal = np.asarray(stage_goal, float)
    d0 = float(np.linalg.norm(position - goal))
    # shorten the lookahead near the goal so the coarse grid can close in
    horizon = max(1, min(cfg.horizon, int(np.ceil(d0 / (cfg.v_max * cfg.dt)))))
    best = None  # (score, index, velocity)
    idx = -1
    for vy in axis:
        for vx in axis:
            idx += 1
            v = np.array([vx, vy])
            pts = position[None, :] + np.outer(np.arange(1, horizon + 1) * cfg.dt, v)
            if cfg.stage_bounds is not None:
                x0, y0, x1, y1 = cfg.stage_bounds
                if np.any((pts[:, 0] < x0) | (pts[:, 0] > x1)
                          | (pts[:, 1] < y0) | (pts[:, 1] > y1)):
                    continue
            if obstacles:
                clr = np.min([signed_distances(obstacles, p) for p in pts]) - cfg.robot_radius
            else:
                clr = cfg.d_hat
            if clr < 0:
                continue  # hard rejection of colliding candidates
            progress = d0 - float(np.linalg.norm(pts[-1] - goal))
            score = (cfg.w_progress * progress + cfg.w_clearance * min(clr, cfg.d_hat)
                     + cfg.w_speed * float(np.hypot(vx, vy)))
            if best is None or score > best[0]:
                best = (score, idx, v)
    if best is None:
        return DWAResult(np.zeros(2), True, -np.inf, -1)
    return DWAResult(best[2], False, best[0], best[1])


# ---------------------------------------------------------------------------
# Matched-sensing episode wrappers

def run_baseline_episode(ws: Workspace, method: str, cfg: EpisodeConfig,
                         robot_radius: float = 0.0, pf_gains: PFGains = None,
                         dwa_cfg: DWAConfig = None) -> EpisodeResult:
    """Run PF or DWA as a rigid disc under the navigator's sensing regime.

    Emits the same EpisodeResult artifact as the adaptive navigator so one
    evaluation pipeline covers every method.
    """
    if method not in ("pf", "dwa"):
        raise ValueError(f"unknown baseline method {method!r}")
    t_wall = time.perf_counter()
    t_y = cfg.horizons[0]
    stages = StageManager(ws.side, cfg.stage_w, cfg.stage_h, cfg.stage_overlap,
                          cfg.r_inflate, cfg.passable_width)
    tracker = CoverageTracker(ws.side, cfg.window / cfg.coverage_cells_per_window)
    registry = CircleRegistry() if ws.grid is not None else None
    sdf = grid_sdf_world(ws.grid) if ws.grid is not None else None
    if pf_gains is None:
        pf_gains = PFGains(d_hat=cfg.d_hat)
    if dwa_cfg is None:
        dwa_cfg = DWAConfig(robot_radius=robot_radius, d_hat=cfg.d_hat)
    pos = ws.start.copy()
    stage_goal = ws.goal.copy()
    memory = {}
    current_stage = None
    rows = {k: [] for k in ("q", "clr", "true_clr", "dist", "speed")}
    dt = cfg.tau
    termination = "timeout"
    recent = []

    def true_clear(p):
        if ws.grid is not None:
            return float(sdf(p)) - robot_radius
        if not ws.obstacles:
            return np.inf
        return float(signed_distances(ws.obstacles, p).min()) - robot_radius

    def log(p, v):
        if ws.grid is not None:
            obs = [memory[i] for i in sorted(memory)]
            clr = float(signed_distances(obs, p).min()) - robot_radius if obs else cfg.d_hat
        else:
            clr = true_clear(p)
        rows["q"].append(np.concatenate([np.zeros(2), p]))
        rows["clr"].append(min(clr, cfg.d_hat))
        rows["true_clr"].append(true_clear(p))
        rows["dist"].append(float(np.linalg.norm(p - ws.goal)))
        rows["speed"].append(float(np.linalg.norm(v)))

    if true_clear(pos) < 0:
        log(pos, np.zeros(2))
        termination = "collision"
        n = 0
    else:
        n = 0
        v = np.zeros(2)
        exits = ExitSelector(stages, ws, cfg.eps_stage, cfg.exit_merge_radius)
        exit_dists = []
        while True:
            if float(np.linalg.norm(pos - ws.goal)) < cfg.eps_goal:
                termination = "success"
                break
            if n >= cfg.n_max:
                break
            stage_hit = float(np.linalg.norm(pos - stage_goal)) < cfg.eps_stage
            exit_dists.append(float(np.linalg.norm(pos - stage_goal)))
            if len(exit_dists) > cfg.retarget_window:
                exit_dists.pop(0)
            no_progress = (len(exit_dists) == cfg.retarget_window
                           and exit_dists[0] - min(exit_dists) < cfg.retarget_eps
                           and not np.array_equal(stage_goal, ws.goal))
            if (stage_hit or no_progress) and not np.array_equal(stage_goal, ws.goal):
                exits.record(stage_goal, attained=stage_hit)
            stage_idx = stages.stage_of(np.clip(pos, 0, ws.side),
                                        current=None if stage_hit else current_stage)
            if n % t_y == 0 or stage_idx != current_stage or stage_hit or no_progress:
                try:
                    ctx = sense(ws, np.clip(pos, 0, ws.side), cfg.window,
                                tracker=tracker, registry=registry,
                                circle_params={"d_hat_cells": cfg.circle_d_hat_cells})
                    ctx.stage_goal = exits.select(np.clip(pos, 0, ws.side), stage_idx)
                except DeadEndError:
                    termination = "dead_end"
                    break
                for idx, ob in ctx.obstacles:
                    memory[idx] = ob
                if no_progress or not np.array_equal(ctx.stage_goal, stage_goal):
                    exit_dists.clear()
                stage_goal = ctx.stage_goal
                current_stage = stage_idx
            pairs = sorted(memory.items())
            local = EnvironmentContext(stage_goal, pairs, pos.copy(), cfg.d_hat)
            if method == "pf":
                # PF plans in the rigid disc's configuration space
                if robot_radius > 0:
                    inflated = [(i, Obstacle(ob.center, ob.radius + robot_radius, ob.weight))
                                for i, ob in pairs]
                    local = EnvironmentContext(stage_goal, inflated, pos.copy(), cfg.d_hat)
                v = pf_step(pos, local, stage_goal, pf_gains)
            else:
                # pad the stage box so exit-adjacent candidates survive the
                # leave-stage rejection (tiles overlap by more than this)
                x0, y0, x1, y1 = stages.stage_bounds(stage_idx)
                pad = cfg.eps_stage
                dwa_cfg.stage_bounds = (x0 - pad, y0 - pad, x1 + pad, y1 + pad)
                out = dwa_step(pos, local, stage_goal, dwa_cfg)
                v = out.velocity
            log(pos, v)
            pos = pos + dt * v
            recent.append(pos.copy())
            n += 1
            if true_clear(pos) < 0 and cfg.collision_stop:
                termination = "collision"
                break
            if len(recent) > cfg.stuck_window:
                if float(np.linalg.norm(recent[-1] - recent[-1 - cfg.stuck_window])) < cfg.eps_stuck:
                    termination = "stuck"
                    break
    log(pos, np.zeros(2))
    m = len(rows["q"])
    zeros = np.zeros(m)
    return EpisodeResult(
        times=dt * np.arange(m),
        qs=np.stack(rows["q"]),
        ps=np.zeros((m, 4)),
        energies=zeros.copy(),
        clearances=np.asarray(rows["clr"]),
        true_clearances=np.asarray(rows["true_clr"]),
        goal_dists=np.asarray(rows["dist"]),
        speeds=np.asarray(rows["speed"]),
        betas=zeros.copy(), lams=zeros.copy(), alpha_sums=zeros.copy(),
        active_counts=zeros.copy(), mus=zeros.copy(), u_fs=np.zeros((m, 2)),
        breakdown={k: zeros.copy() for k in ("E_sensor", "E_goal", "E_obj",
                                             "E_barrier_total")},
        termination=termination,
        coverage=tracker.covered_fraction(),
        layout=POINT_LAYOUT,
        wall_time=time.perf_counter() - t_wall,
        tracker=tracker,
    )

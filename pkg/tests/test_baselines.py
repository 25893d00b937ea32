import heapq

import numpy as np
import pytest

from hamnav.baselines import (
    DWAConfig,
    PFGains,
    astar_deformable,
    astar_rigid,
    clearance_raster,
    dwa_step,
    pf_step,
    run_baseline_episode,
)
from hamnav.navigator import EpisodeConfig
from hamnav.workspace import EnvironmentContext, Obstacle, OccupancyGrid, Workspace


def dijkstra_cost(free, start, goal, cell):
    """Uniform-cost oracle for the A* optimality checks."""
    if not (free[start] and free[goal]):
        return np.inf
    ny, nx = free.shape
    dist = {start: 0.0}
    pq = [(0.0, start)]
    steps = [(-1, -1, np.sqrt(2)), (-1, 0, 1.0), (-1, 1, np.sqrt(2)), (0, -1, 1.0),
             (0, 1, 1.0), (1, -1, np.sqrt(2)), (1, 0, 1.0), (1, 1, np.sqrt(2))]
    seen = set()
    while pq:
        d, cur = heapq.heappop(pq)
        if cur in seen:
            continue
        seen.add(cur)
        if cur == goal:
            return d
        r, c = cur
        for dr, dc, w in steps:
            nb = (r + dr, c + dc)
            if 0 <= nb[0] < ny and 0 <= nb[1] < nx and free[nb]:
                nd = d + w * cell
                if nd < dist.get(nb, np.inf):
                    dist[nb] = nd
                    heapq.heappush(pq, (nd, nb))
    return np.inf


def grid_workspace(occ, cell=1.0, start=None, goal=None):
    grid = OccupancyGrid(occ, cell)
    n = occ.shape[0] * cell
    start = start or (1.5 * cell, 1.5 * cell)
    goal = goal or (n - 1.5 * cell, n - 1.5 * cell)
    return Workspace(n, [], start, goal, grid=grid)


class TestAstarRigid:
    def test_empty_straight_line(self):
        ws = Workspace(10.0, [], (0.55, 0.55), (9.55, 0.55))
        plan = astar_rigid(ws, 0.1, 0.0)
        assert plan.feasible
        assert plan.length == pytest.approx(9.0, abs=0.2)

    def test_start_equals_goal(self):
        ws = Workspace(10.0, [], (5.0, 5.0), (5.0, 5.0))
        plan = astar_rigid(ws, 0.1, 0.0)
        assert plan.feasible and plan.length == 0.0

    def test_matches_dijkstra_on_random_grids(self, rng):
        for _ in range(10):
            occ = rng.random((32, 32)) < 0.25
            occ[1, 1] = occ[30, 30] = False
            ws = grid_workspace(occ)
            plan = astar_rigid(ws, 1.0, 0.0)
            clear, cell = clearance_raster(ws, 1.0)
            free = clear >= 0.0
            oracle = dijkstra_cost(free, (1, 1), (30, 30), cell)
            if plan.feasible:
                # rigid path cost equals geometric length here
                assert plan.length == pytest.approx(oracle, abs=1e-9)
            else:
                assert oracle == np.inf

    def test_inflation_monotone(self):
        ws = Workspace(10.0, [Obstacle(np.array([5.0, 5.2]), 1.0)], (1.0, 5.0), (9.0, 5.0))
        lengths, feas = [], []
        for r in (0.0, 0.3, 0.6):
            plan = astar_rigid(ws, 0.1, r)
            feas.append(plan.feasible)
            lengths.append(plan.length if plan.feasible else np.inf)
        assert lengths[0] <= lengths[1] <= lengths[2]
        assert feas[0] >= feas[1] >= feas[2]

    def test_bottleneck_infeasible_for_rigid(self):
        # half-gap 0.3 < inflation 0.4: certification of "cannot pass"
        obstacles = [Obstacle(np.array([5.0, y]), 0.8)
                     for y in np.arange(-0.8, 4.0, 0.9)]
        obstacles += [Obstacle(np.array([5.0, y]), 0.8)
                      for y in np.arange(5.4 + 0.3 + 0.8 - 0.9, 11.0, 0.9)]
        obstacles.append(Obstacle(np.array([5.0, 4.8]), 0.8))
        obstacles.append(Obstacle(np.array([5.0, 6.6]), 0.8))  # gap at ~5.7..6.0
        ws = Workspace(10.0, obstacles, (1.0, 5.7), (9.0, 5.7))
        assert not astar_rigid(ws, 0.1, 0.4).feasible

    def test_invalid_resolution(self):
        ws = Workspace(10.0, [], (1, 1), (9, 9))
        with pytest.raises(ValueError):
            astar_rigid(ws, 0.0, 0.1)


class TestAstarDeformable:
    def test_open_map_equals_rigid(self):
        ws = Workspace(10.0, [Obstacle(np.array([5.0, 8.0]), 0.5)], (1.0, 2.0), (9.0, 2.0))
        rigid = astar_rigid(ws, 0.2, 0.3)
        soft = astar_deformable(ws, 0.2, r_min=0.3, penalty_gain=1.0, r_rest=0.4)
        assert soft.feasible
        assert soft.length == pytest.approx(rigid.length, rel=1e-9)

    def test_squeezes_where_rigid_cannot(self):
        # fence with a single 0.3 half-gap at y = 5.3
        gap_half, R, yc = 0.3, 0.8, 5.3
        obstacles = []
        y = yc - gap_half - R
        while y > -R:
            obstacles.append(Obstacle(np.array([5.0, y]), R))
            y -= 1.2 * R
        y = yc + gap_half + R
        while y < 10 + R:
            obstacles.append(Obstacle(np.array([5.0, y]), R))
            y += 1.2 * R
        ws = Workspace(10.0, obstacles, (1.0, 5.3), (9.0, 5.3))
        assert not astar_rigid(ws, 0.1, 0.4).feasible
        soft = astar_deformable(ws, 0.1, r_min=0.2, penalty_gain=1.0, r_rest=0.4)
        assert soft.feasible

    def test_zero_gain_matches_dijkstra(self, rng):
        occ = rng.random((24, 24)) < 0.2
        occ[1, 1] = occ[22, 22] = False
        ws = grid_workspace(occ)
        plan = astar_deformable(ws, 1.0, r_min=0.0, penalty_gain=0.0)
        clear, cell = clearance_raster(ws, 1.0)
        free = clear > 0.0
        oracle = dijkstra_cost(free, (1, 1), (22, 22), cell)
        if plan.feasible:
            assert plan.length == pytest.approx(oracle, abs=1e-9)
        else:
            assert oracle == np.inf


def ctx_of(obstacles, goal=(5.0, 0.0)):
    return EnvironmentContext(np.asarray(goal, float), list(enumerate(obstacles)),
                              np.zeros(2), 1.0)


class TestPotentialField:
    def test_no_obstacles_points_at_goal(self):
        g = PFGains(k_att=1.0, v_max=10.0)
        v = pf_step((0.0, 0.0), ctx_of([]), (3.0, 4.0), g)
        np.testing.assert_allclose(v, [3.0, 4.0])

    def test_symmetric_pair_cancels_lateral(self):
        obs = [Obstacle(np.array([2.0, 0.7]), 0.3), Obstacle(np.array([2.0, -0.7]), 0.3)]
        g = PFGains(k_rep=1.0, d_hat=1.5, v_max=10.0)
        v = pf_step((2.0, 0.0), ctx_of(obs), (5.0, 0.0), g)
        assert v[1] == pytest.approx(0.0, abs=1e-12)

    def test_head_on_magnitude(self):
        ob = Obstacle(np.array([1.0, 0.0]), 0.4)
        g = PFGains(k_att=0.0, k_rep=0.7, d_hat=1.0, v_max=100.0)
        v = pf_step((0.0, 0.0), ctx_of([ob]), (5.0, 0.0), g)
        d = 1.0 - 0.4
        expected = 0.7 * (1 / d - 1 / 1.0) / d ** 2
        np.testing.assert_allclose(v, [-expected, 0.0], rtol=1e-12)

    def test_speed_clamp(self):
        g = PFGains(k_att=10.0, v_max=1.2)
        v = pf_step((0.0, 0.0), ctx_of([]), (100.0, 0.0), g)
        assert np.linalg.norm(v) == pytest.approx(1.2)


class TestDWA:
    def test_empty_picks_max_speed_toward_goal(self):
        cfg = DWAConfig(v_max=1.0, n_per_axis=5, horizon=4, dt=0.1,
                        w_progress=1.0, w_clearance=0.0, w_speed=0.01)
        out = dwa_step((0.0, 0.0), ctx_of([]), (10.0, 0.0), cfg)
        assert not out.blocked
        np.testing.assert_allclose(out.velocity, [1.0, 0.0])

    def test_hard_rejection_keeps_clear(self):
        ob = Obstacle(np.array([0.5, 0.0]), 0.3)
        cfg = DWAConfig(v_max=1.0, n_per_axis=7, horizon=8, dt=0.2)
        out = dwa_step((0.0, 0.0), ctx_of([ob]), (2.0, 0.0), cfg)
        assert not out.blocked
        pts = np.array([np.array([0.0, 0.0]) + k * 0.2 * out.velocity for k in range(1, 9)])
        clr = np.min([np.linalg.norm(pts - ob.center, axis=1) - ob.radius])
        assert clr >= 0

    def test_exhaustive_rescoring_oracle(self, rng):
        obstacles = [Obstacle(rng.uniform(-1.5, 1.5, 2), 0.3) for _ in range(3)]
        goal = rng.uniform(-3, 3, 2)
        cfg = DWAConfig(v_max=0.8, n_per_axis=5, horizon=5, dt=0.15,
                        w_progress=1.0, w_clearance=0.4, w_speed=0.05, d_hat=1.0)
        out = dwa_step((0.0, 0.0), ctx_of(obstacles, goal), goal, cfg)
        # independent re-scoring of every candidate
        axis = np.linspace(-0.8, 0.8, 5)
        best, best_idx = -np.inf, -1
        idx = -1
        d0 = np.linalg.norm(goal)
        for vy in axis:
            for vx in axis:
                idx += 1
                pts = np.array([[vx, vy]]) * np.arange(1, 6)[:, None] * 0.15
                clr = min(min(np.linalg.norm(p - ob.center) - ob.radius
                              for ob in obstacles) for p in pts)
                if clr < 0:
                    continue
                score = (1.0 * (d0 - np.linalg.norm(pts[-1] - goal))
                         + 0.4 * min(clr, 1.0) + 0.05 * np.hypot(vx, vy))
                if score > best:
                    best, best_idx = score, idx
        if best_idx == -1:
            assert out.blocked
        else:
            assert out.index == best_idx
            assert out.score == pytest.approx(best, rel=1e-9)

    def test_all_blocked(self):
        # standing inside an obstacle: every candidate, including zero
        # velocity, stays in collision
        ob = Obstacle(np.array([0.0, 0.0]), 0.5)
        cfg = DWAConfig(v_max=0.1, n_per_axis=5, horizon=3, dt=0.1)
        out = dwa_step((0.0, 0.0), ctx_of([ob]), (5.0, 0.0), cfg)
        assert out.blocked
        np.testing.assert_array_equal(out.velocity, np.zeros(2))

    def test_stage_bound_rejection(self):
        cfg = DWAConfig(v_max=1.0, n_per_axis=3, horizon=5, dt=0.5,
                        stage_bounds=(-0.5, -0.5, 0.5, 0.5))
        out = dwa_step((0.0, 0.0), ctx_of([]), (10.0, 0.0), cfg)
        # every fast candidate exits the stage; the chosen one stays inside
        assert np.max(np.abs(out.velocity)) * 0.5 * 5 <= 0.5 + 1e-9


class TestBaselineEpisodes:
    def test_pf_reaches_goal_empty(self):
        ws = Workspace(12.0, [], (1.0, 6.0), (11.0, 6.0))
        cfg = EpisodeConfig(ring=None, n_max=6000)
        res = run_baseline_episode(ws, "pf", cfg)
        assert res.termination == "success"

    def test_dwa_reaches_goal_with_obstacle(self):
        ws = Workspace(12.0, [Obstacle(np.array([6.0, 6.1]), 0.6)], (1.0, 6.0), (11.0, 6.0))
        cfg = EpisodeConfig(ring=None, n_max=6000)
        res = run_baseline_episode(ws, "dwa", cfg)
        assert res.termination == "success"
        assert res.true_clearances.min() > 0

    def test_unknown_method(self):
        ws = Workspace(12.0, [], (1.0, 6.0), (11.0, 6.0))
        with pytest.raises(ValueError):
            run_baseline_episode(ws, "rrt", EpisodeConfig(ring=None))

    def test_deterministic(self):
        ws = Workspace(12.0, [Obstacle(np.array([5.0, 6.3]), 0.8)], (1.0, 6.0), (11.0, 6.0))
        cfg = EpisodeConfig(ring=None, n_max=4000)
        a = run_baseline_episode(ws, "pf", cfg, robot_radius=0.3)
        b = run_baseline_episode(ws, "pf", cfg, robot_radius=0.3)
        assert np.array_equal(a.qs, b.qs)
        assert a.termination == b.termination

    def test_emits_same_artifact_shape(self):
        ws = Workspace(12.0, [], (1.0, 6.0), (11.0, 6.0))
        cfg = EpisodeConfig(ring=None, n_max=2000)
        res = run_baseline_episode(ws, "pf", cfg)
        n = len(res.times)
        for arr in (res.qs, res.ps, res.betas, res.u_fs, res.clearances,
                    res.true_clearances):
            assert len(arr) == n
        assert res.coverage > 0

"""Online adaptive navigation loop.

Each step assembles the surrogate Hamiltonian from the current weight state,
integrates one symplectic Euler step with frame-only damping and port input,
extracts the observable vector y = [-clearance, goal distance, -speed], and
corrects the weights with a smoothed secant-Jacobian / Tikhonov update.  The
residual the weight update cannot explain drives a port-force correction,
recomputed once per frame horizon (zero-order hold in between).

Sensing is stagewise: the world is re-sensed every T_y steps (or on stage
change / stage-goal attainment), discovered obstacles accumulate in an
episode-local memory, and only obstacles near the robot enter the energy.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dynamics import PortSelectors, step_symplectic_euler
from .energy import (
    POINT_LAYOUT,
    RING_LAYOUT,
    EnergyWeights,
    FixedTerms,
    HamiltonianSpec,
    PhaseState,
    energy_breakdown,
    potential_grad,
)
from .ring import RingParams, RingShapeModel
from .workspace import (
    CircleRegistry,
    CoverageTracker,
    DeadEndError,
    EnvironmentContext,
    StageManager,
    Workspace,
    grid_sdf_world,
    sense,
    signed_distances,
    stage_openings,
)


@dataclass
class Observables:
    """Low-dimensional feedback: min clearance, goal distance, speed."""

    clearance: float
    goal_dist: float
    speed: float

    def vector(self) -> np.ndarray:
        return np.array([-self.clearance, self.goal_dist, -self.speed])


def compute_observables(z_next: PhaseState, ctx_obstacles, x_g, shape_qoi_clearances,
                        mass, layout=POINT_LAYOUT, shape=None, d_hat=1.0) -> Observables:
    """Observables after a step.

    Clearance is the min over the new configuration's obstacle distances and
    any clearances collected from the shape rollout; it is capped at d_hat
    so the clearance channel stays bounded when nothing is active.
    """
    q, p = z_next.q, z_next.p
    if shape is not None:
        clr = shape.min_clearance(q, ctx_obstacles)
    elif ctx_obstacles:
        clr = float(signed_distances(ctx_obstacles, q[layout.frame]).min())
    else:
        clr = np.inf
    for extra in shape_qoi_clearances or ():
        clr = min(clr, float(extra))
    clr = min(clr, d_hat)
    dist = float(np.linalg.norm(q[layout.frame] - np.asarray(x_g, float)))
    speed = float(np.linalg.norm(p / np.asarray(mass, float)))
    return Observables(clearance=clr, goal_dist=dist, speed=speed)


def observable_target(y: Observables, mode: str, setpoints) -> np.ndarray:
    """Target observable vector y*.

    relative mode (main loop): clearance held at -m_safe, distance asked to
    shrink by eps_prog, speed floored at v_min while clearance is safe.
    fixed mode: the design setpoints verbatim.
    """
    if mode == "relative":
        m_safe, eps_prog, v_min = setpoints
        floor = v_min if y.clearance >= m_safe else 0.0
        return np.array([-m_safe, y.goal_dist - eps_prog, -max(y.speed, floor)])
    if mode == "fixed":
        clr_star, dist_star, speed_star = setpoints
        return np.array([-clr_star, dist_star, -speed_star])
    raise ValueError(f"unknown target mode {mode!r}")


def secant_jacobian_update(J_prev, dy, dzeta, rho, eps):
    """Exponentially smoothed rank-one secant estimate of dy/dzeta."""
    dy = np.asarray(dy, float).reshape(-1, 1)
    dzeta = np.asarray(dzeta, float).reshape(1, -1)
    J_tilde = (dy @ dzeta) / (float(np.dot(dzeta.ravel(), dzeta.ravel())) + eps)
    return rho * np.asarray(J_prev, float) + (1.0 - rho) * J_tilde


def tikhonov_step(J, dy_des, lam):
    """Solve (J^T J + lam I) dzeta = J^T dy_des via an SPD factorization."""
    J = np.asarray(J, float)
    A = J.T @ J + lam * np.eye(J.shape[1])
    rhs = J.T @ np.asarray(dy_des, float)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("singular normal equations: need lam > 0")
    return np.linalg.solve(L.T, np.linalg.solve(L, rhs))


def project_update(zeta, dzeta, kappa, form="additive"):
    """Damped weight step projected onto the nonnegative orthant.

    additive (default): zeta' = max(0, zeta + kappa .* dzeta)
    convex variant:     zeta' = max(0, (1 - kappa) .* zeta + kappa .* dzeta)
    """
    zeta = np.asarray(zeta, float)
    kappa = np.asarray(kappa, float)
    if np.any(kappa < 0) or np.any(kappa >= 1):
        raise ValueError("kappa components must lie in [0, 1)")
    if form == "additive":
        out = zeta + kappa * np.asarray(dzeta, float)
    elif form == "convex":
        out = (1.0 - kappa) * zeta + kappa * np.asarray(dzeta, float)
    else:
        raise ValueError(f"unknown update form {form!r}")
    return np.maximum(out, 0.0)


def port_correction(P, r, lam_u, box):
    """Least-squares port input from the adaptation residual, clipped to box.

    lam_u = inf disables the port exactly (returns zeros).
    """
    P = np.asarray(P, float)
    if np.isinf(lam_u):
        return np.zeros(P.shape[1])
    A = P.T @ P + lam_u * np.eye(P.shape[1])
    u = np.linalg.solve(A, P.T @ np.asarray(r, float))
    return np.clip(u, -box, box)


# ---------------------------------------------------------------------------
# Meta policy

@dataclass
class MetaTokens:
    """Inputs the meta-policy sees: per-obstacle tokens plus scalar context."""

    obstacle_ids: list
    tokens: np.ndarray       # (m, 4): rel x, rel y, radius, surface distance
    rel_stage_goal: np.ndarray
    speed: float


def build_tokens(q, p, pairs, stage_goal, mass, layout) -> MetaTokens:
    c = q[layout.frame]
    ids, rows = [], []
    for idx, ob in sorted(pairs, key=lambda kv: kv[0]):
        rel = ob.center - c
        ids.append(idx)
        rows.append([rel[0], rel[1], ob.radius, float(np.linalg.norm(rel)) - ob.radius])
    tokens = np.asarray(rows, float).reshape(len(ids), 4)
    speed = float(np.linalg.norm(p / np.asarray(mass, float)))
    return MetaTokens(ids, tokens, np.asarray(stage_goal, float) - c, speed)


@dataclass
class WeightProposal:
    beta: float
    lam: float
    alpha: dict
    mu: float


class DefaultMetaPolicy:
    """Hand-tuned weights; the untrained fallback.

    Damping grows as the nearest obstacle closes in (slow, careful motion
    near contact), everything else is constant.  ``r_offset`` shifts token
    distances from the robot center to its boundary (ring rest radius).
    """

    def __init__(self, beta=1.5, lam=1.0, alpha=2.0, mu=4.0,
                 mu_boost=1.0, d_ref=1.0, r_offset=0.4):
        self.beta, self.lam, self.alpha0, self.mu = beta, lam, alpha, mu
        self.mu_boost, self.d_ref, self.r_offset = mu_boost, d_ref, r_offset

    def propose(self, tokens: MetaTokens) -> WeightProposal:
        mu = self.mu
        if len(tokens.obstacle_ids):
            d_nose = float(tokens.tokens[:, 3].min()) - self.r_offset
            closeness = 1.0 - min(max(d_nose, 0.0) / self.d_ref, 1.0)
            mu = self.mu * (1.0 + self.mu_boost * closeness)
        return WeightProposal(self.beta, self.lam,
                              {i: self.alpha0 for i in tokens.obstacle_ids}, mu)


# ---------------------------------------------------------------------------
# Episode configuration and result

@dataclass
class AdaptConfig:
    rho: float = 0.6
    eps: float = 1e-6
    kappa_beta: float = 0.25
    kappa_gamma: float = 0.05   # damping head; also governs lam and mu
    kappa_alpha: float = 0.4
    lam_zeta: float = 1e-2
    lam_u: float = 1e-2
    kappa_v: float = 1.0
    u_box: float = 1.5
    k_alpha: int = 2
    target_mode: str = "relative"
    m_safe: float = 0.2
    eps_prog: float = 0.05
    v_min: float = 0.2
    fixed_targets: tuple = (0.3, 0.0, 0.5)
    update_form: str = "additive"
    learn_port_sensitivity: bool = False
    clearance_deadband: bool = True  # only ever request clearance increases
    zeta_cap: tuple = (8.0, 8.0, 15.0, 12.0)  # ceilings for beta, lam, alpha, mu

    def setpoints(self):
        if self.target_mode == "relative":
            return (self.m_safe, self.eps_prog, self.v_min)
        return self.fixed_targets

    def kappa_vector(self, n_alpha):
        return np.array([self.kappa_beta, self.kappa_gamma]
                        + [self.kappa_alpha] * n_alpha + [self.kappa_gamma])


@dataclass
class EpisodeConfig:
    tau: float = 0.03
    horizons: tuple = (10, 5, 1)  # (T_y, T_f, T_o), sensor slowest
    n_max: int = 4000
    eps_goal: float = 0.15
    eps_stage: float = 0.3   # attainment radius for stage exits (handoff)
    stuck_window: int = 50
    eps_stuck: float = 0.002
    d_hat: float = 0.8
    sense_half_extent: float = None  # sensing window half-size; d_hat when None
    sensor_gain: float = 1.0
    mass_frame: float = 1.5
    inertia: float = 0.6
    gamma_theta: float = 1.6
    gamma_scale: float = 2.0
    shape_damping_on: bool = True  # switch for the conservative-shape variant
    ring: RingParams | None = None
    stage_w: float = 2.6
    stage_h: float = 2.0
    stage_overlap: float = 0.3
    r_inflate: float = 0.18   # just under the fully squeezed ring radius
    passable_width: float = 0.1
    scale_floor: float = 0.25
    scale_cap: float = 1.3
    collision_stop: bool = True
    coverage_cells_per_window: int = 8  # h_cov = d_hat / 8
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    circle_d_hat_cells: float = 8.0
    retarget_window: int = 80   # steps without exit progress before retarget
    retarget_eps: float = 0.02
    contact_clearance: float = 0.0   # sustained-contact retarget threshold (off at 0)
    contact_window: int = 60
    exit_merge_radius: float = 1.2

    def __post_init__(self):
        t_y, t_f, t_o = self.horizons
        if min(t_y, t_f, t_o) < 1:
            raise ValueError("all horizons must be >= 1")

    @property
    def window(self) -> float:
        return self.d_hat if self.sense_half_extent is None else self.sense_half_extent


def dungeon_setup(n_max=12000):
    """Tuned configuration for grid-maze worlds (point robot).

    The sensing window spans most of a room while the barrier activation
    stays tight; stages align with the room pitch so exits are doors.
    """
    cfg = EpisodeConfig(ring=None, d_hat=1.5, sense_half_extent=4.0, n_max=n_max,
                        eps_goal=0.4, eps_stage=1.0, stage_w=6.0, stage_h=6.0,
                        stage_overlap=1.0 / 6.0, r_inflate=0.8, passable_width=0.5,
                        adapt=AdaptConfig(m_safe=0.5, v_min=0.3),
                        circle_d_hat_cells=3.0, contact_clearance=0.45,
                        contact_window=20)
    meta = DefaultMetaPolicy(beta=1.0, lam=0.0, alpha=3.0, mu=6.0,
                             r_offset=0.0, mu_boost=0.5)
    return cfg, meta


@dataclass
class EpisodeResult:
    """Trajectory log, parameter history and bookkeeping for one episode."""

    times: np.ndarray
    qs: np.ndarray
    ps: np.ndarray
    energies: np.ndarray
    clearances: np.ndarray       # sensed clearance (capped at d_hat)
    true_clearances: np.ndarray  # against the ground-truth world
    goal_dists: np.ndarray
    speeds: np.ndarray
    betas: np.ndarray
    lams: np.ndarray
    alpha_sums: np.ndarray
    active_counts: np.ndarray
    mus: np.ndarray
    u_fs: np.ndarray
    breakdown: dict
    termination: str
    coverage: float
    layout: object
    wall_time: float
    tracker: CoverageTracker = None
    boundary_snapshots: list = field(default_factory=list)
    final_weights: dict = field(default_factory=dict)

    @property
    def positions(self):
        return self.qs[:, self.layout.frame]

    @property
    def success(self) -> bool:
        return self.termination == "success"

    @property
    def n_steps(self):
        return len(self.times) - 1

    def path_length(self) -> float:
        d = np.diff(self.positions, axis=0)
        return float(np.linalg.norm(d, axis=1).sum())


class ExitSelector:
    """Stage-exit choice routed over the stage adjacency graph.

    Stages are nodes; two neighboring tiles are connected when their shared
    boundary has a free opening.  A breadth-first tree from the goal stage
    fixes each stage's outgoing direction, and the exposed exit is the best
    opening on that directed edge (fewest traversals, then widest capped
    width, then nearest the goal).  Openings at the robot's feet are skipped
    so a just-attained exit hands over to the next one.
    """

    DIRS = {"e": (1, 0), "w": (-1, 0), "n": (0, 1), "s": (0, -1)}

    def __init__(self, stages: StageManager, ws: Workspace, eps_stage: float,
                 merge_radius: float = 1.2, max_failures: int = 3):
        self.stages, self.ws, self.eps = stages, ws, eps_stage
        self.merge_radius = merge_radius
        self.max_failures = max_failures
        self.traversals = []  # [point, n]: successful attains rotate openings
        self.failures = []    # [point, n]: abandons; too many kill the opening
        self._openings = {}   # (i, j, dir) -> list of (score, dist, mid)
        self._broken = set()  # (stage, dir) edges with no live opening left
        self._next_dir = None

    # -- graph ---------------------------------------------------------------

    def _edge_openings(self, idx, direction):
        key = (idx[0], idx[1], direction)
        if key in self._openings:
            return self._openings[key]
        from .workspace import _edge_blocked_intervals, _free_intervals
        x0, y0, x1, y1 = self.stages.stage_bounds(idx)
        L = self.ws.side
        seg = {"e": ((x1, y0), (x1, y1)), "w": ((x0, y0), (x0, y1)),
               "n": ((x0, y1), (x1, y1)), "s": ((x0, y0), (x1, y0))}[direction]
        p0, p1 = np.asarray(seg[0], float), np.asarray(seg[1], float)
        out = []
        boundary = (direction == "e" and x1 >= L - 1e-9) or \
                   (direction == "w" and x0 <= 1e-9) or \
                   (direction == "n" and y1 >= L - 1e-9) or \
                   (direction == "s" and y0 <= 1e-9)
        if not boundary:
            length, blocked = _edge_blocked_intervals(p0, p1, self.ws,
                                                      self.stages.r_inflate)
            u = (p1 - p0) / length
            for a, b in _free_intervals(length, blocked):
                width = b - a
                if width <= 1e-9:
                    continue
                mid = p0 + u * ((a + b) / 2.0)
                score = min(width, self.stages.passable_width)
                out.append((score, float(np.linalg.norm(mid - self.ws.goal)), mid))
        self._openings[key] = out
        return out

    def _build_route(self):
        from collections import deque as _dq
        nx, ny = self.stages.nx, self.stages.ny
        goal_stage = self.stages.stage_of(self.ws.goal)
        dist = {goal_stage: 0}
        frontier = _dq([goal_stage])
        parent_dir = {}
        while frontier:
            cur = frontier.popleft()
            for d, (di, dj) in sorted(self.DIRS.items()):
                nb = (cur[0] + di, cur[1] + dj)
                if not (0 <= nb[0] < nx and 0 <= nb[1] < ny) or nb in dist:
                    continue
                # nb connects to cur through nb's edge facing cur
                back = {"e": "w", "w": "e", "n": "s", "s": "n"}[d]
                if (nb, back) in self._broken:
                    continue
                if self._live_openings(nb, back):
                    dist[nb] = dist[cur] + 1
                    parent_dir[nb] = back
                    frontier.append(nb)
        self._next_dir = parent_dir
        self._reachable = dist

    # -- bookkeeping ----------------------------------------------------------

    @staticmethod
    def _bump(table, point, merge_radius):
        for entry in table:
            if float(np.linalg.norm(entry[0] - point)) < merge_radius:
                entry[1] += 1
                return
        table.append([np.asarray(point, float).copy(), 1])

    @staticmethod
    def _lookup(table, mid, merge_radius):
        for point, count in table:
            if float(np.linalg.norm(point - mid)) < merge_radius:
                return count
        return 0

    def record(self, exit_point, attained: bool):
        """Bookkeeping for an exit the robot reached (attained) or gave up on."""
        table = self.traversals if attained else self.failures
        self._bump(table, exit_point, self.merge_radius)

    def _live_openings(self, idx, direction):
        return [o for o in self._edge_openings(idx, direction)
                if self._lookup(self.failures, o[2], self.merge_radius) < self.max_failures]

    # -- selection -------------------------------------------------------------

    def select(self, position, stage_idx) -> np.ndarray:
        if self._next_dir is None:
            self._build_route()
        x0, y0, x1, y1 = self.stages.stage_bounds(stage_idx)
        goal = self.ws.goal
        if x0 <= goal[0] <= x1 and y0 <= goal[1] <= y1:
            return goal.copy()
        key = tuple(stage_idx)
        if key not in self._reachable:
            raise DeadEndError(f"stage {stage_idx} is cut off from the goal stage")
        direction = self._next_dir[key]
        alive = self._live_openings(key, direction)
        if not alive:
            # the routed edge is impassable in practice: drop it and re-route
            self._broken.add((key, direction))
            self._next_dir = None
            return self.select(position, stage_idx)
        scored = sorted(
            ((self._lookup(self.failures, mid, self.merge_radius),
              self._lookup(self.traversals, mid, self.merge_radius),
              -score, dist, k, mid)
             for k, (score, dist, mid) in enumerate(alive)),
            key=lambda t: t[:5])
        for *_, mid in scored:
            if float(np.linalg.norm(mid - position)) >= self.eps:
                return mid
        return scored[0][-1]


class _WeightState:
    """Persistent weight map: adapted values survive sensing refreshes."""

    def __init__(self):
        self.beta = 1.0
        self.lam = 0.0
        self.mu = 0.0
        self.alpha = {}
        self.alpha_base = {}  # proposal values; adaptation never goes below

    def merge_proposal(self, prop: WeightProposal):
        # scalars re-anchor at every sensing event; per-obstacle barrier
        # weights persist once proposed (the secant loop owns them)
        self.beta, self.lam, self.mu = prop.beta, prop.lam, prop.mu
        for idx, a in prop.alpha.items():
            if idx not in self.alpha:
                self.alpha[idx] = a
                self.alpha_base[idx] = a


class _Episode:
    """One episode's mutable state; run() drives the loop."""

    def __init__(self, ws: Workspace, cfg: EpisodeConfig, meta):
        self.ws, self.cfg, self.meta = ws, cfg, meta
        if cfg.ring is not None:
            self.layout = RING_LAYOUT
            self.shape = RingShapeModel(cfg.ring)
            self.mass = np.array([1.0, 1.0, cfg.mass_frame, cfg.mass_frame,
                                  cfg.inertia, cfg.ring.mass_scale])
            self.structural = np.zeros(6)
            if cfg.shape_damping_on:
                self.structural[4] = cfg.gamma_theta
                self.structural[5] = cfg.gamma_scale
        else:
            self.layout = POINT_LAYOUT
            self.shape = None
            self.mass = np.array([1.0, 1.0, cfg.mass_frame, cfg.mass_frame])
            self.structural = np.zeros(4)
        self.selectors = PortSelectors(dim=self.layout.dim, frame=self.layout.frame)
        self.damping_scale = float(getattr(ws, "damping_scale", 1.0))
        self.stages = StageManager(ws.side, cfg.stage_w, cfg.stage_h, cfg.stage_overlap,
                                   cfg.r_inflate, cfg.passable_width)
        self.tracker = CoverageTracker(ws.side, cfg.window / cfg.coverage_cells_per_window)
        self.registry = CircleRegistry() if ws.grid is not None else None
        self.sdf = grid_sdf_world(ws.grid) if ws.grid is not None else None
        q = np.zeros(self.layout.dim)
        q[self.layout.frame] = ws.start
        if self.layout.scale is not None:
            q[self.layout.scale] = 1.0
        self.z = PhaseState(q, np.zeros(self.layout.dim))
        self.weights = _WeightState()
        self.memory = {}
        self.stage_goal = ws.goal.copy()
        self.current_stage = None
        self.exits = ExitSelector(self.stages, ws, cfg.eps_stage,
                                  cfg.exit_merge_radius)
        self.exit_dists = deque(maxlen=cfg.retarget_window)
        self.contact_clrs = deque(maxlen=max(cfg.contact_window, 1))
        self.u_f = np.zeros(2)
        self.J = np.zeros((3, 3 + cfg.adapt.k_alpha))
        self.P_learn = np.zeros((3, 2))
        self.prev_y = self.prev_zeta = self.prev_u = None
        self.prev_slots = None
        self.recent = deque(maxlen=cfg.stuck_window + 1)
        self.log = {k: [] for k in
                    ("t", "q", "p", "H", "clr", "true_clr", "dist", "speed", "beta",
                     "lam", "alpha_sum", "active", "mu", "u_f", "E_sensor", "E_goal",
                     "E_obj", "E_barrier_total")}
        self.snapshots = []

    # -- geometry helpers ---------------------------------------------------

    def true_clearance(self, q) -> float:
        """Clearance against the ground-truth world (not the sensed one)."""
        if self.ws.grid is not None:
            base = float(self.sdf(q[self.layout.frame]))
            if self.shape is not None:
                base -= float(q[self.layout.scale][0]) * self.shape.params.r_base
            return base
        if not self.ws.obstacles:
            return np.inf
        if self.shape is not None:
            return self.shape.min_clearance(q, self.ws.obstacles)
        return float(signed_distances(self.ws.obstacles, q[self.layout.frame]).min())

    def active_pairs(self, q):
        """Memory obstacles whose barrier can be non-zero at q.

        For the ring the activation test expands by the current ring radius,
        since the barrier acts on boundary samples rather than the center.
        """
        c = q[self.layout.frame]
        reach = self.cfg.d_hat
        if self.shape is not None:
            reach += float(q[self.layout.scale][0]) * self.shape.params.r_base * 1.05
        out = []
        for idx in sorted(self.memory):
            ob = self.memory[idx]
            if float(np.linalg.norm(c - ob.center)) - ob.radius <= reach:
                out.append((idx, ob))
        return out

    def spec_for(self, act):
        w = self.weights
        weights = EnergyWeights(beta=w.beta, lam=w.lam,
                                alpha={i: w.alpha.get(i, 0.0) for i, _ in act},
                                mu=w.mu, u_f=self.u_f.copy())
        ctx = EnvironmentContext(self.stage_goal, act,
                                 self.z.q[self.layout.frame].copy(), self.cfg.d_hat)
        fixed = FixedTerms(layout=self.layout, goal=self.stage_goal, d_hat=self.cfg.d_hat,
                           sensor_gain=self.cfg.sensor_gain, shape=self.shape)
        return HamiltonianSpec(mass=self.mass, weights=weights, context=ctx, fixed=fixed)

    def observe(self, z, act_obs, shape_clearances=()):
        return compute_observables(z, act_obs, self.ws.goal, shape_clearances, self.mass,
                                   self.layout, self.shape, self.cfg.d_hat)

    # -- logging ------------------------------------------------------------

    def log_state(self, spec, act, y: Observables):
        lg = self.log
        lg["t"].append(len(lg["t"]) * self.cfg.tau)
        lg["q"].append(self.z.q.copy())
        lg["p"].append(self.z.p.copy())
        parts = energy_breakdown(self.z, spec)
        for k in ("E_sensor", "E_goal", "E_obj", "E_barrier_total", "H"):
            lg[k].append(parts[k])
        lg["clr"].append(y.clearance)
        lg["true_clr"].append(self.true_clearance(self.z.q))
        lg["dist"].append(y.goal_dist)
        lg["speed"].append(y.speed)
        lg["beta"].append(self.weights.beta)
        lg["lam"].append(self.weights.lam)
        lg["alpha_sum"].append(sum(self.weights.alpha.get(i, 0.0) for i, _ in act))
        lg["active"].append(len(act))
        lg["mu"].append(self.weights.mu)
        lg["u_f"].append(self.u_f.copy())
        if self.shape is not None:
            self.snapshots.append(self.shape.boundary(self.z.q))

    def result(self, termination, t_wall) -> EpisodeResult:
        lg = self.log
        return EpisodeResult(
            times=np.asarray(lg["t"]),
            qs=np.stack(lg["q"]),
            ps=np.stack(lg["p"]),
            energies=np.asarray(lg["H"]),
            clearances=np.asarray(lg["clr"]),
            true_clearances=np.asarray(lg["true_clr"]),
            goal_dists=np.asarray(lg["dist"]),
            speeds=np.asarray(lg["speed"]),
            betas=np.asarray(lg["beta"]),
            lams=np.asarray(lg["lam"]),
            alpha_sums=np.asarray(lg["alpha_sum"]),
            active_counts=np.asarray(lg["active"]),
            mus=np.asarray(lg["mu"]),
            u_fs=np.stack(lg["u_f"]),
            breakdown={k: np.asarray(lg[k]) for k in ("E_sensor", "E_goal", "E_obj",
                                                      "E_barrier_total")},
            termination=termination,
            coverage=self.tracker.covered_fraction(),
            layout=self.layout,
            wall_time=time.perf_counter() - t_wall,
            tracker=self.tracker,
            boundary_snapshots=self.snapshots,
            final_weights={"beta": self.weights.beta, "lam": self.weights.lam,
                           "mu": self.weights.mu, "alpha": dict(self.weights.alpha)},
        )

    # -- main loop ----------------------------------------------------------

    def run(self) -> EpisodeResult:
        t_wall = time.perf_counter()
        cfg, ad = self.cfg, self.cfg.adapt
        t_y, t_f, t_o = cfg.horizons
        if self.true_clearance(self.z.q) < 0:
            act = []
            self.log_state(self.spec_for(act), act, self.observe(self.z, []))
            return self.result("collision", t_wall)
        termination = "timeout"
        n = 0
        while True:
            c = self.z.q[self.layout.frame]
            if float(np.linalg.norm(c - self.ws.goal)) < cfg.eps_goal:
                termination = "success"
                break
            if n >= cfg.n_max:
                termination = "timeout"
                break

            # (A) sensing refresh and stage bookkeeping
            pos = np.clip(c, 0.0, self.ws.side)
            stage_hit = float(np.linalg.norm(c - self.stage_goal)) < cfg.eps_stage
            # an exit the robot cannot make progress toward (blocked from the
            # inside) gets blacklisted and the stage re-queried
            self.exit_dists.append(float(np.linalg.norm(c - self.stage_goal)))
            no_progress = (len(self.exit_dists) == cfg.retarget_window
                           and self.exit_dists[0] - min(self.exit_dists) < cfg.retarget_eps
                           and not np.array_equal(self.stage_goal, self.ws.goal))
            # leaning on a wall toward an unreachable exit counts as no progress
            if (cfg.contact_clearance > 0 and len(self.contact_clrs) == cfg.contact_window
                    and max(self.contact_clrs) < cfg.contact_clearance
                    and not np.array_equal(self.stage_goal, self.ws.goal)):
                no_progress = True
                self.contact_clrs.clear()
            if (stage_hit or no_progress) and not np.array_equal(self.stage_goal, self.ws.goal):
                self.exits.record(self.stage_goal, attained=stage_hit)
            # attaining an exit hands off to the neighboring stage; otherwise
            # the active stage is sticky while it still contains the robot
            stage_idx = self.stages.stage_of(
                pos, current=None if stage_hit else self.current_stage)
            new_stage = stage_idx != self.current_stage
            if n % t_y == 0 or new_stage or stage_hit or no_progress:
                try:
                    ctx = sense(self.ws, pos, cfg.window, tracker=self.tracker,
                                registry=self.registry,
                                circle_params={"d_hat_cells": cfg.circle_d_hat_cells})
                    ctx.stage_goal = self.exits.select(pos, stage_idx)
                except DeadEndError:
                    termination = "dead_end"
                    break
                for idx, ob in ctx.obstacles:
                    self.memory[idx] = ob
                if no_progress or not np.array_equal(ctx.stage_goal, self.stage_goal):
                    self.exit_dists.clear()
                    self.contact_clrs.clear()
                self.stage_goal = ctx.stage_goal
                tokens = build_tokens(self.z.q, self.z.p, list(self.memory.items()),
                                      self.stage_goal, self.mass, self.layout)
                prop = self.meta.propose(tokens)
                self.weights.merge_proposal(prop)
                self.current_stage = stage_idx

            act = self.active_pairs(self.z.q)
            act_obs = [ob for _, ob in act]

            # (B) shape horizon: refresh the clearance-dependent scale target
            shape_clearances = []
            if self.shape is not None:
                if n % t_o == 0:
                    self.shape.refresh_target(self.z.q, act_obs)
                shape_clearances = [self.shape.min_clearance(self.z.q, act_obs)]

            # (D) compose the surrogate Hamiltonian on the active set
            spec = self.spec_for(act)

            # (E) one port-Hamiltonian step (damping scale models plant mismatch)
            grad = potential_grad(self.z.q, spec)
            try:
                z_next = step_symplectic_euler(self.z, grad,
                                               self.weights.mu * self.damping_scale,
                                               self.u_f, self.mass, cfg.tau,
                                               self.selectors, self.structural)
            except FloatingPointError:
                termination = "collision"
                break
            if self.layout.scale is not None:
                s_val = float(z_next.q[self.layout.scale][0])
                if not (cfg.scale_floor <= s_val <= cfg.scale_cap):
                    z_next.q[self.layout.scale] = np.clip(s_val, cfg.scale_floor,
                                                          cfg.scale_cap)
                    z_next.p[self.layout.scale] = 0.0  # inelastic stop at the limits

            # (F) observables from the committed step
            y_obs = self.observe(z_next, act_obs, shape_clearances)
            self.contact_clrs.append(y_obs.clearance)
            y_vec = y_obs.vector()
            dy_des = observable_target(y_obs, ad.target_mode, ad.setpoints()) - y_vec
            if ad.clearance_deadband:
                # safety margin, not a setpoint: never pull clearance down
                dy_des[0] = min(dy_des[0], 0.0)

            # (G) secant / Tikhonov adaptation over [beta, lam, alpha_I, mu]
            near = sorted(act, key=lambda kv: float(
                np.linalg.norm(z_next.q[self.layout.frame] - kv[1].center)) - kv[1].radius)
            slots = [i for i, _ in near[: ad.k_alpha]]
            w = self.weights
            zeta = np.array([w.beta, w.lam]
                            + [w.alpha.get(i, 0.0) for i in slots]
                            + [0.0] * (ad.k_alpha - len(slots)) + [w.mu])
            if self.prev_zeta is not None and slots == self.prev_slots:
                # a secant pair is only meaningful while the slot binding holds
                self.J = secant_jacobian_update(self.J, y_vec - self.prev_y,
                                                zeta - self.prev_zeta, ad.rho, ad.eps)
            dzeta = tikhonov_step(self.J, dy_des, ad.lam_zeta)
            if ad.clearance_deadband and dy_des[0] >= 0.0:
                # barrier weights only grow while clearance is in deficit;
                # otherwise progress gets misattributed to alpha via J
                dzeta[2: 2 + ad.k_alpha] = np.minimum(dzeta[2: 2 + ad.k_alpha], 0.0)
            zeta_new = project_update(zeta, dzeta, ad.kappa_vector(ad.k_alpha),
                                      ad.update_form)
            b_cap, l_cap, a_cap, m_cap = ad.zeta_cap
            caps = np.array([b_cap, l_cap] + [a_cap] * ad.k_alpha + [m_cap])
            zeta_new = np.minimum(zeta_new, caps)
            w.beta, w.lam, w.mu = float(zeta_new[0]), float(zeta_new[1]), float(zeta_new[-1])
            for k, idx in enumerate(slots):
                # adaptation may strengthen a barrier but never disable it
                w.alpha[idx] = max(float(zeta_new[2 + k]), w.alpha_base.get(idx, 0.0))

            # (H) port correction each frame horizon (zero-order hold between)
            if n % t_f == 0:
                r = dy_des - self.J @ dzeta
                if ad.learn_port_sensitivity:
                    if self.prev_u is not None:
                        self.P_learn = secant_jacobian_update(
                            self.P_learn, y_vec - self.prev_y, self.u_f - self.prev_u,
                            ad.rho, ad.eps)
                    P = self.P_learn
                else:
                    v_frame = z_next.p[self.layout.frame] / self.mass[self.layout.frame]
                    sp = float(np.linalg.norm(v_frame))
                    P = np.zeros((3, 2))
                    if sp > 1e-6:
                        P[2] = -ad.kappa_v * v_frame / sp  # braking raises y3 = -speed
                    else:
                        # from rest, "more speed" means toward the stage goal
                        to_goal = self.stage_goal - z_next.q[self.layout.frame]
                        dg = float(np.linalg.norm(to_goal))
                        if dg > 1e-9:
                            P[2] = -ad.kappa_v * to_goal / dg
                self.prev_u = self.u_f.copy()
                self.u_f = port_correction(P, r, ad.lam_u, ad.u_box)
            self.prev_y, self.prev_zeta, self.prev_slots = y_vec, zeta, slots

            # (I) commit and log
            self.log_state(spec, act, self.observe(self.z, act_obs, shape_clearances))
            self.z = z_next
            self.recent.append(z_next.q[self.layout.frame].copy())
            n += 1

            if self.true_clearance(self.z.q) < 0 and cfg.collision_stop:
                termination = "collision"
                break
            if len(self.recent) == cfg.stuck_window + 1:
                if float(np.linalg.norm(self.recent[-1] - self.recent[0])) < cfg.eps_stuck:
                    termination = "stuck"
                    break

        act = self.active_pairs(self.z.q)
        self.log_state(self.spec_for(act), act, self.observe(self.z, [ob for _, ob in act]))
        return self.result(termination, t_wall)


def run_episode(ws: Workspace, cfg: EpisodeConfig, meta=None) -> EpisodeResult:
    """Execute the full online loop on one workspace.

    Terminates with one of success / timeout / collision / stuck / dead_end.
    Deterministic: identical (workspace, config, meta) give bit-identical
    results.
    """
    return _Episode(ws, cfg, meta or DefaultMetaPolicy()).run()

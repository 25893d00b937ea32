"""Energy terms, contact barrier, and the reduced Hamiltonian.

The surrogate potential is a weighted cone over fixed-form terms,

    R(q) = E_sensor(q) + beta * E_goal(q) + lam * E_obj(q)
           + sum_i alpha_i * barrier_i(q),

so it is linear in the weight vector (beta, lam, {alpha_i}) once the sensor
term is subtracted.  That linear view is exposed by ``features`` and is what
the offline identification stage regresses on.  All gradients are analytic;
finite differences are used only as test oracles.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .workspace import EnvironmentContext

BARRIER_CLAMP = 200.0
GRAD_CLAMP = 200.0
V_PENALTY = 200.0  # equals the clamp ceiling so the penetration branch is continuous


def ipc_barrier(d, d_hat, v_penalty=V_PENALTY):
    """Piecewise contact barrier.

    -(d - d_hat)^2 (log d - log d_hat) on 0 < d < d_hat, zero beyond the
    activation distance, flat penalty for penetration; value clamped to
    [0, BARRIER_CLAMP].
    """
    if d_hat <= 0:
        raise ValueError("d_hat must be > 0")
    d = np.asarray(d, dtype=float)
    out = np.zeros_like(d)
    inside = (d > 0) & (d < d_hat)
    if np.any(inside):
        di = d[inside]
        with np.errstate(divide="ignore"):
            out[inside] = -((di - d_hat) ** 2) * np.log(di / d_hat)
    out[d <= 0] = v_penalty
    out = np.clip(out, 0.0, BARRIER_CLAMP)
    return float(out) if out.ndim == 0 else out


def ipc_barrier_grad(d, d_hat):
    """Derivative of ipc_barrier on the active branch, clamped to +-GRAD_CLAMP.

    Zero for d >= d_hat and on the penetration plateau d <= 0 (integrators
    must stay finite after a penetration event).
    """
    if d_hat <= 0:
        raise ValueError("d_hat must be > 0")
    d = np.asarray(d, dtype=float)
    out = np.zeros_like(d)
    inside = (d > 0) & (d < d_hat)
    if np.any(inside):
        di = d[inside]
        with np.errstate(divide="ignore"):
            out[inside] = -2.0 * (di - d_hat) * np.log(di / d_hat) - (di - d_hat) ** 2 / di
    out = np.clip(out, -GRAD_CLAMP, GRAD_CLAMP)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class StateLayout:
    """Slices of the configuration vector q = (sensor y, frame c, extras)."""

    dim: int
    sensor: slice = slice(0, 2)
    frame: slice = slice(2, 4)
    angle: slice | None = None
    scale: slice | None = None


POINT_LAYOUT = StateLayout(dim=4)
RING_LAYOUT = StateLayout(dim=6, angle=slice(4, 5), scale=slice(5, 6))


@dataclass
class PhaseState:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.q.shape != self.p.shape:
            raise ValueError("q and p must share a shape")

    def copy(self):
        return PhaseState(self.q.copy(), self.p.copy())


@dataclass
class EnergyWeights:
    """Dual weights produced by the meta-policy, plus friction and port input."""

    beta: float = 1.0
    lam: float = 0.0
    alpha: dict = field(default_factory=dict)  # obstacle index -> weight
    mu: float = 0.0
    u_f: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.u_f = np.asarray(self.u_f, dtype=float)
        if self.beta < 0 or self.lam < 0 or self.mu < 0 or any(a < 0 for a in self.alpha.values()):
            raise ValueError("energy weights must be nonnegative")

    def copy(self):
        return EnergyWeights(self.beta, self.lam, dict(self.alpha), self.mu, self.u_f.copy())


@dataclass
class FixedTerms:
    """Intra-term parameters held fixed across environments."""

    layout: StateLayout
    goal: np.ndarray
    d_hat: float
    sensor_gain: float = 1.0
    v_penalty: float = V_PENALTY
    shape: object = None  # optional shape coupling (see ring.RingShapeModel)

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=float)
        if self.d_hat <= 0:
            raise ValueError("d_hat must be > 0")


@dataclass
class HamiltonianSpec:
    """Everything needed to evaluate H(q, p) = kinetic + R(q)."""

    mass: np.ndarray  # diagonal of the SPD mass matrix
    weights: EnergyWeights
    context: EnvironmentContext
    fixed: FixedTerms

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        if np.any(self.mass <= 0):
            raise ValueError("mass diagonal must be positive definite")


def _point_obstacle_feature(q, layout, obstacle, d_hat, v_penalty):
    """Barrier feature of a point robot: (b(d_i(c)), grad over q)."""
    c = q[layout.frame]
    delta = c - obstacle.center
    dist = float(np.linalg.norm(delta))
    d = dist - obstacle.radius
    val = ipc_barrier(d, d_hat, v_penalty) * obstacle.weight
    grad = np.zeros_like(q)
    if dist < 1e-12:
        warnings.warn("configuration coincides with an obstacle center; "
                      "degenerate barrier gradient set to zero", RuntimeWarning)
        return val, grad
    grad[layout.frame] = obstacle.weight * ipc_barrier_grad(d, d_hat) * (delta / dist)
    return val, grad


def features(q, ctx: EnvironmentContext, d_hat: float, fixed: FixedTerms):
    """Linear-in-weights view of the potential.

    Returns (phi, grads) with phi = [E_goal, E_obj, b_1, ..., b_m] ordered by
    ascending obstacle index, and grads the stacked per-feature gradients
    (rows match phi).  R(q; weights) = E_sensor + eta . phi by construction.
    """
    q = np.asarray(q, dtype=float)
    layout = fixed.layout
    c = q[layout.frame]
    m = len(ctx.obstacles)
    phi = np.zeros(2 + m)
    grads = np.zeros((2 + m, q.size))
    diff = c - fixed.goal
    phi[0] = float(np.dot(diff, diff))
    grads[0, layout.frame] = 2.0 * diff
    if fixed.shape is not None:
        phi[1], grads[1] = fixed.shape.obj_feature(q)
    pairs = sorted(ctx.obstacles, key=lambda kv: kv[0])
    for row, (idx, ob) in enumerate(pairs, start=2):
        if fixed.shape is not None:
            phi[row], grads[row] = fixed.shape.obstacle_feature(q, ob, d_hat, fixed.v_penalty)
        else:
            phi[row], grads[row] = _point_obstacle_feature(q, layout, ob, d_hat, fixed.v_penalty)
    return phi, grads


def _weight_vector(weights: EnergyWeights, ctx: EnvironmentContext):
    """Weights aligned with the feature ordering (alpha defaults to zero)."""
    idxs = sorted(i for i, _ in ctx.obstacles)
    return np.concatenate(([weights.beta, weights.lam],
                           [weights.alpha.get(i, 0.0) for i in idxs]))


def sensor_energy(q, fixed: FixedTerms):
    y = np.asarray(q, float)[fixed.layout.sensor]
    return fixed.sensor_gain * float(np.dot(y, y))


def potential(q, spec: HamiltonianSpec) -> float:
    """Context-shaped potential R(q)."""
    phi, _ = features(q, spec.context, spec.fixed.d_hat, spec.fixed)
    eta = _weight_vector(spec.weights, spec.context)
    return sensor_energy(q, spec.fixed) + float(eta @ phi)


def potential_grad(q, spec: HamiltonianSpec) -> np.ndarray:
    """Analytic gradient of the potential with respect to q."""
    q = np.asarray(q, dtype=float)
    _, grads = features(q, spec.context, spec.fixed.d_hat, spec.fixed)
    eta = _weight_vector(spec.weights, spec.context)
    out = eta @ grads
    out[spec.fixed.layout.sensor] += 2.0 * spec.fixed.sensor_gain * q[spec.fixed.layout.sensor]
    return out


def kinetic(p, mass) -> float:
    p = np.asarray(p, dtype=float)
    return 0.5 * float(np.sum(p * p / np.asarray(mass, float)))


def hamiltonian(z: PhaseState, spec: HamiltonianSpec) -> float:
    """Reduced Hamiltonian H = (1/2) p^T M^-1 p + R(q)."""
    if z.q.size != spec.fixed.layout.dim:
        raise ValueError("phase state dimension does not match the spec layout")
    return kinetic(z.p, spec.mass) + potential(z.q, spec)


def energy_breakdown(z: PhaseState, spec: HamiltonianSpec) -> dict:
    """Per-term values for the step log (CSV columns)."""
    phi, _ = features(z.q, spec.context, spec.fixed.d_hat, spec.fixed)
    eta = _weight_vector(spec.weights, spec.context)
    e_sensor = sensor_energy(z.q, spec.fixed)
    e_goal = spec.weights.beta * phi[0]
    e_obj = spec.weights.lam * phi[1]
    e_barrier = float(eta[2:] @ phi[2:]) if phi.size > 2 else 0.0
    return {
        "E_sensor": e_sensor,
        "E_goal": e_goal,
        "E_obj": e_obj,
        "E_barrier_total": e_barrier,
        "H": kinetic(z.p, spec.mass) + e_sensor + e_goal + e_obj + e_barrier,
    }

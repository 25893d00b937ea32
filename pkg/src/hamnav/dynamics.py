"""Discrete-time port-Hamiltonian integration.

Deployment uses momentum-first symplectic Euler with dissipation and an
exogenous port acting only on the frame momentum block:

    p' = p - tau * grad_R(q) - tau * Gamma(mu) M^-1 p + tau * G u_f
    q' = q + tau * M^-1 p'

Offline training rollouts use conservative kick-drift-kick leapfrog, which is
exactly time-reversible up to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energy import HamiltonianSpec, PhaseState, hamiltonian, potential_grad
from .workspace import signed_distances

DIVERGENCE_FACTOR = 1e3


@dataclass(frozen=True)
class IntegratorConfig:
    tau: float
    horizon: int
    scheme: str = "symplectic_euler"  # or "leapfrog"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.scheme not in ("symplectic_euler", "leapfrog"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class PortSelectors:
    """Frame-only damping and port gain blocks.

    gamma_diag(mu) is the diagonal of Gamma(mu): mu on the frame momentum
    coordinates, zero elsewhere (so Gamma(0) = 0).  embed_port places the
    2-vector port input on the frame coordinates.
    """

    dim: int
    frame: slice = slice(2, 4)

    def gamma_diag(self, mu: float) -> np.ndarray:
        if mu < 0:
            raise ValueError("mu must be >= 0")
        g = np.zeros(self.dim)
        g[self.frame] = mu
        return g

    def embed_port(self, u_f) -> np.ndarray:
        u = np.zeros(self.dim)
        if u_f is not None:
            u[self.frame] = np.asarray(u_f, dtype=float)
        return u


def step_symplectic_euler(z: PhaseState, grad_q, mu, u_f, mass, tau,
                          selectors: PortSelectors, structural_damping=None) -> PhaseState:
    """One momentum-first symplectic Euler step.

    ``structural_damping`` is an optional constant damping diagonal (e.g. the
    ring's scale/orientation damping); it is independent of (mu, u_f), so the
    sensor and shape momenta never feel the adaptive port.
    """
    q, p = z.q, z.p
    mass = np.asarray(mass, dtype=float)
    grad_q = np.asarray(grad_q, dtype=float)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p)) and np.all(np.isfinite(grad_q))):
        raise FloatingPointError("non-finite state or gradient")
    v = p / mass
    damping = selectors.gamma_diag(mu)
    p_new = p - tau * grad_q - tau * damping * v + tau * selectors.embed_port(u_f)
    if structural_damping is not None:
        p_new = p_new - tau * np.asarray(structural_damping, float) * v
    q_new = q + tau * (p_new / mass)
    return PhaseState(q_new, p_new)


def step_leapfrog(z: PhaseState, grad_fn, mass, tau) -> PhaseState:
    """Kick-drift-kick step for the conservative case (no damping, no port)."""
    mass = np.asarray(mass, dtype=float)
    p_half = z.p - 0.5 * tau * np.asarray(grad_fn(z.q), dtype=float)
    q_new = z.q + tau * (p_half / mass)
    p_new = p_half - 0.5 * tau * np.asarray(grad_fn(q_new), dtype=float)
    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(p_new))):
        raise FloatingPointError("non-finite state after leapfrog step")
    return PhaseState(q_new, p_new)


@dataclass
class Trajectory:
    states: list
    times: np.ndarray
    energies: np.ndarray
    score_norms: np.ndarray
    clearances: np.ndarray
    diverged: bool = False

    def __len__(self):
        return len(self.states)

    def positions(self, frame=slice(2, 4)):
        return np.stack([s.q[frame] for s in self.states])


def _spec_clearance(q, spec: HamiltonianSpec) -> float:
    obstacles = spec.context.obstacle_list()
    if spec.fixed.shape is not None:
        return spec.fixed.shape.min_clearance(q, obstacles)
    if not obstacles:
        return spec.fixed.d_hat
    return float(signed_distances(obstacles, q[spec.fixed.layout.frame]).min())


def rollout(z0: PhaseState, spec: HamiltonianSpec, cfg: IntegratorConfig,
            mu: float = 0.0, u_f=None, structural_damping=None) -> Trajectory:
    """Integrate the spec's Hamiltonian for cfg.horizon steps.

    Records per-step energy, score-field norm, and min obstacle clearance.
    A rollout is truncated with ``diverged=True`` when momentum exceeds
    DIVERGENCE_FACTOR x its initial scale or a non-finite state appears.
    """
    if cfg.scheme == "leapfrog" and (mu != 0.0 or (u_f is not None and np.any(np.asarray(u_f) != 0.0))):
        raise ValueError("leapfrog rollouts are reserved for the conservative case")
    if not np.all(np.isfinite(z0.q)) or not np.all(np.isfinite(z0.p)):
        raise FloatingPointError("non-finite initial state")
    selectors = PortSelectors(dim=z0.q.size, frame=spec.fixed.layout.frame)
    p_scale = max(1.0, float(np.linalg.norm(z0.p)))
    states = [z0.copy()]
    energies = [hamiltonian(z0, spec)]
    clearances = [_spec_clearance(z0.q, spec)]
    score_norms = []
    diverged = False
    z = z0.copy()
    grad_fn = lambda q: potential_grad(q, spec)
    for _ in range(cfg.horizon):
        g = grad_fn(z.q)
        v = z.p / spec.mass
        drift = np.concatenate([v, -g - selectors.gamma_diag(mu) * v + selectors.embed_port(u_f)])
        score_norms.append(float(np.linalg.norm(drift)))
        try:
            if cfg.scheme == "symplectic_euler":
                z = step_symplectic_euler(z, g, mu, u_f, spec.mass, cfg.tau, selectors,
                                          structural_damping)
            else:
                z = step_leapfrog(z, grad_fn, spec.mass, cfg.tau)
        except FloatingPointError:
            diverged = True
            break
        if not np.all(np.isfinite(z.q)) or np.linalg.norm(z.p) > DIVERGENCE_FACTOR * p_scale:
            diverged = True
            break
        states.append(z.copy())
        energies.append(hamiltonian(z, spec))
        clearances.append(_spec_clearance(z.q, spec))
    n = len(states)
    return Trajectory(
        states=states,
        times=cfg.tau * np.arange(n),
        energies=np.asarray(energies),
        score_norms=np.asarray(score_norms[: n - 1] if score_norms else []),
        clearances=np.asarray(clearances),
        diverged=diverged,
    )


def energy_drift(traj: Trajectory) -> float:
    """max_n |H_n - H_0| along a trajectory."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    return float(np.max(np.abs(traj.energies - traj.energies[0])))


def flip_momentum(z: PhaseState) -> PhaseState:
    return PhaseState(z.q.copy(), -z.p)

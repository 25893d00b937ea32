"""Hyperelastic ring with a periodic cubic B-spline boundary.

Shape is a single degree of freedom: a uniform scale s > 0 about the ring
center.  Control points are P_i = o + s * P0_i, boundary samples come from
precomputed basis matrices, X_j = sum_i B_ji P_i, and the contact energy is a
quadrature over boundary samples of the IPC barrier.  A clearance-dependent
scale target feeds a quadratic bulk (area) potential, which is what lets the
ring squeeze through gaps narrower than its rest diameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import RING_LAYOUT, ipc_barrier, ipc_barrier_grad


@dataclass(frozen=True)
class RingParams:
    r_base: float = 0.4
    n_ctrl: int = 20
    n_samples: int = 240  # K
    k_bulk: float = 1.5
    mass_scale: float = 1.0  # M_s
    s_min: float = 0.5  # s_0
    delta: float = 2.0  # tanh rate of the scale target

    def __post_init__(self):
        if self.n_ctrl < 8:
            raise ValueError("need at least 8 control points")
        if self.n_samples < 4 * self.n_ctrl:
            raise ValueError("need K >= 4 * n_ctrl boundary samples")
        if not (0 < self.s_min < 1):
            raise ValueError("s_0 must lie in (0, 1)")
        if min(self.k_bulk, self.mass_scale, self.delta) <= 0:
            raise ValueError("k_bulk, M_s and delta must be > 0")


@dataclass(frozen=True)
class SplineBasis:
    """Sample matrix B, parametric derivative D, quadrature weights 1/K."""

    B: np.ndarray
    D: np.ndarray
    weights: np.ndarray


@dataclass
class RingState:
    """Reduced shape state: center (= frame center), scale, conjugate momenta."""

    center: np.ndarray
    scale: float
    p_scale: float = 0.0
    p_frame: np.ndarray = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.scale <= 0:
            raise ValueError("ring scale must be > 0")
        if self.p_frame is None:
            self.p_frame = np.zeros(2)


def reference_control_points(n_ctrl: int, r_base: float) -> np.ndarray:
    """Rest control polygon: r_base * (cos, sin)(2 pi i / n), i = 1..n."""
    if n_ctrl < 3:
        raise ValueError("need at least 3 control points")
    ang = 2.0 * np.pi * np.arange(1, n_ctrl + 1) / n_ctrl
    return r_base * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def spline_basis(n_ctrl: int, K: int) -> SplineBasis:
    """Uniform-knot periodic cubic B-spline sampled at K uniform parameters.

    Row j of B holds the four nonzero cubic basis values at u_j = j/K; D is
    the exact derivative with respect to u.  Rows of B sum to one, rows of D
    sum to zero.
    """
    u = np.arange(K) / K
    s = u * n_ctrl  # one spline segment per control point
    seg = np.floor(s).astype(int) % n_ctrl
    t = s - np.floor(s)
    B = np.zeros((K, n_ctrl))
    D = np.zeros((K, n_ctrl))
    b_w = np.stack([
        (1 - t) ** 3,
        3 * t ** 3 - 6 * t ** 2 + 4,
        -3 * t ** 3 + 3 * t ** 2 + 3 * t + 1,
        t ** 3,
    ], axis=1) / 6.0
    d_w = np.stack([
        -3 * (1 - t) ** 2,
        9 * t ** 2 - 12 * t,
        -9 * t ** 2 + 6 * t + 3,
        3 * t ** 2,
    ], axis=1) * (n_ctrl / 6.0)
    rows = np.arange(K)
    for off in range(4):
        cols = (seg + off - 1) % n_ctrl
        B[rows, cols] += b_w[:, off]
        D[rows, cols] += d_w[:, off]
    return SplineBasis(B=B, D=D, weights=np.full(K, 1.0 / K))


def boundary_samples(ring: RingState, params: RingParams, basis: SplineBasis):
    """Boundary points, unit tangents and arc-length weights ||X'_j||."""
    if ring.scale <= 0:
        raise ValueError("degenerate ring: scale must be > 0")
    p0 = reference_control_points(params.n_ctrl, params.r_base)
    pts = ring.center[None, :] + ring.scale * (basis.B @ p0)
    deriv = ring.scale * (basis.D @ p0)
    lengths = np.linalg.norm(deriv, axis=1)
    tangents = deriv / lengths[:, None]
    return pts, tangents, lengths


def ring_barrier_energy(ring: RingState, obstacles, d_hat: float, params: RingParams = None,
                        basis: SplineBasis = None):
    """Boundary-integrated contact energy and the minimum sample clearance.

    sum_j sum_k w_j ||X'_j|| weight_k * b(d_jk); returns (energy, d_min)
    with d_min = +inf when there are no obstacles.
    """
    params = params or RingParams()
    basis = basis or spline_basis(params.n_ctrl, params.n_samples)
    pts, _, lengths = boundary_samples(ring, params, basis)
    if not obstacles:
        return 0.0, np.inf
    centers = np.stack([ob.center for ob in obstacles])
    radii = np.array([ob.radius for ob in obstacles])
    wts = np.array([ob.weight for ob in obstacles])
    d = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2) - radii[None, :]
    b = ipc_barrier(d, d_hat)
    energy = float(np.sum(basis.weights[:, None] * lengths[:, None] * wts[None, :] * b))
    return energy, float(d.min())


def scale_target(d_min: float, s_0: float, delta: float) -> float:
    """Clearance-dependent target scale in [s_0, 1)."""
    if not (0 < s_0 < 1) or delta <= 0:
        raise ValueError("need 0 < s_0 < 1 and delta > 0")
    return s_0 + (1.0 - s_0) * np.tanh(delta * max(float(d_min), 0.0))


def bulk_potential(s: float, s_target: float, k_bulk: float, a_ref: float) -> float:
    """(k/2) (A(s) - A(s_target))^2 with A(s) = s^2 A_ref."""
    if s <= 0 or s_target <= 0:
        raise ValueError("scales must be > 0")
    return 0.5 * k_bulk * (s * s * a_ref - s_target * s_target * a_ref) ** 2


def bulk_potential_grad(s: float, s_target: float, k_bulk: float, a_ref: float) -> float:
    """d/ds of bulk_potential: 2 k A_ref s (A(s) - A(s_target))."""
    return 2.0 * k_bulk * a_ref * s * (s * s * a_ref - s_target * s_target * a_ref)


def shoelace_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


class RingShapeModel:
    """Shape coupling plugged into the energy module's FixedTerms.

    Works on the 6-dim layout (sensor y, frame c, angle, scale s).  The scale
    target is refreshed once per shape horizon by the navigator and treated
    as frozen inside energy/gradient evaluations.
    """

    layout = RING_LAYOUT

    def __init__(self, params: RingParams = None):
        self.params = params or RingParams()
        self.basis = spline_basis(self.params.n_ctrl, self.params.n_samples)
        p0 = reference_control_points(self.params.n_ctrl, self.params.r_base)
        self._x0 = self.basis.B @ p0          # unit-scale boundary offsets
        self._dx0 = self.basis.D @ p0
        self._l0 = np.linalg.norm(self._dx0, axis=1)
        self.a_ref = shoelace_area(self._x0)  # rest area from the s=1 boundary
        self.s_target = 1.0

    def _unpack(self, q):
        c = q[self.layout.frame]
        s = float(q[self.layout.scale][0])
        if s <= 0:
            raise ValueError("degenerate ring: scale must be > 0")
        return c, s

    def boundary(self, q) -> np.ndarray:
        c, s = self._unpack(q)
        return c[None, :] + s * self._x0

    def obj_feature(self, q):
        """Bulk potential and its gradient over q (scale coordinate only)."""
        _, s = self._unpack(q)
        val = bulk_potential(s, self.s_target, self.params.k_bulk, self.a_ref)
        grad = np.zeros_like(np.asarray(q, float))
        grad[self.layout.scale] = bulk_potential_grad(s, self.s_target, self.params.k_bulk, self.a_ref)
        return val, grad

    def obstacle_feature(self, q, obstacle, d_hat, v_penalty):
        """Boundary-integrated barrier against one obstacle, with gradient.

        d_jk depends on the frame through X_j and on the scale through both
        X_j and the arc weights l_j = s * l0_j.
        """
        c, s = self._unpack(q)
        pts = c[None, :] + s * self._x0
        delta = pts - obstacle.center[None, :]
        dist = np.linalg.norm(delta, axis=1)
        d = dist - obstacle.radius
        b = ipc_barrier(d, d_hat, v_penalty)
        db = ipc_barrier_grad(d, d_hat)
        w = self.basis.weights * obstacle.weight
        lengths = s * self._l0
        val = float(np.sum(w * lengths * b))
        grad = np.zeros_like(np.asarray(q, float))
        safe = dist > 1e-12
        unit = np.zeros_like(delta)
        unit[safe] = delta[safe] / dist[safe, None]
        coeff = w * lengths * db
        grad[self.layout.frame] = coeff @ unit
        grad[self.layout.scale] = float(
            np.sum(w * self._l0 * b) + np.sum(coeff * np.einsum("ij,ij->i", unit, self._x0))
        )
        return val, grad

    def min_clearance(self, q, obstacles) -> float:
        c, s = self._unpack(q)
        if not obstacles:
            return np.inf
        pts = c[None, :] + s * self._x0
        centers = np.stack([ob.center for ob in obstacles])
        radii = np.array([ob.radius for ob in obstacles])
        d = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2) - radii[None, :]
        return float(d.min())

    def refresh_target(self, q, obstacles):
        """Re-evaluate the clearance-dependent scale target (per shape horizon)."""
        d_min = self.min_clearance(q, obstacles)
        if np.isinf(d_min):
            d_min = 10.0 / self.params.delta  # saturated tanh: expand in free space
        self.s_target = scale_target(d_min, self.params.s_min, self.params.delta)
        return self.s_target

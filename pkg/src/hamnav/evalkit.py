"""Metrics, perturbation harness, and batch evaluation.

Per-episode metrics follow the benchmark conventions: success-weighted path
length against a full-map reference planner, detour ratio, clearance
statistics with hard collisions counted as steps of penetration, smoothness
as mean absolute heading change, grazing against a fixed threshold, and the
mapping ratio charged by the sensing windows.  Full-map planners carry a
mapping ratio of 1 by convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .navigator import EpisodeResult
from .workspace import Obstacle, Workspace


@dataclass
class EpisodeMetrics:
    success: int
    path_length: float
    spl: float
    detour: float
    min_clearance: float
    mean_clearance: float
    collisions: int
    smoothness: float
    grazing: int
    mapping_ratio: float
    wall_time: float
    termination: str = ""

    def row(self):
        return {
            "success": self.success, "path_length": self.path_length, "spl": self.spl,
            "detour": self.detour, "min_clearance": self.min_clearance,
            "mean_clearance": self.mean_clearance, "collisions": self.collisions,
            "smoothness": self.smoothness, "grazing": self.grazing,
            "mapping_ratio": self.mapping_ratio, "wall_time": self.wall_time,
        }


def spl(success, length, length_ref) -> float:
    """Success-weighted path length: S * L_ref / max(L, L_ref)."""
    if not success:
        return 0.0
    if length_ref <= 0 or not np.isfinite(length_ref):
        return 0.0
    return float(length_ref / max(length, length_ref))


def heading_changes(positions) -> np.ndarray:
    """Absolute heading change per step; sub-nanometer steps are skipped."""
    d = np.diff(np.asarray(positions, float), axis=0)
    keep = np.linalg.norm(d, axis=1) > 1e-9
    d = d[keep]
    if len(d) < 2:
        return np.zeros(0)
    ang = np.arctan2(d[:, 1], d[:, 0])
    turn = np.diff(ang)
    return np.abs((turn + np.pi) % (2 * np.pi) - np.pi)


def episode_metrics(result: EpisodeResult, length_ref, d_thr=1.5) -> EpisodeMetrics:
    """All scalar metrics of one finished episode.

    Clearances are the ground-truth ones; a collision is any step with
    negative clearance, grazing means the minimum clearance dipped to d_thr.
    """
    clear = result.true_clearances
    finite = clear[np.isfinite(clear)]
    min_clr = float(finite.min()) if finite.size else np.inf
    mean_clr = float(finite.mean()) if finite.size else np.inf
    length = result.path_length()
    success = int(result.termination == "success" and min_clr > 0)
    turns = heading_changes(result.positions)
    return EpisodeMetrics(
        success=success,
        path_length=length,
        spl=spl(success, length, length_ref),
        detour=float(length / length_ref) if (success and length_ref > 0) else np.nan,
        min_clearance=min_clr,
        mean_clearance=mean_clr,
        collisions=int(np.sum(clear < 0)),
        smoothness=float(turns.mean()) if turns.size else 0.0,
        grazing=int(min_clr <= d_thr),
        mapping_ratio=result.coverage,
        wall_time=result.wall_time,
        termination=result.termination,
    )


# ---------------------------------------------------------------------------
# Perturbations

@dataclass
class PerturbationSpec:
    """Sensing and dynamics corruption knobs.

    The named robustness levels set (sensing noise, damping scale); sensing
    noise feeds both the position jitter and the relative radius error.
    """

    sigma_pos: float = 0.0
    sigma_radius: float = 0.0
    drop_prob: float = 0.0
    hallucinate_prob: float = 0.0
    damping_scale: float = 1.0
    sigma_velocity: float = 0.0

    def __post_init__(self):
        for p in (self.drop_prob, self.hallucinate_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")

    @property
    def is_identity(self):
        return (self.sigma_pos == 0 and self.sigma_radius == 0 and self.drop_prob == 0
                and self.hallucinate_prob == 0 and self.damping_scale == 1.0
                and self.sigma_velocity == 0)


ROBUSTNESS_LEVELS = {
    "nominal": PerturbationSpec(sigma_pos=0.0, sigma_radius=0.0, damping_scale=1.0),
    "mild": PerturbationSpec(sigma_pos=0.05, sigma_radius=0.05, damping_scale=0.9),
    "severe": PerturbationSpec(sigma_pos=0.10, sigma_radius=0.10, damping_scale=0.7),
}


def perturb_obstacles(obstacles, spec: PerturbationSpec, rng, window=None):
    """One sensing event's corrupted view of an obstacle list.

    I.i.d. Gaussian center jitter, multiplicative radius error, Bernoulli
    drops, and hallucinated discs placed uniformly in the window.
    """
    if spec.is_identity:
        return list(obstacles)
    out = []
    for idx, ob in obstacles:
        if spec.drop_prob > 0 and rng.random() < spec.drop_prob:
            continue
        center = ob.center + rng.normal(0.0, spec.sigma_pos, 2) if spec.sigma_pos else ob.center
        radius = ob.radius * max(1.0 + (rng.normal(0.0, spec.sigma_radius) if spec.sigma_radius else 0.0), 0.05)
        out.append((idx, Obstacle(np.asarray(center, float), float(radius), ob.weight)))
    if spec.hallucinate_prob > 0 and window is not None and rng.random() < spec.hallucinate_prob:
        center, half = window
        pos = np.asarray(center, float) + rng.uniform(-half, half, 2)
        out.append((-1 - int(rng.integers(1 << 30)), Obstacle(pos, float(rng.uniform(0.2, 0.6)), 1.0)))
    return out


class PerturbedWorkspace(Workspace):
    """Workspace whose sensing responses are corrupted per event.

    Ground truth (collision accounting, stage exits) stays intact; only the
    obstacle lists returned by sensing are jittered, via the corrupt_context
    hook the sensing path calls when present.  The damping scale is read by
    the episode runner and applied to the friction before integration.
    Every sensing event draws fresh noise from one per-episode stream.
    """

    def __init__(self, base: Workspace, spec: PerturbationSpec, seed: int):
        super().__init__(base.side, base.obstacles, base.start, base.goal,
                         grid=base.grid, seed=base.seed)
        self.perturbation = spec
        self.damping_scale = spec.damping_scale
        self._rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9E2]))

    def corrupt_context(self, pairs, window):
        return perturb_obstacles(pairs, self.perturbation, self._rng, window=window)


# ---------------------------------------------------------------------------
# Batch evaluation

def aggregate(metrics_list) -> dict:
    """Means and medians per metric, plus success-only sub-aggregates."""
    if not metrics_list:
        return {}
    keys = metrics_list[0].row().keys()
    rows = [m.row() for m in metrics_list]
    out = {"episodes": len(rows)}
    for k in keys:
        vals = np.array([r[k] for r in rows], dtype=float)
        finite = vals[np.isfinite(vals)]
        out[f"mean_{k}"] = float(finite.mean()) if finite.size else float("nan")
        out[f"median_{k}"] = float(np.median(finite)) if finite.size else float("nan")
    succ = [m for m in metrics_list if m.success]
    out["success_rate"] = float(np.mean([m.success for m in metrics_list]))
    for k in ("spl", "detour", "path_length", "min_clearance", "mapping_ratio"):
        vals = np.array([getattr(m, k) for m in succ], dtype=float)
        finite = vals[np.isfinite(vals)]
        out[f"success_only_mean_{k}"] = float(finite.mean()) if finite.size else float("nan")
    return out


def batch_eval(run_fn, workspaces, length_refs, d_thr=1.5):
    """Evaluate one method over a workspace set.

    run_fn(workspace, index) -> EpisodeResult.  Returns (aggregate dict,
    per-episode metrics).  Aggregation is order-invariant.
    """
    if not workspaces:
        raise ValueError("empty workspace set")
    metrics = []
    for i, (ws, lref) in enumerate(zip(workspaces, length_refs)):
        result = run_fn(ws, i)
        metrics.append(episode_metrics(result, lref, d_thr))
    return aggregate(metrics), metrics

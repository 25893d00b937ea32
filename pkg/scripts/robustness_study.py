#!/usr/bin/env python3
"""Robustness study: success/SPL degradation across sensing-noise and
damping-scale levels, evaluated on pre-registered nominal-passing scenes."""

import argparse
import time

import numpy as np

from hamnav.baselines import astar_rigid
from hamnav.evalkit import ROBUSTNESS_LEVELS, PerturbedWorkspace, episode_metrics
from hamnav.generation import generate_workspace
from hamnav.navigator import DefaultMetaPolicy, EpisodeConfig, run_episode
from hamnav.ring import RingParams


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--episodes", type=int, default=30)
    ap.add_argument("--seed", type=int, default=3000)
    args = ap.parse_args()

    t0 = time.perf_counter()
    cfg = EpisodeConfig(ring=RingParams(), n_max=6000)
    scenes, pool = [], 0
    while len(scenes) < args.episodes and pool < 2 * args.episodes:
        base = generate_workspace("test_id", args.seed + pool)
        ws = PerturbedWorkspace(base, ROBUSTNESS_LEVELS["nominal"], seed=pool)
        res = run_episode(ws, cfg, DefaultMetaPolicy())
        if res.termination == "success" and res.true_clearances.min() > 0:
            scenes.append((pool, base))
        pool += 1
    print(f"pre-registered {len(scenes)} nominal-passing scenes "
          f"(pool {pool}, {time.perf_counter() - t0:.0f}s)")

    print(f"{'level':10s} {'succ':>6s} {'SPL':>6s} {'min_clr':>8s} {'collisions':>10s}")
    for name in ("nominal", "mild", "severe"):
        succ, spls, clrs, colls = 0, [], [], []
        for k, base in scenes:
            ws = PerturbedWorkspace(base, ROBUSTNESS_LEVELS[name], seed=k)
            res = run_episode(ws, cfg, DefaultMetaPolicy())
            lref = astar_rigid(base, 0.1, 0.4).length
            m = episode_metrics(res, lref)
            succ += m.success
            spls.append(m.spl)
            clrs.append(m.min_clearance)
            colls.append(m.collisions)
        print(f"{name:10s} {succ:4d}/{len(scenes)} {np.mean(spls):6.3f} "
              f"{np.mean(clrs):8.3f} {np.mean(colls):10.2f}")
    print(f"total {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()

"""Command-line entry points: generate | run | train | eval | plot.

Every command is deterministic given (config, seed).  Human-edited configs
are TOML; machine artifacts are JSON and CSV.  The step CSV schema is

    t, q*, p*, H, clr, true_clr, dist, speed,
    E_sensor, E_goal, E_obj, E_barrier_total,
    beta, lam, alpha_sum, active, mu, u_f0, u_f1

and the summary JSON carries termination cause, metrics, coverage and the
reference length when available.  HAMNAV_WORKERS > 1 runs eval episodes in
a process pool.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python 3.10: parse the subset we emit
    tomllib = None

import numpy as np

from . import svg
from .baselines import DWAConfig, PFGains, astar_deformable, astar_rigid, run_baseline_episode
from .evalkit import ROBUSTNESS_LEVELS, PerturbedWorkspace, aggregate, episode_metrics, spl
from .generation import FAMILIES, generate_bottleneck, generate_dungeon, generate_workspace, gap_statistics
from .learning import MetaRegressor, SceneDatum, TrainConfig, make_reference_dataset, train_offline
from .navigator import (AdaptConfig, DefaultMetaPolicy, EpisodeConfig,
                        dungeon_setup, run_episode)
from .ring import RingParams
from .workspace import Workspace, load_workspace, save_workspace

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Config

@dataclass
class MetaPolicyConfig:
    beta: float = 1.5
    lam: float = 1.0
    alpha: float = 2.0
    mu: float = 4.0
    mu_boost: float = 1.0
    d_ref: float = 1.0
    r_offset: float = 0.4
    checkpoint: str = ""  # trained regressor; empty selects the default policy


@dataclass
class RunConfig:
    """Every tunable of the pipeline, validated against per-field ranges."""

    seed: int = 0
    method: str = "grlsnam"
    robot: str = "ring"  # ring | point
    dungeon_auto: bool = True  # grid workspaces pick the dungeon defaults
    d_thr: float = 1.5
    astar_resolution: float = 0.1
    rigid_radius: float = 0.4
    deform_r_min: float = 0.2
    deform_penalty_gain: float = 1.0
    episode: EpisodeConfig = field(default_factory=lambda: EpisodeConfig(ring=RingParams()))
    meta: MetaPolicyConfig = field(default_factory=MetaPolicyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pf: PFGains = field(default_factory=PFGains)
    dwa: DWAConfig = field(default_factory=DWAConfig)

    METHODS = ("grlsnam", "pf", "dwa", "astar_rigid", "astar_deform")

    RANGES = {
        "episode.tau": (1e-4, 0.5),
        "episode.d_hat": (0.05, 4.0),
        "episode.n_max": (0, 200_000),
        "episode.eps_goal": (1e-3, 2.0),
        "episode.stage_w": (0.2, 100.0),
        "episode.stage_h": (0.2, 100.0),
        "episode.stage_overlap": (0.0, 0.9),
        "episode.r_inflate": (0.0, 2.0),
        "episode.adapt.rho": (0.0, 0.999),
        "episode.adapt.kappa_beta": (0.0, 0.999),
        "episode.adapt.kappa_gamma": (0.0, 0.999),
        "episode.adapt.kappa_alpha": (0.0, 0.999),
        "episode.adapt.lam_zeta": (0.0, 1e6),
        "episode.adapt.lam_u": (0.0, float("inf")),
        "meta.mu": (0.0, 100.0),
        "train.lr": (1e-8, 1.0),
        "train.momentum": (0.0, 0.999),
        "d_thr": (0.0, 100.0),
    }

    def validate(self):
        if self.method not in self.METHODS:
            raise ValueError(f"method must be one of {self.METHODS}")
        if self.robot not in ("ring", "point"):
            raise ValueError("robot must be 'ring' or 'point'")
        doc = to_dict(self)
        for path, (lo, hi) in self.RANGES.items():
            node = doc
            for part in path.split("."):
                node = node[part]
            if node is None:
                continue
            if not (lo <= node <= hi):
                raise ValueError(f"config field {path}={node} outside [{lo}, {hi}]")
        return self

    def episode_config(self) -> EpisodeConfig:
        ep = self.episode
        if self.robot == "point" and ep.ring is not None:
            ep = dataclasses.replace(ep, ring=None)
        if self.robot == "ring" and ep.ring is None:
            ep = dataclasses.replace(ep, ring=RingParams())
        return ep

    def meta_policy(self):
        if self.meta.checkpoint:
            return MetaRegressor.load(self.meta.checkpoint)
        m = self.meta
        r_off = m.r_offset if self.robot == "ring" else 0.0
        return DefaultMetaPolicy(beta=m.beta, lam=m.lam, alpha=m.alpha, mu=m.mu,
                                 mu_boost=m.mu_boost, d_ref=m.d_ref, r_offset=r_off)


def to_dict(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [to_dict(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _build(cls, data):
    """Rebuild a dataclass tree from parsed TOML/JSON."""
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        val = data[f.name]
        target = f.type if isinstance(f.type, type) else None
        if f.name == "ring" and val is not None:
            val = _build(RingParams, val)
        elif f.name == "adapt":
            val = _build(AdaptConfig, val)
        elif f.name == "episode":
            val = _build(EpisodeConfig, val)
        elif f.name == "meta":
            val = _build(MetaPolicyConfig, val)
        elif f.name == "train":
            val = _build(TrainConfig, val)
        elif f.name == "pf":
            val = _build(PFGains, val)
        elif f.name == "dwa":
            val = _build(DWAConfig, val)
        elif isinstance(val, list) and isinstance(getattr(cls(), f.name, None), tuple):
            val = tuple(val)
        kwargs[f.name] = val
    return cls(**kwargs)


def config_from_dict(doc: dict) -> RunConfig:
    return _build(RunConfig, doc).validate()


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        if isinstance(v, float) and (v != v or v in (float("inf"), float("-inf"))):
            return f'"{v}"'  # inf/nan round-trip through strings
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)} to TOML")


def dumps_toml(doc: dict, prefix="") -> str:
    """Write the restricted TOML subset our configs use (nested tables)."""
    scalars, tables = [], []
    for key in doc:
        val = doc[key]
        if isinstance(val, dict):
            tables.append(key)
        elif val is None:
            continue
        else:
            scalars.append(key)
    lines = []
    for key in scalars:
        lines.append(f"{key} = {_toml_value(doc[key])}")
    for key in tables:
        name = f"{prefix}{key}"
        lines.append("")
        lines.append(f"[{name}]")
        lines.append(dumps_toml(doc[key], prefix=name + "."))
    return "\n".join(lines).strip() + "\n"


def loads_toml(text: str) -> dict:
    """Parse the TOML subset dumps_toml produces (JSON-compatible values)."""
    if tomllib is not None:
        return tomllib.loads(text)
    root: dict = {}
    node = root
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip() if not raw.strip().startswith('"') else raw.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            node = root
            for part in line[1:-1].strip().split("."):
                node = node.setdefault(part, {})
            continue
        key, _, val = line.partition("=")
        node[key.strip()] = json.loads(val.strip())
    return root


def _parse_special_floats(doc):
    if isinstance(doc, dict):
        return {k: _parse_special_floats(v) for k, v in doc.items()}
    if isinstance(doc, list):
        return [_parse_special_floats(v) for v in doc]
    if isinstance(doc, str) and doc in ("inf", "-inf", "nan"):
        return float(doc)
    return doc


def load_config(path) -> RunConfig:
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
    else:
        doc = loads_toml(path.read_text())
    return config_from_dict(_parse_special_floats(doc))


def save_config(cfg: RunConfig, path):
    path = Path(path)
    doc = to_dict(cfg)
    if path.suffix == ".json":
        path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    else:
        path.write_text(dumps_toml(doc))


# ---------------------------------------------------------------------------
# Artifact writers

STEP_COLUMNS = ("H", "clr", "true_clr", "dist", "speed", "E_sensor", "E_goal",
                "E_obj", "E_barrier_total", "beta", "lam", "alpha_sum", "active",
                "mu")


def write_steps_csv(result, path):
    dim = result.qs.shape[1]
    header = (["t"] + [f"q{i}" for i in range(dim)] + [f"p{i}" for i in range(dim)]
              + list(STEP_COLUMNS) + ["u_f0", "u_f1"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(result.times)):
            row = ([f"{result.times[k]:.9g}"]
                   + [f"{v:.9g}" for v in result.qs[k]]
                   + [f"{v:.9g}" for v in result.ps[k]]
                   + [f"{result.energies[k]:.9g}", f"{result.clearances[k]:.9g}",
                      f"{result.true_clearances[k]:.9g}", f"{result.goal_dists[k]:.9g}",
                      f"{result.speeds[k]:.9g}"]
                   + [f"{result.breakdown[c][k]:.9g}" for c in
                      ("E_sensor", "E_goal", "E_obj", "E_barrier_total")]
                   + [f"{result.betas[k]:.9g}", f"{result.lams[k]:.9g}",
                      f"{result.alpha_sums[k]:.9g}", f"{result.active_counts[k]:.9g}",
                      f"{result.mus[k]:.9g}", f"{result.u_fs[k][0]:.9g}",
                      f"{result.u_fs[k][1]:.9g}"])
            w.writerow(row)


def write_summary(result, metrics, path, extra=None):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "termination": result.termination,
        "n_steps": int(result.n_steps),
        "coverage": float(result.coverage),
        "metrics": metrics.row() if metrics is not None else None,
        "windows": [[float(c[0]), float(c[1]), float(h)]
                    for c, h in (result.tracker.windows if result.tracker else [])],
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def run_method(ws: Workspace, cfg: RunConfig, method=None):
    """Dispatch one episode (or plan) of the requested method.

    Grid workspaces use the dungeon point-robot defaults unless the caller
    supplies an explicit episode config (cfg.dungeon_auto = False).
    """
    method = method or cfg.method
    if ws.grid is not None and cfg.dungeon_auto:
        ep, meta = dungeon_setup()
        if cfg.meta.checkpoint:
            meta = cfg.meta_policy()
    else:
        ep = cfg.episode_config()
        meta = cfg.meta_policy()
    if method == "grlsnam":
        return run_episode(ws, ep, meta)
    if method in ("pf", "dwa"):
        radius = cfg.rigid_radius if (cfg.robot == "ring" and ws.grid is None) else 0.0
        return run_baseline_episode(ws, method, ep, robot_radius=radius,
                                    pf_gains=cfg.pf, dwa_cfg=cfg.dwa)
    raise ValueError(f"{method} is a planner; use plan_method")


def plan_method(ws: Workspace, cfg: RunConfig, method=None):
    method = method or cfg.method
    if method == "astar_rigid":
        return astar_rigid(ws, cfg.astar_resolution, cfg.rigid_radius)
    if method == "astar_deform":
        return astar_deformable(ws, cfg.astar_resolution, cfg.deform_r_min,
                                cfg.deform_penalty_gain, r_rest=cfg.rigid_radius)
    raise ValueError(f"unknown planner {method!r}")


# ---------------------------------------------------------------------------
# Commands

def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fams = sorted(FAMILIES) + ["dungeon", "bottleneck"]
    if args.family not in fams:
        print(f"error: family must be one of {fams}", file=sys.stderr)
        return 2
    stats = []
    for k in range(args.count):
        seed = args.seed + k
        if args.family == "dungeon":
            ws = generate_dungeon(seed)
        elif args.family == "bottleneck":
            ws = generate_bottleneck(seed)
        else:
            ws = generate_workspace(args.family, seed)
        save_workspace(ws, out / f"{args.family}_{k:04d}.json")
        if ws.grid is None:
            stats.append(gap_statistics(ws))
    if stats:
        with open(out / f"{args.family}_stats.json", "w") as fh:
            json.dump({"per_instance": stats}, fh, indent=1, sort_keys=True)
    print(f"wrote {args.count} {args.family} workspaces to {out}")
    return 0


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.method:
            cfg.method = args.method
        if args.seed is not None:
            cfg.seed = args.seed
        cfg.validate()
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    ws = load_workspace(args.workspace)
    if ws.grid is not None:
        cfg.robot = "point"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ref = astar_rigid(ws, cfg.astar_resolution,
                      cfg.rigid_radius if cfg.robot == "ring" else ws.grid.cell_size
                      if ws.grid else cfg.rigid_radius)
    if cfg.method in ("astar_rigid", "astar_deform"):
        plan = plan_method(ws, cfg)
        doc = {
            "schema_version": SCHEMA_VERSION,
            "method": cfg.method,
            "feasible": bool(plan.feasible),
            "L_ref": float(plan.length) if plan.feasible else None,
            "expansions": int(plan.expansions),
            "mapping_ratio": 1.0,  # full-map planners by convention
        }
        with open(out / "summary.json", "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
        with open(out / "steps.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "q0", "q1"])
            for k, p in enumerate(plan.waypoints):
                w.writerow([k, f"{p[0]:.9g}", f"{p[1]:.9g}"])
        print(f"{cfg.method}: feasible={plan.feasible} L={plan.length:.3f}")
        return 0
    result = run_method(ws, cfg)
    metrics = episode_metrics(result, ref.length if ref.feasible else np.nan, cfg.d_thr)
    write_steps_csv(result, out / "steps.csv")
    write_summary(result, metrics, out / "summary.json",
                  extra={"method": cfg.method, "seed": cfg.seed,
                         "L_ref": float(ref.length) if ref.feasible else None,
                         "workspace": str(args.workspace)})
    if result.boundary_snapshots:
        step = max(1, len(result.boundary_snapshots) // 12)
        snaps = [s.tolist() for s in result.boundary_snapshots[::step]]
        with open(out / "ring_snapshots.json", "w") as fh:
            json.dump({"boundary": snaps}, fh)
    if args.plot:
        _emit_plots(ws, result, out)
    print(f"{cfg.method}: {result.termination} steps={result.n_steps} "
          f"len={result.path_length():.3f} SPL={metrics.spl:.3f}")
    return 0


def _emit_plots(ws, result, out: Path):
    windows = result.tracker.windows if result.tracker else []
    canvas = svg.plot_episode(ws, result.positions, windows,
                              result.boundary_snapshots,
                              extra_note=result.termination)
    canvas.save(out / "trajectory.svg")
    series = {"beta": result.betas, "lam": result.lams, "alpha_sum": result.alpha_sums,
              "mu": result.mus, "clr": result.clearances, "H": result.energies}
    with open(out / "timeseries.svg", "w") as fh:
        fh.write(svg.plot_timeseries(result.times, series))


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset_dir = Path(args.dataset)
    scenes = []
    if dataset_dir.exists():
        for p in sorted(dataset_dir.glob("scene_*.json")):
            scenes.append(SceneDatum.from_json(json.loads(p.read_text())))
    if not scenes:
        print("error: no scene_*.json files in the dataset directory", file=sys.stderr)
        return 2
    model, curve = train_offline(scenes, cfg.train)
    model.save(out / "checkpoint.bin")
    with open(out / "loss_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(curve):
            w.writerow([i, f"{v:.9g}"])
    print(f"trained {len(scenes)} scenes for {len(curve)} epochs; "
          f"final loss {curve[-1]:.6g}")
    return 0


def cmd_make_dataset(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenes = make_reference_dataset(args.count, args.seed)
    for i, s in enumerate(scenes):
        with open(out / f"scene_{i:04d}.json", "w") as fh:
            json.dump(s.to_json(), fh, sort_keys=True)
    print(f"wrote {len(scenes)} scenes to {out}")
    return 0


def _eval_one(packed):
    cfg_doc, ws_doc, method, index = packed
    from .workspace import workspace_from_json

    cfg = config_from_dict(cfg_doc)
    ws = workspace_from_json(ws_doc)
    if ws.grid is not None:
        cfg.robot = "point"
    ref = astar_rigid(ws, cfg.astar_resolution, cfg.rigid_radius if cfg.robot == "ring"
                      else ws.grid.cell_size)
    lref = ref.length if ref.feasible else np.nan
    if method in ("astar_rigid", "astar_deform"):
        plan = plan_method(ws, cfg, method)
        row = {
            "success": int(plan.feasible), "spl": spl(plan.feasible, plan.length, lref),
            "detour": plan.length / lref if plan.feasible and np.isfinite(lref) else np.nan,
            "min_clearance": cfg.rigid_radius if method == "astar_rigid" else cfg.deform_r_min,
            "mapping_ratio": 1.0,
        }
        return index, method, row
    result = run_method(ws, cfg, method)
    m = episode_metrics(result, lref, cfg.d_thr)
    return index, method, m.row()


def cmd_eval(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        print("error: no methods given", file=sys.stderr)
        return 2
    ws_paths = sorted(Path(args.workspaces).glob("*.json"))
    ws_paths = [p for p in ws_paths if not p.name.endswith("_stats.json")]
    if not ws_paths:
        print("error: no workspace JSON files found", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .workspace import workspace_to_json

    jobs = []
    cfg_doc = to_dict(cfg)
    for method in methods:
        for i, p in enumerate(ws_paths):
            jobs.append((cfg_doc, json.loads(p.read_text()), method, i))
    workers = int(os.environ.get("HAMNAV_WORKERS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_eval_one, jobs))
    else:
        results = [_eval_one(j) for j in jobs]
    per_method = {m: {} for m in methods}
    for index, method, row in results:
        per_method[method][index] = row

    table_rows = []
    for method in methods:
        rows = [per_method[method][i] for i in sorted(per_method[method])]
        succ = [r for r in rows if r["success"]]
        det = [r["detour"] for r in succ if np.isfinite(r.get("detour", np.nan))]
        table_rows.append({
            "method": method,
            "SPL": float(np.mean([r["spl"] for r in rows])),
            "Detour": float(np.mean(det)) if det else float("nan"),
            "MinClear": float(np.mean([r["min_clearance"] for r in succ])) if succ else float("nan"),
            "Mapping": float(np.mean([r["mapping_ratio"] for r in rows])),
        })
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "SPL", "Detour", "MinClear", "Mapping"])
        for r in table_rows:
            w.writerow([r["method"], f"{r['SPL']:.4f}", f"{r['Detour']:.4f}",
                        f"{r['MinClear']:.4f}", f"{r['Mapping']:.4f}"])
    md = ["| Method | SPL | Detour | MinClear | Mapping |",
          "|---|---|---|---|---|"]
    for r in table_rows:
        md.append(f"| {r['method']} | {r['SPL']:.3f} | {r['Detour']:.3f} | "
                  f"{r['MinClear']:.3f} | {100 * r['Mapping']:.1f}% |")
    (out / "comparison.md").write_text("\n".join(md) + "\n")
    with open(out / "per_episode.json", "w") as fh:
        json.dump({m: per_method[m] for m in methods}, fh, indent=1, sort_keys=True,
                  default=float)
    print("\n".join(md))
    return 0


def cmd_plot(args) -> int:
    run_dir = Path(args.episode)
    summary_path = run_dir / "summary.json"
    steps_path = run_dir / "steps.csv"
    if not summary_path.exists() or not steps_path.exists():
        print("error: episode artifacts (summary.json, steps.csv) not found",
              file=sys.stderr)
        return 2
    summary = json.loads(summary_path.read_text())
    with open(steps_path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [list(map(float, r)) for r in reader]
    required = {"t", "q2", "q3"}
    if not required.issubset(header):
        print(f"error: steps.csv lacks columns {sorted(required - set(header))}",
              file=sys.stderr)
        return 2
    cols = {name: i for i, name in enumerate(header)}
    data = np.asarray(rows) if rows else np.zeros((0, len(header)))
    ws = load_workspace(summary["workspace"]) if "workspace" in summary else None
    out = Path(args.out or run_dir)
    out.mkdir(parents=True, exist_ok=True)
    positions = data[:, [cols["q2"], cols["q3"]]] if len(data) else np.zeros((0, 2))
    windows = [((w[0], w[1]), w[2]) for w in summary.get("windows", [])]
    snaps = []
    snap_path = run_dir / "ring_snapshots.json"
    if snap_path.exists():
        snaps = [np.asarray(b) for b in json.loads(snap_path.read_text())["boundary"]]
    if ws is not None:
        canvas = svg.plot_episode(ws, positions, windows, snaps,
                                  extra_note=summary.get("termination", ""))
        canvas.save(out / "trajectory.svg")
    series = {}
    for name in ("beta", "lam", "alpha_sum", "mu", "clr", "H"):
        if name in cols and len(data):
            series[name] = data[:, cols[name]]
    with open(out / "timeseries.svg", "w") as fh:
        fh.write(svg.plot_timeseries(data[:, cols["t"]] if len(data) else np.zeros(0),
                                     series))
    print(f"wrote plots to {out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hamnav",
                                     description="stagewise energy-based navigation")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write workspace files")
    g.add_argument("--family", required=True)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate)

    r = sub.add_parser("run", help="run one episode / plan")
    r.add_argument("--config", default=None)
    r.add_argument("--workspace", required=True)
    r.add_argument("--method", default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", required=True)
    r.add_argument("--plot", action="store_true")
    r.set_defaults(fn=cmd_run)

    t = sub.add_parser("train", help="train the meta-regressor")
    t.add_argument("--dataset", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    d = sub.add_parser("make-dataset", help="write reference scene data")
    d.add_argument("--count", type=int, default=20)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(fn=cmd_make_dataset)

    e = sub.add_parser("eval", help="batch-evaluate methods")
    e.add_argument("--config", default=None)
    e.add_argument("--workspaces", required=True)
    e.add_argument("--methods", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    p = sub.add_parser("plot", help="re-render SVGs from episode artifacts")
    p.add_argument("--episode", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_plot)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())

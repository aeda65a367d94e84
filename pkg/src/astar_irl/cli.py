"""Command-line front end: ``astar-irl {gen,train,eval,bench,dyna,render}``.

Every subcommand reads a flat JSON config (``--config``), applies
``--set key=value`` overrides on top, rejects unknown keys, and writes its
outputs plus ``config.json`` and ``manifest.json`` into ``--out``.

Exit codes: 0 ok, 1 internal error, 2 missing input or bad config,
3 integrity mismatch (dataset hash differs on resume).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import (
    DynaConfig,
    belief_image,
    bench_planner,
    default_theta,
    dyna_adaptation,
    dyna_blocking_maze,
    evaluate,
    rollout,
    sample_test_tasks,
    value_image,
    write_bench_csv,
    write_curve_csv,
    write_eval_csv,
    write_pgm,
    write_rollouts_jsonl,
    _step_seed,
)
from .belief import BeliefState
from .cost import cost_field
from .gridworld import DatasetConfig, generate_dataset, load_demos, load_map, save_demos, save_map
from .planner import dijkstra_all
from .sensor import SensorConfig, observe
from .trainer import CostLearner, ThetaParams, write_metrics_csv

logger = logging.getLogger("astar_irl")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_INTEGRITY = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class IntegrityError(RuntimeError):
    pass


_SENSOR = {"beams": 72, "max_range": 2.5, "noise_sigma": 0.05}
_LEARNER = {k: v for k, v in CostLearner().get_params().items()}

DEFAULTS = {
    "gen": {"n_maps": 10, "trajs_per_map": 10, "width": 16, "height": 16, "obstacle_density": 0.2,
            "min_dist": 4, "seed": 0, **_SENSOR},
    "train": {"data": "", "val_data": "", "resume": False, **_LEARNER},
    "eval": {"checkpoint": "", "maps": "", "n_maps": 100, "width": 16, "height": 16,
             "obstacle_density": 0.2, "map_seed": 2, "min_dist": 4, "seed": 0, "eps_h": 1.0,
             "oracle_belief": False, "s": 1.0, "l": 100.0, "psi": 1.0, "h0": 0.0, "epsilon": 0.5,
             **_SENSOR},
    "bench": {"sizes": [16, 100], "reps": 20, "seed": 0, "obstacle_density": 0.2},
    "dyna": {**{k: getattr(DynaConfig(), k) for k in DynaConfig.__dataclass_fields__},
             "psi": 10.0, "h0": -2.0, "epsilon": 0.5, "s": 1.0, "l": 100.0, "eps_h": 1.0, **_SENSOR},
    "render": {"checkpoint": "", "map": "", "width": 16, "height": 16, "obstacle_density": 0.2,
               "map_seed": 2, "min_dist": 4, "seed": 0, "eps_h": 1.0, "s": 1.0, "l": 100.0, "psi": 1.0,
               "h0": 0.0, "epsilon": 0.5, **_SENSOR},
}


SEED_KEY = {"train": "random_state"}

# -- config handling ----------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_config(command: str, path: str | None, overrides: list[str], seed: int | None = None) -> dict:
    """Defaults, then the file, then ``--set`` pairs, then ``--seed``."""
    cfg = dict(DEFAULTS[command])
    layers = []
    if path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            obj = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"{p}: top level must be an object")
        layers.append((str(p), obj))
    pairs = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = _parse_value(v)
    layers.append(("--set", pairs))
    if seed is not None:
        layers.append(("--seed", {SEED_KEY.get(command, "seed"): seed}))
    for origin, obj in layers:
        unknown = sorted(set(obj) - set(cfg))
        if unknown:
            raise ConfigError(f"{origin}: unknown key(s) for '{command}': {', '.join(unknown)}")
        cfg.update(obj)
    return cfg


def _sensor(cfg) -> SensorConfig:
    return SensorConfig(int(cfg["beams"]), float(cfg["max_range"]), float(cfg["noise_sigma"]))


def file_hash(*paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        p = Path(p)
        files = sorted(f for f in p.rglob("*") if f.is_file() and f.name not in ("manifest.json", "config.json")) \
            if p.is_dir() else [p]
        for f in files:
            h.update(f.name.encode())
            h.update(f.read_bytes())
    return h.hexdigest()


def _require(path: str, what: str) -> Path:
    if not path:
        raise FileNotFoundError(f"no {what} given")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _versions() -> dict:
    import numba
    import sklearn

    return {"astar_irl": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "numba": numba.__version__, "scikit-learn": sklearn.__version__}


# -- data helpers ---------------------------------------------------------------

def load_dataset(path) -> tuple[list, list]:
    root = _require(str(path), "dataset")
    demos = load_demos(root / "demos.jsonl") if (root / "demos.jsonl").exists() else []
    maps = [load_map(f) for f in sorted((root / "maps").glob("*.grid"))] if (root / "maps").is_dir() else []
    if not demos and not maps:
        raise FileNotFoundError(f"dataset at {root} has neither demos.jsonl nor maps/")
    return maps, demos


def _theta_from(cfg) -> ThetaParams:
    if cfg.get("checkpoint"):
        obj = json.loads(_require(cfg["checkpoint"], "checkpoint").read_text())
        return ThetaParams.from_dict(obj["theta"])
    return default_theta(cfg["psi"], cfg["h0"], cfg["s"], cfg["l"], cfg["epsilon"])


def _test_maps(cfg) -> list:
    if cfg.get("maps"):
        maps, _ = load_dataset(cfg["maps"])
        if not maps:
            raise FileNotFoundError(f"no maps under {cfg['maps']}")
        return maps
    dc = DatasetConfig(n_maps=int(cfg["n_maps"]), width=int(cfg["width"]), height=int(cfg["height"]),
                       obstacle_density=float(cfg["obstacle_density"]), min_dist=int(cfg["min_dist"]),
                       seed=int(cfg["map_seed"]))
    return generate_dataset(dc, with_demos=False)[0]


# -- subcommands ------------------------------------------------------------------

def cmd_gen(cfg, out: Path, args) -> dict:
    if not 0.0 <= float(cfg["obstacle_density"]) < 1.0:
        raise ConfigError("obstacle_density must lie in [0, 1): a full map has no free start/goal")
    if int(cfg["width"]) < 2 or int(cfg["height"]) < 2:
        raise ConfigError("width and height must be >= 2")
    dc = DatasetConfig(int(cfg["n_maps"]), int(cfg["trajs_per_map"]), int(cfg["width"]), int(cfg["height"]),
                       float(cfg["obstacle_density"]), int(cfg["min_dist"]), int(cfg["seed"]))
    maps, demos = generate_dataset(dc, _sensor(cfg))
    (out / "maps").mkdir(parents=True, exist_ok=True)
    for i, grid in enumerate(maps):
        save_map(grid, out / "maps" / f"map_{i:05d}.grid")
    save_demos(demos, out / "demos.jsonl")
    info = {"n_maps": len(maps), "n_trajectories": len(demos), "n_steps": sum(len(d) for d in demos),
            "dataset_hash": file_hash(out / "demos.jsonl", out / "maps")}
    print(f"wrote {info['n_maps']} maps and {info['n_trajectories']} trajectories to {out}")
    return info


def cmd_train(cfg, out: Path, args) -> dict:
    data = _require(cfg["data"], "training dataset")
    _, demos = load_dataset(data)
    if not demos:
        raise FileNotFoundError(f"no demonstrations in {data}")
    val = load_dataset(cfg["val_data"])[1] if cfg["val_data"] else None
    ds_hash = file_hash(data / "demos.jsonl")
    params = {k: cfg[k] for k in _LEARNER}
    ckpt_path = out / "checkpoint.json"
    if cfg["resume"] and ckpt_path.exists():
        obj = json.loads(ckpt_path.read_text())
        if obj.get("dataset_hash") != ds_hash:
            raise IntegrityError(f"dataset hash {ds_hash[:12]} differs from checkpoint {obj.get('dataset_hash', '')[:12]}")
        est = CostLearner.from_checkpoint(obj)
        remaining = max(int(params["epochs"]) - len(est.history_), 0)
        est.set_params(**{**params, "epochs": remaining, "warm_start": True})
        logger.info("resuming after %d epochs, %d to go", len(est.history_), remaining)
    else:
        est = CostLearner(**params)
    est.fit(demos, X_val=val)
    _write_json(ckpt_path, est.to_checkpoint(ds_hash, cfg))
    with open(out / "metrics.csv", "w") as fh:
        write_metrics_csv(est.history_, fh)
    last = est.history_[-1] if est.history_ else {}
    print(f"trained {len(est.history_)} epochs, {est.n_updates_} updates; "
          f"s={est.s_:.4g} l={est.l_:.4g} last={last}")
    return {"dataset_hash": ds_hash, "epochs_done": len(est.history_), "n_updates": est.n_updates_}


def cmd_eval(cfg, out: Path, args) -> dict:
    theta = _theta_from(cfg)
    maps = _test_maps(cfg)
    trace = open(out / "plans.jsonl", "w") if args.trace else None
    try:
        metrics, results = evaluate(theta, maps, _sensor(cfg), seed=int(cfg["seed"]), eps_h=float(cfg["eps_h"]),
                                    oracle_belief=bool(cfg["oracle_belief"]), min_dist=int(cfg["min_dist"]),
                                    trace=trace)
    finally:
        if trace is not None:
            trace.close()
    with open(out / "metrics.csv", "w") as fh:
        write_eval_csv(metrics, fh, noise_sigma=float(cfg["noise_sigma"]))
    if args.trace:
        with open(out / "rollouts.jsonl", "w") as fh:
            write_rollouts_jsonl(results, fh)
    print(f"success {metrics.success_rate:.1f}%  traj_diff {metrics.traj_diff:.3f}  "
          f"collision {metrics.collision_rate:.1f}%  timeout {metrics.timeout_rate:.1f}%  n={metrics.n}")
    return metrics.to_dict()


def cmd_bench(cfg, out: Path, args) -> dict:
    sizes = [int(s) for s in cfg["sizes"]]
    if not sizes:
        raise ConfigError("sizes must be non-empty")
    rows = bench_planner(sizes, int(cfg["reps"]), int(cfg["seed"]), float(cfg["obstacle_density"]))
    with open(out / "bench.csv", "w") as fh:
        write_bench_csv(rows, fh)
    for r in rows:
        print(f"{r.width}x{r.height}: A* expansions {r.astar_expansions}, DP backups {r.dp_backups} "
              f"(ratio {r.backup_ratio:.1f}); A* {r.astar_ms:.3f} ms, DP {r.dp_ms:.3f} ms ({r.speedup:.1f}x)")
    return {"rows": len(rows)}


def cmd_dyna(cfg, out: Path, args) -> dict:
    dc = DynaConfig(**{k: cfg[k] for k in DynaConfig.__dataclass_fields__})
    theta = default_theta(cfg["psi"], cfg["h0"], cfg["s"], cfg["l"], cfg["epsilon"])
    result = dyna_blocking_maze(theta, dc, _sensor(cfg), float(cfg["eps_h"]))
    with open(out / "curve.csv", "w") as fh:
        write_curve_csv(result, fh)
    with open(out / "episodes.jsonl", "w") as fh:
        for e in result.episodes:
            fh.write(json.dumps(e) + "\n")
    adapt = dyna_adaptation(result, dc.switch_step)
    _write_json(out / "adaptation.json", adapt)
    print(f"episodes {len(result.episodes)}; " + ", ".join(f"{k}={v}" for k, v in adapt.items()))
    return adapt


def cmd_render(cfg, out: Path, args) -> dict:
    theta = _theta_from(cfg)
    if cfg["map"]:
        grid = load_map(_require(cfg["map"], "map"))
    else:
        grid = _test_maps({**cfg, "maps": "", "n_maps": 1})[0]
    tasks = sample_test_tasks([grid], int(cfg["seed"]), int(cfg["min_dist"]))
    if not tasks:
        raise ConfigError("map admits no start/goal pair")
    _, start, goal = tasks[0]
    scfg = _sensor(cfg)
    seed = _step_seed(int(cfg["seed"]), 10_000)
    res = rollout(theta, grid, start, goal, scfg, seed=seed, eps_h=float(cfg["eps_h"]))
    # rebuild the final belief from the same per-step scans
    belief = BeliefState(grid.shape, theta.sensor, scfg.max_range)
    for t, s in enumerate(res.trajectory[:res.plans]):
        belief.observe(s, observe(grid, s, scfg, _step_seed(seed, t)).ranges)
    g = dijkstra_all(cost_field(belief.h, grid.shape, theta.cost), grid.shape, goal)
    write_pgm(out / "map.pgm", (grid.cells > 0).astype(float))
    write_pgm(out / "belief.pgm", belief_image(belief))
    write_pgm(out / "value.pgm", value_image(g, grid.shape))
    print(f"rollout {res.outcome} in {res.steps} steps; wrote map.pgm, belief.pgm, value.pgm to {out}")
    return {"outcome": res.outcome, "steps": res.steps, "start": list(start), "goal": list(goal)}


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench,
            "dyna": cmd_dyna, "render": cmd_render}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="astar-irl", description="Cost learning with differentiable backward A*.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"gen": "generate maps and expert demonstrations", "train": "fit sensor and cost weights",
             "eval": "closed-loop test rollouts", "bench": "A* versus DP planner timing",
             "dyna": "blocking-maze adaptation run", "render": "dump belief and value images"}
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON file with config keys")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (value parsed as JSON when possible)")
        p.add_argument("--out", default=None, help=f"output directory (default runs/{name})")
        p.add_argument("--seed", type=int, default=None, help="shortcut for --set seed=N")
        p.add_argument("--threads", type=int, default=None, help="worker threads for numba kernels")
        p.add_argument("--trace", action="store_true", help="write per-plan and per-rollout JSONL traces")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args.command, args.config, args.overrides, args.seed)
        out = Path(args.out or Path("runs") / args.command)
        out.mkdir(parents=True, exist_ok=True)
        threads = args.threads or os.cpu_count() or 1
        if args.threads is not None:
            import numba

            numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
        _write_json(out / "config.json", cfg)
        inputs = {k: file_hash(cfg[k]) for k in ("data", "val_data", "checkpoint", "maps", "map")
                  if cfg.get(k) and Path(cfg[k]).exists()}
        info = COMMANDS[args.command](cfg, out, args)
        _write_json(out / "manifest.json", {"command": args.command, "config": cfg, "seed": cfg.get(SEED_KEY.get(args.command, "seed")),
                                            "threads": threads, "versions": _versions(),
                                            "input_hashes": inputs, "result": info})
        return EXIT_OK
    except IntegrityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (FileNotFoundError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - top-level reporter
        logger.exception("internal error")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

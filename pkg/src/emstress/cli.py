"""Command-line entry point: ``emstress <command> --config run.json ...``.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ParseError, RunConfig, load_config
from .geometry import RandomTreeSpec, TreeError, generate_random_tree
from .neural import ArchitectureMismatch, init_xavier, load_checkpoint, save_checkpoint
from .oracle import SingularSystem, StepTooLarge, fdm_solve, nucleation_time, relative_error
from .physics import ScalingFactors
from .solver import TrialSolver
from .training import LineSearchFailed, NonFiniteLoss, train, train_parameterized
from .trial import TrialConfig

log = logging.getLogger("emstress")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
SWEEP_DEFAULTS = {
    "N_g": [8, 16, 32],
    "N_c": [10, 20, 30],
    "layers": [3, 4, 5, 6],
    "neurons": [20, 30, 50, 70],
    "n_segments": [22, 58, 109],
}


def _meta(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "config_hash": cfg.hash, "seed": cfg.seed}


def _with_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    if seed is not None:
        cfg.seed = seed
    cfg.training = replace(cfg.training, seed=cfg.seed)
    return cfg


def _out_path(args, default_name: str, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else Path(cfg.output_dir) / default_name
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _require_tree(cfg: RunConfig):
    if cfg.tree is None:
        raise ParseError("tree", "this command needs an explicit tree")
    return cfg.tree


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    if cfg.tree is not None:
        print(cfg.tree.summary())
    else:
        print(f"parameterized: {cfg.n_cases} random {cfg.random_spec.n_segments}-segment trees")
    return EXIT_OK


def run_oracle(cfg: RunConfig, tree=None):
    tree = tree or _require_tree(cfg)
    return fdm_solve(tree, cfg.material, cfg.temperature, cfg.fdm, cfg.probes(tree), cfg.scaling)


def cmd_oracle(args) -> int:
    cfg = _with_seed(load_config(args.config), args.seed)
    field = run_oracle(cfg)
    out = _out_path(args, "oracle.csv", cfg)
    field.write_csv(out, _meta(cfg, "oracle"))
    log.info("wrote %d rows to %s", len(field), out)
    return EXIT_OK


def run_training(cfg: RunConfig, tree=None):
    model = init_xavier(cfg.architecture(), cfg.seed)
    if cfg.training.mode == "parameterized":
        spec = cfg.random_spec or RandomTreeSpec(n_segments=2, seed=cfg.seed)
        return train_parameterized(model, spec, cfg.n_cases, cfg.material, cfg.trial, cfg.training, cfg.scaling)
    tree = tree or _require_tree(cfg)
    return train(model, tree, cfg.material, cfg.trial, cfg.training, cfg.scaling, cfg.temperature)


def cmd_train(args) -> int:
    cfg = _with_seed(load_config(args.config), args.seed)
    model, report = run_training(cfg)
    out = _out_path(args, "model.bin", cfg)
    meta = _meta(cfg, "train")
    save_checkpoint(model, out, {"config_hash": cfg.hash, "final_loss": report.final_loss,
                                 "iterations": report.iterations, "stop_reason": report.stop_reason,
                                 "learning_rate": report.learning_rate})
    report.write_csv(out.with_name(out.stem + "_loss.csv"), meta)
    summary = {k: getattr(report, k) for k in ("iterations", "initial_loss", "final_loss", "wall_time",
                                                "stop_reason", "n_evaluations", "n_pairs", "learning_rate")}
    out.with_name(out.stem + "_report.json").write_text(json.dumps(summary, indent=2))
    log.info("trained %d iterations, loss %.3e -> %.3e (%s) in %.1f s", report.iterations,
             report.initial_loss, report.final_loss, report.stop_reason, report.wall_time)
    return EXIT_OK


def _solver(cfg: RunConfig, model, tree=None) -> TrialSolver:
    tree = tree or _require_tree(cfg)
    expected = cfg.architecture()
    if (model.n_in, model.n_out) != (expected[0], expected[-1]):
        raise ArchitectureMismatch(f"checkpoint has {model.n_in} inputs and {model.n_out} outputs, "
                                   f"config ({cfg.training.mode} mode) needs {expected[0]} and {expected[-1]}")
    # the trial settings and scaling must be those the network was trained with
    trial = TrialConfig.from_dict(model.meta["trial"]) if "trial" in model.meta else cfg.trial
    scaling = ScalingFactors.from_dict(model.meta["scaling"]) if "scaling" in model.meta else cfg.scaling
    return TrialSolver(tree, model, cfg.material, trial, scaling, cfg.temperature)


def cmd_infer(args) -> int:
    cfg = _with_seed(load_config(args.config), args.seed)
    solver = _solver(cfg, load_checkpoint(args.checkpoint))
    t0 = time.perf_counter()
    field = solver.field(cfg.probes())
    elapsed = time.perf_counter() - t0
    out = _out_path(args, "infer.csv", cfg)
    field.write_csv(out, _meta(cfg, "infer"))
    log.info("inference on %d probes took %.3f s", len(field), elapsed)
    if args.nucleation:
        tree = cfg.tree
        xs = {s.id: np.linspace(0.0, s.length_m, 21) for s in tree.segments}

        def peak(t):
            return max(float(solver.segment_grid(sid, x, [t]).max()) for sid, x in xs.items())

        t_nuc = nucleation_time(peak, cfg.material.sigma_crit, cfg.probe_times)
        print(f"nucleation_time_s={t_nuc if t_nuc is not None else 'none'}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _with_seed(load_config(args.config), args.seed)
    ref = run_oracle(cfg)
    pred = _solver(cfg, load_checkpoint(args.checkpoint)).field(cfg.probes())
    report = relative_error(pred, ref)
    print(f"global_relative_error={report.global_rel:.6e}")
    for t, e in report.per_time.items():
        print(f"t={t:.6e} relative_error={e:.6e}")
    if args.out:
        out = _out_path(args, "compare.csv", cfg)
        with open(out, "w", newline="") as fh:
            fh.write("# " + ", ".join(f"{k}={v}" for k, v in _meta(cfg, "compare").items()) + "\n")
            w = csv.writer(fh)
            w.writerow(["t_s", "rel_error"])
            w.writerow(["all", repr(report.global_rel)])
            for t, e in report.per_time.items():
                w.writerow([repr(t), repr(e)])
    return EXIT_OK


def run_cell(cfg: RunConfig, setting: dict) -> dict:
    """Train and evaluate one sweep cell; returns a result row."""
    cfg = replace(cfg)
    tree = cfg.tree
    for key, value in setting.items():
        if key == "N_g":
            cfg.trial = replace(cfg.trial, n_gauss=int(value))
        elif key == "N_c":
            cfg.training = replace(cfg.training, n_c=int(value))
        elif key == "layers":
            cfg.hidden_layers = int(value)
        elif key == "neurons":
            cfg.neurons = int(value)
        elif key == "n_segments":
            tree = generate_random_tree(RandomTreeSpec(n_segments=int(value), seed=cfg.seed, mode="chain"))
        else:
            raise ParseError("--axis", f"unknown sweep axis {key!r}")
    tree = tree or _require_tree(cfg)
    t0 = time.perf_counter()
    model, report = run_training(cfg, tree)
    train_s = time.perf_counter() - t0
    solver = TrialSolver(tree, model, cfg.material, cfg.trial, cfg.scaling, cfg.temperature)
    probes = cfg.probes(tree)
    t0 = time.perf_counter()
    pred = solver.field(probes)
    infer_s = time.perf_counter() - t0
    ref = run_oracle(cfg, tree)
    err = relative_error(pred, ref).global_rel
    return dict(setting, rel_error=err, train_s=train_s, infer_s=infer_s,
                final_loss=report.final_loss, iterations=report.iterations)


def sweep_settings(axes: list[str], cfg: RunConfig) -> list[dict]:
    values = []
    for axis in axes:
        if axis not in SWEEP_DEFAULTS:
            raise ParseError("--axis", f"unknown sweep axis {axis!r}")
        values.append(cfg.sweep.get(axis, SWEEP_DEFAULTS[axis]))
    return [dict(zip(axes, combo)) for combo in itertools.product(*values)]


def cmd_sweep(args) -> int:
    cfg = _with_seed(load_config(args.config), args.seed)
    axes = [a.strip() for a in args.axis.split(",") if a.strip()]
    settings = sweep_settings(axes, cfg)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(run_cell, [cfg] * len(settings), settings))
    else:
        rows = [run_cell(cfg, s) for s in settings]
    out = _out_path(args, "sweep.csv", cfg)
    cols = axes + ["rel_error", "train_s", "infer_s", "final_loss", "iterations"]
    cell_dir = out.with_name(out.stem + "_cells")
    cell_dir.mkdir(exist_ok=True)
    with open(out, "w", newline="") as fh:
        fh.write("# " + ", ".join(f"{k}={v}" for k, v in _meta(cfg, "sweep").items()) + "\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for i, row in enumerate(rows):
            w.writerow([row[c] for c in cols])
            (cell_dir / f"cell_{i:03d}.json").write_text(json.dumps(row, indent=2))
    for row in rows:
        log.info(" ".join(f"{c}={row[c]}" for c in cols))
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _with_seed(load_config(args.config), args.seed)
    tree = _require_tree(cfg)
    t0 = time.perf_counter()
    ref = run_oracle(cfg)
    oracle_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    model, report = run_training(cfg)
    train_s = time.perf_counter() - t0
    solver = TrialSolver(tree, model, cfg.material, cfg.trial, cfg.scaling, cfg.temperature)
    t0 = time.perf_counter()
    pred = solver.field(cfg.probes())
    infer_s = time.perf_counter() - t0
    err = relative_error(pred, ref).global_rel
    row = {"n_segments": len(tree.segments), "oracle_s": oracle_s, "train_s": train_s,
           "infer_s": infer_s, "iterations": report.iterations, "rel_error": err}
    out = _out_path(args, "bench.csv", cfg)
    with open(out, "w", newline="") as fh:
        fh.write("# " + ", ".join(f"{k}={v}" for k, v in _meta(cfg, "bench").items()) + "\n")
        w = csv.writer(fh)
        w.writerow(list(row))
        w.writerow(list(row.values()))
    print(" ".join(f"{k}={v}" for k, v in row.items()))
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "oracle": cmd_oracle, "train": cmd_train, "infer": cmd_infer,
            "compare": cmd_compare, "sweep": cmd_sweep, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emstress", description="EM stress evolution on interconnect trees")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--quiet", action="store_true", help="only report errors")
        if name != "validate":
            p.add_argument("--out", default=None, help="output file")
        if name in ("infer", "compare"):
            p.add_argument("--checkpoint", required=True, help="model checkpoint from `train`")
        if name == "infer":
            p.add_argument("--nucleation", action="store_true", help="also report the void nucleation time")
        if name == "sweep":
            p.add_argument("--axis", required=True,
                           help="comma-separated axes among " + ", ".join(SWEEP_DEFAULTS))
            p.add_argument("--jobs", type=int, default=1, help="concurrent sweep cells")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ParseError, TreeError, ArchitectureMismatch, FileNotFoundError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NonFiniteLoss, LineSearchFailed, SingularSystem, StepTooLarge, FloatingPointError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

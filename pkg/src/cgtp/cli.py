"""Command-line front-end: dataset generation, training, prediction export,
and evaluation with optional figures.

Exit codes: 0 ok, 2 unusable path/arguments, 3 malformed scenario data,
4 checkpoint/config mismatch, 5 prediction ids missing from the data.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics, model, numerics as nm, plots, scene, training


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("CGTP_THREADS", "1")))
    except ValueError:
        return 1


def _parallel_map(fn, items):
    n = worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _fail(code: int, message: str):
    print(f"error: {message}", file=sys.stderr)
    raise SystemExit(code)


def _open_out(path, mode="w"):
    try:
        return open(path, mode)
    except OSError as err:
        _fail(2, f"cannot write {path}: {err}")


def _read_data(path) -> list[scene.Scenario]:
    try:
        return scene.read_scenarios(path)
    except FileNotFoundError as err:
        _fail(2, str(err))
    except scene.ScenarioError as err:
        _fail(3, str(err))


def cmd_generate(args) -> int:
    kinds = args.kinds.split(",") if args.kinds != "all" else list(scene.SCENARIO_KINDS)
    for kind in kinds:
        if kind not in scene.SCENARIO_KINDS:
            _fail(2, f"unknown scenario kind {kind!r}")
    counts = {k: 0 for k in kinds}
    with _open_out(args.out) as fh:
        for i in range(args.n):
            kind = kinds[i % len(kinds)]
            s = scene.generate_synthetic_scenario(kind, args.seed + i)
            fh.write(scene.scenario_to_json(s) + "\n")
            counts[kind] += 1
    print("generated " + ", ".join(f"{counts[k]} {k}" for k in kinds)
          + f" -> {args.out}")
    return 0


def _model_config(args, horizon_hint=None) -> model.ModelConfig:
    return model.ModelConfig(
        max_lanes=args.lanes, goals_per_lane=args.goals_per_lane,
        top_k=args.topk, traj_loss_mask_nonbest=args.traj_mask_nonbest)


def cmd_train(args) -> int:
    scenarios = _read_data(args.data)
    if args.checkpoint and Path(args.checkpoint).exists() and args.resume:
        try:
            store, cfg, tcfg, start_epoch = training.load_checkpoint(args.checkpoint)
        except nm.ConfigError as err:
            _fail(4, str(err))
        tcfg.epochs = args.epochs
    else:
        cfg = _model_config(args)
        tcfg = training.TrainConfig(lr=args.lr, epochs=args.epochs,
                                    batch_size=args.batch, seed=args.seed)
        store, start_epoch = None, 0
    log_path = args.out or "training_log.csv"
    with _open_out(log_path, "a" if start_epoch else "w") as log_fh:
        if not start_epoch:
            log_fh.write(training.CSV_HEADER + "\n")
        try:
            store, reports = training.train(
                scenarios, cfg, tcfg, store=store, start_epoch=start_epoch,
                log_fh=log_fh,
                progress=lambda r: print(
                    f"epoch {r.epoch}: total {r.total:.4f} (lr {r.lr:.2e})"))
        except training.TrainingDiverged as err:
            _fail(1, str(err))
    if args.checkpoint:
        training.save_checkpoint(args.checkpoint, store, cfg, tcfg, tcfg.epochs)
        print(f"checkpoint -> {args.checkpoint}")
    print(f"log -> {log_path}")
    return 0


def cmd_predict(args) -> int:
    scenarios = _read_data(args.data)
    try:
        store, cfg, _, _ = training.load_checkpoint(args.checkpoint)
    except (nm.ConfigError, FileNotFoundError, KeyError) as err:
        _fail(4, f"cannot load checkpoint {args.checkpoint}: {err}")
    records = _parallel_map(
        lambda s: training.predict_record(cfg, store, s, keep=args.keep),
        scenarios)
    with _open_out(args.out) as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    print(f"{len(records)} predictions -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    scenarios = {s.scenario_id: s for s in _read_data(args.data)}
    records = []
    with open(args.pred) as fh:
        for line in fh:
            if not line.strip():
                continue
            pred = json.loads(line)
            sid = pred["scenario_id"]
            if sid not in scenarios:
                _fail(5, f"prediction id {sid!r} not present in {args.data}")
            records.append(metrics.record_from_prediction(scenarios[sid], pred))
    regime = "velocity" if args.regime == "velocity" else "fixed"
    results = metrics.evaluate(records, regime=regime)
    out = args.out or "metrics.csv"
    metrics.write_metrics_csv(out, results, regime)
    for name in metrics.METRIC_NAMES:
        value = results[name]
        print(f"{name}: {'n/a' if value is None else f'{value:.6f}'}")
    print(f"report -> {out}")
    if args.plots:
        plot_dir = Path(args.plots)
        plot_dir.mkdir(parents=True, exist_ok=True)
        with open(args.pred) as fh:
            preds = [json.loads(l) for l in fh if l.strip()]
        _parallel_map(
            lambda p: plots.render_scenario(
                scenarios[p["scenario_id"]], p,
                plot_dir / f"{p['scenario_id']}.svg"), preds)
        print(f"{len(preds)} figures -> {plot_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cgtp",
        description="Conditional goal-oriented trajectory prediction for "
                    "interacting vehicle pairs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic scenarios (JSON lines)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--kinds", default="all",
                   help="comma list of cut_in,yielding,merging,left_turn")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train on a scenario file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="training log CSV path")
    p.add_argument("--checkpoint", help="checkpoint output path")
    p.add_argument("--resume", action="store_true",
                   help="continue from an existing checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--lanes", type=int, default=6)
    p.add_argument("--goals-per-lane", type=int, default=200)
    p.add_argument("--traj-mask-nonbest", action="store_true",
                   help="drop non-target modes from the trajectory loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="free-running inference to JSON lines")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--keep", type=int, default=25,
                   help="modes per scenario after suppression")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against scenarios")
    p.add_argument("--pred", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="metrics CSV path")
    p.add_argument("--regime", choices=("fixed", "velocity"), default="fixed")
    p.add_argument("--plots", help="directory for per-scenario SVG figures")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

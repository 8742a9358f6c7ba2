"""Command-line front end.

Commands: preprocess, train, evaluate, explain, sweep, plus synth-data
for generating demo datasets.  Global flags --config/--seed/--out; every
ExperimentConfig field is also a flag of the same name.  Exit codes:
0 success, 1 usage or configuration error, 2 data error, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import Bundle, load_bundle, save_bundle
from .config import SWEEPABLE, ExperimentConfig, SweepSpec
from .data import (
    ConditionModel,
    cluster_conditions,
    load_windows,
    normalize,
    parse_cmapss,
    parse_rul_truth,
    save_windows,
    window_split,
)
from .errors import (
    CheckpointError,
    ClusteringError,
    ConfigurationError,
    IntegrityError,
    ParseError,
    RulnetError,
    UnitLookupError,
)
from .evaluation import (
    export_attention,
    predict_test_set,
    write_attention_csvs,
    write_metrics_json,
    write_predictions_csv,
)
from .model import RulModel
from .seeding import generator
from .synthetic import generate_dataset
from .training import fit

USAGE_EXIT = 1
DATA_EXIT = 2
RUNTIME_EXIT = 3

CONDITION_MODEL_FILE = "condition_model.txt"
WINDOWS_FILE = "windows_train.txt"


# ---------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument("--seed", type=int, help="replace the seed list with one seed")
    parser.add_argument("--out", metavar="DIR", help="output directory (out_dir)")
    for f in dataclasses.fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "out_dir":
            continue
        if f.name == "seeds":
            parser.add_argument(flag, type=lambda s: [int(v) for v in s.split(",")],
                                help="comma-separated seed list", default=None)
        elif f.type == "bool":
            parser.add_argument(flag, type=_parse_bool, default=None, metavar="BOOL")
        elif f.type == "int":
            parser.add_argument(flag, type=int, default=None)
        elif f.type == "float":
            parser.add_argument(flag, type=float, default=None)
        else:
            parser.add_argument(flag, default=None)


def _build_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for f in dataclasses.fields(ExperimentConfig):
        if f.name == "out_dir":
            continue
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    cfg = cfg.override(**overrides)
    if args.seed is not None:
        cfg = cfg.override(seeds=[args.seed])
    if args.out is not None:
        cfg = cfg.override(out_dir=args.out)
    return cfg


def _sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------
# pipeline helpers shared by commands
# ---------------------------------------------------------------------

def _load_raw(cfg: ExperimentConfig):
    train = parse_cmapss(cfg.train_path)
    test = parse_cmapss(cfg.test_path)
    truth = parse_rul_truth(cfg.truth_path)
    return train, test, truth


def _fit_condition_model(cfg: ExperimentConfig, train_trajs) -> ConditionModel:
    # The pipeline seed is the first configured seed, so preprocess
    # artifacts and in-memory runs agree for every training seed.
    return cluster_conditions(train_trajs, cfg.k_conditions, seed=cfg.seeds[0])


def _train_windows(cfg: ExperimentConfig, train_trajs, cm: ConditionModel):
    samples = []
    for traj in train_trajs:
        samples.extend(window_split(normalize(traj, cm), cfg.window, cfg.r_max))
    return samples


def _artifacts(cfg: ExperimentConfig, out_dir: Path, train_trajs):
    """Condition model + train windows, from artifacts when they match."""
    cm_path = out_dir / CONDITION_MODEL_FILE
    win_path = out_dir / WINDOWS_FILE
    if cm_path.exists():
        cm = ConditionModel.load_text(cm_path)
        if cm.k != cfg.k_conditions:
            raise ConfigurationError(
                f"artifact {cm_path} has k={cm.k}, config wants {cfg.k_conditions}"
            )
    else:
        cm = _fit_condition_model(cfg, train_trajs)
    if win_path.exists():
        samples = load_windows(win_path)
        shape = samples[0].matrix.shape
        if shape[1] != cfg.window:
            raise ConfigurationError(
                f"artifact {win_path} has window {shape[1]}, config wants {cfg.window}"
            )
    else:
        samples = _train_windows(cfg, train_trajs, cm)
    return cm, samples


def _train_once(cfg: ExperimentConfig, seed: int, out_dir: Path) -> dict:
    """Run one training; writes checkpoint, log, manifest. Returns summary."""
    out_dir.mkdir(parents=True, exist_ok=True)
    train_trajs, _, _ = _load_raw(cfg)
    cm, samples = _artifacts(cfg, out_dir, train_trajs)

    model = RulModel(**cfg.model_kwargs(), init_rng=generator(seed, "init"))
    started = time.perf_counter()
    result = fit(model, samples, cfg.train_config(seed))
    wall = time.perf_counter() - started

    bundle_config = dict(cfg.to_dict(), seeds=[seed])
    checkpoint_path = out_dir / "checkpoint.bin"
    save_bundle(checkpoint_path, model, cm, bundle_config)

    with open(out_dir / "training_log.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_rmse"])
        for record in result.log:
            writer.writerow([record.epoch, repr(record.train_loss), repr(record.val_rmse)])

    resolved = out_dir / "resolved_config.json"
    resolved.write_text(
        json.dumps(bundle_config, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    manifest = {
        "version": __version__,
        "seed": seed,
        "config": bundle_config,
        "inputs": {
            "train": _sha256(cfg.train_path),
            "test": _sha256(cfg.test_path),
            "truth": _sha256(cfg.truth_path),
        },
        "fit": result.summary(),
        "wall_time_s": wall,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        # BLAS threading affects floating-point results; exact reproduction
        # needs the same setting.
        "blas_threads": {
            var: os.environ.get(var, "unset")
            for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")
        },
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return {
        "checkpoint": str(checkpoint_path),
        "epochs": result.epochs_run,
        "best_val_rmse": result.best_val_rmse,
        "wall_time_s": wall,
    }


def _evaluate_bundle(bundle: Bundle, cfg_like: dict, out_dir: Path, clip: bool | None = None) -> dict:
    test = parse_cmapss(cfg_like["test_path"])
    truth = parse_rul_truth(cfg_like["truth_path"])
    report = predict_test_set(bundle, test, truth, clip_truth=clip)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_predictions_csv(report, out_dir / "predictions.csv")
    write_metrics_json(report, out_dir / "metrics.json")
    return report.metrics()


# ---------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------

def cmd_preprocess(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    cfg.validate()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_trajs, test_trajs, truth = _load_raw(cfg)
    if len(test_trajs) != len(truth):
        raise IntegrityError(
            f"{len(test_trajs)} test units but {len(truth)} truth values"
        )
    cm = _fit_condition_model(cfg, train_trajs)
    samples = _train_windows(cfg, train_trajs, cm)
    cm.save_text(out_dir / CONDITION_MODEL_FILE)
    if not args.skip_windows:
        save_windows(samples, out_dir / WINDOWS_FILE)

    assignment_counts = np.bincount(
        cm.assign(np.vstack([t.settings for t in train_trajs])), minlength=cm.k
    )
    summary = {
        "train_units": len(train_trajs),
        "test_units": len(test_trajs),
        "train_rows": int(sum(len(t) for t in train_trajs)),
        "train_samples": len(samples),
        "window": cfg.window,
        "r_max": cfg.r_max,
        "conditions": cm.k,
        "rows_per_condition": assignment_counts.tolist(),
        "constant_channels_per_condition": cm.constant_mask.sum(axis=1).tolist(),
    }
    (out_dir / "preprocess_summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    cfg.validate()
    seed = cfg.seeds[0]
    summary = _train_once(cfg, seed, Path(cfg.out_dir))
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.checkpoint)
    cfg_like = dict(bundle.config)
    if args.test_path:
        cfg_like["test_path"] = args.test_path
    if args.truth_path:
        cfg_like["truth_path"] = args.truth_path
    if args.window is not None:
        bundle.require_window(args.window)
    clip = args.clip_test_rul
    out_dir = Path(args.out or cfg_like.get("out_dir", "runs"))
    metrics = _evaluate_bundle(bundle, cfg_like, out_dir, clip=clip)
    print(json.dumps(metrics, sort_keys=True, indent=2))
    return 0


def cmd_explain(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.checkpoint)
    cfg_like = dict(bundle.config)
    if args.test_path:
        cfg_like["test_path"] = args.test_path
    test = parse_cmapss(cfg_like["test_path"])
    by_unit = {t.unit_id: t for t in test}
    if args.unit not in by_unit:
        raise UnitLookupError(f"unit {args.unit} not found in {cfg_like['test_path']}")
    traj = by_unit[args.unit]

    cycles = None
    if args.cycles and args.cycles != "all":
        first, _, last = args.cycles.partition(":")
        cycles = range(int(first), int(last) + 1)
    matrix_cycles = None
    if args.matrix_cycles:
        matrix_cycles = [int(c) for c in args.matrix_cycles.split(",")]

    export = export_attention(bundle, traj, cycles=cycles, matrix_cycles=matrix_cycles)
    out_dir = Path(args.out or cfg_like.get("out_dir", "runs"))
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = write_attention_csvs(export, out_dir)

    # Per-cycle predictions with back-computed truth, the third surface.
    truth = parse_rul_truth(cfg_like["truth_path"])
    order = [t.unit_id for t in test]
    final_rul = truth[order.index(args.unit)]
    with open(out_dir / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "cycle", "true_rul", "pred_rul", "error"])
        for cycle, pred in export.predictions:
            true_rul = final_rul + (len(traj) - cycle)
            writer.writerow([args.unit, cycle, true_rul, repr(pred), repr(pred - true_rul)])
    print(
        json.dumps(
            {
                "unit": args.unit,
                "cycles": len(export.predictions),
                "attention_feature": str(paths["feature"]),
                "attention_cycle_sums": str(paths["cycle_sums"]),
            },
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    cfg.validate()
    values = [v for v in args.values.split(",") if v]
    spec = SweepSpec(parameter=args.param, values=values, repetitions=args.repeats, base=cfg)
    spec.validate()

    out_root = Path(cfg.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    rows = []
    failures = 0
    for value in spec.values:
        for rep in range(spec.repetitions):
            seed = spec.seed_for(rep)
            run_cfg = spec.config_for(value).override(seeds=[seed])
            run_dir = out_root / f"{spec.parameter}={value}" / f"seed={seed}"
            row = {
                "parameter": spec.parameter,
                "value": value,
                "seed": seed,
                "rmse": "",
                "score": "",
                "epochs": "",
                "wall_time_s": "",
                "error": "",
            }
            try:
                summary = _train_once(run_cfg, seed, run_dir)
                bundle = load_bundle(run_dir / "checkpoint.bin")
                metrics = _evaluate_bundle(bundle, run_cfg.to_dict(), run_dir)
                row.update(
                    rmse=repr(metrics["rmse"]),
                    score=repr(metrics["score"]),
                    epochs=summary["epochs"],
                    wall_time_s=f"{summary['wall_time_s']:.2f}",
                )
                if spec.parameter == "r_max":
                    unclipped = _evaluate_bundle(
                        bundle, run_cfg.to_dict(), run_dir / "unclipped", clip=False
                    )
                    row["rmse_unclipped"] = repr(unclipped["rmse"])
                    row["score_unclipped"] = repr(unclipped["score"])
            except Exception as exc:  # record and continue with the next run
                failures += 1
                row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
            print(f"[sweep] {spec.parameter}={value} seed={seed} "
                  + (f"FAILED: {row['error']}" if row["error"] else f"rmse={row['rmse']} score={row['score']}"))

    fieldnames = ["parameter", "value", "seed", "rmse", "score", "epochs", "wall_time_s", "error"]
    if spec.parameter == "r_max":
        fieldnames += ["rmse_unclipped", "score_unclipped"]
    with open(out_root / "sweep_results.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    print(f"sweep complete: {len(rows) - failures}/{len(rows)} runs succeeded")
    return RUNTIME_EXIT if failures == len(rows) else 0


def cmd_synth_data(args: argparse.Namespace) -> int:
    ds = generate_dataset(
        args.out or "data-synth",
        name=args.name,
        n_train=args.units,
        n_test=args.test_units,
        n_conditions=args.conditions,
        seed=args.seed if args.seed is not None else 0,
    )
    config = ExperimentConfig(
        train_path=str(ds.train_path),
        test_path=str(ds.test_path),
        truth_path=str(ds.truth_path),
        k_conditions=ds.n_conditions,
        out_dir=str(Path(args.out or "data-synth") / "runs"),
    )
    config_path = Path(args.out or "data-synth") / "config.json"
    config_path.write_text(
        json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(json.dumps({
        "train": str(ds.train_path),
        "test": str(ds.test_path),
        "truth": str(ds.truth_path),
        "config": str(config_path),
    }, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rulnet", description=__doc__)
    parser.add_argument("--version", action="version", version=f"rulnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_pre = sub.add_parser("preprocess", help="parse, cluster, normalize, window; write artifacts")
    _add_config_flags(p_pre)
    p_pre.add_argument("--skip-windows", action="store_true", help="do not write the windowed dataset file")
    p_pre.set_defaults(func=cmd_preprocess)

    p_train = sub.add_parser("train", help="train a model and write a checkpoint bundle")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint on the test set")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--test-path", default=None)
    p_eval.add_argument("--truth-path", default=None)
    p_eval.add_argument("--window", type=int, default=None, help="assert the expected window length")
    p_eval.add_argument("--clip-test-rul", type=_parse_bool, default=None, metavar="BOOL")
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=cmd_evaluate)

    p_explain = sub.add_parser("explain", help="export attention weights for one engine")
    p_explain.add_argument("--checkpoint", required=True)
    p_explain.add_argument("--unit", type=int, required=True)
    p_explain.add_argument("--cycles", default="all", help='"all" or "first:last" (1-based, inclusive)')
    p_explain.add_argument("--matrix-cycles", default=None,
                           help="comma-separated cycles to emit full matrices for (default: all)")
    p_explain.add_argument("--test-path", default=None)
    p_explain.add_argument("--out", default=None)
    p_explain.set_defaults(func=cmd_explain)

    p_sweep = sub.add_parser("sweep", help="train/evaluate over a parameter grid")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--param", required=True, choices=SWEEPABLE)
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--repeats", type=int, default=3)
    p_sweep.set_defaults(func=cmd_sweep)

    p_synth = sub.add_parser("synth-data", help="generate a C-MAPSS-format demo dataset")
    p_synth.add_argument("--out", default="data-synth")
    p_synth.add_argument("--name", default="SYN1")
    p_synth.add_argument("--units", type=int, default=20)
    p_synth.add_argument("--test-units", type=int, default=10)
    p_synth.add_argument("--conditions", type=int, default=1)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=cmd_synth_data)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (ParseError, IntegrityError, ClusteringError, CheckpointError, UnitLookupError) as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return DATA_EXIT
    except RulnetError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())

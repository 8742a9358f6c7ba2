"""Metrics, per-engine test evaluation, and attention-weight export.

The score metric is asymmetric in the signed error d = predicted - true:
overestimating remaining life (d >= 0) is penalized with divisor 10,
underestimating with divisor 13, so late predictions cost more.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import Bundle
from .data import RawTrajectory, normalize, pair_test_truth, window_split
from .errors import CapabilityError, ContractError
from .training import predict_batched

SCORE_EARLY_DIVISOR = 13.0  # d < 0: prediction under the true RUL
SCORE_LATE_DIVISOR = 10.0  # d >= 0: prediction over the true RUL


def phm_score(errors: Sequence[float]) -> float:
    """Sum of exp(-d/13)-1 for d<0 and exp(d/10)-1 for d>=0."""
    d = np.asarray(errors, dtype=np.float64)
    if d.size and not np.isfinite(d).all():
        raise ContractError("score requires finite errors")
    per_unit = np.where(
        d < 0,
        np.exp(-d / SCORE_EARLY_DIVISOR) - 1.0,
        np.exp(d / SCORE_LATE_DIVISOR) - 1.0,
    )
    return float(per_unit.sum())


def rmse(errors: Sequence[float]) -> float:
    """Root mean squared error of the signed errors."""
    d = np.asarray(errors, dtype=np.float64)
    if d.size == 0:
        raise ContractError("rmse of an empty error list")
    return float(math.sqrt(np.mean(d * d)))


@dataclass
class UnitRecord:
    unit_id: int
    true_rul: float
    pred_rul: float
    clamped: bool = False

    @property
    def error(self) -> float:
        return self.pred_rul - self.true_rul


@dataclass
class EvaluationReport:
    records: list[UnitRecord]
    config: dict

    @property
    def errors(self) -> list[float]:
        return [r.error for r in self.records]

    @property
    def rmse(self) -> float:
        return rmse(self.errors)

    @property
    def score(self) -> float:
        return phm_score(self.errors)

    @property
    def clamp_count(self) -> int:
        return sum(r.clamped for r in self.records)

    def metrics(self) -> dict:
        return {
            "n_units": len(self.records),
            "rmse": self.rmse,
            "score": self.score,
            "clamp_count": self.clamp_count,
        }


def predict_test_set(
    bundle: Bundle,
    test_trajectories: Sequence[RawTrajectory],
    truth: Sequence[int],
    clip_truth: bool | None = None,
) -> EvaluationReport:
    """Evaluate each test unit's final window through the bundle.

    Negative predictions are clamped to zero (and counted); the truth
    labels are clipped at the bundle's r_max unless disabled.
    """
    if clip_truth is None:
        clip_truth = bool(bundle.config.get("clip_test_rul", True))
    pairs = pair_test_truth(test_trajectories, truth)
    window = bundle.window
    r_max = bundle.r_max

    matrices = []
    labels = []
    units = []
    for traj, true_rul in pairs:
        normed = normalize(traj, bundle.condition_model)
        sample = window_split(
            normed,
            window,
            r_max,
            is_test=True,
            test_rul=float(true_rul),
            clip_test_label=clip_truth,
        )[0]
        matrices.append(sample.matrix)
        labels.append(sample.label)
        units.append(traj.unit_id)

    x = np.stack(matrices)
    preds = predict_batched(bundle.model, x).astype(np.float64)
    records = []
    for unit, true_rul, pred in zip(units, labels, preds):
        clamped = pred < 0.0
        records.append(
            UnitRecord(
                unit_id=int(unit),
                true_rul=float(true_rul),
                pred_rul=float(max(pred, 0.0)),
                clamped=bool(clamped),
            )
        )
    return EvaluationReport(records=records, config=dict(bundle.config, clip_test_rul=clip_truth))


def write_predictions_csv(report: EvaluationReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as out:
        writer = csv.writer(out)
        writer.writerow(["unit_id", "true_rul", "pred_rul", "error"])
        for r in report.records:
            writer.writerow([r.unit_id, repr(r.true_rul), repr(r.pred_rul), repr(r.error)])


def write_metrics_json(report: EvaluationReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as out:
        json.dump(report.metrics(), out, sort_keys=True, indent=2)
        out.write("\n")


def read_predictions_csv(path: str | Path) -> list[UnitRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            records.append(
                UnitRecord(
                    unit_id=int(row["unit_id"]),
                    true_rul=float(row["true_rul"]),
                    pred_rul=float(row["pred_rul"]),
                )
            )
    return records


# ---------------------------------------------------------------------
# attention export
# ---------------------------------------------------------------------

@dataclass
class AttentionExport:
    """Interpretability surfaces for one trajectory.

    ``feature_rows``: (cycle, head, row_channel, col_channel, weight) with
    head either a 1-based index or "mean".  ``cycle_sums``: per cycle and
    channel, the column sum of the head-averaged weight matrix, i.e. how
    much total attention the channel receives.
    """

    unit_id: int
    feature_rows: list[tuple[int, str, int, int, float]]
    cycle_sums: list[tuple[int, int, float]]
    predictions: list[tuple[int, float]]


def export_attention(
    bundle: Bundle,
    trajectory: RawTrajectory,
    cycles: Sequence[int] | None = None,
    matrix_cycles: Sequence[int] | None = None,
) -> AttentionExport:
    """Run per-cycle inference and capture feature-attention weights.

    ``cycles`` defaults to every cycle of the trajectory (windows ending
    before cycle T are padded backward).  Full F x F matrices are emitted
    for ``matrix_cycles`` (default: all requested cycles); the per-cycle
    column-sum view always covers every requested cycle.
    """
    model = bundle.model
    if model.feature_attention is None:
        raise CapabilityError(f"mode {model.mode!r} retains no attention weights")
    total = len(trajectory)
    if cycles is None:
        cycles = range(1, total + 1)
    cycles = [int(c) for c in cycles]
    for c in cycles:
        if not 1 <= c <= total:
            raise ContractError(f"cycle {c} outside 1..{total}")
    matrix_set = set(cycles if matrix_cycles is None else (int(c) for c in matrix_cycles))

    normed = normalize(trajectory, bundle.condition_model)
    chans = normed.channels

    feature_rows: list[tuple[int, str, int, int, float]] = []
    cycle_sums: list[tuple[int, int, float]] = []
    predictions: list[tuple[int, float]] = []
    from .data import _window_ending_at  # same windowing as evaluation

    for cycle in cycles:
        window = _window_ending_at(chans, cycle, model.window)
        pred = float(model.predict(window))
        predictions.append((cycle, pred))
        heads = [
            np.squeeze(w, axis=0).astype(np.float64) if w.ndim == 3 else w.astype(np.float64)
            for w in model.attention_weights("feature")
        ]
        stacked = np.stack(heads)  # (h, F, F)
        averaged = stacked.mean(axis=0)
        if cycle in matrix_set:
            for h, mat in enumerate(heads, start=1):
                for i in range(mat.shape[0]):
                    for j in range(mat.shape[1]):
                        feature_rows.append((cycle, str(h), i, j, float(mat[i, j])))
            for i in range(averaged.shape[0]):
                for j in range(averaged.shape[1]):
                    feature_rows.append((cycle, "mean", i, j, float(averaged[i, j])))
        column_sums = averaged.sum(axis=0)
        for j, weight in enumerate(column_sums):
            cycle_sums.append((cycle, j, float(weight)))

    return AttentionExport(
        unit_id=trajectory.unit_id,
        feature_rows=feature_rows,
        cycle_sums=cycle_sums,
        predictions=predictions,
    )


def write_attention_csvs(export: AttentionExport, out_dir: str | Path) -> dict[str, Path]:
    """Write attention_feature.csv and attention_cycle_sums.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feature_path = out_dir / "attention_feature.csv"
    sums_path = out_dir / "attention_cycle_sums.csv"
    with open(feature_path, "w", newline="", encoding="utf-8") as out:
        writer = csv.writer(out)
        writer.writerow(["cycle", "head", "row_sensor", "col_sensor", "weight"])
        for row in export.feature_rows:
            writer.writerow([row[0], row[1], row[2], row[3], repr(row[4])])
    with open(sums_path, "w", newline="", encoding="utf-8") as out:
        writer = csv.writer(out)
        writer.writerow(["cycle", "sensor", "weight_sum"])
        for cycle, sensor, weight in export.cycle_sums:
            writer.writerow([cycle, sensor, repr(weight)])
    return {"feature": feature_path, "cycle_sums": sums_path}

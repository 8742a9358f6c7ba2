"""C-MAPSS / PHM08-format ingestion, condition-wise normalization, and
time-window extraction.

Input files are whitespace-separated numeric text, 26 columns per row:
unit id, cycle, 3 operational settings, 21 sensor readings.  Truth files
carry one non-negative integer per line, ordered like the test units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import ClusteringError, ContractError, IntegrityError, ParseError

N_SETTINGS = 3
N_SENSORS = 21
N_CHANNELS = N_SETTINGS + N_SENSORS
N_COLUMNS = 2 + N_CHANNELS

CONSTANT_SIGMA = 1e-8
KMEANS_MAX_ITER = 300


@dataclass
class RawTrajectory:
    """One engine's run: cycles 1..L with settings and sensor rows."""

    unit_id: int
    settings: np.ndarray  # (L, 3) float64
    sensors: np.ndarray  # (L, 21) float64

    def __post_init__(self):
        self.settings = np.asarray(self.settings, dtype=np.float64)
        self.sensors = np.asarray(self.sensors, dtype=np.float64)

    def __len__(self) -> int:
        return self.settings.shape[0]

    @property
    def channels(self) -> np.ndarray:
        """(L, 24) matrix: settings columns then sensor columns."""
        return np.hstack([self.settings, self.sensors])


@dataclass
class WindowedSample:
    """One model input: an F x T channel window and its RUL label."""

    matrix: np.ndarray  # (F, T) float32
    label: float
    unit_id: int
    end_cycle: int


def _open(source: str | Path | TextIO) -> tuple[TextIO, bool]:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8"), True
    return source, False


def parse_cmapss(source: str | Path | TextIO) -> list[RawTrajectory]:
    """Parse a C-MAPSS-format stream into per-unit trajectories.

    Units appear in first-occurrence order.  Each unit's cycles must run
    1, 2, 3, ... with no gaps; anything else is an IntegrityError.
    """
    stream, owns = _open(source)
    rows_by_unit: dict[int, list[np.ndarray]] = {}
    try:
        for line_no, line in enumerate(stream, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != N_COLUMNS:
                raise ParseError(
                    f"expected {N_COLUMNS} columns, found {len(parts)}", line=line_no
                )
            try:
                values = np.array([float(p) for p in parts], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"non-numeric field: {exc}", line=line_no) from None
            unit = int(values[0])
            if unit <= 0 or values[0] != unit:
                raise ParseError(f"unit id must be a positive integer, got {parts[0]}", line=line_no)
            rows_by_unit.setdefault(unit, []).append(values)
    finally:
        if owns:
            stream.close()

    trajectories = []
    for unit, rows in rows_by_unit.items():
        table = np.vstack(rows)
        cycles = table[:, 1]
        expected = np.arange(1, len(rows) + 1, dtype=np.float64)
        if not np.array_equal(cycles, expected):
            raise IntegrityError(
                f"unit {unit}: cycles must increase by 1 starting at 1"
            )
        trajectories.append(
            RawTrajectory(unit_id=unit, settings=table[:, 2:5], sensors=table[:, 5:26])
        )
    return trajectories


def write_cmapss(trajectories: Sequence[RawTrajectory], path: str | Path) -> None:
    """Serialize trajectories back to the 26-column text format."""
    with open(path, "w", encoding="utf-8") as out:
        for traj in trajectories:
            chans = traj.channels
            for t in range(len(traj)):
                fields = [str(traj.unit_id), str(t + 1)]
                fields += [f"{v:.17g}" for v in chans[t]]
                out.write(" ".join(fields) + "\n")


def parse_rul_truth(source: str | Path | TextIO) -> list[int]:
    """Parse a truth file: one non-negative integer RUL per line."""
    stream, owns = _open(source)
    values = []
    try:
        for line_no, line in enumerate(stream, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                value = int(float(text))
                if float(text) != value:
                    raise ValueError
            except ValueError:
                raise ParseError(f"expected an integer RUL, got {text!r}", line=line_no) from None
            if value < 0:
                raise ParseError(f"RUL must be non-negative, got {value}", line=line_no)
            values.append(value)
    finally:
        if owns:
            stream.close()
    return values


# ---------------------------------------------------------------------
# condition clustering and normalization
# ---------------------------------------------------------------------

@dataclass
class ConditionModel:
    """K-means centroids over the 3 settings plus per-(channel, condition)
    normalization statistics.  With k=1 this degenerates to global stats."""

    centroids: np.ndarray  # (k, 3)
    means: np.ndarray  # (k, 24)
    stds: np.ndarray  # (k, 24)
    constant_mask: np.ndarray = field(default=None)  # (k, 24) bool

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.stds = np.asarray(self.stds, dtype=np.float64)
        if self.constant_mask is None:
            self.constant_mask = self.stds < CONSTANT_SIGMA
        self.constant_mask = np.asarray(self.constant_mask, dtype=bool)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def assign(self, settings: np.ndarray) -> np.ndarray:
        """Nearest-centroid index per row; ties go to the lowest index."""
        settings = np.atleast_2d(np.asarray(settings, dtype=np.float64))
        d2 = ((settings[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)

    # -- text serialization (format: see README "Condition model file") --
    def save_text(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as out:
            out.write("conditionmodel v1\n")
            out.write(f"k {self.k}\n")
            out.write("centroids\n")
            for row in self.centroids:
                out.write(" ".join(f"{v:.17g}" for v in row) + "\n")
            out.write("stats mean std\n")
            for j in range(self.k):
                for i in range(self.means.shape[1]):
                    out.write(
                        f"{j} {i} {self.means[j, i]:.17g} {self.stds[j, i]:.17g}\n"
                    )

    @classmethod
    def load_text(cls, path: str | Path) -> "ConditionModel":
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh]
        if not lines or lines[0] != "conditionmodel v1":
            raise ParseError(f"{path}: not a conditionmodel v1 file")
        k = int(lines[1].split()[1])
        centroids = np.array(
            [[float(v) for v in lines[3 + j].split()] for j in range(k)]
        )
        means = np.zeros((k, N_CHANNELS))
        stds = np.zeros((k, N_CHANNELS))
        for ln in lines[4 + k :]:
            if not ln:
                continue
            j, i, mu, sigma = ln.split()
            means[int(j), int(i)] = float(mu)
            stds[int(j), int(i)] = float(sigma)
        return cls(centroids=centroids, means=means, stds=stds)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ seeding: spread the k starting points by choosing
    each next one with probability proportional to its squared distance
    from the already-chosen set.  Duplicates have zero probability, so the
    k starts are distinct data points."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise ClusteringError(f"fewer than {k} distinct setting points")
        centroids[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _lloyd(points: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Lloyd iteration from a seeded k-means++ start."""
    distinct = np.unique(points, axis=0)
    if distinct.shape[0] < k:
        raise ClusteringError(
            f"need at least {k} distinct setting points, found {distinct.shape[0]}"
        )
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(points, k, rng)
    assignment = None
    for _ in range(KMEANS_MAX_ITER):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assignment = d2.argmin(axis=1)
        if assignment is not None and np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for j in range(k):
            members = points[assignment == j]
            if len(members):  # empty clusters keep their previous centroid
                centroids[j] = members.mean(axis=0)
    return centroids


def cluster_conditions(
    trajectories: Iterable[RawTrajectory], k: int, seed: int = 0
) -> ConditionModel:
    """Fit the condition model on training trajectories.

    Clusters every row's settings with k-means, then computes each
    channel's mean/std within each condition.  Channels whose std falls
    below 1e-8 are flagged constant and later normalize to 0.
    """
    if k < 1:
        raise ContractError(f"cluster count must be >= 1, got {k}")
    trajectories = list(trajectories)
    if not trajectories:
        raise ContractError("no trajectories to fit on")
    settings = np.vstack([t.settings for t in trajectories])
    channels = np.vstack([t.channels for t in trajectories])
    centroids = _lloyd(settings, k, seed)

    model = ConditionModel(
        centroids=centroids,
        means=np.zeros((k, N_CHANNELS)),
        stds=np.zeros((k, N_CHANNELS)),
    )
    assignment = model.assign(settings)
    for j in range(k):
        members = channels[assignment == j]
        if len(members) == 0:
            continue
        model.means[j] = members.mean(axis=0)
        model.stds[j] = members.std(axis=0)
    model.constant_mask = model.stds < CONSTANT_SIGMA
    return model


def normalize(trajectory: RawTrajectory, cm: ConditionModel) -> RawTrajectory:
    """Z-score every channel against its row's condition statistics."""
    assignment = cm.assign(trajectory.settings)
    chans = trajectory.channels
    mu = cm.means[assignment]
    sigma = cm.stds[assignment].copy()
    constant = cm.constant_mask[assignment]
    sigma[constant] = 1.0
    z = (chans - mu) / sigma
    z[constant] = 0.0
    return RawTrajectory(
        unit_id=trajectory.unit_id,
        settings=z[:, :N_SETTINGS],
        sensors=z[:, N_SETTINGS:],
    )


# ---------------------------------------------------------------------
# labels and windows
# ---------------------------------------------------------------------

def piecewise_rul(t_total: int, t: int, r_max: float) -> float:
    """Capped linear RUL: min(r_max, t_total - t)."""
    if r_max <= 0:
        raise ContractError(f"r_max must be positive, got {r_max}")
    if not 1 <= t <= t_total:
        raise ContractError(f"cycle {t} outside 1..{t_total}")
    return float(min(r_max, t_total - t))


def _window_ending_at(channels: np.ndarray, end: int, window: int) -> np.ndarray:
    """(F, T) window of the cycles ending at ``end`` (1-based), transposed
    from row-per-cycle storage; cycles before the first repeat cycle 1."""
    start = end - window
    if start >= 0:
        block = channels[start:end]
    else:
        pad = np.repeat(channels[0:1], -start, axis=0)
        block = np.vstack([pad, channels[:end]])
    return np.ascontiguousarray(block.T, dtype=np.float32)


def window_split(
    trajectory: RawTrajectory,
    window: int,
    r_max: float,
    is_test: bool = False,
    test_rul: float | None = None,
    clip_test_label: bool = True,
) -> list[WindowedSample]:
    """Slide a stride-1 window over one trajectory.

    Training mode yields one sample per window position with the capped
    linear label.  Test mode yields only the final window, labeled with
    the truth-file RUL (clipped at r_max unless disabled).  Sequences
    shorter than the window produce a single sample padded by repeating
    the first cycle.
    """
    if window < 1:
        raise ContractError(f"window length must be >= 1, got {window}")
    chans = trajectory.channels
    total = len(trajectory)

    if is_test:
        if test_rul is None:
            raise ContractError("test mode requires the truth RUL")
        label = float(min(test_rul, r_max)) if clip_test_label else float(test_rul)
        return [
            WindowedSample(
                matrix=_window_ending_at(chans, total, window),
                label=label,
                unit_id=trajectory.unit_id,
                end_cycle=total,
            )
        ]

    ends = range(window, total + 1) if window <= total else [total]
    return [
        WindowedSample(
            matrix=_window_ending_at(chans, end, window),
            label=piecewise_rul(total, end, r_max),
            unit_id=trajectory.unit_id,
            end_cycle=end,
        )
        for end in ends
    ]


def expected_sample_count(t_total: int, window: int) -> int:
    """Training sample count for one trajectory of length t_total."""
    return t_total - window + 1 if window <= t_total else 1


def windows_to_arrays(
    samples: Sequence[WindowedSample],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack samples into (X, y, unit_ids, end_cycles) arrays."""
    x = np.stack([s.matrix for s in samples]).astype(np.float32)
    y = np.array([s.label for s in samples], dtype=np.float32)
    units = np.array([s.unit_id for s in samples], dtype=np.int64)
    ends = np.array([s.end_cycle for s in samples], dtype=np.int64)
    return x, y, units, ends


# ---------------------------------------------------------------------
# windowed dataset text serialization
# ---------------------------------------------------------------------

def save_windows(samples: Sequence[WindowedSample], path: str | Path) -> None:
    """Write windows as versioned text: one sample per line after the
    header, fields: unit end_cycle label then F*T row-major values."""
    if not samples:
        raise ContractError("no samples to save")
    f, t = samples[0].matrix.shape
    with open(path, "w", encoding="utf-8") as out:
        out.write("windows v1\n")
        out.write(f"features {f} window {t} count {len(samples)}\n")
        for s in samples:
            head = f"{s.unit_id} {s.end_cycle} {s.label:.9g}"
            body = " ".join(f"{v:.9g}" for v in s.matrix.reshape(-1))
            out.write(head + " " + body + "\n")


def load_windows(path: str | Path) -> list[WindowedSample]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "windows v1":
            raise ParseError(f"{path}: not a windows v1 file")
        meta = fh.readline().split()
        f, t, count = int(meta[1]), int(meta[3]), int(meta[5])
        samples = []
        for line_no, line in enumerate(fh, start=3):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 + f * t:
                raise ParseError(f"bad sample width {len(parts)}", line=line_no)
            matrix = np.array(parts[3:], dtype=np.float32).reshape(f, t)
            samples.append(
                WindowedSample(
                    matrix=matrix,
                    label=float(parts[2]),
                    unit_id=int(parts[0]),
                    end_cycle=int(parts[1]),
                )
            )
    if len(samples) != count:
        raise IntegrityError(f"{path}: header says {count} samples, found {len(samples)}")
    return samples


def pair_test_truth(
    test_trajectories: Sequence[RawTrajectory], truth: Sequence[int]
) -> list[tuple[RawTrajectory, int]]:
    """Zip test units with their truth RULs; counts must match."""
    if len(test_trajectories) != len(truth):
        raise IntegrityError(
            f"{len(test_trajectories)} test units but {len(truth)} truth values"
        )
    return list(zip(test_trajectories, truth))

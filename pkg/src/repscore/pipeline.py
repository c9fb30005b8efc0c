"""From raw per-IMU recordings to model-ready windowed batches.

Dataset directory layout:

- ``manifest.json``: subjects, exercises, IMU ids, padded length, window count
  and an index of repetitions (id, file, subject, exercise, side, true_length);
- one CSV per repetition: header ``t, imu<id>_acc_x, ..., imu<id>_gyr_z``, one
  row per 120 Hz sample;
- ``ratings.csv``: columns ``repetition_id, rater_id, score``;
- ``alignment.json`` (optional): IMU id -> row-major 3x3 rotation;
- ``ground_truth.json`` / ``labels.json`` (optional): true / aggregated labels.

Magnetometer and air-pressure columns are parsed and ignored when present;
only the accelerometer and gyrometer channels feed the models.
"""

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from .errors import DataValidationError
from .labels import RatingRecord

SAMPLE_RATE_HZ = 120
CHANNEL_NAMES = ("acc_x", "acc_y", "acc_z", "gyr_x", "gyr_y", "gyr_z")
EXERCISES = ("DS", "HS", "IL", "TSP")
SIDES = ("left", "right", "none")
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class SensorLayout:
    """Ordered IMU ids; each IMU contributes 6 rows in CHANNEL_NAMES order."""

    imu_ids: tuple

    def __post_init__(self):
        object.__setattr__(self, "imu_ids", tuple(self.imu_ids))
        if len(set(self.imu_ids)) != len(self.imu_ids):
            raise ValueError("duplicate IMU ids in layout")
        if not self.imu_ids:
            raise ValueError("layout needs at least one IMU")

    @property
    def rows(self):
        return 6 * len(self.imu_ids)

    def row_key(self, row):
        """(imu_id, channel_name) for a row index."""
        return self.imu_ids[row // 6], CHANNEL_NAMES[row % 6]

    def row_index(self, imu_id, channel):
        return 6 * self.imu_ids.index(imu_id) + CHANNEL_NAMES.index(channel)

    def column_names(self):
        return [f"imu{imu}_{ch}" for imu in self.imu_ids for ch in CHANNEL_NAMES]


@dataclass
class Repetition:
    """One exercise execution: per-IMU streams plus metadata.

    ``streams`` maps IMU id to a ``(true_length, 6)`` array in CHANNEL_NAMES
    column order (accelerometer in g, gyrometer in deg/s, 120 Hz).
    """

    rep_id: str
    subject_id: str
    exercise: str
    side: str
    streams: Dict[int, np.ndarray]
    true_length: int
    ratings: List[int] = field(default_factory=list)
    final_label: Optional[int] = None

    def validate(self):
        if self.exercise not in EXERCISES:
            raise DataValidationError(f"{self.rep_id}: unknown exercise {self.exercise!r}")
        if self.side not in SIDES:
            raise DataValidationError(f"{self.rep_id}: unknown side {self.side!r}")
        for imu, arr in self.streams.items():
            if arr.shape != (self.true_length, 6):
                raise DataValidationError(
                    f"{self.rep_id}: IMU {imu} stream shape {arr.shape} does not "
                    f"match true_length {self.true_length}"
                )
        for score in self.ratings:
            if score not in (1, 2, 3):
                raise DataValidationError(f"{self.rep_id}: rating {score} outside 1..3")


@dataclass
class ScalerParams:
    """Min/max per sensor class, fitted on training data only."""

    acc_min: float
    acc_max: float
    gyr_min: float
    gyr_max: float


@dataclass
class WindowedSample:
    """Model input for one repetition: (windows, rows, window_len) + mask."""

    windows: np.ndarray
    mask: np.ndarray
    label_onehot: Optional[np.ndarray] = None
    rep_id: Optional[str] = None


# ---------------------------------------------------------------------------
# transformations
# ---------------------------------------------------------------------------

def check_rotation(matrix, tol=1e-6):
    """Validate a 3x3 orthonormal rotation with det +1."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (3, 3):
        raise DataValidationError(f"rotation must be 3x3, got {m.shape}")
    if np.abs(m.T @ m - np.eye(3)).max() > tol:
        raise DataValidationError("rotation matrix is not orthonormal")
    if abs(np.linalg.det(m) - 1.0) > tol:
        raise DataValidationError("rotation matrix must have determinant +1 (no reflections)")
    return m


def apply_alignment(rep, rotations):
    """Rotate each IMU's acc and gyr triplets into its segment frame.

    ``rotations`` maps IMU id to a 3x3 orthonormal matrix R; every 3-vector
    sample v is replaced by R @ v.  IMUs without an entry are left unchanged.
    """
    checked = {imu: check_rotation(r) for imu, r in rotations.items()}
    streams = {}
    for imu, arr in rep.streams.items():
        if imu in checked:
            r = checked[imu]
            out = np.empty_like(arr)
            out[:, 0:3] = arr[:, 0:3] @ r.T
            out[:, 3:6] = arr[:, 3:6] @ r.T
            streams[imu] = out
        else:
            streams[imu] = arr.copy()
    return Repetition(
        rep_id=rep.rep_id, subject_id=rep.subject_id, exercise=rep.exercise,
        side=rep.side, streams=streams, true_length=rep.true_length,
        ratings=list(rep.ratings), final_label=rep.final_label,
    )


def arrange_channels(rep, layout):
    """Stack the IMU channels as rows: IMU by IMU, acc xyz then gyr xyz.

    Returns a ``(layout.rows, true_length)`` matrix.
    """
    matrix = np.empty((layout.rows, rep.true_length), dtype=np.float64)
    for r in range(layout.rows):
        imu, channel = layout.row_key(r)
        if imu not in rep.streams:
            raise DataValidationError(
                f"{rep.rep_id}: missing channel (imu={imu}, channel={channel})"
            )
        matrix[r] = rep.streams[imu][:, CHANNEL_NAMES.index(channel)]
    return matrix


def matrix_to_streams(matrix, layout):
    """Inverse of :func:`arrange_channels`."""
    if matrix.shape[0] != layout.rows:
        raise ValueError(f"matrix has {matrix.shape[0]} rows, layout expects {layout.rows}")
    streams = {}
    for i, imu in enumerate(layout.imu_ids):
        streams[imu] = matrix[6 * i:6 * (i + 1)].T.copy()
    return streams


def fit_scaler(repetitions):
    """Min/max over all accelerometer and all gyrometer samples of the given reps."""
    reps = list(repetitions)
    if not reps:
        raise ValueError("fit_scaler needs at least one repetition")
    acc_min = math.inf
    acc_max = -math.inf
    gyr_min = math.inf
    gyr_max = -math.inf
    for rep in reps:
        for arr in rep.streams.values():
            acc_min = min(acc_min, arr[:, 0:3].min())
            acc_max = max(acc_max, arr[:, 0:3].max())
            gyr_min = min(gyr_min, arr[:, 3:6].min())
            gyr_max = max(gyr_max, arr[:, 3:6].max())
    return ScalerParams(float(acc_min), float(acc_max), float(gyr_min), float(gyr_max))


def apply_scaler(matrix, layout, params):
    """Map accelerometer and gyrometer rows by their class (v - min)/(max - min).

    Training data lands in [0, 1]; out-of-range values are not clipped.  A
    degenerate class (max == min) maps to 0 with a warning.
    """
    out = np.empty_like(matrix, dtype=np.float64)
    acc_rows = np.array([r % 6 < 3 for r in range(layout.rows)])
    for is_acc, (lo, hi) in ((True, (params.acc_min, params.acc_max)),
                             (False, (params.gyr_min, params.gyr_max))):
        rows = acc_rows if is_acc else ~acc_rows
        span = hi - lo
        if span == 0:
            warnings.warn(
                f"degenerate {'accelerometer' if is_acc else 'gyrometer'} scaler "
                "(max == min); mapping the class to 0"
            )
            out[rows] = 0.0
        else:
            out[rows] = (matrix[rows] - lo) / span
    return out


def pad_and_window(matrix, true_length, max_length, windows,
                   label_onehot=None, rep_id=None):
    """Zero-pad to ``max_length`` and split into ``windows`` equal windows.

    ``mask[i]`` is true iff window i starts before ``true_length``, i.e. iff it
    overlaps real data.  ``windows`` must divide ``max_length``.
    """
    if matrix.shape[1] != true_length:
        raise ValueError(f"matrix has {matrix.shape[1]} columns, true_length is {true_length}")
    if true_length > max_length:
        raise DataValidationError(
            f"repetition length {true_length} exceeds the padded length {max_length}"
        )
    if max_length % windows != 0:
        raise ValueError(f"windows ({windows}) must divide max_length ({max_length})")
    rows = matrix.shape[0]
    window_len = max_length // windows
    padded = np.zeros((rows, max_length), dtype=matrix.dtype)
    padded[:, :true_length] = matrix
    # (rows, windows, window_len) -> (windows, rows, window_len)
    tensor = padded.reshape(rows, windows, window_len).transpose(1, 0, 2).copy()
    mask = np.array([i * window_len < true_length for i in range(windows)], dtype=bool)
    return WindowedSample(windows=tensor, mask=mask, label_onehot=label_onehot, rep_id=rep_id)


def label_to_onehot(label, dtype=np.float64):
    if label not in (1, 2, 3):
        raise ValueError(f"label must be 1, 2 or 3, got {label}")
    onehot = np.zeros(3, dtype=dtype)
    onehot[label - 1] = 1.0
    return onehot


class Preprocessor:
    """Fold-level preprocessing fitted on training repetitions only.

    ``fit`` records the scaler and the padded length (longest training
    repetition, rounded up so the window count divides it); ``transform`` turns
    a repetition into a :class:`WindowedSample`.  Repetitions longer than the
    fitted padded length are rejected.
    """

    def __init__(self, layout, windows=10):
        if windows < 1:
            raise ValueError("windows must be >= 1")
        self.layout = layout
        self.windows = windows
        self.scaler = None
        self.max_length = None

    @property
    def window_len(self):
        return self.max_length // self.windows

    def fit(self, train_reps):
        reps = list(train_reps)
        if not reps:
            raise ValueError("cannot fit a preprocessor on an empty training set")
        self.scaler = fit_scaler(reps)
        longest = max(rep.true_length for rep in reps)
        self.max_length = int(math.ceil(longest / self.windows) * self.windows)
        return self

    def transform(self, rep):
        if self.scaler is None:
            raise RuntimeError("preprocessor not fitted")
        matrix = apply_scaler(arrange_channels(rep, self.layout), self.layout, self.scaler)
        onehot = label_to_onehot(rep.final_label) if rep.final_label is not None else None
        return pad_and_window(matrix, rep.true_length, self.max_length, self.windows,
                              label_onehot=onehot, rep_id=rep.rep_id)

    def state_dict(self):
        return {
            "imu_ids": list(self.layout.imu_ids),
            "windows": self.windows,
            "max_length": self.max_length,
            "scaler": vars(self.scaler) if self.scaler else None,
        }

    @classmethod
    def from_state_dict(cls, state):
        prep = cls(SensorLayout(tuple(state["imu_ids"])), windows=state["windows"])
        prep.max_length = state["max_length"]
        if state["scaler"] is not None:
            prep.scaler = ScalerParams(**state["scaler"])
        return prep


# ---------------------------------------------------------------------------
# dataset container and I/O
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    layout: SensorLayout
    repetitions: List[Repetition]
    ratings: List[RatingRecord] = field(default_factory=list)
    alignment: Optional[Dict[int, np.ndarray]] = None
    windows: int = 10
    max_length: Optional[int] = None
    ground_truth: Optional[Dict[str, int]] = None

    def __post_init__(self):
        self._by_id = {rep.rep_id: rep for rep in self.repetitions}
        if len(self._by_id) != len(self.repetitions):
            raise DataValidationError("duplicate repetition ids")

    def rep(self, rep_id):
        return self._by_id[rep_id]

    def subjects(self):
        return sorted({rep.subject_id for rep in self.repetitions})

    def exercises(self):
        return sorted({rep.exercise for rep in self.repetitions})

    def labeled_indices(self):
        return [i for i, rep in enumerate(self.repetitions) if rep.final_label is not None]

    def attach_ratings(self):
        """Copy rating records onto the repetitions (sorted by rater id)."""
        by_rep = {}
        for rec in self.ratings:
            by_rep.setdefault(rec.repetition_id, []).append(rec)
        for rep in self.repetitions:
            recs = sorted(by_rep.get(rep.rep_id, []), key=lambda r: r.rater_id)
            rep.ratings = [r.score for r in recs]


def save_dataset(dataset, directory):
    """Write a dataset directory (see module docstring for the layout)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    for rep in dataset.repetitions:
        fname = f"{rep.rep_id}.csv"
        frame = pd.DataFrame({
            "t": np.arange(rep.true_length) / SAMPLE_RATE_HZ,
        })
        for imu in dataset.layout.imu_ids:
            arr = rep.streams[imu]
            for ci, ch in enumerate(CHANNEL_NAMES):
                frame[f"imu{imu}_{ch}"] = arr[:, ci]
        frame.to_csv(directory / fname, index=False)
        index.append({
            "id": rep.rep_id,
            "file": fname,
            "subject": rep.subject_id,
            "exercise": rep.exercise,
            "side": rep.side,
            "true_length": rep.true_length,
        })
    manifest = {
        "format_version": MANIFEST_VERSION,
        "subjects": dataset.subjects(),
        "exercises": dataset.exercises(),
        "imu_ids": list(dataset.layout.imu_ids),
        "max_length": dataset.max_length,
        "windows": dataset.windows,
        "repetitions": index,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    ratings = pd.DataFrame(
        [(r.repetition_id, r.rater_id, r.score) for r in dataset.ratings],
        columns=["repetition_id", "rater_id", "score"],
    )
    ratings.to_csv(directory / "ratings.csv", index=False)
    if dataset.alignment is not None:
        payload = {str(imu): np.asarray(m).reshape(9).tolist()
                   for imu, m in dataset.alignment.items()}
        (directory / "alignment.json").write_text(json.dumps(payload, indent=2))
    if dataset.ground_truth is not None:
        (directory / "ground_truth.json").write_text(
            json.dumps({"labels": dataset.ground_truth}, indent=2)
        )


def _read_repetition_csv(path, entry, layout):
    try:
        # round_trip parsing keeps the save/load cycle lossless
        frame = pd.read_csv(path, float_precision="round_trip")
    except Exception as exc:
        raise DataValidationError(f"{path.name}: unreadable CSV ({exc})") from exc
    n = len(frame)
    if n != entry["true_length"]:
        raise DataValidationError(
            f"{path.name}: {n} rows but manifest says true_length {entry['true_length']}"
        )
    streams = {}
    for imu in layout.imu_ids:
        arr = np.empty((n, 6), dtype=np.float64)
        for ci, ch in enumerate(CHANNEL_NAMES):
            col = f"imu{imu}_{ch}"
            if col not in frame.columns:
                raise DataValidationError(
                    f"{path.name}: missing channel column {col!r} (imu={imu}, channel={ch})"
                )
            try:
                values = frame[col].to_numpy(dtype=np.float64)
            except (ValueError, TypeError):
                numeric = pd.to_numeric(frame[col], errors="coerce")
                bad = int(numeric.isna().idxmax())
                raise DataValidationError(
                    f"{path.name}: non-numeric value in column {col!r} at row {bad}"
                ) from None
            if not np.all(np.isfinite(values)):
                bad = int(np.flatnonzero(~np.isfinite(values))[0])
                raise DataValidationError(
                    f"{path.name}: non-finite value in column {col!r} at row {bad}"
                )
            arr[:, ci] = values
        streams[imu] = arr
    return Repetition(
        rep_id=entry["id"], subject_id=entry["subject"], exercise=entry["exercise"],
        side=entry["side"], streams=streams, true_length=entry["true_length"],
    )


def load_dataset(directory):
    """Load a dataset directory; raises :class:`DataValidationError` on problems."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise DataValidationError(f"{directory}: manifest.json not found")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"manifest.json: invalid JSON ({exc})") from exc
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise DataValidationError(
            f"manifest.json: unsupported format_version {manifest.get('format_version')}"
        )
    layout = SensorLayout(tuple(manifest["imu_ids"]))
    repetitions = []
    for entry in manifest["repetitions"]:
        path = directory / entry["file"]
        if not path.exists():
            raise DataValidationError(f"missing repetition file {entry['file']}")
        rep = _read_repetition_csv(path, entry, layout)
        rep.validate()
        repetitions.append(rep)

    ratings = []
    ratings_path = directory / "ratings.csv"
    if ratings_path.exists():
        frame = pd.read_csv(ratings_path)
        for col in ("repetition_id", "rater_id", "score"):
            if col not in frame.columns:
                raise DataValidationError(f"ratings.csv: missing column {col!r}")
        known = {entry["id"] for entry in manifest["repetitions"]}
        for row in frame.itertuples(index=False):
            if row.score not in (1, 2, 3):
                raise DataValidationError(
                    f"ratings.csv: score {row.score} for {row.repetition_id} outside 1..3"
                )
            if row.repetition_id not in known:
                raise DataValidationError(
                    f"ratings.csv: unknown repetition id {row.repetition_id!r}"
                )
            ratings.append(RatingRecord(str(row.repetition_id), str(row.rater_id), int(row.score)))

    alignment = None
    alignment_path = directory / "alignment.json"
    if alignment_path.exists():
        raw = json.loads(alignment_path.read_text())
        alignment = {}
        for imu_str, flat in raw.items():
            mat = np.asarray(flat, dtype=np.float64).reshape(3, 3)
            alignment[int(imu_str)] = check_rotation(mat)

    ground_truth = None
    gt_path = directory / "ground_truth.json"
    if gt_path.exists():
        ground_truth = {str(k): int(v) for k, v in json.loads(gt_path.read_text())["labels"].items()}

    dataset = Dataset(
        layout=layout, repetitions=repetitions, ratings=ratings, alignment=alignment,
        windows=int(manifest.get("windows", 10)),
        max_length=manifest.get("max_length"),
        ground_truth=ground_truth,
    )
    dataset.attach_ratings()

    labels_path = directory / "labels.json"
    if labels_path.exists():
        payload = json.loads(labels_path.read_text())
        for rep in dataset.repetitions:
            label = payload["labels"].get(rep.rep_id)
            if label is not None:
                rep.final_label = int(label)
    return dataset


def validate_dataset(directory):
    """Collect problems with a dataset directory; empty list means valid."""
    try:
        dataset = load_dataset(directory)
    except DataValidationError as exc:
        return [str(exc)]
    problems = []
    if dataset.max_length is not None:
        for rep in dataset.repetitions:
            if rep.true_length > dataset.max_length:
                problems.append(
                    f"{rep.rep_id}: true_length {rep.true_length} exceeds manifest "
                    f"max_length {dataset.max_length}"
                )
    rated = {rec.repetition_id for rec in dataset.ratings}
    for rep in dataset.repetitions:
        if rep.rep_id not in rated and dataset.ratings:
            problems.append(f"{rep.rep_id}: no ratings on record")
    seen = {}
    for rec in dataset.ratings:
        key = (rec.repetition_id, rec.rater_id)
        if key in seen:
            problems.append(f"duplicate rating for {key}")
        seen[key] = rec
    return problems

"""Seeded random search over the hyperparameter space with LOSOCV scoring.

Each sampled configuration is scored by k-fold LOSOCV mean macro F1 on the
train/validation/test splits.  The leaderboard is ranked by mean validation
macro F1 (ties: higher mean training macro F1, then earlier sample index) and
never consults test-set scores.  Rows are appended to ``leaderboard.csv`` as
configs finish, so an interrupted sweep resumes to the identical result.
"""

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd

from .arch import ModelConfig
from .harness import run_experiment

DEFAULT_AXES = {
    "activation": ["relu", "elu", "lrelu"],
    "cnn_blocks": [1, 2, 3],
    "scheme": ["inc_filters_fixed_kernel", "inc_filters_dec_kernel"],
    "regularization": ["dropout_0.2", "batchnorm"],
    "lstm_layers": [1, 2],
    "batch_size": [4, 8, 16, 32],
}

AXIS_ORDER = ("activation", "cnn_blocks", "scheme", "regularization",
              "lstm_layers", "batch_size")

LEADERBOARD_COLUMNS = [
    "sample_index", "activation", "cnn_blocks", "scheme", "regularization",
    "lstm_layers", "batch_size", "train_f1_folds", "val_f1_folds",
    "test_f1_folds", "mean_train", "mean_val", "mean_test", "diverged",
]


@dataclass
class SearchSpace:
    """The searchable axes; 3*3*2*2*2*4 = 288 combinations by default."""

    axes: Dict[str, List] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_AXES.items()})

    def __post_init__(self):
        for name in AXIS_ORDER:
            if name not in self.axes:
                raise ValueError(f"search space missing axis {name!r}")
            if not self.axes[name]:
                raise ValueError(f"axis {name!r} is empty")

    @property
    def size(self):
        out = 1
        for name in AXIS_ORDER:
            out *= len(self.axes[name])
        return out

    def to_json_file(self, path):
        Path(path).write_text(json.dumps({"axes": self.axes}, indent=2))

    @classmethod
    def from_json_file(cls, path):
        return cls(axes=json.loads(Path(path).read_text())["axes"])


def sample_configs(space, n, seed, windows=10, exhaustive=False):
    """Draw ``n`` configurations, uniform and independent per axis.

    Duplicates are permitted (random mode); ``exhaustive=True`` instead
    enumerates every combination exactly once (ignores ``n``).  Sampling is
    reproducible under the seed.
    """
    if exhaustive:
        combos = itertools.product(*(space.axes[name] for name in AXIS_ORDER))
        return [
            ModelConfig(windows=windows, **dict(zip(AXIS_ORDER, combo)))
            for combo in combos
        ]
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 41]))
    configs = []
    for _ in range(n):
        choice = {name: space.axes[name][rng.integers(len(space.axes[name]))]
                  for name in AXIS_ORDER}
        configs.append(ModelConfig(windows=windows, **choice))
    return configs


def _row_from_result(index, config, result, diverged):
    def fold_scores(split):
        return [
            f.reports[split].macro_f1 if split in f.reports else float("nan")
            for f in result.fold_outcomes
        ]

    train_scores = fold_scores("train")
    val_scores = fold_scores("val")
    test_scores = fold_scores("test")
    return {
        "sample_index": index,
        "activation": config.activation,
        "cnn_blocks": config.cnn_blocks,
        "scheme": config.scheme,
        "regularization": config.regularization,
        "lstm_layers": config.lstm_layers,
        "batch_size": config.batch_size,
        "train_f1_folds": json.dumps(train_scores),
        "val_f1_folds": json.dumps(val_scores),
        "test_f1_folds": json.dumps(test_scores),
        "mean_train": float(np.nanmean(train_scores)),
        "mean_val": float(np.nanmean(val_scores)),
        "mean_test": float(np.nanmean(test_scores)),
        "diverged": bool(diverged),
    }


def rank_leaderboard(frame):
    """Sort by mean validation macro F1, ties by mean training macro F1, then
    by sample index; adds a 1-based ``rank`` column.  Test scores are never
    part of the key."""
    ordered = frame.sort_values(
        by=["mean_val", "mean_train", "sample_index"],
        ascending=[False, False, True],
        kind="mergesort",
    ).reset_index(drop=True)
    ordered["rank"] = np.arange(1, len(ordered) + 1)
    return ordered


def load_leaderboard(path):
    path = Path(path)
    if not path.exists():
        return pd.DataFrame(columns=LEADERBOARD_COLUMNS)
    return pd.read_csv(path)


def run_sweep(dataset, selection="DS", n=120, folds=5, epochs=15, seed=0,
              out_dir=None, resume=False, workers=1, exhaustive=False,
              space=None, windows=None, lr=1e-4, patience=None, dtype=np.float64,
              progress=None):
    """Score ``n`` sampled configurations; returns the ranked leaderboard frame.

    A config whose training diverges is scored with its best finite checkpoint
    and flagged in the ``diverged`` column.  When ``out_dir`` is given,
    ``leaderboard.csv`` grows a row per finished config; with ``resume=True``
    already-finished sample indices are skipped.
    """
    space = space or SearchSpace()
    if windows is None:
        windows = dataset.windows
    configs = sample_configs(space, n, seed, windows=windows, exhaustive=exhaustive)

    board_path = None
    done = set()
    rows = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        board_path = out_dir / "leaderboard.csv"
        if resume:
            existing = load_leaderboard(board_path)
            rows = existing.to_dict("records")
            done = set(existing["sample_index"].tolist())
        elif board_path.exists():
            board_path.unlink()

    for index, config in enumerate(configs):
        if index in done:
            continue
        result = run_experiment(
            dataset, selection, config, folds=folds, epochs=epochs,
            seed=np.random.SeedSequence([seed, 59, index]).generate_state(1)[0],
            lr=lr, patience=patience, dtype=dtype, workers=workers,
        )
        # a diverged fold was scored with its best finite checkpoint
        diverged = any(f.diverged for f in result.fold_outcomes)
        row = _row_from_result(index, config, result, diverged)
        rows.append(row)
        if board_path is not None:
            pd.DataFrame([row], columns=LEADERBOARD_COLUMNS).to_csv(
                board_path, mode="a", header=not board_path.exists(), index=False
            )
        if progress is not None:
            progress(index, row)

    frame = pd.DataFrame(rows, columns=LEADERBOARD_COLUMNS)
    ranked = rank_leaderboard(frame)
    if out_dir is not None:
        ranked.to_csv(out_dir / "leaderboard_ranked.csv", index=False)
    return ranked

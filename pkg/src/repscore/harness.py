"""Training and evaluation protocol: LOSO splits, training loop, experiments.

Evaluation is leave-one-subject-out: each fold holds out every repetition of
one subject as the test set, and a stratified 20% of the remaining
repetitions as the validation set.  k-fold LOSOCV repeats this for k distinct
seeded-randomly chosen test subjects.  Min-max scaling and the padded length
are fitted per fold on that fold's training repetitions only.
"""

import json
import multiprocessing
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .arch import build_model
from .errors import DataValidationError, NumericError, TrainingDiverged
from .metrics import report_from_predictions
from .nn import Adam
from .pipeline import Preprocessor

VAL_FRACTION = 0.2
DEFAULT_EPOCHS = 100
DEFAULT_PATIENCE = 15
DEFAULT_LR = 1e-4

SELECTIONS = ("DS", "TSP", "HS-left", "HS-right", "HS-combined",
              "IL-left", "IL-right", "IL-combined")


@dataclass
class Fold:
    test_subject: str
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    warnings: List[str] = field(default_factory=list)


@dataclass
class SplitPlan:
    folds: List[Fold]
    seed: int

    def to_dict(self):
        return {
            "seed": self.seed,
            "folds": [
                {
                    "test_subject": f.test_subject,
                    "train_idx": f.train_idx.tolist(),
                    "val_idx": f.val_idx.tolist(),
                    "test_idx": f.test_idx.tolist(),
                    "warnings": f.warnings,
                }
                for f in self.folds
            ],
        }


def select_repetitions(dataset, selection):
    """Indices of labeled repetitions matching a dataset selection name.

    ``DS``/``TSP`` take all labeled repetitions of that exercise; side-split
    exercises use ``HS-left``, ``HS-right``, ``HS-combined`` and the IL
    equivalents.
    """
    if selection not in SELECTIONS:
        raise ValueError(f"selection must be one of {SELECTIONS}, got {selection!r}")
    parts = selection.split("-")
    exercise = parts[0]
    side = parts[1] if len(parts) > 1 else None
    idx = []
    for i, rep in enumerate(dataset.repetitions):
        if rep.final_label is None or rep.exercise != exercise:
            continue
        if side in ("left", "right") and rep.side != side:
            continue
        idx.append(i)
    if not idx:
        raise DataValidationError(f"selection {selection!r} matched no labeled repetitions")
    return idx


def stratified_validation_split(labels, rng, fraction=VAL_FRACTION, stratify=True):
    """Split positions into (train, val); val size is round(fraction * n).

    With stratification the validation slots are apportioned to classes by
    largest remainder, so every class's validation share is within one sample
    of ``fraction`` and the total size equals the unstratified split exactly.
    """
    labels = np.asarray(labels)
    n = labels.size
    n_val = int(round(fraction * n))
    if not stratify:
        val_positions = sorted(rng.choice(n, size=n_val, replace=False).tolist())
    else:
        classes, counts = np.unique(labels, return_counts=True)
        quotas = counts * (n_val / n)
        base = np.floor(quotas).astype(int)
        leftover = n_val - base.sum()
        order = np.argsort(-(quotas - base), kind="stable")
        for i in order[:leftover]:
            base[i] += 1
        val_positions = []
        for cls, take in zip(classes, base):
            positions = np.flatnonzero(labels == cls)
            chosen = rng.choice(positions, size=take, replace=False)
            val_positions.extend(chosen.tolist())
        val_positions = sorted(val_positions)
    train_positions = sorted(set(range(n)) - set(val_positions))
    return np.array(train_positions, dtype=int), np.array(val_positions, dtype=int)


def make_losocv(dataset, folds, seed, indices=None, stratify=True):
    """Build a k-fold LOSO split plan over the labeled repetitions.

    ``folds`` distinct test subjects are chosen uniformly (seeded); each fold's
    validation set is a stratified 20% of the remaining repetitions.  A fold
    whose training set is missing a class entirely is flagged with a warning
    and kept.
    """
    if indices is None:
        indices = dataset.labeled_indices()
    indices = np.asarray(sorted(indices), dtype=int)
    if indices.size == 0:
        raise DataValidationError("no labeled repetitions to split")
    subjects = sorted({dataset.repetitions[i].subject_id for i in indices})
    if folds > len(subjects):
        raise ValueError(f"folds ({folds}) exceeds subject count ({len(subjects)})")
    rng = np.random.default_rng(seed)
    test_subjects = rng.choice(np.array(subjects, dtype=object), size=folds, replace=False)

    plan_folds = []
    for subject in test_subjects:
        test_idx = np.array(
            [i for i in indices if dataset.repetitions[i].subject_id == subject], dtype=int
        )
        rest = np.array(
            [i for i in indices if dataset.repetitions[i].subject_id != subject], dtype=int
        )
        rest_labels = np.array([dataset.repetitions[i].final_label for i in rest])
        train_pos, val_pos = stratified_validation_split(rest_labels, rng, stratify=stratify)
        fold = Fold(
            test_subject=str(subject),
            train_idx=rest[train_pos],
            val_idx=rest[val_pos],
            test_idx=test_idx,
        )
        train_classes = {dataset.repetitions[i].final_label for i in fold.train_idx}
        missing = set((1, 2, 3)) - train_classes
        if missing:
            msg = f"fold {subject}: training set missing class(es) {sorted(missing)}"
            fold.warnings.append(msg)
            warnings.warn(msg)
        plan_folds.append(fold)
    return SplitPlan(folds=plan_folds, seed=seed)


def audit_split_hygiene(dataset, plan):
    """List every leak of a test subject into its fold's train/validation sets.

    Also checks train/validation disjointness.  An empty list means the plan
    is clean; scaler hygiene is separate (the scaler sees only ``train_idx``
    repetitions by construction, see :func:`prepare_fold`).
    """
    violations = []
    for fold in plan.folds:
        for name, idx in (("train", fold.train_idx), ("validation", fold.val_idx)):
            for i in idx:
                rep = dataset.repetitions[i]
                if rep.subject_id == fold.test_subject:
                    violations.append(
                        f"fold {fold.test_subject}: {name} set contains "
                        f"test-subject repetition {rep.rep_id}"
                    )
        overlap = set(fold.train_idx.tolist()) & set(fold.val_idx.tolist())
        if overlap:
            violations.append(
                f"fold {fold.test_subject}: train and validation overlap on {sorted(overlap)}"
            )
        for i in fold.test_idx:
            if dataset.repetitions[i].subject_id != fold.test_subject:
                violations.append(
                    f"fold {fold.test_subject}: test set contains a foreign repetition"
                )
    return violations


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class FoldData:
    """Preprocessed arrays for one fold."""

    preprocessor: Preprocessor
    x_train: np.ndarray
    m_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    m_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    m_test: np.ndarray
    y_test: np.ndarray
    excluded: List[str] = field(default_factory=list)


def prepare_fold(dataset, fold, windows, dtype=np.float64):
    """Fit preprocessing on the fold's training reps and transform all splits.

    Validation/test repetitions longer than the fitted padded length cannot be
    windowed against the trained input shape; they are excluded with a warning
    and listed in ``excluded``.
    """
    train_reps = [dataset.repetitions[i] for i in fold.train_idx]
    prep = Preprocessor(dataset.layout, windows=windows).fit(train_reps)
    excluded = []

    def transform_set(idx):
        xs, ms, ys = [], [], []
        for i in idx:
            rep = dataset.repetitions[i]
            if rep.true_length > prep.max_length:
                warnings.warn(
                    f"{rep.rep_id}: length {rep.true_length} exceeds the fold's padded "
                    f"length {prep.max_length}; excluded from this fold"
                )
                excluded.append(rep.rep_id)
                continue
            sample = prep.transform(rep)
            xs.append(sample.windows)
            ms.append(sample.mask)
            ys.append(sample.label_onehot)
        if not xs:
            return (np.zeros((0, windows, dataset.layout.rows, prep.window_len), dtype=dtype),
                    np.zeros((0, windows), dtype=bool), np.zeros((0, 3), dtype=dtype))
        return (np.stack(xs).astype(dtype), np.stack(ms), np.stack(ys).astype(dtype))

    x_train, m_train, y_train = transform_set(fold.train_idx)
    x_val, m_val, y_val = transform_set(fold.val_idx)
    x_test, m_test, y_test = transform_set(fold.test_idx)
    return FoldData(prep, x_train, m_train, y_train, x_val, m_val, y_val,
                    x_test, m_test, y_test, excluded)


@dataclass
class TrainResult:
    network: object
    history: Dict[str, List[float]]
    best_epoch: int
    fold_data: FoldData
    diverged: bool = False


def _evaluate_arrays(network, x, mask, y_onehot, batch_size=64):
    probs = network.predict_proba(x, mask, batch_size=batch_size)
    p_true = (probs * y_onehot).sum(axis=1)
    loss = float(-np.log(np.clip(p_true, 1e-300, None)).mean())
    y_true = y_onehot.argmax(axis=1)
    y_pred = probs.argmax(axis=1)
    return report_from_predictions(y_true, y_pred, mean_loss=loss)


def evaluate(network, x, mask, y_onehot, batch_size=64):
    """Inference-mode metrics report on one split."""
    if x.shape[0] == 0:
        raise ValueError("cannot evaluate an empty set")
    return _evaluate_arrays(network, x, mask, y_onehot, batch_size=batch_size)


def train(config, dataset, fold, epochs=DEFAULT_EPOCHS, seed=0, lr=DEFAULT_LR,
          patience=DEFAULT_PATIENCE, dtype=np.float64, fold_data=None,
          progress=None):
    """Train one fold; returns a :class:`TrainResult`.

    Minibatch training with shuffled batches of ``config.batch_size`` and Adam
    (learning rate 1e-4 by default).  The history records per-epoch training
    loss / macro F1 (running over the training batches, regularization active)
    and validation loss / macro F1 (inference mode).  The weights of the best
    validation-macro-F1 epoch are restored at the end.  Training aborts with
    :class:`TrainingDiverged` on a non-finite loss or gradient; the exception
    carries the best finite state so far.

    The epoch budget and early-stopping patience are configuration, not fixed
    protocol; pass ``patience=None`` to disable early stopping.
    """
    if fold_data is None:
        fold_data = prepare_fold(dataset, fold, config.windows, dtype=dtype)
    prep = fold_data.preprocessor
    seq = np.random.SeedSequence([seed, 7])
    model_seed_seq, shuffle_seq = seq.spawn(2)
    network = build_model(config, dataset.layout, prep.window_len,
                          seed=model_seed_seq, dtype=dtype)
    optimizer = Adam(network.params(), lr=lr)
    shuffle_rng = np.random.default_rng(shuffle_seq)

    x_train, m_train, y_train = fold_data.x_train, fold_data.m_train, fold_data.y_train
    n_train = x_train.shape[0]
    if n_train == 0:
        raise DataValidationError("fold has an empty training set")

    history = {"train_loss": [], "train_macro_f1": [], "val_loss": [], "val_macro_f1": []}
    best = {"epoch": -1, "val_f1": -1.0, "weights": None}

    def snapshot():
        return [p.value.copy() for p in network.params()]

    def finish(diverged):
        if best["weights"] is not None:
            for p, w in zip(network.params(), best["weights"]):
                p.value[...] = w
        return TrainResult(network=network, history=history,
                           best_epoch=best["epoch"], fold_data=fold_data,
                           diverged=diverged)

    for epoch in range(epochs):
        order = shuffle_rng.permutation(n_train)
        batch_losses = []
        train_true, train_pred = [], []
        for start in range(0, n_train, config.batch_size):
            sel = order[start:start + config.batch_size]
            network.zero_grad()
            try:
                loss, probs = network.loss_and_gradients(
                    x_train[sel], m_train[sel], y_train[sel], training=True
                )
                if not np.isfinite(loss):
                    raise NumericError(f"non-finite loss {loss} (epoch {epoch}, batch at {start})")
                optimizer.step()
            except NumericError as exc:
                raise TrainingDiverged(
                    f"training diverged at epoch {epoch}: {exc}", partial_result=finish(True)
                ) from exc
            batch_losses.append(loss)
            train_true.extend(y_train[sel].argmax(axis=1).tolist())
            train_pred.extend(probs.argmax(axis=1).tolist())

        train_report = report_from_predictions(train_true, train_pred)
        history["train_loss"].append(float(np.mean(batch_losses)))
        history["train_macro_f1"].append(train_report.macro_f1)

        if fold_data.x_val.shape[0] > 0:
            val_report = _evaluate_arrays(network, fold_data.x_val, fold_data.m_val, fold_data.y_val)
            history["val_loss"].append(val_report.mean_loss)
            history["val_macro_f1"].append(val_report.macro_f1)
            current = val_report.macro_f1
        else:
            history["val_loss"].append(float("nan"))
            history["val_macro_f1"].append(float("nan"))
            current = train_report.macro_f1

        if current > best["val_f1"]:
            best.update(epoch=epoch, val_f1=current, weights=snapshot())
        if progress is not None:
            progress(epoch, history)
        if patience is not None and epoch - best["epoch"] >= patience:
            break

    if best["weights"] is None:
        best.update(epoch=len(history["train_loss"]) - 1, weights=snapshot())
    return finish(False)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

@dataclass
class FoldOutcome:
    test_subject: str
    reports: Dict[str, object]
    history: Dict[str, List[float]]
    best_epoch: int
    diverged: bool
    excluded: List[str]

    def to_dict(self):
        return {
            "test_subject": self.test_subject,
            "reports": {k: v.to_dict() for k, v in self.reports.items()},
            "history": self.history,
            "best_epoch": self.best_epoch,
            "diverged": self.diverged,
            "excluded": self.excluded,
        }


@dataclass
class ExperimentResult:
    selection: str
    config: object
    fold_outcomes: List[FoldOutcome]
    summary: Dict[str, Dict[str, float]]
    split_plan: SplitPlan

    def to_dict(self):
        return {
            "selection": self.selection,
            "config": self.config.to_dict(),
            "folds": [f.to_dict() for f in self.fold_outcomes],
            "summary": self.summary,
            "split_plan": self.split_plan.to_dict(),
        }


def _run_fold(args):
    dataset, config, fold, epochs, seed, lr, patience, dtype = args
    result = None
    diverged = False
    try:
        result = train(config, dataset, fold, epochs=epochs, seed=seed, lr=lr,
                       patience=patience, dtype=dtype)
    except TrainingDiverged as exc:
        result = exc.partial_result
        diverged = True
    fd = result.fold_data
    reports = {}
    for name, (x, m, y) in (
        ("train", (fd.x_train, fd.m_train, fd.y_train)),
        ("val", (fd.x_val, fd.m_val, fd.y_val)),
        ("test", (fd.x_test, fd.m_test, fd.y_test)),
    ):
        if x.shape[0] > 0:
            reports[name] = evaluate(result.network, x, m, y)
    return FoldOutcome(
        test_subject=fold.test_subject,
        reports=reports,
        history=result.history,
        best_epoch=result.best_epoch,
        diverged=diverged or result.diverged,
        excluded=fd.excluded,
    )


def summarize_folds(fold_outcomes):
    """Mean and (population) standard deviation of macro F1 per split."""
    summary = {}
    for split in ("train", "val", "test"):
        scores = [f.reports[split].macro_f1 for f in fold_outcomes if split in f.reports]
        if scores:
            summary[split] = {
                "mean_macro_f1": float(np.mean(scores)),
                "std_macro_f1": float(np.std(scores)),
                "per_fold": [float(s) for s in scores],
            }
    return summary


def run_experiment(dataset, selection, config, folds, epochs=DEFAULT_EPOCHS,
                   seed=0, lr=DEFAULT_LR, patience=DEFAULT_PATIENCE,
                   dtype=np.float64, workers=1):
    """k-fold LOSOCV on one dataset selection; returns per-fold and mean +/- std reports."""
    indices = select_repetitions(dataset, selection)
    plan = make_losocv(dataset, folds, seed, indices=indices)
    jobs = [
        (dataset, config, fold, epochs, np.random.SeedSequence([seed, k]).generate_state(1)[0],
         lr, patience, dtype)
        for k, fold in enumerate(plan.folds)
    ]
    if workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers) as pool:
            outcomes = pool.map(_run_fold, jobs)
    else:
        outcomes = [_run_fold(job) for job in jobs]
    summary = summarize_folds(outcomes)
    return ExperimentResult(
        selection=selection, config=config, fold_outcomes=outcomes,
        summary=summary, split_plan=plan,
    )


def write_experiment(result, out_dir):
    """Persist an experiment result as JSON + per-epoch history CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "result.json").write_text(json.dumps(result.to_dict(), indent=2))
    lines = ["fold,epoch,train_loss,train_macro_f1,val_loss,val_macro_f1"]
    for k, fold in enumerate(result.fold_outcomes):
        h = fold.history
        for e in range(len(h["train_loss"])):
            lines.append(
                f"{k},{e},{h['train_loss'][e]},{h['train_macro_f1'][e]},"
                f"{h['val_loss'][e]},{h['val_macro_f1'][e]}"
            )
    (out_dir / "history.csv").write_text("\n".join(lines) + "\n")
    return out_dir / "result.json"

"""Command-line entry point.

Subcommands: ``synth``, ``validate``, ``labels``, ``train``, ``eval``,
``experiment``, ``sweep``, ``report``.  Exit codes: 0 success, 2 usage error,
3 data validation error, 4 numeric failure.  Artifact-producing commands write
under a run directory (``--out``, default ``$REPSCORE_RUNS_DIR`` or ``./runs``)
with a ``manifest.json`` capturing the command, config, seeds, input hashes
and tool version.  Failed runs are marked with a ``failed.json`` file.
"""

import argparse
import datetime
import hashlib
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .arch import BEST_CONFIG, ModelConfig, build_model
from .errors import DataValidationError, NumericError
from .harness import (
    SELECTIONS,
    evaluate,
    make_losocv,
    prepare_fold,
    run_experiment,
    select_repetitions,
    train,
    write_experiment,
)
from .labels import build_labeled_dataset, krippendorff_alpha
from .nn import load_checkpoint, save_checkpoint
from .pipeline import Preprocessor, load_dataset, validate_dataset
from .sweep import SearchSpace, run_sweep
from .synthgen import GeneratorSpec, generate

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def hash_directory(directory):
    """Stable SHA-256 over sorted relative paths and file contents."""
    directory = Path(directory)
    digest = hashlib.sha256()
    for path in sorted(p for p in directory.rglob("*") if p.is_file()):
        digest.update(str(path.relative_to(directory)).encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def default_runs_dir():
    return Path(os.environ.get("REPSCORE_RUNS_DIR", "runs"))


def _run_dir(args, tag):
    if getattr(args, "out", None):
        return Path(args.out)
    stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
    return default_runs_dir() / f"{tag}-{stamp}"


def write_manifest(run_dir, command, args_dict, input_hashes):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "arguments": args_dict,
        "input_hashes": input_hashes,
        "tool_version": __version__,
        "timestamp": datetime.datetime.now().isoformat(timespec="seconds"),
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _mark_failed(run_dir, exc):
    try:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        (Path(run_dir) / "failed.json").write_text(
            json.dumps({"error": str(exc), "type": type(exc).__name__})
        )
    except OSError:
        pass


def _load_config(args):
    if getattr(args, "config", None):
        config = ModelConfig.from_json(Path(args.config).read_text())
    else:
        config = ModelConfig.from_dict(BEST_CONFIG.to_dict())
    if getattr(args, "windows", None):
        config.windows = args.windows
    return config


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    if args.spec:
        spec = GeneratorSpec.from_json_file(args.spec)
        if args.seed is not None:
            spec.seed = args.seed
    else:
        spec = GeneratorSpec(
            subjects=args.subjects,
            reps_per_subject=args.reps,
            exercises=tuple(args.exercises.split(",")),
            duration_range=(args.min_duration, args.max_duration),
            class_effect=args.class_effect,
            subject_confound=args.subject_confound,
            noise_sigma=args.noise,
            imus=args.imus,
            windows=args.windows,
            label_priors="skewed" if args.skewed else None,
            seed=args.seed if args.seed is not None else 0,
        )
    out = Path(args.out)
    generate(spec, out)
    print(f"dataset written to {out}")
    print(f"dataset hash: {hash_directory(out)}")
    return EXIT_OK


def cmd_validate(args):
    problems = validate_dataset(args.data)
    if problems:
        for p in problems:
            print(f"PROBLEM: {p}")
        return EXIT_DATA
    dataset = load_dataset(args.data)
    print(f"ok: {len(dataset.repetitions)} repetitions, "
          f"{len(dataset.subjects())} subjects, {len(dataset.ratings)} ratings")
    return EXIT_OK


def cmd_labels(args):
    dataset = load_dataset(args.data)
    dataset, summary = build_labeled_dataset(dataset)
    total = sum(summary["categories"].values())
    print("agreement categories:")
    for cat, count in summary["categories"].items():
        share = 100.0 * count / total if total else 0.0
        print(f"  {cat:>15}: {count:5d}  ({share:.1f}%)")
    alpha_all = krippendorff_alpha(dataset.ratings, metric="ordinal")
    print(f"Krippendorff's alpha (ordinal, all ratings): {alpha_all:.4f}")
    retained_ids = {rep.rep_id for rep in dataset.repetitions if rep.final_label is not None}
    retained_records = [r for r in dataset.ratings if r.repetition_id in retained_ids]
    if retained_records:
        alpha_retained = krippendorff_alpha(retained_records, metric="ordinal")
        print(f"Krippendorff's alpha (ordinal, retained repetitions): {alpha_retained:.4f}")
    print(f"retained {summary['retained']} repetitions, excluded {len(summary['excluded'])}")
    if summary["histograms"]:
        print("label histograms per exercise:")
        for key, hist in summary["histograms"].items():
            print(f"  {key}: {hist}")
    payload = {
        "labels": {rep.rep_id: rep.final_label for rep in dataset.repetitions
                   if rep.final_label is not None},
        "excluded": summary["excluded"],
        "categories": summary["categories"],
    }
    out_path = Path(args.out) if args.out else Path(args.data) / "labels.json"
    out_path.write_text(json.dumps(payload, indent=2))
    print(f"labels written to {out_path}")
    return EXIT_OK


def _labeled_dataset(args):
    dataset = load_dataset(args.data)
    if not dataset.labeled_indices():
        dataset, _ = build_labeled_dataset(dataset)
    return dataset


def cmd_train(args):
    dataset = _labeled_dataset(args)
    config = _load_config(args)
    indices = select_repetitions(dataset, args.selection)
    plan = make_losocv(dataset, args.folds, args.seed, indices=indices)
    fold = plan.folds[args.fold]
    run_dir = _run_dir(args, f"train-{args.selection}")
    write_manifest(run_dir, "train",
                   {**vars(args), "config": config.to_dict()},
                   {"data": hash_directory(args.data)})
    result = train(config, dataset, fold, epochs=args.epochs, seed=args.seed,
                   lr=args.lr, patience=args.patience)
    fd = result.fold_data
    reports = {}
    for name, (x, m, y) in (("train", (fd.x_train, fd.m_train, fd.y_train)),
                            ("val", (fd.x_val, fd.m_val, fd.y_val)),
                            ("test", (fd.x_test, fd.m_test, fd.y_test))):
        if x.shape[0]:
            reports[name] = evaluate(result.network, x, m, y)
    save_checkpoint(run_dir / "model.npz", result.network,
                    extra_meta={"preprocessor": fd.preprocessor.state_dict(),
                                "config": config.to_dict()})
    (run_dir / "metrics.json").write_text(json.dumps(
        {name: rep.to_dict() for name, rep in reports.items()}, indent=2))
    (run_dir / "history.json").write_text(json.dumps(result.history, indent=2))
    for name, rep in reports.items():
        print(f"{name}: macro F1 = {rep.macro_f1:.4f}")
    print(f"artifacts in {run_dir}")
    return EXIT_OK


def cmd_eval(args):
    network, _, extra = load_checkpoint(args.checkpoint)
    prep = Preprocessor.from_state_dict(extra["preprocessor"])
    dataset = _labeled_dataset(args)
    if args.subject:
        indices = [i for i, rep in enumerate(dataset.repetitions)
                   if rep.subject_id == args.subject and rep.final_label is not None]
    else:
        indices = select_repetitions(dataset, args.selection)
    if not indices:
        raise DataValidationError("no labeled repetitions matched the evaluation filter")
    xs, ms, ys = [], [], []
    for i in indices:
        rep = dataset.repetitions[i]
        if rep.true_length > prep.max_length:
            print(f"skipping {rep.rep_id}: longer than the model's padded length")
            continue
        sample = prep.transform(rep)
        xs.append(sample.windows)
        ms.append(sample.mask)
        ys.append(sample.label_onehot)
    report = evaluate(network, np.stack(xs), np.stack(ms), np.stack(ys))
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_experiment(args):
    dataset = _labeled_dataset(args)
    config = _load_config(args)
    if not getattr(args, "windows", None):
        config.windows = dataset.windows
    run_dir = _run_dir(args, f"experiment-{args.selection}")
    write_manifest(run_dir, "experiment",
                   {**vars(args), "config": config.to_dict()},
                   {"data": hash_directory(args.data)})
    try:
        result = run_experiment(dataset, args.selection, config, folds=args.folds,
                                epochs=args.epochs, seed=args.seed, lr=args.lr,
                                patience=args.patience, workers=args.workers)
    except Exception as exc:
        _mark_failed(run_dir, exc)
        raise
    write_experiment(result, run_dir)
    for split, stats in result.summary.items():
        print(f"{split}: macro F1 = {stats['mean_macro_f1']:.4f} "
              f"+/- {stats['std_macro_f1']:.4f}")
    print(f"artifacts in {run_dir}")
    return EXIT_OK


def cmd_sweep(args):
    dataset = _labeled_dataset(args)
    run_dir = _run_dir(args, f"sweep-{args.selection}")
    write_manifest(run_dir, "sweep", vars(args), {"data": hash_directory(args.data)})
    space = SearchSpace.from_json_file(args.space) if args.space else None
    try:
        board = run_sweep(
            dataset, selection=args.selection, n=args.n, folds=args.folds,
            epochs=args.epochs, seed=args.seed, out_dir=run_dir,
            resume=args.resume, workers=args.workers, exhaustive=args.exhaustive,
            space=space, windows=args.windows or None, lr=args.lr,
            progress=lambda i, row: print(
                f"[{i + 1}] val={row['mean_val']:.4f} train={row['mean_train']:.4f} "
                f"{row['activation']}/{row['cnn_blocks']}blk/{row['regularization']}"
            ),
        )
    except Exception as exc:
        _mark_failed(run_dir, exc)
        raise
    top = board.head(5)
    print("top configurations (by mean validation macro F1):")
    for _, row in top.iterrows():
        print(f"  rank {row['rank']}: val={row['mean_val']:.4f} "
              f"{row['activation']}, {row['cnn_blocks']} blocks, {row['scheme']}, "
              f"{row['regularization']}, {row['lstm_layers']} LSTM, batch {row['batch_size']}")
    print(f"leaderboard in {run_dir / 'leaderboard.csv'}")
    return EXIT_OK


def cmd_report(args):
    rows = []
    for run_dir in sorted(Path(args.runs).iterdir() if Path(args.runs).is_dir() else []):
        result_path = run_dir / "result.json"
        if not result_path.exists():
            continue
        payload = json.loads(result_path.read_text())
        cfg = payload["config"]
        summary = payload["summary"]
        rows.append({
            "run": run_dir.name,
            "selection": payload["selection"],
            "variant": cfg["variant"],
            "blocks": cfg["cnn_blocks"],
            "train": summary.get("train", {}),
            "val": summary.get("val", {}),
            "test": summary.get("test", {}),
        })
    if not rows:
        print(f"no experiment results under {args.runs}")
        return EXIT_DATA

    def cell(stats):
        if not stats:
            return "-"
        return f"{stats['mean_macro_f1']:.2f} +/- {stats['std_macro_f1']:.2f}"

    header = f"{'run':<32} {'selection':<12} {'variant':<16} {'blocks':>6} " \
             f"{'train':>14} {'validation':>14} {'test':>14}"
    print(header)
    print("-" * len(header))
    for r in rows:
        print(f"{r['run']:<32} {r['selection']:<12} {r['variant']:<16} {r['blocks']:>6} "
              f"{cell(r['train']):>14} {cell(r['val']):>14} {cell(r['test']):>14}")

    variants = sorted({r["variant"] for r in rows})
    blocks = sorted({r["blocks"] for r in rows})
    if len(variants) > 1 or len(blocks) > 1:
        print("\nvariant x CNN-blocks grid (train / validation / test):")
        print(f"{'blocks':>6} | " + " | ".join(f"{v:^26}" for v in variants))
        for b in blocks:
            cells = []
            for v in variants:
                match = [r for r in rows if r["variant"] == v and r["blocks"] == b]
                if match:
                    r = match[0]
                    t = r["train"].get("mean_macro_f1", float("nan"))
                    vl = r["val"].get("mean_macro_f1", float("nan"))
                    te = r["test"].get("mean_macro_f1", float("nan"))
                    cells.append(f"{t:.2f} / {vl:.2f} / {te:.2f}".center(26))
                else:
                    cells.append("-".center(26))
            print(f"{b:>6} | " + " | ".join(cells))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="repscore",
        description="Rate movement-exercise repetitions (1/2/3) from multi-IMU "
                    "recordings with CNN-LSTM networks.",
    )
    parser.add_argument("--version", action="version", version=f"repscore {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="generator spec JSON (synthgen.json)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--subjects", type=int, default=12)
    p.add_argument("--reps", type=int, default=30, help="repetitions per subject per exercise side")
    p.add_argument("--exercises", default="DS", help="comma-separated exercise codes")
    p.add_argument("--min-duration", type=int, default=240)
    p.add_argument("--max-duration", type=int, default=720)
    p.add_argument("--class-effect", type=float, default=1.0)
    p.add_argument("--subject-confound", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--imus", type=int, default=17)
    p.add_argument("--windows", type=int, default=10)
    p.add_argument("--skewed", action="store_true", help="use the skewed label priors preset")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="check a dataset directory")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("labels", help="aggregate ratings, report agreement and alpha")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="labels JSON path (default <data>/labels.json)")
    p.set_defaults(func=cmd_labels)

    def add_training_args(p, with_fold=False):
        p.add_argument("--data", required=True)
        p.add_argument("--selection", default="DS", choices=SELECTIONS)
        p.add_argument("--config", help="ModelConfig JSON file (default: best configuration)")
        p.add_argument("--folds", type=int, default=5)
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--patience", type=int, default=15)
        p.add_argument("--lr", type=float, default=1e-4)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--windows", type=int, default=0, help="windows per repetition (0: dataset default)")
        p.add_argument("--out", help="run directory")
        if with_fold:
            p.add_argument("--fold", type=int, default=0, help="fold index within the split plan")

    p = sub.add_parser("train", help="train a single LOSO fold")
    add_training_args(p, with_fold=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset selection or subject")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--selection", default="DS", choices=SELECTIONS)
    p.add_argument("--subject", help="restrict to one subject id")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="k-fold LOSOCV experiment on one selection")
    add_training_args(p)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep", help="random hyperparameter search")
    p.add_argument("--data", required=True)
    p.add_argument("--selection", default="DS", choices=SELECTIONS)
    p.add_argument("--n", type=int, default=120)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--windows", type=int, default=0)
    p.add_argument("--space", help="search space JSON (sweep.json)")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--exhaustive", action="store_true", help="enumerate all combinations once")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="run directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="render summary tables from run directories")
    p.add_argument("--runs", default=str(default_runs_dir()))
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except DataValidationError as exc:
        print(f"data validation error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        traceback.print_exc()
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: train / eval / analyze / surface.

Every command honors --seed end-to-end and exits 0 only when all of its
artifacts were written.  Perturbation budgets are given in /255 units for
image datasets (idx, cifar-bin) and in absolute feature units for blobs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, evalreport, skg, trainer
from .attacks import AttackConfig
from .models import ModelSpec, build

IMAGE_DATASETS = ("idx", "cifar-bin")
METRICS_NAME = "metrics.csv"
STATS_NAME = "stats.csv"
MANIFEST_NAME = "manifest.json"
BEST_NAME = "checkpoint-best.skgf"
LAST_NAME = "checkpoint-last.skgf"


class CliError(Exception):
    pass


def _parse_schedule(text: str, epochs: int) -> trainer.LrSchedule:
    """piecewise[:m1,m2,...[:base]] or cyclic:peak."""
    parts = text.split(":")
    kind = parts[0]
    if kind == "piecewise":
        milestones = tuple(int(v) for v in parts[1].split(",") if v) if len(parts) > 1 else ()
        base = float(parts[2]) if len(parts) > 2 else 0.1
        return trainer.LrSchedule("piecewise", base=base, milestones=milestones)
    if kind == "cyclic":
        peak = float(parts[1]) if len(parts) > 1 else 0.2
        return trainer.LrSchedule("cyclic", peak=peak, total=epochs)
    raise CliError(f"unknown lr schedule {text!r}; use piecewise[:...] or cyclic:peak")


def _scale_budget(value, dataset: str):
    return value / 255.0 if dataset in IMAGE_DATASETS else value


def _load_datasets(args):
    if args.dataset == "blobs":
        train = data.make_blobs(args.blob_classes, args.blob_per_class, args.blob_dim,
                                args.blob_spread, seed=2 * args.seed, split="train")
        test = data.make_blobs(args.blob_classes, args.blob_test_per_class, args.blob_dim,
                               args.blob_spread, seed=2 * args.seed + 1, split="test")
        return train, test
    if args.data_dir is None:
        raise CliError(f"--data-dir is required for dataset {args.dataset!r}")
    root = Path(args.data_dir)
    if args.dataset == "idx":
        train = data.load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte",
                              split="train")
        test = data.load_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte",
                             split="test")
        return train, test
    train = data.load_cifar_binary(root / "train", split="train")
    test = data.load_cifar_binary(root / "test", split="test")
    return train, test


def _default_epsilon(dataset: str) -> float:
    return 8.0 if dataset in IMAGE_DATASETS else 0.05


def cmd_train(args) -> int:
    train_ds, test_ds = _load_datasets(args)
    m = train_ds.num_classes

    epsilon_flag = args.epsilon if args.epsilon is not None else _default_epsilon(args.dataset)
    epsilon = _scale_budget(epsilon_flag, args.dataset)
    alpha = _scale_budget(args.alpha, args.dataset) if args.alpha is not None else None

    variant = trainer.normalize_variant(args.variant)
    init = args.train_init
    if init is None:
        init = "uniform" if variant in ("fgsm-rs", "mse") else "previous-batch"
    train_attack = AttackConfig(epsilon=epsilon, alpha=alpha, steps=1, init=init)
    eval_attack = AttackConfig(epsilon=epsilon, alpha=epsilon / 4 if epsilon > 0 else None,
                               steps=10, init="uniform")
    cfg = trainer.TrainConfig(
        variant=args.variant,
        epochs=args.epochs,
        batch_size=args.batch_size,
        schedule=_parse_schedule(args.lr_schedule, args.epochs),
        lam=getattr(args, "lambda"),
        kappa_min=args.kappa_min,
        train_attack=train_attack,
        eval_attack=eval_attack,
        seed=args.seed,
        precision=args.precision,
    )
    if cfg.uses_relaxation:
        skg.check_kappa_min(m, cfg.kappa_min)

    arch = args.arch
    if arch is None:
        arch = "mlp-small" if args.dataset == "blobs" else "cnn-small"
    spec = ModelSpec(arch, train_ds.feature_shape, m, seed=args.seed)
    model = build(spec)

    best, last, report = trainer.fit(model, train_ds, test_ds, cfg, model_spec=spec)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer.save_checkpoint(best, out / BEST_NAME)
    trainer.save_checkpoint(last, out / LAST_NAME)
    evalreport.emit(report.rows, out / METRICS_NAME, "csv")
    _write_stats(report.stats_history, out / STATS_NAME)
    manifest = {
        "version": __version__,
        "config": trainer.config_to_dict(cfg),
        "config_hash": trainer.config_hash(cfg),
        "model_spec": {"arch": spec.arch, "input_shape": list(spec.input_shape),
                       "num_classes": spec.num_classes, "seed": spec.seed},
        "dataset": {
            "kind": args.dataset,
            "train_fingerprint": train_ds.fingerprint(),
            "test_fingerprint": test_ds.fingerprint(),
        },
        "seed": args.seed,
        "artifacts": [BEST_NAME, LAST_NAME, METRICS_NAME, STATS_NAME],
    }
    with open(out / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {out / BEST_NAME}, {out / LAST_NAME}, {out / METRICS_NAME}, "
          f"{out / STATS_NAME}, {out / MANIFEST_NAME}")
    return 0


def _write_stats(stats_history, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("epoch", "class", "clean_correct", "clean_total",
                    "robust_correct", "robust_total"))
        for stats in stats_history:
            for i in range(stats.num_classes):
                w.writerow((stats.epoch, i, stats.clean_correct[i], stats.clean_total[i],
                            stats.robust_correct[i], stats.robust_total[i]))


def _read_stats(path):
    rows = {}
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            rows.setdefault(int(rec["epoch"]), []).append(rec)
    history = []
    for epoch in sorted(rows):
        recs = sorted(rows[epoch], key=lambda r: int(r["class"]))
        m = len(recs)
        stats = skg.ClassStats(
            m, epoch=epoch,
            clean_correct=[int(r["clean_correct"]) for r in recs],
            clean_total=[int(r["clean_total"]) for r in recs],
            robust_correct=[int(r["robust_correct"]) for r in recs],
            robust_total=[int(r["robust_total"]) for r in recs],
        )
        history.append(stats)
    return history


def cmd_eval(args) -> int:
    ckpt = trainer.load_checkpoint(args.checkpoint)
    model = trainer.restore_model(ckpt)
    _, test_ds = _load_datasets(args)
    epsilon_flag = args.epsilon if args.epsilon is not None else _default_epsilon(args.dataset)
    epsilon = _scale_budget(epsilon_flag, args.dataset)
    names = [n.strip() for n in args.attacks.split(",") if n.strip()]
    suite = evalreport.suite_by_names(names, epsilon)
    report = evalreport.evaluate(model, test_ds, suite, seed=args.seed,
                                 config_hash=ckpt.config_hash)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evalreport.emit(report, out / "report.csv", "csv")
    evalreport.emit(report, out / "report.json", "json")
    print(f"wrote {out / 'report.csv'}, {out / 'report.json'}")
    return 0


def cmd_analyze(args) -> int:
    run_dir = Path(args.run_dir)
    stats_path = run_dir / STATS_NAME
    if not stats_path.exists():
        raise CliError(f"{stats_path} not found; run `skgfat train` first")
    history = _read_stats(stats_path)
    trace = evalreport.alignment_trace(history)
    manifest_path = run_dir / MANIFEST_NAME
    if manifest_path.exists():
        trace.config_hash = json.loads(manifest_path.read_text()).get("config_hash", "")
    evalreport.emit(trace, run_dir / "alignment-counts.csv", "csv")
    evalreport.emit_transitions(trace, run_dir / "alignment-transitions.csv")
    evalreport.emit(trace, run_dir / "alignment.json", "json")
    print(f"wrote {run_dir / 'alignment-counts.csv'}, "
          f"{run_dir / 'alignment-transitions.csv'}, {run_dir / 'alignment.json'}")
    return 0


def cmd_surface(args) -> int:
    ckpt = trainer.load_checkpoint(args.checkpoint)
    model = trainer.restore_model(ckpt)
    _, test_ds = _load_datasets(args)
    if not 0 <= args.index < len(test_ds):
        raise CliError(f"--index {args.index} out of range for dataset of {len(test_ds)}")
    eps_range = _scale_budget(args.range, args.dataset)
    surface = evalreport.loss_surface(model, test_ds.examples[args.index],
                                      int(test_ds.labels[args.index]),
                                      eps_range, args.grid_n, seed=args.seed)
    surface.config_hash = ckpt.config_hash
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evalreport.emit(surface, out / "surface.csv", "csv")
    print(f"wrote {out / 'surface.csv'}")
    return 0


def _add_dataset_flags(p):
    p.add_argument("--dataset", choices=("blobs", "idx", "cifar-bin"), default="blobs")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--blob-classes", type=int, default=4)
    p.add_argument("--blob-per-class", type=int, default=250)
    p.add_argument("--blob-test-per-class", type=int, default=250)
    p.add_argument("--blob-dim", type=int, default=8)
    p.add_argument("--blob-spread", type=float, default=0.08)
    p.add_argument("--epsilon", type=float, default=None,
                   help="budget; /255 units for image datasets, absolute for blobs")
    p.add_argument("--seed", type=int, default=0)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skgfat")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoints + metrics")
    _add_dataset_flags(p)
    p.add_argument("--variant", choices=("fgsm-rs", "mse", "cwr", "agr"), required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--lambda", type=float, default=5.0)
    p.add_argument("--kappa-min", type=float, default=0.55)
    p.add_argument("--lr-schedule", default="piecewise")
    p.add_argument("--train-init", choices=("zero", "uniform", "scaled-noise", "previous-batch"),
                   default=None, help="override the variant's default initialization")
    p.add_argument("--arch", choices=("mlp-small", "cnn-small"), default=None)
    p.add_argument("--precision", choices=("double", "single"), default="double")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint under an attack suite")
    _add_dataset_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--attacks", default="fgsm,pgd-10,pgd-50,mi,cw")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="emit alignment-group series for a finished run")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("surface", help="loss-surface grid around one test example")
    _add_dataset_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--grid-n", type=int, default=21)
    p.add_argument("--range", type=float, default=None,
                   help="grid half-width; defaults to the dataset's default budget")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_surface)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.command == "surface" and args.range is None:
        args.range = _default_epsilon(args.dataset)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, data.DatasetError,
            trainer.CheckpointFormatError, trainer.DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

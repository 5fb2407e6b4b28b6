"""Evaluation harness, alignment analytics, loss-surface grids, and report
emission in CSV and JSON.

Reports are pure functions of (model, dataset, attack configs, seed); the
timestamp is kept in a single field so byte-level comparisons can mask it.
"""

from __future__ import annotations

import csv
import datetime
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import skg
from .attacks import AttackConfig, cw_margin_attack, fgsm_step, mi_fgsm, one_hot, pgd_attack
from .data import LabeledDataset
from .numcore import Tape, Tensor, ops
from .numcore.layers import Sequential

SCHEMA_VERSION = "skgfat-report-v1"
ATTACK_KINDS = ("fgsm", "pgd", "mi", "cw")


@dataclass(frozen=True)
class EvalAttack:
    name: str
    kind: str
    cfg: AttackConfig

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")


def default_suite(epsilon: float) -> list:
    """The standard evaluation battery: FGSM, PGD-10/50, MI, CW-margin."""
    quarter = epsilon / 4 if epsilon > 0 else None
    tenth = epsilon / 10 if epsilon > 0 else None
    return [
        EvalAttack("fgsm", "fgsm", AttackConfig(epsilon=epsilon, steps=1, init="zero")),
        EvalAttack("pgd-10", "pgd", AttackConfig(epsilon=epsilon, alpha=quarter,
                                                 steps=10, init="uniform")),
        EvalAttack("pgd-50", "pgd", AttackConfig(epsilon=epsilon, alpha=quarter,
                                                 steps=50, init="uniform")),
        EvalAttack("mi", "mi", AttackConfig(epsilon=epsilon, alpha=tenth,
                                            steps=10, init="zero")),
        EvalAttack("cw", "cw", AttackConfig(epsilon=epsilon, alpha=quarter,
                                            steps=30, init="uniform", loss="cw-margin")),
    ]


def suite_by_names(names, epsilon: float) -> list:
    by_name = {a.name: a for a in default_suite(epsilon)}
    unknown = [n for n in names if n not in by_name]
    if unknown:
        raise ValueError(f"unknown attack name(s) {unknown}; expected subset of {sorted(by_name)}")
    return [by_name[n] for n in names]


@dataclass
class EvalReport:
    clean_accuracy: float
    attack_accuracies: dict                  # name -> accuracy, ordered
    per_class_clean: np.ndarray
    per_class_robust: np.ndarray
    robust_reference: str                    # attack whose per-class accuracy is reported
    config_hash: str = ""
    timestamp: str = ""


def _attack_batch(model, attack: EvalAttack, x, y, m, rng):
    if attack.kind == "fgsm":
        x_adv, _ = fgsm_step(model, x, one_hot(y, m), attack.cfg, rng=rng)
        return x_adv
    if attack.kind == "pgd":
        return pgd_attack(model, x, y, attack.cfg, rng)
    if attack.kind == "mi":
        return mi_fgsm(model, x, y, attack.cfg, rng)
    return cw_margin_attack(model, x, y, attack.cfg, rng)


def _max_workers() -> int:
    raw = os.environ.get("SKGFAT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def evaluate(model: Sequential, ds: LabeledDataset, suite=None, seed: int = 0,
             batch_size: int = 256, config_hash: str = "",
             timestamp: Optional[str] = None) -> EvalReport:
    """Clean pass plus every configured attack; accuracies are argmax rates.

    Batches may be attacked in parallel (capped by SKGFAT_THREADS); each
    batch owns an rng stream split from the seed, so the schedule cannot
    change the result.
    """
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if suite is None:
        suite = default_suite(8 / 255)
    m = ds.num_classes
    spans = [(s, min(s + batch_size, len(ds))) for s in range(0, len(ds), batch_size)]

    clean_stats = skg.ClassStats(m)
    for s, e in spans:
        logits = model(Tensor(ds.examples[s:e])).data
        skg.update_stats(clean_stats, logits, None, ds.labels[s:e])

    def run_attack(attack):
        stats = skg.ClassStats(m)

        def one(bi_span):
            # the stream depends on the batch only, so every attack sees the
            # same random starts and strength comparisons are start-matched
            bi, (s, e) = bi_span
            rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA77, bi]))
            x_adv = _attack_batch(model, attack, ds.examples[s:e], ds.labels[s:e], m, rng)
            return model(Tensor(x_adv)).data

        workers = _max_workers()
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                all_logits = list(pool.map(one, enumerate(spans)))
        else:
            all_logits = [one(item) for item in enumerate(spans)]
        for (s, e), logits in zip(spans, all_logits):
            skg.update_stats(stats, None, logits, ds.labels[s:e])
        return stats

    attack_accuracies = {}
    per_class_robust = np.zeros(m)
    robust_reference = ""
    for attack in suite:
        stats = run_attack(attack)
        attack_accuracies[attack.name] = stats.overall_robust_accuracy()
        if attack.name == "pgd-10" or not robust_reference:
            per_class_robust = stats.class_robust_accuracy()
            robust_reference = attack.name

    if timestamp is None:
        timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    return EvalReport(
        clean_accuracy=clean_stats.overall_clean_accuracy(),
        attack_accuracies=attack_accuracies,
        per_class_clean=clean_stats.class_clean_accuracy(),
        per_class_robust=per_class_robust,
        robust_reference=robust_reference,
        config_hash=config_hash,
        timestamp=timestamp,
    )


@dataclass
class AlignmentTrace:
    """Per-epoch alignment-group snapshots plus the class transition log."""

    epochs: list                       # epoch indices
    group_of: np.ndarray               # [epochs, m]
    counts: np.ndarray                 # [epochs, 4]
    transitions: list = field(default_factory=list)  # (epoch, class, from, to)
    config_hash: str = ""


def alignment_trace(stats_history) -> AlignmentTrace:
    """Partition each epoch's stats and diff consecutive memberships."""
    if not stats_history:
        raise ValueError("alignment trace needs at least one epoch of stats")
    parts = [skg.partition(*skg.perspective_index(s)) for s in stats_history]
    epochs = [s.epoch for s in stats_history]
    group_of = np.stack([p.group_of for p in parts])
    counts = np.stack([p.sizes for p in parts])
    transitions = []
    for k in range(1, len(parts)):
        changed = np.nonzero(group_of[k] != group_of[k - 1])[0]
        for cls in changed:
            transitions.append((epochs[k], int(cls),
                                skg.GROUP_NAMES[group_of[k - 1][cls]],
                                skg.GROUP_NAMES[group_of[k][cls]]))
    return AlignmentTrace(epochs, group_of, counts, transitions)


@dataclass
class SurfaceGrid:
    offsets: np.ndarray            # grid coordinates along each direction
    losses: np.ndarray             # [grid_n, grid_n]; losses[i, j] at (a=offsets[i], b=offsets[j])
    adv_direction: np.ndarray
    random_direction: np.ndarray
    config_hash: str = ""


def loss_surface(model: Sequential, example: np.ndarray, label: int,
                 eps_range: float, grid_n: int, seed: int = 0) -> SurfaceGrid:
    """Cross-entropy surface over the adversarial and a random sign direction.

    The first direction is the sign of the input gradient at the example;
    the second is a random Rademacher vector.  Points are clamped to pixel
    range before evaluation, and the lattice center is the raw example.
    """
    if grid_n < 3:
        raise ValueError("grid_n must be at least 3")
    x0 = np.asarray(example)[None]
    m = model(Tensor(x0)).data.shape[1]
    target = one_hot(np.array([label]), m)

    xt = Tensor(x0)
    with Tape() as tape:
        loss = ops.cross_entropy(model(xt), target)
        tape.backward(loss, wrt=[xt])
    d1 = np.sign(xt.grad)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5F5]))
    d2 = rng.choice([-1.0, 1.0], size=x0.shape)

    offsets = np.linspace(-eps_range, eps_range, grid_n)
    losses = np.empty((grid_n, grid_n))
    for i, a in enumerate(offsets):
        for j, b in enumerate(offsets):
            xp = np.clip(x0 + a * d1 + b * d2, 0.0, 1.0)
            losses[i, j] = ops.cross_entropy(model(Tensor(xp)), target).item()
    return SurfaceGrid(offsets, losses, d1[0], d2[0])


# --- emission ---------------------------------------------------------------

def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _write_json(path, payload: dict):
    with open(path, "w") as f:
        json.dump({"schema": SCHEMA_VERSION, **payload}, f, indent=2, sort_keys=True)
        f.write("\n")


def emit(obj, path, fmt: str = "csv"):
    """Write a report, trace, surface, or metrics-row table to disk."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    try:
        if isinstance(obj, EvalReport):
            _emit_report(obj, path, fmt)
        elif isinstance(obj, AlignmentTrace):
            _emit_trace(obj, path, fmt)
        elif isinstance(obj, SurfaceGrid):
            _emit_surface(obj, path, fmt)
        elif isinstance(obj, list):
            _emit_rows(obj, path, fmt)
        else:
            raise TypeError(f"cannot emit object of type {type(obj).__name__}")
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
    return path


def _emit_report(report: EvalReport, path, fmt):
    if fmt == "csv":
        rows = [("clean", repr(report.clean_accuracy))]
        rows += [(name, repr(acc)) for name, acc in report.attack_accuracies.items()]
        _write_csv(path, ("metric", "accuracy"), rows)
    else:
        _write_json(path, {
            "clean_accuracy": report.clean_accuracy,
            "attack_accuracies": report.attack_accuracies,
            "per_class_clean": list(report.per_class_clean),
            "per_class_robust": list(report.per_class_robust),
            "robust_reference": report.robust_reference,
            "config_hash": report.config_hash,
            "timestamp": report.timestamp,
        })


def _emit_trace(trace: AlignmentTrace, path, fmt):
    if fmt == "csv":
        rows = [(e, *map(int, counts)) for e, counts in zip(trace.epochs, trace.counts)]
        _write_csv(path, ("epoch", *skg.GROUP_NAMES), rows)
    else:
        _write_json(path, {
            "epochs": list(trace.epochs),
            "counts": [list(map(int, c)) for c in trace.counts],
            "group_of": [list(map(int, g)) for g in trace.group_of],
            "transitions": [list(t) for t in trace.transitions],
            "config_hash": trace.config_hash,
        })


def emit_transitions(trace: AlignmentTrace, path):
    _write_csv(path, ("epoch", "class", "from_group", "to_group"),
               [tuple(t) for t in trace.transitions])
    return path


def _emit_surface(surface: SurfaceGrid, path, fmt):
    if fmt == "csv":
        rows = [(repr(float(a)), repr(float(b)), repr(float(surface.losses[i, j])))
                for i, a in enumerate(surface.offsets)
                for j, b in enumerate(surface.offsets)]
        _write_csv(path, ("adv_offset", "rand_offset", "loss"), rows)
    else:
        _write_json(path, {
            "offsets": list(surface.offsets),
            "losses": [list(row) for row in surface.losses],
            "config_hash": surface.config_hash,
        })


def _emit_rows(rows: list, path, fmt):
    if not rows:
        raise ValueError("cannot emit an empty row table")
    header = list(rows[0].keys())
    if fmt == "csv":
        _write_csv(path, header,
                   [[repr(r[k]) if isinstance(r[k], float) else r[k] for k in header]
                    for r in rows])
    else:
        _write_json(path, {"rows": rows})

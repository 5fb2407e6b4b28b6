"""Training loops for the single-step adversarial variants, with schedules,
checkpointing, and end-to-end seeded determinism.

The four variants share one epoch loop: the baselines train against hard
labels with no (or plain) prediction-gap regularization, while the
self-knowledge variants attack and fit against relaxed labels and weight
the gap penalty by class accuracy (cwr) or alignment-group size (agr).
Model selection follows the strongest-checkpoint protocol: the test-set
robust accuracy under the configured evaluation attack is computed every
epoch and the argmax checkpoint is kept alongside the final one.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import skg
from .attacks import AttackConfig, PerturbationCache, fgsm_step, pgd_attack
from .data import BatchPlan, LabeledDataset, batches
from .models import ModelSpec, build
from .numcore import Tape, Tensor, ops
from .numcore.layers import Sequential

VARIANTS = ("fgsm-rs", "mse", "cwr", "agr")
_VARIANT_ALIASES = {
    "fgsm-rs-baseline": "fgsm-rs",
    "mse-baseline": "mse",
    "skg-cwr": "cwr",
    "skg-agr": "agr",
}


def normalize_variant(name: str) -> str:
    return _VARIANT_ALIASES.get(name, name)
CHECKPOINT_MAGIC = b"SKGF"
CHECKPOINT_VERSION = 1
LOSS_DIVERGENCE_LIMIT = 50.0

# rng stream tags, all derived from the one master seed
_STREAM_BATCH = 1
_STREAM_ATTACK = 2
_STREAM_EVAL = 3


class DivergenceError(RuntimeError):
    pass


class CheckpointFormatError(Exception):
    pass


@dataclass(frozen=True)
class LrSchedule:
    kind: str = "piecewise"          # piecewise | cyclic
    base: float = 0.1
    milestones: tuple = ()
    factor: float = 0.1
    peak: float = 0.2
    total: int = 0

    def __post_init__(self):
        if self.kind not in ("piecewise", "cyclic"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "cyclic" and self.total < 1:
            raise ValueError("cyclic schedule needs a positive total epoch count")
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if list(self.milestones) != sorted(set(self.milestones)):
            raise ValueError("milestones must be strictly increasing")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if schedule.kind == "piecewise":
        passed = sum(1 for m in schedule.milestones if epoch >= m)
        return schedule.base * schedule.factor ** passed
    half = schedule.total / 2.0
    if epoch <= half:
        return schedule.peak * epoch / half
    return schedule.peak * (schedule.total - epoch) / (schedule.total - half)


@dataclass
class TrainConfig:
    variant: str
    epochs: int
    batch_size: int = 128
    schedule: LrSchedule = field(default_factory=LrSchedule)
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lam: float = 5.0
    kappa_min: float = 0.55
    train_attack: AttackConfig = None
    eval_attack: AttackConfig = None
    seed: int = 0
    precision: str = "double"

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.schedule.kind == "piecewise" and self.schedule.milestones and \
                self.schedule.milestones[-1] >= self.epochs:
            raise ValueError("milestones must lie below the epoch count")
        if self.precision not in ("double", "single"):
            raise ValueError("precision must be 'double' or 'single'")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.train_attack is None:
            init = "uniform" if self.variant in ("fgsm-rs", "mse") else "previous-batch"
            self.train_attack = AttackConfig(init=init)
        if self.eval_attack is None:
            self.eval_attack = AttackConfig(
                epsilon=self.train_attack.epsilon,
                alpha=self.train_attack.epsilon / 4, steps=10, init="uniform")

    @property
    def uses_relaxation(self) -> bool:
        return self.variant in ("cwr", "agr")

    @property
    def uses_penalty(self) -> bool:
        return self.variant in ("mse", "cwr", "agr")


def config_to_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["schedule"] = asdict(cfg.schedule)
    d["train_attack"] = asdict(cfg.train_attack)
    d["eval_attack"] = asdict(cfg.eval_attack)
    return d


def config_hash(cfg: TrainConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def sgd_step(params, grads, state, lr: float, momentum: float, weight_decay: float):
    """Classical-momentum SGD with the decay folded into the gradient.

    ``state`` holds one velocity buffer per parameter and is created on
    first use.  Non-finite gradients abort with diagnostics rather than
    silently corrupting the parameters.
    """
    if state is None:
        state = [np.zeros_like(p.data) for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise DivergenceError(
                f"non-finite gradient in parameter {i} ({bad} bad entries)")
        g = g + weight_decay * p.data
        state[i] = momentum * state[i] + g
        p.data = p.data - lr * state[i]
    return state


@dataclass
class EpochReport:
    epoch: int
    mean_loss: float
    mean_adv_loss: float
    n_batches: int
    taped_forwards_per_batch: int
    backwards_per_batch: int
    clean_inferences_per_batch: int


@dataclass
class Checkpoint:
    params: dict                 # name -> ndarray
    epoch: int
    metrics: dict
    config_hash: str
    model_spec: Optional[dict] = None


def take_checkpoint(model: Sequential, epoch: int, metrics: dict, cfg_hash: str,
                    model_spec: Optional[ModelSpec] = None) -> Checkpoint:
    params = {name: p.data.copy() for name, p in model.parameters()}
    spec_dict = None
    if model_spec is not None:
        spec_dict = {"arch": model_spec.arch, "input_shape": list(model_spec.input_shape),
                     "num_classes": model_spec.num_classes, "seed": model_spec.seed}
    return Checkpoint(params, epoch, dict(metrics), cfg_hash, spec_dict)


def save_checkpoint(ckpt: Checkpoint, path):
    header = json.dumps({"epoch": ckpt.epoch, "metrics": ckpt.metrics,
                         "model_spec": ckpt.model_spec}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<H", len(ckpt.config_hash)))
        f.write(ckpt.config_hash.encode())
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(ckpt.params)))
        for name, arr in ckpt.params.items():
            enc = name.encode()
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", 2 if arr.dtype == np.float32 else 1))
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=f"<{arr.dtype.str[1:]}").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"{path}: unsupported version {version}")
        (hash_len,) = struct.unpack("<H", f.read(2))
        cfg_hash = f.read(hash_len).decode()
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode())
        (count,) = struct.unpack("<I", f.read(4))
        params = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode()
            (dtype_tag,) = struct.unpack("<B", f.read(1))
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            dtype = np.dtype("<f4") if dtype_tag == 2 else np.dtype("<f8")
            n_bytes = int(np.prod(shape)) * dtype.itemsize
            params[name] = np.frombuffer(f.read(n_bytes), dtype=dtype).reshape(shape).copy()
    return Checkpoint(params, header["epoch"], header["metrics"], cfg_hash,
                      header.get("model_spec"))


def restore_model(ckpt: Checkpoint) -> Sequential:
    if ckpt.model_spec is None:
        raise CheckpointFormatError("checkpoint carries no model spec")
    spec = ModelSpec(ckpt.model_spec["arch"], tuple(ckpt.model_spec["input_shape"]),
                     ckpt.model_spec["num_classes"], ckpt.model_spec["seed"])
    model = build(spec)
    for name, p in model.parameters():
        p.data = ckpt.params[name].astype(p.data.dtype)
    return model


def _epoch_guidance(cfg: TrainConfig, prev_stats: Optional[skg.ClassStats], m: int):
    """CWR weights / AGR partition from the previous epoch's running stats."""
    c_vec = np.zeros(m)
    groups = skg.single_group_partition(m)
    if prev_stats is not None and prev_stats.clean_total.sum() > 0:
        c_vec = prev_stats.class_clean_accuracy()
        if prev_stats.robust_total.sum() > 0:
            groups = skg.partition(*skg.perspective_index(prev_stats))
    return c_vec, groups


def train_epoch(model: Sequential, ds: LabeledDataset, cfg: TrainConfig, epoch: int,
                prev_stats: Optional[skg.ClassStats], label_table: skg.RelaxedLabelTable,
                cache: PerturbationCache, opt_state, lr: float):
    """One pass over the training set; returns (stats, opt_state, EpochReport)."""
    m = ds.num_classes
    c_vec, groups = _epoch_guidance(cfg, prev_stats, m)
    penalty_on = cfg.uses_penalty and cfg.lam > 0
    params = model.param_tensors()
    stats = skg.ClassStats(m, epoch=epoch)
    attack_rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, _STREAM_ATTACK, epoch]))
    loss_sum = 0.0
    adv_loss_sum = 0.0
    n_batches = 0

    dtype = np.float32 if cfg.precision == "single" else np.float64
    for x, labels, class_ids in batches(ds, BatchPlan(cfg.batch_size, cfg.seed + _STREAM_BATCH, epoch)):
        x = x.astype(dtype, copy=False)
        targets = label_table.targets_for(class_ids)
        x_adv, delta = fgsm_step(model, x, targets, cfg.train_attack, cache, attack_rng)
        x_adv = x_adv.astype(dtype, copy=False)
        cache.put(delta)

        with Tape() as tape:
            adv_logits = model(Tensor(x_adv))
            loss_adv = ops.cross_entropy(adv_logits, targets)
            if penalty_on:
                clean_logits = model(Tensor(x))
                if cfg.variant == "cwr":
                    pen = skg.cwr_penalty(clean_logits, adv_logits, class_ids, c_vec, cfg.lam)
                elif cfg.variant == "agr":
                    pen = skg.agr_penalty(clean_logits, adv_logits, class_ids, groups, cfg.lam)
                else:
                    pen = ops.weighted_mean(
                        skg.mse_gap(ops.softmax(clean_logits), ops.softmax(adv_logits)),
                        np.full(len(class_ids), cfg.lam))
                loss = ops.add(loss_adv, pen)
            else:
                loss = loss_adv
            loss_value = loss.item()
            if not np.isfinite(loss_value) or loss_value > LOSS_DIVERGENCE_LIMIT:
                raise DivergenceError(
                    f"epoch {epoch} batch {n_batches}: loss {loss_value} "
                    f"exceeds the divergence guard {LOSS_DIVERGENCE_LIMIT}")
            tape.backward(loss, wrt=params)

        opt_state = sgd_step(params, [p.grad for p in params], opt_state,
                             lr, cfg.momentum, cfg.weight_decay)
        if penalty_on:
            clean_data = clean_logits.data
        else:
            clean_data = model(Tensor(x)).data
        skg.update_stats(stats, clean_data, adv_logits.data, class_ids)
        loss_sum += loss_value
        adv_loss_sum += loss_adv.item()
        n_batches += 1

    report = EpochReport(
        epoch=epoch,
        mean_loss=loss_sum / n_batches,
        mean_adv_loss=adv_loss_sum / n_batches,
        n_batches=n_batches,
        taped_forwards_per_batch=3 if penalty_on else 2,
        backwards_per_batch=2,
        clean_inferences_per_batch=0 if penalty_on else 1,
    )
    return stats, opt_state, report


def accuracy(model: Sequential, x: np.ndarray, labels: np.ndarray,
             batch_size: int = 256) -> float:
    correct = 0
    for start in range(0, len(x), batch_size):
        logits = model(Tensor(x[start:start + batch_size])).data
        correct += int((logits.argmax(axis=1) == labels[start:start + batch_size]).sum())
    return correct / len(x)


def robust_accuracy(model: Sequential, ds: LabeledDataset, cfg: AttackConfig,
                    seed, batch_size: int = 256) -> float:
    correct = 0
    for b, start in enumerate(range(0, len(ds), batch_size)):
        x = ds.examples[start:start + batch_size]
        y = ds.labels[start:start + batch_size]
        rng = np.random.default_rng(np.random.SeedSequence([*np.atleast_1d(seed).tolist(), b]))
        x_adv = pgd_attack(model, x, y, cfg, rng)
        logits = model(Tensor(x_adv)).data
        correct += int((logits.argmax(axis=1) == y).sum())
    return correct / len(ds)


@dataclass
class RunReport:
    rows: list               # one metrics dict per epoch
    stats_history: list      # ClassStats per epoch
    epoch_reports: list


def fit(model: Sequential, train_ds: LabeledDataset, test_ds: LabeledDataset,
        cfg: TrainConfig, model_spec: Optional[ModelSpec] = None):
    """Full training run; returns (best Checkpoint, last Checkpoint, RunReport)."""
    m = train_ds.num_classes
    if cfg.uses_relaxation:
        skg.check_kappa_min(m, cfg.kappa_min)
    if cfg.precision == "single":
        for p in model.param_tensors():
            p.data = p.data.astype(np.float32)

    cfg_hash = config_hash(cfg)
    label_table = skg.one_hot_table(m, cfg.kappa_min if cfg.uses_relaxation else 1.0)
    prev_stats = None
    cache = PerturbationCache()
    opt_state = None
    rows, stats_history, epoch_reports = [], [], []
    best_ckpt = None

    for epoch in range(cfg.epochs):
        lr = lr_at(cfg.schedule, epoch)
        stats, opt_state, report = train_epoch(
            model, train_ds, cfg, epoch, prev_stats, label_table, cache, opt_state, lr)
        if cfg.uses_relaxation:
            label_table = skg.build_label_table(stats, cfg.kappa_min)
        prev_stats = stats

        test_clean = accuracy(model, test_ds.examples, test_ds.labels)
        test_robust = robust_accuracy(model, test_ds, cfg.eval_attack,
                                      [cfg.seed, _STREAM_EVAL, epoch])
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": report.mean_loss,
            "train_adv_loss": report.mean_adv_loss,
            "train_clean_acc": stats.overall_clean_accuracy(),
            "train_robust_acc": stats.overall_robust_accuracy(),
            "test_clean_acc": test_clean,
            "test_robust_acc": test_robust,
        }
        rows.append(row)
        stats_history.append(stats)
        epoch_reports.append(report)
        if best_ckpt is None or test_robust > best_ckpt.metrics["test_robust_acc"]:
            best_ckpt = take_checkpoint(model, epoch, row, cfg_hash, model_spec)

    last_ckpt = take_checkpoint(model, cfg.epochs - 1, rows[-1], cfg_hash, model_spec)
    return best_ckpt, last_ckpt, RunReport(rows, stats_history, epoch_reports)

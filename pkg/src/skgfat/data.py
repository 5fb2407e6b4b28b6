"""Dataset ingestion, synthesis, normalization, and deterministic batching.

All loaders emit features scaled into [0, 1].  Batch order is a pure
function of (shuffle seed, epoch index), so runs replay exactly.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073


class DatasetError(Exception):
    pass


class BadMagicError(DatasetError):
    pass


class TruncatedFileError(DatasetError):
    pass


class CountMismatchError(DatasetError):
    pass


class RecordFormatError(DatasetError):
    pass


@dataclass
class LabeledDataset:
    examples: np.ndarray          # [N, ...], values in [0, 1]
    labels: np.ndarray            # [N] int class indices
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.examples = np.asarray(self.examples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.examples.shape[0] != self.labels.shape[0]:
            raise CountMismatchError(
                f"{self.examples.shape[0]} examples but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError("labels must lie in [0, num_classes)")
        if self.examples.size and (self.examples.min() < 0 or self.examples.max() > 1):
            raise DatasetError("features must lie in [0, 1]")

    def __len__(self):
        return self.examples.shape[0]

    @property
    def feature_shape(self):
        return self.examples.shape[1:]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.examples.shape).encode())
        h.update(self.examples.tobytes())
        h.update(self.labels.tobytes())
        h.update(str(self.num_classes).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int
    seed: int
    epoch: int = 0


def make_blobs(num_classes: int, per_class: int, dim: int = 2, spread: float = 0.1,
               seed: int = 0, split: str = "train") -> LabeledDataset:
    """Gaussian clusters with class means on a circle inside the unit box.

    Features are affinely mapped into [0, 1]; the map is the identity
    whenever the noise stays inside the box, so in the zero-spread limit
    every point sits exactly on its class mean.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be at least 2")
    if per_class < 1:
        raise ValueError("per_class must be at least 1")
    if spread <= 0:
        raise ValueError("spread must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xB70B5]))
    if dim >= 2:
        angles = 2 * np.pi * np.arange(num_classes) / num_classes
        means = np.full((num_classes, dim), 0.5)
        means[:, 0] = 0.5 + 0.35 * np.cos(angles)
        means[:, 1] = 0.5 + 0.35 * np.sin(angles)
    else:
        means = np.linspace(0.15, 0.85, num_classes)[:, None]
    labels = np.repeat(np.arange(num_classes), per_class)
    x = means[labels] + rng.normal(0.0, spread, size=(labels.size, dim))
    lo = min(0.0, float(x.min()))
    hi = max(1.0, float(x.max()))
    x = (x - lo) / (hi - lo)
    return LabeledDataset(x, labels, num_classes, split)


def _read_exact(f, count: int, path) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise TruncatedFileError(f"{path}: expected {count} more bytes, got {len(buf)}")
    return buf


def load_idx(images_path, labels_path, split: str = "train") -> LabeledDataset:
    """Load an IDX image/label pair (big-endian headers, ubyte payloads)."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    with open(images_path, "rb") as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise BadMagicError(f"{images_path}: magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")
        n, rows, cols = struct.unpack(">III", _read_exact(f, 12, images_path))
        raw = _read_exact(f, n * rows * cols, images_path)
        images = np.frombuffer(raw, dtype=np.uint8).reshape(n, 1, rows, cols)
    with open(labels_path, "rb") as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise BadMagicError(f"{labels_path}: magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")
        (n_labels,) = struct.unpack(">I", _read_exact(f, 4, labels_path))
        labels = np.frombuffer(_read_exact(f, n_labels, labels_path), dtype=np.uint8)
    if n_labels != n:
        raise CountMismatchError(f"{n} images but {n_labels} labels")
    num_classes = int(labels.max()) + 1 if labels.size else 0
    return LabeledDataset(images.astype(np.float64) / 255.0, labels.astype(np.int64),
                          num_classes, split)


def load_cifar_binary(directory, split: str = "train", num_classes=None) -> LabeledDataset:
    """Load CIFAR-style binary files: 3073-byte records, channel-major pixels."""
    directory = Path(directory)
    files = sorted(directory.glob("*.bin"))
    if not files:
        raise RecordFormatError(f"{directory}: no .bin record files found")
    chunks, label_chunks = [], []
    for path in files:
        raw = path.read_bytes()
        if len(raw) % CIFAR_RECORD_BYTES != 0:
            raise RecordFormatError(
                f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        label_chunks.append(rec[:, 0])
        chunks.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    labels = np.concatenate(label_chunks).astype(np.int64)
    images = np.concatenate(chunks).astype(np.float64) / 255.0
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return LabeledDataset(images, labels, num_classes, split)


def batches(ds: LabeledDataset, plan: BatchPlan):
    """Yield (examples, labels, class_ids) covering one shuffled epoch."""
    n = len(ds)
    if plan.batch_size < 1:
        raise ValueError("batch size must be at least 1")
    if plan.batch_size > n:
        raise ValueError(f"batch size {plan.batch_size} exceeds dataset size {n}")
    rng = np.random.default_rng(np.random.SeedSequence([int(plan.seed), 0xBA7C4, int(plan.epoch)]))
    order = rng.permutation(n)
    for start in range(0, n, plan.batch_size):
        idx = order[start:start + plan.batch_size]
        y = ds.labels[idx]
        yield ds.examples[idx], y, y

"""Self-knowledge machinery: class statistics, accuracy-alignment groups,
the class-wise and alignment-guided regularizers, and label relaxation.

Everything here is driven by accuracies the training loop produces anyway;
no extra inference passes are required.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numcore import Tensor, ops

GROUP_NAMES = ("GCGR", "GCBR", "BCGR", "BCBR")
GCGR, GCBR, BCGR, BCBR = range(4)
C_FLOOR = 1e-6  # guards |log 0| for classes with zero clean accuracy


@dataclass
class ClassStats:
    """Per-epoch running counters of clean/robust correctness per class."""

    num_classes: int
    epoch: int = 0
    clean_correct: np.ndarray = None
    clean_total: np.ndarray = None
    robust_correct: np.ndarray = None
    robust_total: np.ndarray = None

    def __post_init__(self):
        for name in ("clean_correct", "clean_total", "robust_correct", "robust_total"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.num_classes, dtype=np.int64))
            else:
                setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))

    def class_clean_accuracy(self) -> np.ndarray:
        return _safe_div(self.clean_correct, self.clean_total)

    def class_robust_accuracy(self) -> np.ndarray:
        return _safe_div(self.robust_correct, self.robust_total)

    def overall_clean_accuracy(self) -> float:
        total = self.clean_total.sum()
        return float(self.clean_correct.sum() / total) if total else 0.0

    def overall_robust_accuracy(self) -> float:
        total = self.robust_total.sum()
        return float(self.robust_correct.sum() / total) if total else 0.0


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros(len(num)), where=den > 0)


def update_stats(stats: ClassStats, logits_clean, logits_adv, labels) -> ClassStats:
    """Accumulate argmax-vs-label counts for one training batch.

    Clean and robust counters are tracked independently; passing None for
    one side updates only the other.  Accumulation over an epoch's batches
    equals the counts on the concatenated batches.
    """
    labels = np.asarray(labels)
    if labels.size and labels.max() >= stats.num_classes:
        raise ValueError(f"class id {labels.max()} out of range for m={stats.num_classes}")
    ones = np.ones(labels.size, dtype=np.int64)
    for logits, correct, total in (
        (logits_clean, stats.clean_correct, stats.clean_total),
        (logits_adv, stats.robust_correct, stats.robust_total),
    ):
        if logits is None:
            continue
        pred = np.asarray(logits).argmax(axis=1)
        np.add.at(total, labels, ones)
        np.add.at(correct, labels, (pred == labels).astype(np.int64))
    return stats


def perspective_index(stats: ClassStats):
    """Per-class deviations (a_c, a_r) from the overall micro-averages."""
    if stats.clean_total.sum() == 0 or stats.robust_total.sum() == 0:
        raise ValueError("perspective index undefined on empty stats; use the epoch-0 fallback")
    a_c = stats.class_clean_accuracy() - stats.overall_clean_accuracy()
    a_r = stats.class_robust_accuracy() - stats.overall_robust_accuracy()
    return a_c, a_r


@dataclass
class GroupPartition:
    """Class-to-group map with group sizes and inverse-size weights."""

    group_of: np.ndarray   # [m] values in {GCGR, GCBR, BCGR, BCBR}
    sizes: np.ndarray      # [4]
    weights: np.ndarray    # [4], 1/size on nonempty groups else 0

    @property
    def num_classes(self) -> int:
        return len(self.group_of)

    def class_weights(self) -> np.ndarray:
        return self.weights[self.group_of]


def partition(a_c: np.ndarray, a_r: np.ndarray) -> GroupPartition:
    """Assign classes to alignment groups; boundary indices count as good."""
    a_c, a_r = np.asarray(a_c), np.asarray(a_r)
    if a_c.shape != a_r.shape:
        raise ValueError("index vectors must have equal length")
    good_c = a_c >= 0
    good_r = a_r >= 0
    group_of = np.where(good_c, np.where(good_r, GCGR, GCBR),
                        np.where(good_r, BCGR, BCBR)).astype(np.int64)
    sizes = np.bincount(group_of, minlength=4).astype(np.int64)
    weights = np.divide(1.0, sizes, out=np.zeros(4), where=sizes > 0)
    return GroupPartition(group_of, sizes, weights)


def single_group_partition(num_classes: int) -> GroupPartition:
    """Epoch-0 bootstrap: every class in one group of size m."""
    return GroupPartition(
        np.zeros(num_classes, dtype=np.int64),
        np.array([num_classes, 0, 0, 0], dtype=np.int64),
        np.array([1.0 / num_classes, 0.0, 0.0, 0.0]),
    )


def mse_gap(p: Tensor, q: Tensor) -> Tensor:
    """Per-example squared prediction gap; callers apply weights and reduce."""
    return ops.squared_row_gap(p, q)


def _weighted_gap_penalty(logits_clean: Tensor, logits_adv: Tensor,
                          weights: np.ndarray) -> Tensor:
    gaps = mse_gap(ops.softmax(logits_clean), ops.softmax(logits_adv))
    return ops.weighted_mean(gaps, weights)


def cwr_penalty(logits_clean: Tensor, logits_adv: Tensor, class_ids: np.ndarray,
                c_vector: np.ndarray, lam: float) -> Tensor:
    """Clean-accuracy-weighted mean squared gap between the two prediction sets."""
    class_ids = np.asarray(class_ids)
    c_vector = np.asarray(c_vector, dtype=np.float64)
    if class_ids.size and class_ids.max() >= len(c_vector):
        raise ValueError(f"class id {class_ids.max()} has no clean-accuracy entry")
    if np.any(c_vector < 0) or np.any(c_vector > 1):
        raise ValueError("clean accuracies must be fractions in [0, 1]")
    return _weighted_gap_penalty(logits_clean, logits_adv, lam * c_vector[class_ids])


def agr_penalty(logits_clean: Tensor, logits_adv: Tensor, class_ids: np.ndarray,
                groups: GroupPartition, lam: float) -> Tensor:
    """Group-size-inverse-weighted mean squared gap over the alignment groups."""
    class_ids = np.asarray(class_ids)
    if class_ids.size and class_ids.max() >= groups.num_classes:
        raise ValueError(f"class id {class_ids.max()} is not mapped to a group")
    weights = lam * groups.class_weights()[class_ids]
    return _weighted_gap_penalty(logits_clean, logits_adv, weights)


def kappa_factor(c_i: float, kappa_min: float) -> float:
    """Relaxation factor: |log clean accuracy| clamped into [kappa_min, 1]."""
    if not 0 < kappa_min <= 1:
        raise ValueError("kappa_min must lie in (1/m, 1]")
    return min(max(abs(math.log(max(c_i, C_FLOOR))), kappa_min), 1.0)


def relax_labels(num_classes: int, class_index: int, kappa: float) -> np.ndarray:
    """Soft label with the true class at kappa and the rest sharing 1 - kappa."""
    if kappa <= 1.0 / num_classes:
        raise ValueError(f"kappa={kappa} must exceed 1/m={1.0 / num_classes} "
                         "so the label still prefers the true class")
    if kappa > 1:
        raise ValueError("kappa must not exceed 1")
    y = np.full(num_classes, (1.0 - kappa) / (num_classes - 1))
    y[class_index] = kappa
    return y


@dataclass
class RelaxedLabelTable:
    """Per-class soft-label rows and their relaxation factors."""

    kappa: np.ndarray   # [m]
    rows: np.ndarray    # [m, m]; rows[i] is the soft label for class i
    kappa_min: float

    @property
    def num_classes(self) -> int:
        return len(self.kappa)

    def targets_for(self, class_ids: np.ndarray) -> np.ndarray:
        return self.rows[np.asarray(class_ids)]


def one_hot_table(num_classes: int, kappa_min: float) -> RelaxedLabelTable:
    """Initial table: hard labels (kappa = 1 everywhere)."""
    check_kappa_min(num_classes, kappa_min)
    return RelaxedLabelTable(np.ones(num_classes), np.eye(num_classes), kappa_min)


def build_label_table(stats: ClassStats, kappa_min: float) -> RelaxedLabelTable:
    """Relax labels from the epoch's class-wise clean accuracies."""
    m = stats.num_classes
    check_kappa_min(m, kappa_min)
    c = stats.class_clean_accuracy()
    kappa = np.array([kappa_factor(ci, kappa_min) for ci in c])
    rows = np.stack([relax_labels(m, i, k) for i, k in enumerate(kappa)])
    return RelaxedLabelTable(kappa, rows, kappa_min)


def check_kappa_min(num_classes: int, kappa_min: float):
    if not (1.0 / num_classes) < kappa_min <= 1:
        raise ValueError(
            f"kappa_min={kappa_min} must lie in (1/m, 1] = ({1.0 / num_classes}, 1]")

"""Adversarial example generation.

Single-step attacks (with the initialization menu: zero, uniform random
start, scaled noise without projection, previous-batch reuse) drive
training; multi-step PGD, momentum-iterative FGSM, and margin-loss PGD
drive evaluation.  All attacks are pure given (model, batch, rng state).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .numcore import Tape, Tensor, ops

INIT_MODES = ("zero", "uniform", "scaled-noise", "previous-batch")
LOSS_KINDS = ("cross-entropy", "cw-margin")
SCALED_NOISE_FACTOR = 2.0
CW_KAPPA = 0.0


@dataclass
class AttackConfig:
    epsilon: float = 8 / 255
    alpha: Optional[float] = None      # None: epsilon for 1 step, epsilon/4 otherwise
    steps: int = 1
    init: str = "zero"
    project: bool = True
    clamp_pixels: bool = True
    loss: str = "cross-entropy"
    momentum: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.init not in INIT_MODES:
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown attack loss {self.loss!r}")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.init == "scaled-noise":
            # noise beyond the budget is the point of this mode
            self.project = False

    @property
    def step_size(self) -> float:
        if self.alpha is not None:
            return self.alpha
        return self.epsilon if self.steps == 1 else self.epsilon / 4


class PerturbationCache:
    """Most recent batch perturbation, keyed by batch geometry."""

    def __init__(self):
        self._delta = None

    def get(self, shape) -> Optional[np.ndarray]:
        if self._delta is not None and self._delta.shape == tuple(shape):
            return self._delta
        return None

    def put(self, delta: np.ndarray):
        self._delta = np.array(delta, copy=True)


def sample_init(mode: str, shape, epsilon: float,
                cache: Optional[PerturbationCache] = None,
                rng: Optional[np.random.Generator] = None) -> np.ndarray:
    if mode == "zero":
        return np.zeros(shape)
    if mode == "previous-batch" and cache is not None:
        cached = cache.get(shape)
        if cached is not None:
            return cached.copy()
        mode = "uniform"  # declared fallback: first batch behaves like uniform init
    if rng is None:
        raise ValueError(f"init mode {mode!r} requires an rng")
    if mode == "uniform" or mode == "previous-batch":
        return rng.uniform(-epsilon, epsilon, size=shape)
    if mode == "scaled-noise":
        k = SCALED_NOISE_FACTOR
        return rng.uniform(-k * epsilon, k * epsilon, size=shape)
    raise ValueError(f"unknown init mode {mode!r}")


def _logits_and_input_grad(model, x: np.ndarray, *, targets=None, labels=None,
                           loss: str = "cross-entropy"):
    """One taped forward pass; returns (logits, d loss / d input)."""
    xt = Tensor(x)
    with Tape() as tape:
        logits = model(xt)
        if loss == "cross-entropy":
            out = ops.cross_entropy(logits, targets)
            tape.backward(out, wrt=[xt])
        else:
            seed = _margin_seed(logits.data, labels)
            tape.backward(logits, seed=seed, wrt=[xt])
    g = xt.grad
    return logits.data, (np.zeros_like(x) if g is None else g)


def _margin_seed(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of sum_u max(z_other_max - z_true, -kappa) w.r.t. the logits."""
    n = logits.shape[0]
    rows = np.arange(n)
    masked = logits.copy()
    masked[rows, labels] = -np.inf
    other = masked.argmax(axis=1)
    margin = masked[rows, other] - logits[rows, labels]
    active = margin > -CW_KAPPA
    seed = np.zeros_like(logits)
    seed[rows, other] = np.where(active, 1.0, 0.0)
    seed[rows, labels] = np.where(active, -1.0, 0.0)
    return seed


def margin_loss(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-example clamped margin max(z_other_max - z_true, -kappa)."""
    n = logits.shape[0]
    rows = np.arange(n)
    masked = logits.copy()
    masked[rows, labels] = -np.inf
    margin = masked.max(axis=1) - logits[rows, labels]
    return np.maximum(margin, -CW_KAPPA)


def fgsm_step(model, x: np.ndarray, targets: np.ndarray, cfg: AttackConfig,
              cache: Optional[PerturbationCache] = None,
              rng: Optional[np.random.Generator] = None):
    """Single-step attack against (possibly soft) target distributions.

    Returns (x_adv, delta).  The perturbation is the initialization plus a
    signed-gradient step, projected back into the budget when configured;
    the adversarial example is additionally clamped to pixel range.
    """
    delta0 = sample_init(cfg.init, x.shape, cfg.epsilon, cache, rng)
    _, grad = _logits_and_input_grad(model, x + delta0, targets=targets)
    delta = delta0 + cfg.step_size * np.sign(grad)
    if cfg.project:
        delta = np.clip(delta, -cfg.epsilon, cfg.epsilon)
    x_adv = x + delta
    if cfg.clamp_pixels:
        x_adv = np.clip(x_adv, 0.0, 1.0)
    return x_adv, delta


def pgd_attack(model, x: np.ndarray, labels: np.ndarray, cfg: AttackConfig,
               rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Iterated signed-gradient ascent, projected to the budget each step."""
    m = _infer_classes(model, x)
    targets = one_hot(labels, m) if cfg.loss == "cross-entropy" else None
    x_adv = x + sample_init(cfg.init, x.shape, cfg.epsilon, None, rng)
    x_adv = _project(x, x_adv, cfg)
    for _ in range(cfg.steps):
        _, grad = _logits_and_input_grad(model, x_adv, targets=targets,
                                         labels=labels, loss=cfg.loss)
        x_adv = x_adv + cfg.step_size * np.sign(grad)
        x_adv = _project(x, x_adv, cfg)
    return x_adv


def mi_fgsm(model, x: np.ndarray, labels: np.ndarray, cfg: AttackConfig,
            rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Momentum-iterative FGSM with per-example L1 gradient normalization."""
    m = _infer_classes(model, x)
    targets = one_hot(labels, m)
    x_adv = x + sample_init(cfg.init, x.shape, cfg.epsilon, None, rng)
    x_adv = _project(x, x_adv, cfg)
    g = np.zeros_like(x)
    axes = tuple(range(1, x.ndim))
    for _ in range(cfg.steps):
        _, grad = _logits_and_input_grad(model, x_adv, targets=targets)
        l1 = np.abs(grad).sum(axis=axes, keepdims=True)
        normed = np.divide(grad, l1, out=np.zeros_like(grad), where=l1 > 0)
        g = cfg.momentum * g + normed
        x_adv = x_adv + cfg.step_size * np.sign(g)
        x_adv = _project(x, x_adv, cfg)
    return x_adv


def cw_margin_attack(model, x: np.ndarray, labels: np.ndarray, cfg: AttackConfig,
                     rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """PGD ascending the clamped logit margin instead of cross-entropy."""
    cfg = replace_loss(cfg, "cw-margin")
    return pgd_attack(model, x, labels, cfg, rng)


def replace_loss(cfg: AttackConfig, loss: str) -> AttackConfig:
    return replace(cfg, loss=loss)


def _project(x: np.ndarray, x_adv: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    if cfg.project:
        x_adv = x + np.clip(x_adv - x, -cfg.epsilon, cfg.epsilon)
    if cfg.clamp_pixels:
        x_adv = np.clip(x_adv, 0.0, 1.0)
    return x_adv


def _infer_classes(model, x: np.ndarray) -> int:
    out = model(Tensor(x[:1]))
    return out.data.shape[1]


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out

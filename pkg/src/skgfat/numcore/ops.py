"""Differentiable primitives over :class:`~skgfat.numcore.tensor.Tensor`.

Every operation validates shapes, computes its forward value with numpy
(or the compiled kernels), and records a pullback on the active tape when
one is open.  Losses accept soft target distributions, which the label
relaxation machinery depends on.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import Tensor, active_tape

# Probabilities are clamped here before the log so saturated softmax rows
# cannot produce -inf.
PROB_FLOOR = 1e-12


def _record(out, inputs, pullback):
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, pullback)
    return out


def _require(cond: bool, msg: str):
    if not cond:
        raise ValueError(msg)


def matmul(x: Tensor, w: Tensor) -> Tensor:
    _require(x.data.ndim == 2 and w.data.ndim == 2, "matmul expects 2-D operands")
    _require(x.data.shape[1] == w.data.shape[0],
             f"matmul inner dims differ: {x.data.shape} @ {w.data.shape}")
    out = Tensor(x.data @ w.data)

    def pullback(g, need):
        gx = g @ w.data.T if need[0] else None
        gw = x.data.T @ g if need[1] else None
        return gx, gw

    return _record(out, (x, w), pullback)


def add_row(x: Tensor, b: Tensor) -> Tensor:
    """Broadcast-add a length-m row vector onto an [n, m] matrix."""
    _require(x.data.ndim == 2 and b.data.ndim == 1 and x.data.shape[1] == b.data.shape[0],
             f"add_row shapes incompatible: {x.data.shape} + {b.data.shape}")
    out = Tensor(x.data + b.data[None, :])

    def pullback(g, need):
        return (g if need[0] else None,
                g.sum(axis=0) if need[1] else None)

    return _record(out, (x, b), pullback)


def add(a: Tensor, b: Tensor) -> Tensor:
    _require(a.data.shape == b.data.shape, f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)

    def pullback(g, need):
        return (g if need[0] else None, g if need[1] else None)

    return _record(out, (a, b), pullback)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require(a.data.shape == b.data.shape, f"sub shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data - b.data)

    def pullback(g, need):
        return (g if need[0] else None, -g if need[1] else None)

    return _record(out, (a, b), pullback)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.data.shape == b.data.shape, f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data)

    def pullback(g, need):
        return (g * b.data if need[0] else None, g * a.data if need[1] else None)

    return _record(out, (a, b), pullback)


def scale(x: Tensor, s: float) -> Tensor:
    out = Tensor(x.data * s)

    def pullback(g, need):
        return (g * s,)

    return _record(out, (x,), pullback)


def tsum(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum()))

    def pullback(g, need):
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype),)

    return _record(out, (x,), pullback)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0))

    def pullback(g, need):
        return (g * mask,)

    return _record(out, (x,), pullback)


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def pullback(g, need):
        return (g.reshape(x.data.shape),)

    return _record(out, (x,), pullback)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    _require(x.data.ndim == 4, f"conv2d expects [n, c, h, w] input, got {x.data.shape}")
    _require(x.data.shape[1] == w.data.shape[1],
             f"conv2d channel mismatch: input {x.data.shape[1]}, kernel {w.data.shape[1]}")
    xd = np.ascontiguousarray(x.data)
    out = Tensor(kernels.conv2d_forward(xd, w.data, b.data, stride, padding))

    def pullback(g, need):
        gx, gw, gb = kernels.conv2d_backward(
            xd, w.data, g, stride, padding, need_gx=need[0], need_gw=need[1])
        return gx, gw, (gb if need[2] else None)

    return _record(out, (x, w, b), pullback)


def maxpool2d(x: Tensor, size: int = 2, stride: int = 2) -> Tensor:
    _require(x.data.ndim == 4, f"maxpool2d expects [n, c, h, w] input, got {x.data.shape}")
    xd = np.ascontiguousarray(x.data)
    y, arg = kernels.maxpool2d_forward(xd, size, stride)
    out = Tensor(y)

    def pullback(g, need):
        return (kernels.maxpool2d_backward(arg, g, xd.shape, size, stride),)

    return _record(out, (x,), pullback)


def softmax(x: Tensor) -> Tensor:
    _require(x.data.ndim == 2, f"softmax expects [n, m] logits, got {x.data.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p)

    def pullback(g, need):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _record(out, (x,), pullback)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def check_distribution_rows(targets: np.ndarray, atol: float = 1e-6):
    if np.any(targets < 0):
        raise ValueError("target rows must be non-negative")
    sums = targets.sum(axis=1)
    if not np.allclose(sums, 1.0, atol=atol):
        raise ValueError("target rows must each sum to 1")


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over the batch of -sum_j q_j * log softmax(logits)_j.

    ``targets`` are constant probability rows (soft targets allowed); they
    are validated, not differentiated.
    """
    targets = np.asarray(targets, dtype=logits.data.dtype)
    _require(logits.data.ndim == 2, f"cross_entropy expects [n, m] logits, got {logits.data.shape}")
    _require(targets.shape == logits.data.shape,
             f"targets shape {targets.shape} does not match logits {logits.data.shape}")
    check_distribution_rows(targets)

    n = logits.data.shape[0]
    logp = _log_softmax(logits.data)
    p = np.exp(logp)
    logp_c = np.maximum(logp, np.log(PROB_FLOOR))
    out = Tensor(np.asarray(-(targets * logp_c).sum() / n))

    def pullback(g, need):
        g = float(g)
        dlogp = np.where(p > PROB_FLOOR, -targets * (g / n), 0.0)
        dlogits = dlogp - p * dlogp.sum(axis=1, keepdims=True)
        return (dlogits,)

    return _record(out, (logits,), pullback)


def squared_row_gap(p: Tensor, q: Tensor) -> Tensor:
    """Per-example sum over classes of the squared prediction gap."""
    _require(p.data.shape == q.data.shape,
             f"squared_row_gap shape mismatch: {p.data.shape} vs {q.data.shape}")
    d = p.data - q.data
    out = Tensor((d * d).sum(axis=1))

    def pullback(g, need):
        gd = 2.0 * d * g[:, None]
        return (gd if need[0] else None, -gd if need[1] else None)

    return _record(out, (p, q), pullback)


def weighted_mean(v: Tensor, weights: np.ndarray) -> Tensor:
    """(1/n) * sum_u w_u * v_u with constant per-example weights."""
    weights = np.asarray(weights, dtype=v.data.dtype)
    _require(v.data.ndim == 1 and weights.shape == v.data.shape,
             f"weighted_mean expects matching vectors, got {v.data.shape} and {weights.shape}")
    n = v.data.shape[0]
    out = Tensor(np.asarray((weights * v.data).sum() / n))

    def pullback(g, need):
        return (weights * (float(g) / n),)

    return _record(out, (v,), pullback)

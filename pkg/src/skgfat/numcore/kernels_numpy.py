"""Pure-numpy convolution and pooling kernels.

Fallback path used when the compiled extension is unavailable (or forced
via ``SKGFAT_KERNELS=numpy``).  Convolution goes through strided window
views and BLAS tensordot; pooling uses window views plus argmax scatter.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int, padding: int) -> np.ndarray:
    xp = _pad(x, padding)
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: [n, ic, oh, ow, kh, kw]; w: [oc, ic, kh, kw]
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # [n, oh, ow, oc]
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    y += b[None, :, None, None]
    return y


def conv2d_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray,
                    stride: int, padding: int,
                    need_gx: bool = True, need_gw: bool = True):
    """Gradients of conv2d_forward. Returns (gx, gw, gb), None where not needed."""
    n, ic, ih, iw = x.shape
    oc, _, kh, kw = w.shape
    oh, ow = gy.shape[2], gy.shape[3]

    gw = gb = gx = None
    gb = gy.sum(axis=(0, 2, 3))
    if need_gw:
        xp = _pad(x, padding)
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        # gy: [n, oc, oh, ow]; win: [n, ic, oh, ow, kh, kw]
        gw = np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))  # [oc, ic, kh, kw]
    if need_gx:
        # gcols[n, ic, kh, kw, oh, ow] = sum_oc gy * w, scattered back by kernel offset
        gcols = np.tensordot(w, gy, axes=([0], [1]))  # [ic, kh, kw, n, oh, ow]
        gxp = np.zeros((n, ic, ih + 2 * padding, iw + 2 * padding), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                    gcols[:, i, j].transpose(1, 0, 2, 3)
        if padding:
            gx = gxp[:, :, padding:-padding, padding:-padding]
        else:
            gx = gxp
        gx = np.ascontiguousarray(gx)
    return gx, gw, gb


def maxpool2d_forward(x: np.ndarray, size: int, stride: int):
    """Returns (y, argmax) with argmax the flat within-window winner index."""
    win = sliding_window_view(x, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow = win.shape[:4]
    flat = win.reshape(n, c, oh, ow, size * size)
    arg = flat.argmax(axis=-1).astype(np.int64)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), arg


def maxpool2d_backward(arg: np.ndarray, gy: np.ndarray, x_shape, size: int, stride: int):
    n, c, ih, iw = x_shape
    oh, ow = gy.shape[2], gy.shape[3]
    gx = np.zeros((n, c, ih, iw), dtype=gy.dtype)
    ki, kj = arg // size, arg % size
    oi = np.arange(oh)[None, None, :, None] * stride + ki
    oj = np.arange(ow)[None, None, None, :] * stride + kj
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(gx, (ni, ci, oi, oj), gy)
    return gx

"""Kernel backend selection.

Two interchangeable implementations exist for the hot kernels: a compiled
extension (direct loops, specialized for 3x3 stride-1) and a pure-numpy
path (window views + BLAS).  ``SKGFAT_KERNELS`` forces one uniformly
("compiled" or "numpy"); the default "auto" mode routes each primitive to
the backend that measures faster at its shape: pooling and shallow-input
convolution go compiled, deep-channel convolution backward goes to BLAS.
Run ``benchmarks/bench_kernels.py`` to see the comparison on your machine.

Both backends satisfy the same contracts and agree to double rounding;
they are not bit-identical to each other (different summation orders).
"""

from __future__ import annotations

import os

import numpy as np

from . import kernels_numpy as _np_impl

try:
    from . import _convpool as _c_impl
except ImportError:
    _c_impl = None

_requested = os.environ.get("SKGFAT_KERNELS", "").strip().lower()
if _requested in ("", "auto"):
    BACKEND = "auto" if _c_impl is not None else "numpy"
elif _requested == "numpy":
    BACKEND = "numpy"
elif _requested == "compiled":
    if _c_impl is None:
        raise ImportError("SKGFAT_KERNELS=compiled but the extension is not built")
    BACKEND = "compiled"
else:
    raise ValueError(f"unknown SKGFAT_KERNELS value: {_requested!r}")

HAVE_COMPILED = _c_impl is not None

# auto-mode routing thresholds (input channels), from bench_kernels.py on
# the shapes this package trains: the compiled stencil wins forward up to
# moderate depth, while BLAS wins the channel-deep backward reductions
_FWD_COMPILED_MAX_IC = 16
_BWD_COMPILED_MAX_IC = 2


def _conv_fwd_compiled(ic: int) -> bool:
    if BACKEND == "numpy":
        return False
    if BACKEND == "compiled":
        return True
    return ic <= _FWD_COMPILED_MAX_IC


def _conv_bwd_compiled(ic: int) -> bool:
    if BACKEND == "numpy":
        return False
    if BACKEND == "compiled":
        return True
    return ic <= _BWD_COMPILED_MAX_IC


def _pool_compiled() -> bool:
    return BACKEND != "numpy"


def conv2d_forward(x, w, b, stride=1, padding=0):
    if _conv_fwd_compiled(x.shape[1]):
        return _c_impl.conv2d_forward(x, w, b, stride, padding)
    return _np_impl.conv2d_forward(x, w, b, stride, padding)


def conv2d_backward(x, w, gy, stride=1, padding=0, need_gx=True, need_gw=True):
    gy = np.ascontiguousarray(gy)
    if _conv_bwd_compiled(x.shape[1]):
        return _c_impl.conv2d_backward(x, w, gy, stride, padding, need_gx, need_gw)
    return _np_impl.conv2d_backward(x, w, gy, stride, padding, need_gx, need_gw)


def maxpool2d_forward(x, size=2, stride=2):
    if _pool_compiled():
        return _c_impl.maxpool2d_forward(x, size, stride)
    return _np_impl.maxpool2d_forward(x, size, stride)


def maxpool2d_backward(arg, gy, x_shape, size=2, stride=2):
    gy = np.ascontiguousarray(gy)
    if _pool_compiled():
        return _c_impl.maxpool2d_backward(arg, gy, x_shape[2], x_shape[3], size, stride)
    return _np_impl.maxpool2d_backward(arg, gy, x_shape, size, stride)

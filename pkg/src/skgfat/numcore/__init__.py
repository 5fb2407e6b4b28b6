"""Tensor arithmetic, reverse-mode differentiation, and layer primitives."""

from . import kernels, layers, ops
from .tensor import Tape, Tensor, as_tensor

__all__ = ["Tape", "Tensor", "as_tensor", "kernels", "layers", "ops"]

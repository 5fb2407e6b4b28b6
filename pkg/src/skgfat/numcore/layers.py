"""Network layers: thin parameter holders over the ops module."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


class Linear:
    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = Tensor(weight)   # [in, out]
        self.bias = Tensor(bias)       # [out]

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add_row(ops.matmul(x, self.weight), self.bias)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]


class Conv2d:
    def __init__(self, weight: np.ndarray, bias: np.ndarray, stride: int = 1, padding: int = 0):
        self.weight = Tensor(weight)   # [oc, ic, kh, kw]
        self.bias = Tensor(bias)       # [oc]
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]


class ReLU:
    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(x)

    def parameters(self):
        return []


class MaxPool2d:
    def __init__(self, size: int = 2, stride: int = 2):
        self.size = size
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return ops.maxpool2d(x, self.size, self.stride)

    def parameters(self):
        return []


class Flatten:
    def __call__(self, x: Tensor) -> Tensor:
        return ops.reshape(x, (x.data.shape[0], -1))

    def parameters(self):
        return []


class Sequential:
    """Layer pipeline; an empty pipeline is the identity network."""

    def __init__(self, layers=()):
        self.layers = list(layers)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self):
        named = []
        for i, layer in enumerate(self.layers):
            for name, p in layer.parameters():
                named.append((f"{i}.{name}", p))
        return named

    def param_tensors(self):
        return [p for _, p in self.parameters()]


def forward(net: Sequential, x: Tensor) -> Tensor:
    return net(x)

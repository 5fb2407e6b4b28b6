"""Reference model builders at two desk scales.

``mlp-small`` trains in seconds on blob data; ``cnn-small`` is the
minutes-scale image network.  Identical ModelSpecs produce bit-identical
initial parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numcore import layers

ARCHITECTURES = ("mlp-small", "cnn-small")


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    input_shape: tuple
    num_classes: int
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}; expected one of {ARCHITECTURES}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))


def _kaiming_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _bias_uniform(rng: np.random.Generator, size: int, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=size)


def build(spec: ModelSpec) -> layers.Sequential:
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 0x6D6F64]))
    m = spec.num_classes
    if spec.arch == "mlp-small":
        d = int(np.prod(spec.input_shape))
        hidden = 256
        return layers.Sequential([
            layers.Flatten(),
            layers.Linear(_kaiming_uniform(rng, (d, hidden), d), _bias_uniform(rng, hidden, d)),
            layers.ReLU(),
            layers.Linear(_kaiming_uniform(rng, (hidden, m), hidden), _bias_uniform(rng, m, hidden)),
        ])

    # cnn-small; 3x3 convolutions keep spatial size (padding 1), each pool halves it
    if len(spec.input_shape) != 3:
        raise ValueError(f"cnn-small expects [channels, height, width] input, got {spec.input_shape}")
    c, h, w = spec.input_shape
    fan1 = c * 9
    fan2 = 16 * 9
    h2, w2 = h // 2 // 2, w // 2 // 2
    flat = 32 * h2 * w2
    return layers.Sequential([
        layers.Conv2d(_kaiming_uniform(rng, (16, c, 3, 3), fan1), _bias_uniform(rng, 16, fan1), padding=1),
        layers.ReLU(),
        layers.MaxPool2d(),
        layers.Conv2d(_kaiming_uniform(rng, (32, 16, 3, 3), fan2), _bias_uniform(rng, 32, fan2), padding=1),
        layers.ReLU(),
        layers.MaxPool2d(),
        layers.Flatten(),
        layers.Linear(_kaiming_uniform(rng, (flat, m), flat), _bias_uniform(rng, m, flat)),
    ])


def parameter_count(net: layers.Sequential) -> int:
    return sum(p.data.size for _, p in net.parameters())

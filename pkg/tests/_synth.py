"""Synthetic image data for the desk-scale experiments.

Ten glyph classes at 28x28: each class is a random coarse stencil
upsampled to full resolution; examples get a random shift, brightness,
and pixel noise, then quantize to bytes.  The IDX writers double as the
round-trip oracle for the loader tests.
"""

from __future__ import annotations

import struct

import numpy as np


def write_idx_images(path, images: np.ndarray):
    """images: uint8 [N, H, W]."""
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels: np.ndarray):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def glyph_arrays(per_class: int, num_classes: int = 10, size: int = 28, seed: int = 0,
                 noise: float = 0.05, max_shift: int = 2, sample_seed=None):
    """Returns (images uint8 [N, size, size], labels uint8 [N]).

    Class stencils derive from ``seed`` and are resampled until pairwise
    distinct enough that the task stays separable under sizeable pixel
    perturbations; per-example jitter derives from ``sample_seed``, so a
    train/test pair shares prototypes but not noise.
    """
    proto_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x619F]))
    rng = np.random.default_rng(np.random.SeedSequence(
        [seed if sample_seed is None else sample_seed, 0x5A3F]))
    cell = size // 7
    stencils = []
    while len(stencils) < num_classes:
        cand = (proto_rng.uniform(size=(7, 7)) < 0.3).astype(np.float64)
        cand[0, :] = 0  # keep a margin so shifts stay informative
        cand[:, 0] = 0
        if all(np.abs(cand - s).sum() >= 12 for s in stencils):
            stencils.append(cand)
    protos = np.stack([np.kron(s, np.ones((cell, cell))) for s in stencils])[:, :size, :size]

    images = np.zeros((num_classes * per_class, size, size))
    labels = np.repeat(np.arange(num_classes), per_class)
    for idx, cls in enumerate(labels):
        img = protos[cls] * rng.uniform(0.85, 1.0)
        di, dj = rng.integers(-max_shift, max_shift + 1, size=2)
        img = np.roll(np.roll(img, di, axis=0), dj, axis=1)
        img = img + rng.normal(0.0, noise, size=img.shape)
        images[idx] = np.clip(img, 0.0, 1.0)
    order = rng.permutation(len(labels))
    images_u8 = np.round(images[order] * 255).astype(np.uint8)
    return images_u8, labels[order].astype(np.uint8)


def write_glyph_idx_pair(dirpath, per_class: int, seed: int, prefix: str):
    """Write one IDX pair; returns (images_path, labels_path)."""
    images, labels = glyph_arrays(per_class, seed=seed)
    images_path = dirpath / f"{prefix}-images-idx3-ubyte"
    labels_path = dirpath / f"{prefix}-labels-idx1-ubyte"
    write_idx_images(images_path, images)
    write_idx_labels(labels_path, labels)
    return images_path, labels_path

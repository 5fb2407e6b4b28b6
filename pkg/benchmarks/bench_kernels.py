#!/usr/bin/env python3
"""Compare the compiled and numpy kernel backends on the shapes this
package actually trains (cnn-small on 28x28 and 32x32 inputs).

The auto dispatch mode routes each primitive to whichever side wins here;
rerun this after changing the kernels or moving to new hardware.
"""

import time

import numpy as np

from skgfat.numcore import kernels, kernels_numpy

try:
    from skgfat.numcore import _convpool
except ImportError:
    _convpool = None


def bench(fn, *args, repeats=20, **kwargs):
    fn(*args, **kwargs)
    start = time.time()
    for _ in range(repeats):
        fn(*args, **kwargs)
    return (time.time() - start) / repeats * 1000


def main():
    print(f"active backend mode: {kernels.BACKEND} (compiled built: {kernels.HAVE_COMPILED})")
    rng = np.random.default_rng(0)
    batch = 128

    print(f"\nconvolutions (batch {batch}, 3x3, stride 1, pad 1), ms per call:")
    print(f"{'shape':<22}{'fwd C':>9}{'fwd N':>9}{'bwd C':>9}{'bwd N':>9}")
    for ic, oc, hw in [(1, 16, 28), (16, 32, 14), (3, 16, 32), (16, 32, 16)]:
        x = rng.uniform(size=(batch, ic, hw, hw))
        w = rng.normal(size=(oc, ic, 3, 3))
        b = rng.normal(size=oc)
        gy = rng.normal(size=(batch, oc, hw, hw))
        row = f"{ic:>3}->{oc:<3}@{hw:<12}"
        if _convpool is not None:
            row += f"{bench(_convpool.conv2d_forward, x, w, b, 1, 1):>9.1f}"
        else:
            row += f"{'-':>9}"
        row += f"{bench(kernels_numpy.conv2d_forward, x, w, b, 1, 1):>9.1f}"
        if _convpool is not None:
            row += f"{bench(_convpool.conv2d_backward, x, w, gy, 1, 1, True, True):>9.1f}"
        else:
            row += f"{'-':>9}"
        row += f"{bench(kernels_numpy.conv2d_backward, x, w, gy, 1, 1):>9.1f}"
        print(row)

    print(f"\nmax pooling (batch {batch}, 2x2/2), ms per call:")
    for c, hw in [(16, 28), (32, 14)]:
        x = rng.uniform(size=(batch, c, hw, hw))
        gy = rng.normal(size=(batch, c, hw // 2, hw // 2))
        row = f"{c:>3}ch @{hw:<14}"
        if _convpool is not None:
            _, arg = _convpool.maxpool2d_forward(x, 2, 2)
            row += f"{bench(_convpool.maxpool2d_forward, x, 2, 2):>9.1f}"
        else:
            _, arg = kernels_numpy.maxpool2d_forward(x, 2, 2)
            row += f"{'-':>9}"
        row += f"{bench(kernels_numpy.maxpool2d_forward, x, 2, 2):>9.1f}"
        if _convpool is not None:
            row += f"{bench(_convpool.maxpool2d_backward, arg, gy, hw, hw, 2, 2):>9.1f}"
        else:
            row += f"{'-':>9}"
        row += f"{bench(kernels_numpy.maxpool2d_backward, arg, gy, x.shape, 2, 2):>9.1f}"
        print(row + "   (fwd C / fwd N / bwd C / bwd N)")

    # end-to-end: training-style steps of cnn-small under each forced mode,
    # measured in fresh processes so thread pools cannot bleed across modes
    import os
    import subprocess
    import sys
    print("\nend-to-end cnn-small steps (batch 128), ms per call:", flush=True)
    snippet = """
import time, numpy as np
from skgfat import models
from skgfat.numcore import Tape, Tensor, ops, kernels
net = models.build(models.ModelSpec('cnn-small', (1, 28, 28), 10, seed=0))
x = np.random.default_rng(0).uniform(size=(128, 1, 28, 28))
t = np.eye(10)[np.random.default_rng(1).integers(0, 10, 128)]
params = net.param_tensors()
def theta_step():
    with Tape() as tape:
        tape.backward(ops.cross_entropy(net(Tensor(x)), t), wrt=params)
def x_step():
    xt = Tensor(x)
    with Tape() as tape:
        tape.backward(ops.cross_entropy(net(xt), t), wrt=[xt])
for f in (theta_step, x_step):
    f(); f()
    t0 = time.time()
    for _ in range(20):
        f()
    print(f"  {kernels.BACKEND:<10}{f.__name__:<12}{(time.time() - t0) / 20 * 1000:8.1f} ms")
"""
    for mode in ("auto", "compiled", "numpy"):
        if mode == "compiled" and _convpool is None:
            continue
        time.sleep(1.0)
        env = dict(os.environ, SKGFAT_KERNELS=mode)
        subprocess.run([sys.executable, "-c", snippet], env=env, check=True)


if __name__ == "__main__":
    main()

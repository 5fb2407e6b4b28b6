"""The desk-scale image task shared by the pilot script and the acceptance
suite: a 10-class 28x28 glyph dataset attacked at eps = 0.3, trained for 20
epochs with a constant learning rate (no decay rescue).
"""

from __future__ import annotations

import time
from pathlib import Path

from skgfat import data, models, trainer
from skgfat.attacks import AttackConfig

from _synth import glyph_arrays, write_idx_images, write_idx_labels

TASK = {
    "num_classes": 10,
    "train_per_class": 200,
    "test_per_class": 50,
    "data_seed": 2024,
    "model_seed": 1,
    "train_seed": 5,
    "epsilon": 0.3,
    "epochs": 20,
    "batch_size": 128,
    "lr_base": 0.025,
    "milestones": [],
    "lam": 5.0,
    "kappa_min": 0.55,
}

VARIANT_MENU = {
    "baseline-zero": ("fgsm-rs", "zero"),
    "fgsm-rs": ("fgsm-rs", "uniform"),
    "cwr": ("cwr", "previous-batch"),
    "agr": ("agr", "previous-batch"),
}


def build_task(tmpdir: Path):
    """Materialize the IDX pair on disk and load it back through the loader."""
    tmpdir = Path(tmpdir)
    tmpdir.mkdir(parents=True, exist_ok=True)
    for prefix, per_class, sample_seed in (
            ("train", TASK["train_per_class"], TASK["data_seed"] + 1),
            ("t10k", TASK["test_per_class"], TASK["data_seed"] + 2)):
        images, labels = glyph_arrays(per_class, TASK["num_classes"],
                                      seed=TASK["data_seed"], sample_seed=sample_seed)
        write_idx_images(tmpdir / f"{prefix}-images-idx3-ubyte", images)
        write_idx_labels(tmpdir / f"{prefix}-labels-idx1-ubyte", labels)
    train = data.load_idx(tmpdir / "train-images-idx3-ubyte",
                          tmpdir / "train-labels-idx1-ubyte", split="train")
    test = data.load_idx(tmpdir / "t10k-images-idx3-ubyte",
                         tmpdir / "t10k-labels-idx1-ubyte", split="test")
    return train, test


def run_variant(train_ds, test_ds, variant: str, init: str, lam=None, epochs=None):
    eps = TASK["epsilon"]
    n_epochs = epochs or TASK["epochs"]
    milestones = tuple(m for m in TASK["milestones"] if m < n_epochs)
    cfg = trainer.TrainConfig(
        variant=variant,
        epochs=n_epochs,
        batch_size=TASK["batch_size"],
        schedule=trainer.LrSchedule("piecewise", base=TASK["lr_base"],
                                    milestones=milestones),
        lam=TASK["lam"] if lam is None else lam,
        kappa_min=TASK["kappa_min"],
        train_attack=AttackConfig(epsilon=eps, init=init),
        eval_attack=AttackConfig(epsilon=eps, alpha=eps / 4, steps=10, init="uniform"),
        seed=TASK["train_seed"],
    )
    spec = models.ModelSpec("cnn-small", train_ds.feature_shape, train_ds.num_classes,
                            seed=TASK["model_seed"])
    model = models.build(spec)
    t0 = time.time()
    best, last, report = trainer.fit(model, train_ds, test_ds, cfg, model_spec=spec)
    wall = time.time() - t0
    robust = [row["test_robust_acc"] for row in report.rows]
    clean = [row["test_clean_acc"] for row in report.rows]
    return {
        "variant": variant, "init": init,
        "wall_seconds": round(wall, 1),
        "robust_per_epoch": robust,
        "clean_per_epoch": clean,
        "best_pgd10": best.metrics["test_robust_acc"],
        "last_pgd10": last.metrics["test_robust_acc"],
        "peak_pgd10": max(robust),
        "final_pgd10": robust[-1],
        "final_clean": clean[-1],
    }


def run_named(train_ds, test_ds, name: str, lam=None, epochs=None):
    variant, init = VARIANT_MENU[name]
    return run_variant(train_ds, test_ds, variant, init, lam=lam, epochs=epochs)

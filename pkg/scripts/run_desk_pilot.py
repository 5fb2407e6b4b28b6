#!/usr/bin/env python3
"""Run the desk-scale image experiments and freeze the regression fixture.

Four matched-budget runs on the synthetic 28x28 glyph task at eps = 0.3:

  baseline-zero  plain single-step attack, zero init, hard labels, no penalty
  fgsm-rs        uniform random init, hard labels, no penalty
  cwr            previous-batch init, relaxed labels, class-accuracy weights
  agr            previous-batch init, relaxed labels, alignment-group weights

Writes tests/fixtures/desk_pilot.json with the per-epoch robust accuracies
and the derived thresholds the acceptance suite regresses against.
"""

import argparse
import json
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "tests"))

from _desk import TASK, build_task, run_named  # noqa: E402


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=None, help="override for quick sweeps")
    ap.add_argument("--variants", default="baseline-zero,fgsm-rs,cwr,agr")
    ap.add_argument("--lam", type=float, default=None)
    ap.add_argument("--write-fixture", action="store_true")
    args = ap.parse_args()

    train_ds, test_ds = build_task(REPO / "build" / "pilot-data")
    print(f"task: N_train={len(train_ds)} N_test={len(test_ds)} eps={TASK['epsilon']}")

    runs = {}
    for name in args.variants.split(","):
        print(f"== {name} ==", flush=True)
        result = run_named(train_ds, test_ds, name, lam=args.lam, epochs=args.epochs)
        runs[name] = result
        print(f"  wall {result['wall_seconds']}s  best {result['best_pgd10']:.3f}  "
              f"last {result['last_pgd10']:.3f}  peak {result['peak_pgd10']:.3f}  "
              f"final {result['final_pgd10']:.3f}  clean {result['final_clean']:.3f}")
        print("  robust/epoch:", " ".join(f"{v:.2f}" for v in result["robust_per_epoch"]))

    if args.write_fixture and {"baseline-zero", "fgsm-rs", "cwr", "agr"} <= set(runs):
        fixture = {
            "task": TASK,
            "runs": runs,
            "baseline_zero_drop": runs["baseline-zero"]["peak_pgd10"]
                                  - runs["baseline-zero"]["final_pgd10"],
            "cwr_best_last_gap": runs["cwr"]["best_pgd10"] - runs["cwr"]["last_pgd10"],
            "margin_cwr_vs_fgsm_rs": runs["cwr"]["best_pgd10"] - runs["fgsm-rs"]["best_pgd10"],
            "margin_agr_vs_fgsm_rs": runs["agr"]["best_pgd10"] - runs["fgsm-rs"]["best_pgd10"],
        }
        out = REPO / "tests" / "fixtures" / "desk_pilot.json"
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as f:
            json.dump(fixture, f, indent=2)
            f.write("\n")
        print(f"wrote {out}")


if __name__ == "__main__":
    main()

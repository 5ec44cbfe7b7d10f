#!/usr/bin/env python3
"""Focal vs plain exponential loss: paired AP comparison across seeds.

Trains the toy model twice per seed (identical data, init, and batch order;
only the loss differs) and compares mean best-validation AP. The claim under
test: the focal variant is non-inferior (mean AP within 0.01).
"""
import argparse
import sys

from msfin.experiments import loss_comparison_experiment, loss_comparison_means


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10, help="number of seeds (0..n-1)")
    args = ap.parse_args()

    rows = []
    for seed in range(args.seeds):
        row = loss_comparison_experiment([seed])[0]
        rows.append(row)
        print(
            f"seed {seed}: exponential AP {row.exponential_ap:.4f}"
            f"  focal AP {row.focal_ap:.4f}",
            flush=True,
        )
    exp_mean, focal_mean = loss_comparison_means(rows)
    print(f"mean AP: exponential {exp_mean:.4f}, focal {focal_mean:.4f}")
    ok = focal_mean >= exp_mean - 0.01
    print("non-inferiority (focal >= exponential - 0.01):", "met" if ok else "NOT met")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())

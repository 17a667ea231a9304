#!/usr/bin/env python3
"""Depth sweep for partitioned linear networks on random linear targets.

Reproduces the fitting-error-versus-depth comparison: for each layer count,
several seeded runs regress onto freshly drawn Gaussian (or Toeplitz)
matrices, and the per-interval records land in JSONL plus a summary JSON
with the median final errors.

Usage:
    python scripts/run_pln_sweep.py --d 16 --layers 1,2,4,8 --seeds 5 --out runs/pln
"""

import argparse
import sys

from couplingflow import harness


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--d", type=int, default=16)
    parser.add_argument("--layers", type=str, default="1,2,4,8")
    parser.add_argument("--target", choices=("gaussian", "toeplitz"), default="gaussian")
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--steps", type=int, default=20000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=str, default="runs/pln")
    args = parser.parse_args()
    return harness.main([
        "--seed", str(args.seed), "--out", args.out,
        "train-pln", "--d", str(args.d), "--layers", args.layers,
        "--target", args.target, "--seeds", str(args.seeds),
        "--steps", str(args.steps),
    ])


if __name__ == "__main__":
    sys.exit(main())

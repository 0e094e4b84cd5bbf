"""Run every experiment/estimator pair at default settings, then the variance probe.

Usage: python scripts/run_all.py [--out results] [--master-seed 0]
"""
import argparse
import sys

from nesvb.cli import main as nesvb

RUNS = [
    ("noisy-scale", "nesvb", False),
    ("noisy-scale", "sgvb", False),
    ("noisy-scale", "reinforce", False),
    ("noisy-scale", "rws", False),
    ("noisy-scale", "nesvb", True),
    ("noisy-scale", "sgvb", True),
    ("noisy-scale", "rws", True),
    ("gmm", "nesvb", False),
    ("gmm", "st-gumbel", False),
]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--master-seed", default="0")
    args = p.parse_args()
    codes = {}
    for experiment, estimator, ablation in RUNS:
        argv = ["run", experiment, "--estimator", estimator, "--out", args.out, "--master-seed", args.master_seed]
        if ablation:
            argv.append("--ablation")
        codes[(experiment, estimator, ablation)] = nesvb(argv)
    nesvb(["variance", "--master-seed", args.master_seed, "--out", f"{args.out}/variance.csv"])
    # divergence (exit 3) is the expected outcome of the ablation NESVB run
    bad = [k for k, c in codes.items() if c not in (0, 3)]
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())

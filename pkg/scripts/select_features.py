"""Rank propagation-feature subsets on the validation walk and print the best few.

Usage: python3 scripts/select_features.py [--config FILE] [--density full|sparse]
                                          [--budget N] [--out DIR]

Runs the whole pipeline with ``feature_set = "gridsearch"``; the ranking
lands in ``<out>/gridsearch.csv`` and the test walk is tracked with the winner.
"""
from __future__ import annotations

import argparse
from dataclasses import replace

from cmtrack.experiment import ExperimentConfig, load_config, run_experiment


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config")
    p.add_argument("--density", choices=("full", "sparse"))
    p.add_argument("--budget", type=int)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out", default="out/select")
    args = p.parse_args()
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = replace(cfg, feature_set="gridsearch", density=args.density or cfg.density,
                  search=replace(cfg.search, budget=args.budget))
    res = run_experiment(cfg, args.out)
    for rank, s in enumerate(res.search.ranking[:args.top], 1):
        print(f"{rank:3d}  {'+'.join(s.features):40s} MAE {s.mae:.3f}  C95 {s.c95:.3f}")
    print(f"test walk with {'+'.join(res.feature_set)}: "
          + "  ".join(f"{m} {res.mean(m):.3f}" for m in res.aggregate))


if __name__ == "__main__":
    main()

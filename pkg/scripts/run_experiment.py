"""Run one or more experiment configs and print a table of mean APE statistics.

Usage: python3 scripts/run_experiment.py configs/shelf_hall_full.json [more.json ...]
                                         [--out-root DIR] [--repeats N]
"""
from __future__ import annotations

import argparse
from dataclasses import replace
from pathlib import Path

from cmtrack.experiment import STAT_NAMES, load_config, run_experiment


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("configs", nargs="+")
    p.add_argument("--out-root", help="write each run under DIR/<config stem>")
    p.add_argument("--repeats", type=int)
    args = p.parse_args()
    print(f"{'config':24s} {'mode':7s} {'db':>5s} " + " ".join(f"{k.upper():>13s}" for k in STAT_NAMES))
    for path in args.configs:
        cfg = load_config(path)
        if args.repeats:
            cfg = replace(cfg, repeats=args.repeats)
        out = Path(args.out_root) / Path(path).stem if args.out_root else None
        res = run_experiment(cfg, out)
        for mode, agg in res.aggregate.items():
            cells = " ".join(f"{agg[k][0]:6.3f}+-{agg[k][1]:5.3f}" for k in STAT_NAMES)
            db = res.db_size if mode == "FUSION" else 0
            print(f"{Path(path).stem:24s} {mode:7s} {db:5d} {cells}")


if __name__ == "__main__":
    main()

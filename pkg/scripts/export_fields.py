"""Export the GP mean and standard deviation grids of every model in a directory.

Usage: python3 scripts/export_fields.py OUT/models [--resolution 60] [--out DIR]
                                        [--bounds xmin,ymin,xmax,ymax]

Each ``gp_<anchor>_<feature>.json`` gives ``field_gp_<anchor>_<feature>.csv``
(x, y, mu, sigma) plus the fingerprint positions, ready for plotting.
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from cmtrack import harness as H
from cmtrack import store


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("models")
    p.add_argument("--resolution", type=int, default=60)
    p.add_argument("--bounds")
    p.add_argument("--out")
    args = p.parse_args()
    out = Path(args.out or Path(args.models).parent / "fields")
    out.mkdir(parents=True, exist_ok=True)
    for path in sorted(Path(args.models).glob("gp_*.json")):
        model = store.read_model(path)
        if args.bounds:
            bounds = tuple(float(v) for v in args.bounds.split(","))
        else:
            lo, hi = model.positions.min(axis=0) - 2.0, model.positions.max(axis=0) + 2.0
            bounds = (*lo, *hi)
        grid, fps = H.export_field(model, bounds, args.resolution)
        store.write_grid(out / f"field_{path.stem}.csv", grid, fps)
        print(f"{path.stem:24s} n={len(fps):5d}  sigma {np.min(grid[:, 3]):.3f}..{np.max(grid[:, 3]):.3f}")


if __name__ == "__main__":
    main()

"""On-disk formats for datasets, feature tables, models, tracks and fields.

Datasets are three files sharing a prefix: ``.csv`` labels ``(k, x, y, vx, vy)``,
``.bin`` measurements as little-endian float32 interleaved ``(re, im)`` in
``(k, anchor, sample)`` order, and a ``.json`` sidecar with the shapes, the
measurement sample interval and the generating seed.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import gpr
from .channel import ChannelMeasurement, Sample
from .features import ScalerSet

DATASET_COLUMNS = ("k", "x", "y", "vx", "vy")
FEATURE_PREFIX_COLUMNS = ("k", "anchor_id", "eps0_hat", "beta0", "d_hat")
GRID_COLUMNS = ("x", "y", "mu", "sigma")


def fmt(v) -> str:
    """Shortest round-tripping text for a number."""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    return rows[0], rows[1:]


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# --- datasets ----------------------------------------------------------------

def dataset_paths(prefix) -> tuple[Path, Path, Path]:
    p = Path(prefix)
    return p.with_suffix(".csv"), p.with_suffix(".bin"), p.with_suffix(".json")


def write_dataset(prefix, dataset: list[Sample], sample_interval: float, seed,
                  sample_period: float | None = None) -> list[Path]:
    csv_path, bin_path, meta_path = dataset_paths(prefix)
    write_rows(csv_path, DATASET_COLUMNS,
               ((s.timestep, *s.position, *s.velocity) for s in dataset))
    K, J, L = len(dataset), len(dataset[0].measurements), len(dataset[0].measurements[0])
    r = np.array([[cm.samples for cm in s.measurements] for s in dataset]).reshape(K, J, L)
    inter = np.empty((K, J, L, 2), "<f4")
    inter[..., 0], inter[..., 1] = r.real, r.imag
    inter.tofile(bin_path)
    write_json(meta_path, {
        "L": L, "J": J, "count": K, "dt": sample_interval, "seed": seed,
        "sample_period": sample_period,
        "los": [[int(v) for v in s.los] for s in dataset],
    })
    return [csv_path, bin_path, meta_path]


def read_dataset(prefix) -> tuple[list[Sample], dict]:
    """Samples and sidecar metadata; measurements come back at float32 precision."""
    csv_path, bin_path, meta_path = dataset_paths(prefix)
    meta = read_json(meta_path)
    header, rows = read_rows(csv_path)
    if tuple(header) != DATASET_COLUMNS:
        raise ValueError(f"{csv_path}: expected columns {DATASET_COLUMNS}")
    K, J, L = meta["count"], meta["J"], meta["L"]
    raw = np.fromfile(bin_path, "<f4")
    if raw.size != K * J * L * 2 or len(rows) != K:
        raise ValueError(f"{prefix}: sizes disagree with the sidecar")
    r = raw.reshape(K, J, L, 2).astype(float)
    r = r[..., 0] + 1j * r[..., 1]
    los = meta.get("los") or [[False] * J] * K
    out = []
    for i, row in enumerate(rows):
        k = int(row[0])
        vals = [float(v) for v in row[1:]]
        cms = [ChannelMeasurement(r[i, j], j, k) for j in range(J)]
        out.append(Sample(k, np.array(vals[:2]), np.array(vals[2:]), cms, [bool(v) for v in los[i]]))
    return out, meta


# --- feature tables ----------------------------------------------------------

def write_features(path, table):
    """One row per (k, anchor): LOS flag, clutter metric, range, then every feature."""
    fids = list(table.feature_ids)
    rows = []
    for i, k in enumerate(table.timesteps):
        for j in range(table.n_anchors):
            rows.append([k, j, table.los_flag[i, j], table.beta0[i, j], table.d_hat[i, j],
                         *(table.values[f][i, j] for f in fids)])
    write_rows(path, [*FEATURE_PREFIX_COLUMNS, *fids], rows)


def read_features(path, dataset: list[Sample]):
    """Rebuild a feature table; positions and LOS truth come from ``dataset``."""
    from .harness import FeatureTable

    header, rows = read_rows(path)
    if tuple(header[:5]) != FEATURE_PREFIX_COLUMNS:
        raise ValueError(f"{path}: expected leading columns {FEATURE_PREFIX_COLUMNS}")
    fids = header[5:]
    K, J = len(dataset), len(dataset[0].measurements)
    index = {s.timestep: i for i, s in enumerate(dataset)}
    flag = np.zeros((K, J), bool)
    beta0 = np.zeros((K, J))
    d_hat = np.full((K, J), np.nan)
    values = {f: np.full((K, J), np.nan) for f in fids}
    for row in rows:
        i, j = index[int(row[0])], int(row[1])
        flag[i, j] = bool(int(row[2]))
        beta0[i, j], d_hat[i, j] = float(row[3]), float(row[4])
        for f, v in zip(fids, row[5:]):
            values[f][i, j] = float(v)
    return FeatureTable(
        np.array([s.timestep for s in dataset]),
        np.array([s.position for s in dataset]),
        np.array([s.velocity for s in dataset]),
        np.array([s.los for s in dataset], bool),
        beta0, flag, d_hat, values)


# --- scalers and GP models ---------------------------------------------------

def write_scalers(path, scalers: ScalerSet):
    write_json(path, scalers.to_dict())


def read_scalers(path) -> ScalerSet:
    return ScalerSet.from_dict(read_json(path))


def model_filename(anchor_id: int, feature_id: str) -> str:
    return f"gp_{anchor_id}_{feature_id}.json"


def write_models(directory, models) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for (j, f), m in sorted(models.items()):
        p = d / model_filename(j, f)
        write_json(p, m.to_dict())
        paths.append(p)
    return paths


def read_model(path) -> gpr.GPModel:
    return gpr.GPModel.from_dict(read_json(path))


def read_models(directory) -> dict[tuple[int, str], gpr.GPModel]:
    models = {}
    for p in sorted(Path(directory).glob("gp_*.json")):
        m = read_model(p)
        models[(m.anchor_id, m.feature_id)] = m
    if not models:
        raise ValueError(f"no GP models found in {directory}")
    return models


# --- tracks, stats, fields ---------------------------------------------------

def write_track(path, result):
    from .harness import TRACK_COLUMNS
    write_rows(path, TRACK_COLUMNS, result.rows())


def read_track_ape(path) -> np.ndarray:
    header, rows = read_rows(path)
    i = header.index("ape")
    return np.array([float(r[i]) for r in rows])


def write_grid(path, grid: np.ndarray, fingerprints=None):
    """Field rows ``(x, y, mu, sigma)``; fingerprint positions go to ``<stem>_fingerprints.csv``."""
    write_rows(path, GRID_COLUMNS, grid)
    if fingerprints is None:
        return [Path(path)]
    fp_path = Path(path).with_name(Path(path).stem + "_fingerprints.csv")
    write_rows(fp_path, ("x", "y"), np.asarray(fingerprints))
    return [Path(path), fp_path]


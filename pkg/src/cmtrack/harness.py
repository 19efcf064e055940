"""Experiment plumbing: feature tables, fingerprint databases, GP training, tracking, statistics."""
from __future__ import annotations

import logging
import itertools
import math
import warnings
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import autoencoder as ae
from . import gpr
from .channel import Environment, Sample, point_rect_distance
from .features import (PROPAGATION_FEATURES, FeatureConfig, FeatureError, LosDecision,
                       ScalerSet, detect_los_cfg, propagation_features)
from .tracker import ObservationBundle, ParticleFilter, TrackerConfig

logger = logging.getLogger(__name__)

LATENT_PREFIX = "lat"


class ConfigError(ValueError):
    """The experiment configuration cannot be carried out."""


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def latent_ids(n: int) -> tuple[str, ...]:
    return tuple(f"{LATENT_PREFIX}{i}" for i in range(n))


# --- feature extraction ----------------------------------------------------

@dataclass
class FeatureTable:
    """Per-timestep, per-anchor LOS decisions and raw feature values.

    Every array in ``values`` has shape ``(K, J)``; undefined features are NaN,
    as is ``d_hat`` whenever the link is classified NLOS.
    """

    timesteps: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    los_true: np.ndarray
    beta0: np.ndarray
    los_flag: np.ndarray
    d_hat: np.ndarray
    values: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self):
        return len(self.timesteps)

    @property
    def n_anchors(self) -> int:
        return self.los_true.shape[1]

    @property
    def feature_ids(self) -> tuple[str, ...]:
        return tuple(self.values)

    def rows(self, mask) -> "FeatureTable":
        return FeatureTable(self.timesteps[mask], self.positions[mask], self.velocities[mask],
                            self.los_true[mask], self.beta0[mask], self.los_flag[mask],
                            self.d_hat[mask], {f: v[mask] for f, v in self.values.items()})


def extract(dataset: list[Sample], config: FeatureConfig = FeatureConfig(),
            ae_model: ae.AeModel | None = None) -> FeatureTable:
    """LOS decisions and all propagation features (plus latents when ``ae_model`` is given)."""
    if not dataset:
        raise ValueError("empty dataset")
    K, J = len(dataset), len(dataset[0].measurements)
    beta0 = np.zeros((K, J))
    flag = np.zeros((K, J), bool)
    d_hat = np.full((K, J), np.nan)
    values = {f: np.full((K, J), np.nan) for f in PROPAGATION_FEATURES}
    for k, s in enumerate(dataset):
        for j, cm in enumerate(s.measurements):
            dec = detect_los_cfg(cm, config)
            beta0[k, j], flag[k, j] = dec.beta0, dec.los_flag
            if dec.range_estimate is not None:
                d_hat[k, j] = dec.range_estimate
            try:
                for f, v in propagation_features(cm, config).as_dict().items():
                    values[f][k, j] = v
            except FeatureError as exc:
                logger.debug("features undefined at k=%d anchor %d: %s", s.timestep, j, exc)
    if ae_model is not None:
        mags = np.abs(np.array([[cm.samples for cm in s.measurements] for s in dataset]))
        lat = ae.encode(ae_model, mags.reshape(K * J, -1)).reshape(K, J, -1)
        for i, f in enumerate(latent_ids(lat.shape[2])):
            values[f] = lat[:, :, i]
    return FeatureTable(
        np.array([s.timestep for s in dataset]),
        np.array([s.position for s in dataset]),
        np.array([s.velocity for s in dataset]),
        np.array([s.los for s in dataset], bool),
        beta0, flag, d_hat, values)


def magnitudes(dataset: list[Sample]) -> np.ndarray:
    """All ``|r|`` vectors of a dataset stacked as ``(K * J, L)``."""
    return np.array([np.abs(cm.samples) for s in dataset for cm in s.measurements])


# --- fingerprint databases -------------------------------------------------

@dataclass
class FingerprintDB:
    sets: dict[tuple[int, str], gpr.FingerprintSet]
    scalers: ScalerSet
    mask: np.ndarray  # rows of the source table that were kept

    @property
    def size(self) -> int:
        return int(self.mask.sum())


def obstacle_proximity_mask(positions, env: Environment, radius: float) -> np.ndarray:
    pos = np.asarray(positions, float)
    if not env.obstacles:
        return np.zeros(len(pos), bool)
    d = np.array([[point_rect_distance(p, o) for o in env.obstacles] for p in pos])
    return d.min(axis=1) <= radius


def build_fingerprint_db(table: FeatureTable, env: Environment, feature_ids,
                         mode: str = "full", radius: float = 1.5) -> FingerprintDB:
    """Scaled fingerprint sets per (anchor, feature).

    ``full`` keeps every labeled point; ``sparse`` keeps those within ``radius``
    of an obstacle.  Each scaler is fitted on all kept values of its
    (anchor, feature); features that are constant there are dropped.
    """
    if mode == "full":
        mask = np.ones(len(table), bool)
    elif mode == "sparse":
        if not radius > 0:
            raise ConfigError("proximity radius must be positive")
        mask = obstacle_proximity_mask(table.positions, env, radius)
        if not mask.any():
            raise ConfigError(f"no fingerprint lies within {radius} m of an obstacle")
    else:
        raise ConfigError(f"unknown density mode {mode!r}")
    scalers = ScalerSet()
    sets = {}
    pos = table.positions[mask]
    for f in feature_ids:
        if f not in table.values:
            raise ConfigError(f"feature {f!r} was not extracted")
        for j in range(table.n_anchors):
            v = table.values[f][mask, j]
            ok = np.isfinite(v)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                sp = scalers.fit(j, f, v[ok]) if ok.sum() >= 2 else None
            if sp is None:
                logger.warning("feature %s dropped for anchor %d", f, j)
                continue
            sets[(j, f)] = gpr.FingerprintSet(pos[ok], sp.apply(v[ok]), j, f, sp)
    return FingerprintDB(sets, scalers, mask)


@dataclass(frozen=True)
class GprSettings:
    family: str = "Matern52"
    iterations: int = 500
    val_fraction: float = 0.1
    learning_rate: float = 0.05
    max_opt_points: int | None = 300
    field_spacing: float | None = 0.1  # lattice cache for tracking; None = exact prediction

    def to_dict(self):
        return dict(self.__dict__)


def model_seed(seed: int, anchor_id: int, feature_id: str) -> np.random.SeedSequence:
    """Seed of one (anchor, feature) model, independent of which other models are trained."""
    return np.random.SeedSequence([seed, anchor_id, zlib.crc32(feature_id.encode())])


def train_gps(db: FingerprintDB, settings: GprSettings = GprSettings(),
              seed: int = 0) -> dict[tuple[int, str], gpr.GPModel]:
    models = {}
    for key, fps in sorted(db.sets.items()):
        models[key] = gpr.fit(fps, settings.iterations, settings.val_fraction, settings.family,
                              seed=model_seed(seed, *key), learning_rate=settings.learning_rate,
                              max_opt_points=settings.max_opt_points)
        logger.info("GP %s: ell=%.3f sf2=%.3f sn2=%.4f val=%.3f", key,
                    models[key].kernel.length_scale, models[key].kernel.signal_variance,
                    models[key].kernel.noise_variance, models[key].val_score)
    return models


def cache_models(models, bounds, spacing: float | None, margin: float = 2.0):
    """Wrap each model in a lattice cache over ``bounds`` grown by ``margin``."""
    if spacing is None:
        return dict(models)
    xmin, ymin, xmax, ymax = bounds
    box = (xmin - margin, ymin - margin, xmax + margin, ymax + margin)
    return {k: gpr.FieldCache(m, box, spacing) for k, m in models.items()}


# --- tracking ----------------------------------------------------------------

def make_bundles(table: FeatureTable, models=None) -> list[ObservationBundle]:
    """Observation bundle per timestep; feature values are scaled with each model's scaler."""
    models = models or {}
    out = []
    for k in range(len(table)):
        los = {}
        for j in range(table.n_anchors):
            d = table.d_hat[k, j]
            flag = bool(table.los_flag[k, j]) and np.isfinite(d)
            los[j] = LosDecision(float(table.beta0[k, j]), flag, float(d) if flag else None)
        feats, used = {}, {}
        for (j, f), m in models.items():
            raw = table.values[f][k, j]
            if np.isfinite(raw):
                feats[(j, f)] = float(m.scaler.apply(raw))
                used[(j, f)] = m
        out.append(ObservationBundle(los, feats, used))
    return out


@dataclass
class TrackResult:
    timesteps: np.ndarray
    est: np.ndarray
    true: np.ndarray
    n_los: np.ndarray
    coasting: np.ndarray

    @property
    def ape(self) -> np.ndarray:
        return np.linalg.norm(self.est - self.true, axis=1)

    def rows(self):
        for k, e, t, a, n, c in zip(self.timesteps, self.est, self.true, self.ape,
                                    self.n_los, self.coasting):
            yield int(k), float(e[0]), float(e[1]), float(t[0]), float(t[1]), float(a), int(n), int(c)


TRACK_COLUMNS = ("k", "est_x", "est_y", "true_x", "true_y", "ape", "n_los_anchors", "coasting_flag")


def track(table: FeatureTable, bundles, anchors, config: TrackerConfig, dt: float) -> TrackResult:
    pf = ParticleFilter(config, anchors)
    est, infos = pf.run(table.positions[0], bundles, dt)
    return TrackResult(table.timesteps.copy(), est, table.positions.copy(),
                       np.array([i.n_los for i in infos]), np.array([i.coasting for i in infos]))


# --- statistics ---------------------------------------------------------------

@dataclass(frozen=True)
class ApeStats:
    mae: float
    med: float
    c75: float
    c95: float
    ape: np.ndarray = field(repr=False, compare=False, default=None)

    def as_dict(self):
        return {"mae": self.mae, "med": self.med, "c75": self.c75, "c95": self.c95}


def nearest_rank(sorted_values: np.ndarray, pct: float) -> float:
    n = len(sorted_values)
    rank = max(1, math.ceil(pct / 100.0 * n - 1e-12))
    return float(sorted_values[rank - 1])


def compute_ape_stats(result) -> ApeStats:
    """MAE plus nearest-rank median, 75th and 95th percentiles of the APE series.

    ``result`` is a :class:`TrackResult` or an array of per-step errors.
    """
    ape = np.asarray(result.ape if isinstance(result, TrackResult) else result, float).ravel()
    if ape.size == 0:
        raise ValueError("need at least one step")
    s = np.sort(ape)
    return ApeStats(float(ape.mean()), nearest_rank(s, 50), nearest_rank(s, 75),
                    nearest_rank(s, 95), ape)


def pf_seed(seed: int, run: int) -> int:
    """Particle-filter seed of repeat ``run``; models and data stay fixed across repeats."""
    return int(np.random.SeedSequence([seed, run]).generate_state(1)[0])


# --- feature-subset search ------------------------------------------------------

MAX_EXHAUSTIVE = 12


@dataclass(frozen=True)
class SubsetScore:
    features: tuple[str, ...]
    mae: float
    c95: float
    run_mae: tuple[float, ...] = ()

    @property
    def size(self) -> int:
        return len(self.features)


@dataclass
class GridsearchResult:
    ranking: list[SubsetScore]
    evaluated: int
    total: int

    @property
    def partial(self) -> bool:
        return self.evaluated < self.total

    @property
    def best(self) -> SubsetScore:
        return self.ranking[0]


def all_subsets(candidates) -> list[tuple[str, ...]]:
    """Non-empty subsets, smallest first, members in candidate order."""
    out = []
    for r in range(1, len(candidates) + 1):
        out.extend(itertools.combinations(candidates, r))
    return out


def gridsearch_features(candidates, budget: int | None, survey: FeatureTable,
                        validation: FeatureTable, env: Environment, *, dt: float,
                        density: str = "full", radius: float = 1.5,
                        gpr_settings: GprSettings = GprSettings(),
                        tracker: TrackerConfig = TrackerConfig(), repeats: int = 2,
                        seed: int = 0) -> GridsearchResult:
    """Rank feature subsets by FUSION tracking error on ``validation``.

    Every non-empty subset of ``candidates`` is scored (mean MAE and C95 over
    ``repeats`` filter seeds) unless ``budget`` is smaller than their number,
    in which case a seeded random sample of ``budget`` subsets is scored and
    the result is flagged partial.  Each (anchor, feature) model depends only
    on its own fingerprints and seed, so it is trained once and shared by all
    subsets that contain the feature.  Ranking: MAE, then C95, then size.
    """
    candidates = tuple(candidates)
    if not candidates or len(set(candidates)) != len(candidates):
        raise ConfigError("candidates must be distinct and non-empty")
    if len(candidates) > MAX_EXHAUSTIVE and budget is None:
        raise ConfigError(f"more than {MAX_EXHAUSTIVE} candidates need an evaluation budget")
    if budget is not None and budget < 1:
        raise ConfigError("budget must be >= 1")
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    subsets = all_subsets(candidates)
    total = len(subsets)
    if budget is not None and budget < total:
        pick = np.random.default_rng(seed).choice(total, size=budget, replace=False)
        subsets = [subsets[i] for i in sorted(pick)]
        logger.warning("grid search limited to %d of %d subsets", budget, total)
    used = [f for f in candidates if any(f in s for s in subsets)]
    db = build_fingerprint_db(survey, env, used, density, radius)
    models = cache_models(train_gps(db, gpr_settings, seed), env.bounds, gpr_settings.field_spacing)
    cfg = replace(tracker, mode="FUSION")
    scores = []
    for sub in subsets:
        chosen = {k: m for k, m in models.items() if k[1] in sub}
        bundles = make_bundles(validation, chosen)
        runs = [compute_ape_stats(track(validation, bundles, env.anchors,
                                        replace(cfg, rng_seed=pf_seed(seed, r)), dt))
                for r in range(repeats)]
        scores.append(SubsetScore(sub, float(np.mean([s.mae for s in runs])),
                                  float(np.mean([s.c95 for s in runs])),
                                  tuple(s.mae for s in runs)))
        logger.info("subset %s: MAE %.3f C95 %.3f", ",".join(sub), scores[-1].mae, scores[-1].c95)
    scores.sort(key=lambda s: (s.mae, s.c95, s.size, s.features))
    return GridsearchResult(scores, len(subsets), total)


# --- field export -----------------------------------------------------------------

def export_field(model: gpr.GPModel, bounds, resolution) -> tuple[np.ndarray, np.ndarray]:
    """Grid rows ``(x, y, mu, sigma)`` plus the model's fingerprint positions."""
    return gpr.predict_grid(model, bounds, resolution), np.asarray(model.positions).copy()

"""Experiment configuration and the end-to-end pipeline.

``run_experiment`` goes simulate -> extract -> (train AE) -> (feature search)
-> train GPs -> track -> statistics and writes every artifact plus a
``manifest.json`` into the output directory.
"""
from __future__ import annotations

import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autoencoder as ae
from . import harness as H
from . import scenes, store
from .channel import (Environment, PropagationConfig, PulseConfig, Trajectory, generate_dataset,
                      generate_trajectory, trajectory_from_waypoints)
from .features import PROPAGATION_FEATURES, FeatureConfig
from .tracker import MODES, TrackerConfig

logger = logging.getLogger(__name__)

STAT_NAMES = ("mae", "med", "c75", "c95")
NOTES = (
    "repeats re-seed the particle filter only; datasets and models are shared by all repeats",
    "aggregate statistics are the mean and population std of each per-run statistic",
)


@dataclass(frozen=True)
class TrajectorySpec:
    """How to lay out a walk and which seed renders its channels.

    ``kind``: ``scene`` (the scene's walking path), ``waypoints``,
    ``lawnmower`` (survey rows ``spacing`` apart) or ``random``
    (random waypoints for ``duration`` seconds, drawn from ``seed``).
    """

    kind: str = "scene"
    waypoints: tuple = ()
    spacing: float = 1.0
    duration: float = 60.0
    speed: float = 1.0
    sample_period: float = 0.5
    smoothing: float = 0.5
    margin: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("scene", "waypoints", "lawnmower", "random"):
            raise H.ConfigError(f"unknown trajectory kind {self.kind!r}")
        if not (self.speed > 0 and self.sample_period > 0):
            raise H.ConfigError("speed and sample_period must be positive")
        object.__setattr__(self, "waypoints", tuple(tuple(float(c) for c in p) for p in self.waypoints))
        if self.kind == "waypoints" and len(self.waypoints) < 2:
            raise H.ConfigError("a waypoint trajectory needs at least two waypoints")

    def build(self, env: Environment, scene_path=None) -> Trajectory:
        if self.kind == "random":
            return generate_trajectory(env, self.speed, self.duration, self.sample_period,
                                       self.seed, self.margin)
        if self.kind == "lawnmower":
            wp = scenes.lawnmower(env.bounds, self.spacing, self.margin)
        elif self.kind == "scene":
            if scene_path is None:
                raise H.ConfigError("kind 'scene' needs a named scene environment")
            wp = scene_path
        else:
            wp = self.waypoints
        return trajectory_from_waypoints(wp, self.speed, self.sample_period,
                                         smoothing=self.smoothing)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["waypoints"] = [list(p) for p in self.waypoints]
        return d


@dataclass(frozen=True)
class SearchSettings:
    """Feature-subset search: candidates, budget and the validation walk's channel seed."""

    candidates: tuple[str, ...] = PROPAGATION_FEATURES
    budget: int | None = None
    repeats: int = 2
    validation_seed: int = 3

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["candidates"] = list(self.candidates)
        return d


def _survey_default():
    return TrajectorySpec(kind="lawnmower", spacing=1.0, seed=2)


def _test_default():
    return TrajectorySpec(kind="scene", smoothing=3.0, seed=1)


def _tracker_default():
    return TrackerConfig(particle_count=2000, process_noise_accel=1.0)


@dataclass
class ExperimentConfig:
    environment: str | dict = "shelf_hall"  # scene name, environment JSON path or inline dict
    pulse: PulseConfig = field(default_factory=PulseConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    survey: TrajectorySpec = field(default_factory=_survey_default)
    test: TrajectorySpec = field(default_factory=_test_default)
    density: str = "full"
    radius: float = 1.5
    # winner of the subset search on the shelf-hall validation walk (full DB)
    feature_set: tuple[str, ...] | str = ("sdt75", "mdi", "rkf", "ske", "kur")
    search: SearchSettings = field(default_factory=SearchSettings)
    autoencoder: ae.AeConfig | None = None
    gpr: H.GprSettings = field(default_factory=H.GprSettings)
    tracker: TrackerConfig = field(default_factory=_tracker_default)
    modes: tuple[str, ...] = MODES
    repeats: int = 20
    seed: int = 0
    output_dir: str = "runs/experiment"

    def __post_init__(self):
        if not self.radius > 0:
            raise H.ConfigError("proximity radius must be positive")
        if self.repeats < 1:
            raise H.ConfigError("repeat count must be >= 1")
        if self.density not in ("full", "sparse"):
            raise H.ConfigError(f"unknown density mode {self.density!r}")
        self.modes = tuple(self.modes)
        if not self.modes or any(m not in MODES for m in self.modes):
            raise H.ConfigError(f"modes must be drawn from {MODES}")
        if isinstance(self.feature_set, str):
            if self.feature_set != "gridsearch":
                raise H.ConfigError("feature_set must be a list of ids or 'gridsearch'")
        else:
            self.feature_set = tuple(self.feature_set)
            if "FUSION" in self.modes and not self.feature_set:
                raise H.ConfigError("FUSION needs at least one feature")
        if self.autoencoder is not None and self.autoencoder.input_dim != self.pulse.length:
            raise H.ConfigError("autoencoder input_dim must equal the measurement length")

    @property
    def needs_models(self) -> bool:
        return "FUSION" in self.modes

    def scene(self) -> tuple[Environment, list | None]:
        env = self.environment
        if isinstance(env, dict):
            return Environment.from_dict(env), None
        if env in scenes.SCENES:
            return scenes.load_scene(env)
        if Path(env).exists():
            return Environment.from_dict(store.read_json(env)), None
        raise H.ConfigError(f"environment {env!r} is neither a scene name nor a file")

    def to_dict(self) -> dict:
        return {
            "environment": self.environment,
            "pulse": self.pulse.to_dict(),
            "propagation": self.propagation.to_dict(),
            "features": self.features.to_dict(),
            "survey": self.survey.to_dict(),
            "test": self.test.to_dict(),
            "density": self.density,
            "radius": self.radius,
            "feature_set": self.feature_set if isinstance(self.feature_set, str)
            else list(self.feature_set),
            "search": self.search.to_dict(),
            "autoencoder": None if self.autoencoder is None else self.autoencoder.to_dict(),
            "gpr": self.gpr.to_dict(),
            "tracker": self.tracker.to_dict(),
            "modes": list(self.modes),
            "repeats": self.repeats,
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        nested = {
            "pulse": PulseConfig.from_dict,
            "propagation": PropagationConfig.from_dict,
            "features": FeatureConfig.from_dict,
            "survey": lambda v: _make(TrajectorySpec, v),
            "test": lambda v: _make(TrajectorySpec, v),
            "search": lambda v: _make(SearchSettings, v),
            "autoencoder": lambda v: None if v is None else _make(ae.AeConfig, v),
            "gpr": lambda v: _make(H.GprSettings, v),
            "tracker": lambda v: _make(TrackerConfig, v),
        }
        kwargs = {}
        for k, v in d.items():
            kwargs[k] = nested[k](v) if k in nested else v
        return _make(cls, kwargs)


def _make(cls, d: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise H.ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except H.ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise H.ConfigError(f"{cls.__name__}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(store.read_json(path))


def save_config(config: ExperimentConfig, path):
    store.write_json(path, config.to_dict())


# --- pipeline ---------------------------------------------------------------------

@dataclass
class ExperimentResult:
    output_dir: Path
    feature_set: tuple[str, ...]
    stats: dict[str, list[H.ApeStats]]
    aggregate: dict[str, dict[str, tuple[float, float]]]
    files: list[Path]
    db_size: int | None = None
    search: H.GridsearchResult | None = None

    def mean(self, mode: str, stat: str = "mae") -> float:
        return self.aggregate[mode][stat][0]


class _Stage:
    """Context manager tagging any exception with the stage it happened in."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        logger.info("stage %s", self.name)
        return self

    def __exit__(self, typ, exc, tb):
        if exc is not None and not isinstance(exc, H.StageError):
            raise H.StageError(self.name, exc) from exc
        return False


def stage(name: str) -> _Stage:
    return _Stage(name)


def simulate(config: ExperimentConfig, out: Path, validation: bool = False):
    """Render the survey and test datasets (plus a validation walk when asked)."""
    env, path = config.scene()
    jobs = [("survey", config.survey), ("test", config.test)]
    if validation:
        jobs.append(("validation", replace(config.test, seed=config.search.validation_seed)))
    files, sets = [], {}
    for name, spec in jobs:
        traj = spec.build(env, path)
        data = generate_dataset(env, traj, config.pulse, spec.seed, config.propagation)
        files += store.write_dataset(out / name, data, config.pulse.dt, spec.seed, spec.sample_period)
        sets[name] = store.read_dataset(out / name)[0]  # continue from the stored precision
    return env, sets, files


def aggregate(stats: list[H.ApeStats]) -> dict[str, tuple[float, float]]:
    out = {}
    for s in STAT_NAMES:
        v = np.array([getattr(x, s) for x in stats])
        out[s] = (float(v.mean()), float(v.std()))
    return out


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(config: ExperimentConfig, out=None) -> ExperimentResult:
    """Full pipeline; every failure is re-raised as a stage-tagged :class:`StageError`."""
    out = Path(out or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    searching = config.feature_set == "gridsearch" and config.needs_models

    with stage("simulate"):
        env, sets, new = simulate(config, out, validation=searching)
        files += new
        dt = config.test.sample_period

    ae_model = None
    if config.autoencoder is not None:
        with stage("train-ae"):
            model = ae.init(config.autoencoder)
            ae_model = ae.train(model, H.magnitudes(sets["survey"]), config.autoencoder)
            ae.save(ae_model, out / "ae_model.json", out / "ae_history.csv")
            files += [out / "ae_model.json", out / "ae_history.csv"]

    with stage("extract"):
        tables = {}
        for name, data in sets.items():
            tables[name] = H.extract(data, config.features, ae_model)
            store.write_features(out / f"{name}_features.csv", tables[name])
            files.append(out / f"{name}_features.csv")

    feature_set = () if config.feature_set == "gridsearch" else tuple(config.feature_set)
    search = None
    if searching:
        with stage("gridsearch"):
            cands = config.search.candidates
            if ae_model is not None and cands == PROPAGATION_FEATURES:
                cands = cands + H.latent_ids(config.autoencoder.latent_dim)
            search = H.gridsearch_features(
                cands, config.search.budget, tables["survey"], tables["validation"], env,
                dt=dt, density=config.density, radius=config.radius, gpr_settings=config.gpr,
                tracker=config.tracker, repeats=config.search.repeats, seed=config.seed)
            write_search(out / "gridsearch.csv", search)
            files.append(out / "gridsearch.csv")
            feature_set = search.best.features

    models, db_size = {}, None
    if config.needs_models:
        with stage("train-gpr"):
            db = H.build_fingerprint_db(tables["survey"], env, feature_set, config.density,
                                        config.radius)
            db_size = db.size
            raw = H.train_gps(db, config.gpr, config.seed)
            store.write_scalers(out / "scalers.json", db.scalers)
            files.append(out / "scalers.json")
            files += store.write_models(out / "models", raw)
            models = H.cache_models(raw, env.bounds, config.gpr.field_spacing)

    stats: dict[str, list[H.ApeStats]] = {}
    with stage("track"):
        (out / "tracks").mkdir(exist_ok=True)
        test = tables["test"]
        for mode in config.modes:
            bundles = H.make_bundles(test, models if mode == "FUSION" else None)
            stats[mode] = []
            for r in range(config.repeats):
                cfg = replace(config.tracker, mode=mode, rng_seed=H.pf_seed(config.seed, r))
                res = H.track(test, bundles, env.anchors, cfg, dt)
                path = out / "tracks" / f"{mode}_{r:03d}.csv"
                store.write_track(path, res)
                files.append(path)
                stats[mode].append(H.compute_ape_stats(res))

    with stage("evaluate"):
        agg = {m: aggregate(s) for m, s in stats.items()}
        store.write_rows(out / "stats.csv", ("mode", "run", *STAT_NAMES),
                         ((m, r, *(getattr(s, k) for k in STAT_NAMES))
                          for m, runs in stats.items() for r, s in enumerate(runs)))
        store.write_rows(out / "aggregate_stats.csv", ("mode", "statistic", "mean", "std", "runs"),
                         ((m, k, *agg[m][k], len(stats[m])) for m in stats for k in STAT_NAMES))
        save_config(config, out / "config.json")
        files += [out / "stats.csv", out / "aggregate_stats.csv", out / "config.json"]
        manifest = {
            "files": [{"path": p.relative_to(out).as_posix(), "bytes": p.stat().st_size,
                       "sha256": file_digest(p)} for p in files],
            "feature_set": list(feature_set),
            "fingerprints": db_size,
            "notes": list(NOTES),
        }
        store.write_json(out / "manifest.json", manifest)
        files.append(out / "manifest.json")
    return ExperimentResult(out, feature_set, stats, agg, files, db_size, search)


def write_search(path, result: H.GridsearchResult):
    store.write_rows(path, ("rank", "features", "size", "mae", "c95", "partial"),
                     ((i + 1, "+".join(s.features), s.size, s.mae, s.c95, result.partial)
                      for i, s in enumerate(result.ranking)))

"""Particle filter fusing LOS ranges with GP feature likelihoods.

Each step: constant-velocity prediction, one log-weight vector per
information source (LOS range per anchor, one per anchor/feature GP),
per-source normalisation, summation, systematic resampling and the
particle mean as the position estimate.  ``EMI`` mode uses LOS ranges only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import gpr
from .features import LosDecision

MODES = ("EMI", "FUSION")


class DegenerateObservation(ValueError):
    """Every particle has zero likelihood."""


@dataclass(frozen=True)
class TrackerConfig:
    particle_count: int = 10_000
    range_noise_std: float = 0.15
    process_noise_accel: float = 0.5
    init_pos_std: float = 1.0
    velocity_init: tuple[float, float] = (0.0, 0.5)
    mode: str = "FUSION"
    rng_seed: int = 0
    ess_threshold: float | None = None  # resample only below this ESS fraction; None = always

    def __post_init__(self):
        if self.particle_count < 100:
            raise ValueError("particle_count must be >= 100")
        if not self.range_noise_std > 0:
            raise ValueError("range_noise_std must be positive")
        if not self.process_noise_accel > 0:
            raise ValueError("process_noise_accel must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        object.__setattr__(self, "velocity_init", tuple(float(v) for v in self.velocity_init))

    def to_dict(self):
        d = dict(self.__dict__)
        d["velocity_init"] = list(self.velocity_init)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ParticleSet:
    positions: np.ndarray  # (P, 2)
    velocities: np.ndarray  # (P, 2)
    log_weights: np.ndarray  # (P,)

    def __len__(self):
        return len(self.log_weights)

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.positions.copy(), self.velocities.copy(), self.log_weights.copy())


@dataclass
class ObservationBundle:
    """Everything extracted from one timestep's channel measurements.

    ``los`` maps anchor id to its :class:`LosDecision`; ``features`` maps
    ``(anchor_id, feature_id)`` to the scaled observation, matched against the
    GP of the same key in ``models``.
    """

    los: dict[int, LosDecision] = field(default_factory=dict)
    features: dict[tuple[int, str], float] = field(default_factory=dict)
    models: dict[tuple[int, str], gpr.GPModel] = field(default_factory=dict)

    @property
    def n_los(self) -> int:
        return sum(d.los_flag for d in self.los.values())


def init_particles(config: TrackerConfig, x0_ref, rng: np.random.Generator) -> ParticleSet:
    P = config.particle_count
    pos = np.asarray(x0_ref, float) + config.init_pos_std * rng.standard_normal((P, 2))
    mu_v, sd_v = config.velocity_init
    sign = rng.choice([-1.0, 1.0], size=(P, 2))
    vel = sign * (mu_v + sd_v * rng.standard_normal((P, 2)))
    return ParticleSet(pos, vel, np.full(P, -math.log(P)))


def predict(particles: ParticleSet, dt: float, config: TrackerConfig,
            rng: np.random.Generator, accel_std: float | None = None) -> ParticleSet:
    if dt <= 0:
        raise ValueError("dt must be positive")
    q = config.process_noise_accel if accel_std is None else accel_std
    a = q * rng.standard_normal(particles.positions.shape)
    pos = particles.positions + particles.velocities * dt + 0.5 * a * dt * dt
    vel = particles.velocities + a * dt
    return ParticleSet(pos, vel, particles.log_weights.copy())


def weight_los(particles: ParticleSet, d_hat, los_flag: bool, anchor, sigma_d: float) -> np.ndarray:
    P = len(particles)
    if not los_flag:
        return np.zeros(P)
    rng_p = np.linalg.norm(particles.positions - np.asarray(anchor, float), axis=1)
    return -((d_hat - rng_p) ** 2) / (2 * sigma_d ** 2) - math.log(math.sqrt(2 * math.pi) * sigma_d)


def weight_feature(particles: ParticleSet, z: float, model: gpr.GPModel) -> np.ndarray:
    return gpr.log_likelihood(model, particles.positions, z)


def normalize(log_weights) -> np.ndarray:
    w = np.asarray(log_weights, float)
    if not np.any(np.isfinite(w)):
        raise DegenerateObservation("all particle weights are zero")
    return w - logsumexp(w)


def combine(los_weights, los_flags, feature_weights=()) -> np.ndarray:
    """Sum of normalised per-source log-weights, LOS terms gated by their flags."""
    total = None
    for w, flag in zip(los_weights, los_flags):
        if flag:
            total = w.copy() if total is None else total + w
    for w in feature_weights:
        total = w.copy() if total is None else total + w
    if total is None:
        sources = list(los_weights) + list(feature_weights)
        if not sources:
            raise ValueError("no weight sources to combine")
        total = np.zeros(len(sources[0]))
    return normalize(total)


def systematic_indices(log_weights, rng: np.random.Generator) -> np.ndarray:
    P = len(log_weights)
    cdf = np.cumsum(np.exp(log_weights - logsumexp(log_weights)))
    cdf[-1] = 1.0
    u = (rng.random() + np.arange(P)) / P
    return np.searchsorted(cdf, u, side="right")


def resample(particles: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    idx = systematic_indices(particles.log_weights, rng)
    P = len(particles)
    return ParticleSet(particles.positions[idx], particles.velocities[idx], np.full(P, -math.log(P)))


def effective_sample_size(log_weights) -> float:
    w = np.exp(log_weights - logsumexp(log_weights))
    return float(1.0 / np.sum(w * w))


def estimate(particles: ParticleSet) -> np.ndarray:
    if len(particles) == 0:
        raise ValueError("empty particle set")
    w = np.exp(particles.log_weights - logsumexp(particles.log_weights))
    return w @ particles.positions


@dataclass
class StepInfo:
    n_los: int
    n_feature_sources: int
    degenerate: bool

    @property
    def coasting(self) -> bool:
        return self.degenerate or (self.n_los == 0 and self.n_feature_sources == 0)


def step(particles: ParticleSet, observations: ObservationBundle, dt: float,
         config: TrackerConfig, anchors, rng: np.random.Generator
         ) -> tuple[ParticleSet, np.ndarray, StepInfo]:
    """Predict, weight, combine, resample, estimate.  ``dt == 0`` skips prediction."""
    pred = predict(particles, dt, config, rng) if dt > 0 else particles.copy()
    los_w, flags, feat_w = [], [], []
    for j, dec in sorted(observations.los.items()):
        flags.append(dec.los_flag)
        los_w.append(weight_los(pred, dec.range_estimate, dec.los_flag, anchors[j],
                                config.range_noise_std))
    if config.mode == "FUSION":
        for key, z in sorted(observations.features.items()):
            feat_w.append(weight_feature(pred, z, observations.models[key]))
    info = StepInfo(sum(flags), len(feat_w), False)
    if not los_w and not feat_w:
        return pred, estimate(pred), info
    try:
        logw = combine([normalize(w) for w in los_w], flags, [normalize(w) for w in feat_w])
        if config.ess_threshold is not None:
            logw = normalize(logw + pred.log_weights)
    except DegenerateObservation:
        info.degenerate = True
        return pred, estimate(pred), info
    pred.log_weights = logw
    if config.ess_threshold is None or \
            effective_sample_size(logw) < config.ess_threshold * len(pred):
        pred = resample(pred, rng)
    return pred, estimate(pred), info


class ParticleFilter:
    """Runs :func:`step` over a sequence of observation bundles."""

    def __init__(self, config: TrackerConfig, anchors):
        self.config = config
        self.anchors = [np.asarray(a, float) for a in anchors]
        self.rng = np.random.default_rng(config.rng_seed)
        self.particles: ParticleSet | None = None

    def reset(self, x0_ref):
        self.rng = np.random.default_rng(self.config.rng_seed)
        self.particles = init_particles(self.config, x0_ref, self.rng)

    def update(self, observations: ObservationBundle, dt: float):
        self.particles, est, info = step(self.particles, observations, dt, self.config,
                                         self.anchors, self.rng)
        return est, info

    def run(self, x0_ref, bundles, dt: float):
        """Track through ``bundles``; returns ``(estimates (K, 2), [StepInfo])``."""
        self.reset(x0_ref)
        est, infos = [], []
        for k, b in enumerate(bundles):
            e, info = self.update(b, dt if k else 0.0)
            est.append(e)
            infos.append(info)
        return np.array(est), infos

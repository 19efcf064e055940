"""Synthetic 2-D UWB channel simulator.

Geometry (LOS test, first-order image-method reflections, diffuse scattering
from nearby obstacles) produces a :class:`ChannelRealization`; :func:`render`
turns it into a sampled complex baseband :class:`ChannelMeasurement`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0


class DomainError(ValueError):
    """Input outside the domain an operation is defined on."""


@dataclass
class Environment:
    """Rectangular floor plan with reflective walls, obstacles and anchors.

    ``bounds`` is ``(xmin, ymin, xmax, ymax)``; walls are ``((x1, y1), (x2, y2))``
    segments; obstacles are ``(xmin, ymin, xmax, ymax)`` rectangles.
    """

    bounds: tuple[float, float, float, float]
    anchors: list[tuple[float, float]]
    walls: list[tuple[tuple[float, float], tuple[float, float]]] = field(default_factory=list)
    obstacles: list[tuple[float, float, float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.bounds = tuple(float(b) for b in self.bounds)
        self.anchors = [tuple(float(c) for c in a) for a in self.anchors]
        self.walls = [tuple(tuple(float(c) for c in p) for p in w) for w in self.walls]
        self.obstacles = [tuple(float(c) for c in o) for o in self.obstacles]
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise DomainError("bounds must have positive area")
        if len(self.anchors) < 1:
            raise DomainError("at least one anchor is required")
        for a in self.anchors:
            if not self.contains(a):
                raise DomainError(f"anchor {a} outside bounds")
        for o in self.obstacles:
            if not (o[2] > o[0] and o[3] > o[1]):
                raise DomainError(f"obstacle {o} has no area")
        for w in self.walls:
            if np.hypot(w[1][0] - w[0][0], w[1][1] - w[0][1]) <= 0:
                raise DomainError(f"wall {w} has zero length")

    @property
    def n_anchors(self) -> int:
        return len(self.anchors)

    def contains(self, p) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return bool(xmin <= p[0] <= xmax and ymin <= p[1] <= ymax)

    @classmethod
    def room(cls, width, height, anchors, obstacles=(), walls=True):
        """Room ``[0, width] x [0, height]`` whose four sides are reflective walls."""
        w = []
        if walls:
            c = [(0.0, 0.0), (width, 0.0), (width, height), (0.0, height)]
            w = [(c[i], c[(i + 1) % 4]) for i in range(4)]
        return cls((0.0, 0.0, width, height), list(anchors), w, list(obstacles))

    def to_dict(self) -> dict:
        return {
            "bounds": list(self.bounds),
            "anchors": [list(a) for a in self.anchors],
            "walls": [[list(p) for p in w] for w in self.walls],
            "obstacles": [list(o) for o in self.obstacles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        return cls(d["bounds"], d["anchors"], d.get("walls", []), d.get("obstacles", []))


@dataclass(frozen=True)
class PulseConfig:
    bandwidth: float = 499.2e6
    sample_interval: float | None = None
    length: int = 128
    pulse_duration: float | None = None
    noise_std: float = 0.001

    def __post_init__(self):
        if self.sample_interval is None:
            object.__setattr__(self, "sample_interval", 1.0 / self.bandwidth)
        if self.pulse_duration is None:
            object.__setattr__(self, "pulse_duration", 6.0 * self.sample_interval)
        if self.length < 16:
            raise DomainError("length must be >= 16")
        if self.sample_interval <= 0:
            raise DomainError("sample_interval must be positive")
        if self.pulse_duration < self.sample_interval:
            raise DomainError("pulse_duration must be >= sample_interval")
        if self.noise_std < 0:
            raise DomainError("noise_std must be >= 0")

    @property
    def dt(self) -> float:
        return self.sample_interval

    def to_dict(self) -> dict:
        return {
            "bandwidth": self.bandwidth,
            "sample_interval": self.sample_interval,
            "length": self.length,
            "pulse_duration": self.pulse_duration,
            "noise_std": self.noise_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PulseConfig":
        keys = ("bandwidth", "sample_interval", "length", "pulse_duration", "noise_std")
        return cls(**{k: d[k] for k in keys if k in d})


@dataclass(frozen=True)
class PropagationConfig:
    """Knobs of the geometric/diffuse channel model.

    Diffuse power is given per sample, relative to the direct-path power
    ``(ref_gain / d)**2``: ``diffuse_power`` scaled by ``diffuse_gain_db`` per
    obstacle within ``diffuse_radius`` of the agent.  A blocked link adds
    ``blocked_scatter`` (energy of the shadowed direct path scattered around
    the blocker) and its profile gets a soft onset,
    ``S(t) = S0 * (1 - exp(-t / rise)) * exp(-t / decay)``.
    """

    ref_gain: float = 1.0
    reflection_coeff: float = 0.6
    diffuse_power: float = 0.01
    diffuse_decay: float = 15e-9
    diffuse_radius: float = 2.0
    diffuse_gain_db: float = 6.0
    diffuse_rise: float = 20e-9
    blocked_scatter: float = 0.5
    c: float = SPEED_OF_LIGHT

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "PropagationConfig":
        return cls(**d)


@dataclass(frozen=True)
class ChannelRealization:
    los_present: bool
    delays: np.ndarray  # seconds
    amplitudes: np.ndarray  # complex
    diffuse_onset: float
    diffuse_power: float
    diffuse_decay: float
    diffuse_rise: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.delays)) or np.any(self.delays < 0):
            raise DomainError("tap delays must be finite and non-negative")
        if self.diffuse_decay <= 0:
            raise DomainError("diffuse_decay must be positive")

    @property
    def taps(self) -> list[tuple[float, complex]]:
        return list(zip(self.delays.tolist(), self.amplitudes.tolist()))


@dataclass(frozen=True)
class ChannelMeasurement:
    samples: np.ndarray
    anchor_id: int = 0
    timestep: int = 0

    def __post_init__(self):
        if self.samples.ndim != 1 or not np.all(np.isfinite(self.samples)):
            raise DomainError("samples must be a finite 1-D vector")

    def __len__(self):
        return len(self.samples)


@dataclass
class Trajectory:
    timesteps: np.ndarray  # (K,) int
    positions: np.ndarray  # (K, 2)
    velocities: np.ndarray  # (K, 2)
    sample_period: float

    def __len__(self):
        return len(self.timesteps)


# --- geometry -------------------------------------------------------------

def segment_hits_rect(p0, p1, rect) -> bool:
    """Liang-Barsky clip of segment p0-p1 against an axis-aligned rectangle."""
    x0, y0 = p0
    dx, dy = p1[0] - x0, p1[1] - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 - rect[0]), (dx, rect[2] - x0), (-dy, y0 - rect[1]), (dy, rect[3] - y0)):
        if p == 0.0:
            if q < 0:
                return False
            continue
        t = q / p
        if p < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return False
    return True


def segment_blocked(p0, p1, obstacles) -> bool:
    return any(segment_hits_rect(p0, p1, o) for o in obstacles)


def point_rect_distance(p, rect) -> float:
    dx = max(rect[0] - p[0], 0.0, p[0] - rect[2])
    dy = max(rect[1] - p[1], 0.0, p[1] - rect[3])
    return float(np.hypot(dx, dy))


def mirror_point(p, wall) -> np.ndarray:
    a = np.asarray(wall[0], float)
    u = np.asarray(wall[1], float) - a
    u /= np.linalg.norm(u)
    v = np.asarray(p, float) - a
    return a + 2 * (v @ u) * u - v


def reflection_point(src, dst, wall):
    """Specular point on ``wall`` for a src -> wall -> dst path, or None.

    Both endpoints must lie strictly on the same side of the wall line and the
    image ray must cross the wall inside the segment.
    """
    a = np.asarray(wall[0], float)
    b = np.asarray(wall[1], float)
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    u = b - a
    n = np.array([-u[1], u[0]])
    s1, s2 = (src - a) @ n, (dst - a) @ n
    if s1 * s2 <= 0:
        return None
    img = mirror_point(src, wall)
    d = dst - img
    denom = d @ n
    if denom == 0:
        return None
    t = ((a - img) @ n) / denom
    q = img + t * d
    w = ((q - a) @ u) / (u @ u)
    if not 0.0 <= w <= 1.0:
        return None
    return q


def nearby_obstacle_count(env: Environment, pos, radius: float) -> int:
    return sum(point_rect_distance(pos, o) <= radius for o in env.obstacles)


def los_present(env: Environment, agent_pos, anchor_id: int) -> bool:
    return not segment_blocked(agent_pos, env.anchors[anchor_id], env.obstacles)


# --- channel --------------------------------------------------------------

def propagate(env: Environment, agent_pos, anchor_id: int,
              config: PropagationConfig = PropagationConfig(),
              rng: np.random.Generator | None = None) -> ChannelRealization:
    """Deterministic paths plus diffuse parameters for one agent/anchor link.

    Tap phases are drawn from ``rng`` (a fresh default generator when omitted).
    The diffuse tail starts at the earliest existing path; a link with no
    deterministic path at all starts it at the geometric direct-path delay.
    """
    agent = np.asarray(agent_pos, float)
    if agent.shape != (2,) or not env.contains(agent):
        raise DomainError(f"agent position {agent_pos} outside environment bounds")
    if not 0 <= anchor_id < env.n_anchors:
        raise DomainError(f"invalid anchor id {anchor_id}")
    rng = np.random.default_rng() if rng is None else rng
    anchor = np.asarray(env.anchors[anchor_id], float)

    delays, gains = [], []
    d_direct = float(np.linalg.norm(agent - anchor))
    los = not segment_blocked(agent, anchor, env.obstacles)
    if los:
        delays.append(d_direct / config.c)
        gains.append(config.ref_gain / max(d_direct, 1e-3))
    for wall in env.walls:
        q = reflection_point(anchor, agent, wall)
        if q is None:
            continue
        if segment_blocked(anchor, q, env.obstacles) or segment_blocked(q, agent, env.obstacles):
            continue
        d = float(np.linalg.norm(anchor - q) + np.linalg.norm(q - agent))
        delays.append(d / config.c)
        gains.append(config.reflection_coeff * config.ref_gain / d)

    delays = np.asarray(delays, float)
    phases = rng.uniform(0.0, 2 * np.pi, size=len(delays))
    amps = np.asarray(gains, float) * np.exp(1j * phases)
    order = np.argsort(delays, kind="stable")
    delays, amps = delays[order], amps[order]

    n_near = nearby_obstacle_count(env, agent, config.diffuse_radius)
    rel = config.diffuse_power * 10 ** (config.diffuse_gain_db * n_near / 10)
    if not los:
        rel += config.blocked_scatter
    power = rel * (config.ref_gain / max(d_direct, 1e-3)) ** 2
    onset = float(delays[0]) if len(delays) else d_direct / config.c
    return ChannelRealization(
        los_present=los,
        delays=delays,
        amplitudes=amps,
        diffuse_onset=onset,
        diffuse_power=power,
        diffuse_decay=config.diffuse_decay,
        diffuse_rise=0.0 if los else config.diffuse_rise,
    )


def pulse_samples(t: np.ndarray, pulse: PulseConfig) -> np.ndarray:
    """Truncated Gaussian pulse evaluated at times ``t``, unit energy on the grid.

    The Gaussian has standard deviation ``T_p / 6`` and is cut at ``|t| > T_p / 2``.
    Normalisation is over the samples actually taken so a fractional delay
    never changes the rendered energy.
    """
    sigma = pulse.pulse_duration / 6.0
    p = np.exp(-0.5 * (t / sigma) ** 2)
    p[np.abs(t) > pulse.pulse_duration / 2] = 0.0
    e = np.sum(p ** 2)
    return p / np.sqrt(e) if e > 0 else p


def diffuse_profile(t: np.ndarray, realization: ChannelRealization) -> np.ndarray:
    """Power delay profile of the diffuse component at delays ``t``."""
    rel = t - realization.diffuse_onset
    s = np.zeros_like(t)
    m = rel >= 0
    s[m] = realization.diffuse_power * np.exp(-rel[m] / realization.diffuse_decay)
    if realization.diffuse_rise > 0:
        s[m] *= 1.0 - np.exp(-rel[m] / realization.diffuse_rise)
    return s


def render(realization: ChannelRealization, pulse: PulseConfig, rng_seed,
           anchor_id: int = 0, timestep: int = 0) -> ChannelMeasurement:
    rng = np.random.default_rng(rng_seed)
    L, dt = pulse.length, pulse.dt
    t = np.arange(L) * dt
    r = np.zeros(L, complex)
    for tau, a in zip(realization.delays, realization.amplitudes):
        if tau >= L * dt:
            logger.debug("tap at %.3g s beyond window %.3g s dropped", tau, L * dt)
            continue
        r += a * pulse_samples(t - tau, pulse)
    if realization.diffuse_power > 0:
        std = np.sqrt(diffuse_profile(t, realization) / 2)
        r += std * (rng.standard_normal(L) + 1j * rng.standard_normal(L))
    if pulse.noise_std > 0:
        r += pulse.noise_std / np.sqrt(2) * (rng.standard_normal(L) + 1j * rng.standard_normal(L))
    return ChannelMeasurement(r, anchor_id, timestep)


# --- trajectories and datasets -------------------------------------------

def trajectory_from_waypoints(waypoints, speed: float, sample_period: float,
                              duration: float | None = None,
                              smoothing: float = 0.5) -> Trajectory:
    """Constant-speed path through ``waypoints``.

    Corners are rounded by moving-average smoothing over ``smoothing`` seconds,
    then the path is resampled at constant arc length.  Without ``duration``
    the path is walked once.
    """
    wp = np.asarray(waypoints, float)
    if speed <= 0:
        raise DomainError("speed must be positive")
    seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    ds = speed * sample_period / 10
    fine_s = np.append(np.arange(0.0, s[-1], ds), s[-1])
    fine = np.column_stack([np.interp(fine_s, s, wp[:, i]) for i in range(2)])
    w = max(int(round(smoothing * speed / ds)), 1)
    if w > 1 and len(fine) > w:
        kernel = np.ones(w) / w
        padded = np.pad(fine, ((w // 2, w - 1 - w // 2), (0, 0)), mode="edge")
        fine = np.column_stack([np.convolve(padded[:, i], kernel, mode="valid") for i in range(2)])
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(fine, axis=0), axis=1))])
    if duration is None:
        duration = arc[-1] / speed
    n = int(round(duration / sample_period)) + 1
    target = np.minimum(np.arange(n) * sample_period * speed, arc[-1])
    pos = np.column_stack([np.interp(target, arc, fine[:, i]) for i in range(2)])
    vel = np.gradient(pos, sample_period, axis=0) if n > 1 else np.zeros_like(pos)
    return Trajectory(np.arange(n), pos, vel, sample_period)


def generate_trajectory(env: Environment, speed: float, duration: float,
                        sample_period: float, rng_seed, margin: float = 0.5) -> Trajectory:
    """Random-waypoint walk inside ``env.bounds`` (shrunk by ``margin``)."""
    if speed <= 0:
        raise DomainError("speed must be positive")
    rng = np.random.default_rng(rng_seed)
    xmin, ymin, xmax, ymax = env.bounds
    lo = np.array([xmin + margin, ymin + margin])
    hi = np.array([xmax - margin, ymax - margin])
    need = speed * duration * 1.5 + 1.0
    wp = [rng.uniform(lo, hi)]
    length = 0.0
    while length < need:
        nxt = rng.uniform(lo, hi)
        length += float(np.linalg.norm(nxt - wp[-1]))
        wp.append(nxt)
    traj = trajectory_from_waypoints(wp, speed, sample_period, duration)
    traj.positions = np.clip(traj.positions, lo, hi)
    return traj


@dataclass
class Sample:
    timestep: int
    position: np.ndarray
    velocity: np.ndarray
    measurements: list[ChannelMeasurement]
    los: list[bool]


def generate_dataset(env: Environment, trajectory: Trajectory, pulse: PulseConfig,
                     rng_seed, config: PropagationConfig = PropagationConfig()) -> list[Sample]:
    """Propagate and render every (pose, anchor) pair; labels are the true poses."""
    ss = np.random.SeedSequence(rng_seed)
    children = ss.spawn(len(trajectory) * env.n_anchors)
    out = []
    for i, k in enumerate(trajectory.timesteps):
        pos = trajectory.positions[i]
        cms, los = [], []
        for j in range(env.n_anchors):
            child = children[i * env.n_anchors + j]
            rng = np.random.default_rng(child)
            real = propagate(env, pos, j, config, rng)
            cms.append(render(real, pulse, rng.integers(2**63), anchor_id=j, timestep=int(k)))
            los.append(real.los_present)
        out.append(Sample(int(k), pos.copy(), trajectory.velocities[i].copy(), cms, los))
    return out

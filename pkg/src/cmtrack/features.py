"""LOS decision, leading-edge ranging and propagation features of a channel measurement."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import SPEED_OF_LIGHT, ChannelMeasurement

logger = logging.getLogger(__name__)

PROPAGATION_FEATURES = ("eng", "sdt50", "sdt75", "mdi", "rmsds", "rkf", "ske", "kur")

K_MAX = 1e6
# receiver noise stays below this many noise-floor units with probability ~1 - 1e-7
NOISE_MARGIN = 4.0


class FeatureError(ValueError):
    """A feature is undefined for the given measurement (e.g. zero energy)."""


class NoRangeError(FeatureError):
    """No sample rises above the detection level."""


@dataclass(frozen=True)
class FeatureConfig:
    dt: float = 1.0 / 499.2e6
    kappa: float = 0.1
    clutter_window: int = 8
    noise_floor: float = 0.001
    los_threshold: float = 1.5
    pulse_width: int = 3  # samples either side of the peak counted as the strongest path
    c: float = SPEED_OF_LIGHT

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class LosDecision:
    beta0: float
    los_flag: bool
    range_estimate: float | None = None


def _samples(cm) -> np.ndarray:
    return np.asarray(cm.samples if isinstance(cm, ChannelMeasurement) else cm)


def energy(cm) -> float:
    r = _samples(cm)
    return float(np.sum(np.abs(r) ** 2))


def mdi(cm, kappa: float = 0.1) -> int:
    """Index of the first sample whose magnitude exceeds ``kappa * max|r|``."""
    mag = np.abs(_samples(cm))
    peak = mag.max() if mag.size else 0.0
    if peak <= 0:
        raise FeatureError("minimum delay index undefined for an all-zero measurement")
    return int(np.argmax(mag > kappa * peak))


def _first_peak(mag: np.ndarray, start: int) -> int:
    n = start
    while n + 1 < len(mag) and mag[n + 1] >= mag[n]:
        n += 1
    return n


def _interpolate_peak(mag: np.ndarray, n: int) -> float:
    """Sub-sample peak location from a parabola through the log-magnitudes at n-1, n, n+1.

    A Gaussian pulse has a parabolic log-magnitude, so this is exact for clean taps.
    """
    if n <= 0 or n >= len(mag) - 1:
        return float(n)
    y = np.log(np.maximum(mag[n - 1:n + 2], 1e-300))
    denom = y[0] - 2 * y[1] + y[2]
    if denom >= 0:
        return float(n)
    offset = 0.5 * (y[0] - y[2]) / denom
    return n + float(np.clip(offset, -0.5, 0.5))


def _leading_edge(mag: np.ndarray, kappa: float, noise_floor: float) -> int | None:
    """First index above ``max(kappa * max|r|, NOISE_MARGIN * noise_floor)``."""
    level = max(kappa * (mag.max() if mag.size else 0.0), NOISE_MARGIN * noise_floor)
    above = mag > level
    if not np.any(above):
        return None
    return int(np.argmax(above))


def estimate_range(cm, dt: float = 1.0 / 499.2e6, kappa: float = 0.1,
                   c: float = SPEED_OF_LIGHT, noise_floor: float = 0.0) -> float:
    """Leading-edge range: first threshold crossing, refined to the local peak."""
    mag = np.abs(_samples(cm))
    n0 = _leading_edge(mag, kappa, noise_floor)
    if n0 is None or mag[n0] <= 0:
        raise NoRangeError("no sample above detection level")
    n = _interpolate_peak(mag, _first_peak(mag, n0))
    return c * dt * n


def los_quality(cm, noise_floor: float, kappa: float = 0.1, window: int = 8) -> float:
    """First-path-to-clutter ratio.

    The first detected path is the local peak following the leading edge
    (first sample above ``kappa * max|r|`` and clear of receiver noise); its
    main lobe is that peak and its two neighbours.  Clutter is the RMS
    magnitude of the ``window`` samples after the main lobe, floored at
    ``noise_floor``.  A direct path stands well clear of what follows it,
    whereas the first arrival of a blocked link is just the start of a
    diffuse tail of similar strength.
    """
    mag = np.abs(_samples(cm))
    n0 = _leading_edge(mag, kappa, noise_floor)
    if n0 is None or mag[n0] <= 0:
        return 0.0
    n_first = _first_peak(mag, n0)
    lobe = mag[max(n_first - 1, 0):n_first + 2]
    post = mag[n_first + 3:n_first + 3 + window]
    clutter = np.sqrt(np.mean(post ** 2)) if post.size else 0.0
    return float(np.sqrt(np.mean(lobe ** 2)) / max(clutter, noise_floor))


def detect_los(cm, noise_floor: float = 0.001, threshold: float = 1.5, *,
               dt: float = 1.0 / 499.2e6, kappa: float = 0.1, window: int = 8,
               c: float = SPEED_OF_LIGHT) -> LosDecision:
    if noise_floor <= 0:
        raise ValueError("noise_floor must be positive")
    beta0 = los_quality(cm, noise_floor, kappa, window)
    flag = bool(beta0 > threshold)
    d_hat = estimate_range(cm, dt, kappa, c, noise_floor) if flag else None
    return LosDecision(beta0, flag, d_hat)


def detect_los_cfg(cm, config: "FeatureConfig") -> LosDecision:
    return detect_los(cm, config.noise_floor, config.los_threshold, dt=config.dt,
                      kappa=config.kappa, window=config.clutter_window, c=config.c)


def sdt(cm, q: float, dt: float = 1.0 / 499.2e6, kappa: float = 0.1) -> float:
    """Time after the MDI until the cumulative energy reaches fraction ``q``."""
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    p = np.abs(_samples(cm)) ** 2
    if p.sum() <= 0:
        raise FeatureError("signal decay time undefined for zero energy")
    n0 = mdi(cm, kappa)
    cum = np.cumsum(p[n0:])
    n = int(np.argmax(cum >= q * cum[-1]))
    return n * dt


def rmsds(cm, dt: float = 1.0 / 499.2e6) -> float:
    p = np.abs(_samples(cm)) ** 2
    total = p.sum()
    if total <= 0:
        raise FeatureError("delay spread undefined for zero energy")
    p = p / total
    t = np.arange(len(p)) * dt
    mean = t @ p
    return float(np.sqrt(max(((t - mean) ** 2) @ p, 0.0)))


def rkf(cm, half_width: int = 3) -> float:
    """Ricean K: strongest-path energy over the remaining energy, capped at ``K_MAX``."""
    p = np.abs(_samples(cm)) ** 2
    total = p.sum()
    if total <= 0:
        raise FeatureError("k-factor undefined for zero energy")
    n = int(np.argmax(p))
    strongest = p[max(n - half_width, 0):n + half_width + 1].sum()
    rest = total - strongest
    if rest <= strongest / K_MAX:
        return K_MAX
    return float(min(strongest / rest, K_MAX))


def _standardized_moment(cm, order: int) -> float:
    mag = np.abs(_samples(cm))
    sd = mag.std()
    if sd <= 0 or sd < 1e-12 * max(mag.max(), 1e-300):
        raise FeatureError("moment undefined for zero variance")
    return float(np.mean(((mag - mag.mean()) / sd) ** order))


def skewness(cm) -> float:
    return _standardized_moment(cm, 3)


def kurtosis(cm) -> float:
    """Non-excess kurtosis of the magnitude samples (3 for a Gaussian)."""
    return _standardized_moment(cm, 4)


@dataclass(frozen=True)
class PropagationFeatures:
    eng: float
    sdt50: float
    sdt75: float
    mdi: float
    rmsds: float
    rkf: float
    ske: float
    kur: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def propagation_features(cm, config: FeatureConfig = FeatureConfig()) -> PropagationFeatures:
    return PropagationFeatures(
        eng=energy(cm),
        sdt50=sdt(cm, 0.5, config.dt, config.kappa),
        sdt75=sdt(cm, 0.75, config.dt, config.kappa),
        mdi=float(mdi(cm, config.kappa)),
        rmsds=rmsds(cm, config.dt),
        rkf=rkf(cm, config.pulse_width),
        ske=skewness(cm),
        kur=kurtosis(cm),
    )


# --- scaling --------------------------------------------------------------

@dataclass(frozen=True)
class ScalerParams:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise FeatureError("scaler std must be positive")

    def apply(self, value):
        return (np.asarray(value, float) - self.mean) / self.std

    def invert(self, value):
        return np.asarray(value, float) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean, "std": self.std}


def fit_scaler(values) -> ScalerParams:
    v = np.asarray(values, float)
    if v.size < 2:
        raise FeatureError("need at least two values to fit a scaler")
    sd = float(v.std())
    if not sd > 1e-12 * max(float(np.abs(v).max()), 1.0):
        raise FeatureError("cannot scale a constant feature")
    return ScalerParams(float(v.mean()), sd)


def apply_scaler(params: ScalerParams, value):
    return params.apply(value)


@dataclass
class FeatureVector:
    values: np.ndarray
    feature_ids: tuple[str, ...]
    anchor_id: int

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        if len(self.values) != len(self.feature_ids):
            raise ValueError("values and feature_ids differ in length")


@dataclass
class ScalerSet:
    """Standard scalers keyed by ``(anchor_id, feature_id)``."""

    params: dict = field(default_factory=dict)

    def fit(self, anchor_id: int, feature_id: str, values) -> ScalerParams | None:
        try:
            p = fit_scaler(values)
        except FeatureError:
            warnings.warn(f"feature {feature_id!r} is constant for anchor {anchor_id}; dropped")
            return None
        self.params[(anchor_id, feature_id)] = p
        return p

    def __getitem__(self, key) -> ScalerParams:
        return self.params[key]

    def __contains__(self, key):
        return key in self.params

    def to_dict(self) -> dict:
        return {f"{j}/{f}": p.to_dict() for (j, f), p in sorted(self.params.items())}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerSet":
        out = cls()
        for key, p in d.items():
            j, f = key.split("/", 1)
            out.params[(int(j), f)] = ScalerParams(p["mean"], p["std"])
        return out

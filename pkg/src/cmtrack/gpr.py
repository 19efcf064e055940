"""Exact Gaussian-process regression of one scaled feature over 2-D position.

One :class:`GPModel` per (anchor, feature) pair turns a fingerprint set into
a Gaussian observation likelihood ``N(mu(x), sigma^2(x))``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .features import ScalerParams

logger = logging.getLogger(__name__)

KERNELS = ("RBF", "Matern32", "Matern52")
JITTER_FLOOR = 1e-8
MAX_JITTER = 1e-2
LOG_2PI = math.log(2 * math.pi)


class GPError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    family: str = "Matern52"
    length_scale: float = 1.0
    signal_variance: float = 1.0
    noise_variance: float = 0.1

    def __post_init__(self):
        if self.family not in KERNELS:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not (self.length_scale > 0 and self.signal_variance > 0):
            raise ValueError("length_scale and signal_variance must be positive")
        if self.noise_variance < JITTER_FLOOR:
            object.__setattr__(self, "noise_variance", JITTER_FLOOR)

    @property
    def log_params(self) -> np.ndarray:
        return np.log([self.length_scale, self.signal_variance, self.noise_variance])

    def with_log_params(self, theta) -> "KernelSpec":
        ell, sf2, sn2 = np.exp(theta)
        return replace(self, length_scale=float(ell), signal_variance=float(sf2),
                       noise_variance=float(max(sn2, JITTER_FLOOR)))

    @property
    def prior_variance(self) -> float:
        return self.signal_variance + self.noise_variance

    def to_dict(self):
        return {
            "family": self.family,
            "length_scale": self.length_scale,
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
        }


def pairwise_distance(x1, x2) -> np.ndarray:
    x1 = np.atleast_2d(np.asarray(x1, float))
    x2 = np.atleast_2d(np.asarray(x2, float))
    d = x1[:, None, :] - x2[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", d, d))


def _correlation(family: str, r: np.ndarray, ell: float) -> np.ndarray:
    if family == "Matern52":
        a = math.sqrt(5.0) * r / ell
        return (1.0 + a + a * a / 3.0) * np.exp(-a)
    if family == "Matern32":
        a = math.sqrt(3.0) * r / ell
        return (1.0 + a) * np.exp(-a)
    return np.exp(-0.5 * (r / ell) ** 2)


def _correlation_dlog_ell(family: str, r: np.ndarray, ell: float) -> np.ndarray:
    """Derivative of the unit-variance kernel with respect to ``log(ell)``."""
    if family == "Matern52":
        a = math.sqrt(5.0) * r / ell
        return a * a / 3.0 * (1.0 + a) * np.exp(-a)
    if family == "Matern32":
        a = math.sqrt(3.0) * r / ell
        return a * a * np.exp(-a)
    q = (r / ell) ** 2
    return q * np.exp(-0.5 * q)


def kernel_matrix(spec: KernelSpec, x1, x2) -> np.ndarray:
    return spec.signal_variance * _correlation(spec.family, pairwise_distance(x1, x2), spec.length_scale)


def kernel_eval(spec: KernelSpec, x1, x2) -> float:
    r = float(np.linalg.norm(np.asarray(x1, float) - np.asarray(x2, float)))
    return float(spec.signal_variance * _correlation(spec.family, np.array(r), spec.length_scale))


@dataclass
class FingerprintSet:
    positions: np.ndarray
    targets: np.ndarray
    anchor_id: int = 0
    feature_id: str = ""
    scaler: ScalerParams | None = None

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, float))
        self.targets = np.asarray(self.targets, float).ravel()
        if len(self.positions) != len(self.targets):
            raise ValueError("positions and targets differ in length")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")

    def __len__(self):
        return len(self.targets)

    def subset(self, idx) -> "FingerprintSet":
        return FingerprintSet(self.positions[idx], self.targets[idx], self.anchor_id,
                              self.feature_id, self.scaler)


def _cholesky(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor of ``K``, adding diagonal jitter (x10 steps up to 1e-2) on failure."""
    jitter = 0.0
    while True:
        try:
            Kj = K if jitter == 0.0 else K + jitter * np.eye(len(K))
            return np.linalg.cholesky(Kj), jitter
        except np.linalg.LinAlgError:
            jitter = JITTER_FLOOR if jitter == 0.0 else jitter * 10
            if jitter > MAX_JITTER:
                raise GPError("Gram matrix not positive definite even with maximal jitter")
            logger.debug("cholesky failed, retrying with jitter %.1e", jitter)


def log_marginal_likelihood(fps: FingerprintSet, spec: KernelSpec) -> tuple[float, np.ndarray]:
    """Log evidence and its gradient w.r.t. ``(log ell, log sf2, log sn2)``."""
    X, z = fps.positions, fps.targets
    n = len(z)
    R = pairwise_distance(X, X)
    C = _correlation(spec.family, R, spec.length_scale)
    K = spec.signal_variance * C + spec.noise_variance * np.eye(n)
    L, _ = _cholesky(K)
    alpha = cho_solve((L, True), z)
    value = -0.5 * z @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * LOG_2PI
    Kinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    dK_ell = spec.signal_variance * _correlation_dlog_ell(spec.family, R, spec.length_scale)
    grad = 0.5 * np.array([
        np.sum(W * dK_ell),
        np.sum(W * (spec.signal_variance * C)),
        spec.noise_variance * np.trace(W),
    ])
    return float(value), grad


@dataclass
class GPModel:
    kernel: KernelSpec
    positions: np.ndarray
    targets: np.ndarray
    scaler: ScalerParams | None = None
    anchor_id: int = 0
    feature_id: str = ""
    val_score: float = float("nan")
    diverged: bool = False
    jitter: float = field(init=False, default=0.0)
    chol: np.ndarray = field(init=False, repr=False)
    alpha: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, float))
        self.targets = np.asarray(self.targets, float).ravel()
        K = kernel_matrix(self.kernel, self.positions, self.positions)
        K[np.diag_indices_from(K)] += self.kernel.noise_variance
        self.chol, self.jitter = _cholesky(K)
        self.alpha = cho_solve((self.chol, True), self.targets)

    @property
    def noise_variance(self) -> float:
        return self.kernel.noise_variance + self.jitter

    def predict_many(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(np.asarray(x, float))
        Ks = kernel_matrix(self.kernel, x, self.positions)
        mu = Ks @ self.alpha
        v = solve_triangular(self.chol, Ks.T, lower=True, check_finite=False)
        var = self.kernel.signal_variance - np.einsum("ij,ij->j", v, v) + self.kernel.noise_variance
        var = np.clip(var, self.kernel.noise_variance, self.kernel.prior_variance)
        return mu, var

    def to_dict(self) -> dict:
        return {
            "anchor_id": self.anchor_id,
            "feature_id": self.feature_id,
            "kernel": self.kernel.to_dict(),
            "positions": self.positions.tolist(),
            "targets": self.targets.tolist(),
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
            "val_score": self.val_score,
            "diverged": self.diverged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GPModel":
        sc = d.get("scaler")
        return cls(
            KernelSpec(**d["kernel"]),
            np.asarray(d["positions"], float).reshape(-1, 2),
            np.asarray(d["targets"], float),
            None if sc is None else ScalerParams(sc["mean"], sc["std"]),
            int(d.get("anchor_id", 0)),
            d.get("feature_id", ""),
            float(d.get("val_score", float("nan"))),
            bool(d.get("diverged", False)),
        )


def predict(model: GPModel, x) -> tuple[float, float]:
    mu, var = model.predict_many(np.asarray(x, float).reshape(1, 2))
    return float(mu[0]), float(var[0])


def gaussian_log_density(z, mu, var):
    """``-(z - mu)^2 / (2 var) - log(sqrt(2 pi) sigma)``."""
    return -0.5 * (z - mu) ** 2 / var - 0.5 * np.log(var) - 0.5 * LOG_2PI


def log_likelihood(model: GPModel, x, z):
    """Observation log-likelihood of scaled feature value ``z`` at position(s) ``x``.

    A single position gives a float, an ``(M, 2)`` array gives ``M`` values.
    """
    x = np.asarray(x, float)
    mu, var = model.predict_many(x.reshape(-1, 2))
    ll = gaussian_log_density(z, mu, var)
    return float(ll[0]) if x.ndim == 1 else ll


def default_kernel(positions, family: str = "Matern52") -> KernelSpec:
    """Initial hyperparameters: ell at 10 % of the bounding-box diagonal, sf2 = 1, sn2 = 0.1."""
    p = np.atleast_2d(positions)
    diag = float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))
    return KernelSpec(family, max(0.1 * diag, 1e-3), 1.0, 0.1)


def fit(fps: FingerprintSet, iterations: int = 500, val_fraction: float = 0.1,
        family: str = "Matern52", seed=0, learning_rate: float = 0.05,
        clip: float = 1.0, init: KernelSpec | None = None,
        max_opt_points: int | None = None) -> GPModel:
    """Fit hyperparameters by clipped gradient ascent on the per-point log evidence.

    A random ``val_fraction`` of the fingerprints is held out; after every step
    the mean negative predictive log-likelihood on it is evaluated and the best
    hyperparameters seen are kept.  With ``max_opt_points`` the evidence is
    computed on a random subset of at most that many training points, which
    keeps each iteration cheap for large databases.  The returned model is
    conditioned on all fingerprints.
    """
    n = len(fps)
    if n < 10:
        raise ValueError("need at least 10 fingerprints to fit a GP")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n)))
    train_idx = perm[n_val:]
    if max_opt_points is not None and len(train_idx) > max_opt_points:
        train_idx = train_idx[:max_opt_points]
    train, val = fps.subset(np.sort(train_idx)), fps.subset(np.sort(perm[:n_val]))

    spec = init or default_kernel(train.positions, family)

    def score(s: KernelSpec) -> float:
        m = GPModel(s, train.positions, train.targets)
        mu, var = m.predict_many(val.positions)
        return float(-np.mean(gaussian_log_density(val.targets, mu, var)))

    theta = spec.log_params
    best_spec, best_score = spec, score(spec)
    diverged = False
    for it in range(iterations):
        try:
            _, g = log_marginal_likelihood(train, spec.with_log_params(theta))
        except GPError:
            diverged = True
            logger.warning("GP fit for %s/%s diverged at iteration %d", fps.anchor_id, fps.feature_id, it)
            break
        g = g / len(train)
        norm = np.linalg.norm(g)
        if not np.isfinite(norm):
            diverged = True
            break
        if norm > clip:
            g = g * (clip / norm)
        theta = theta + learning_rate * g
        theta[2] = max(theta[2], math.log(JITTER_FLOOR))
        try:
            s = score(spec.with_log_params(theta))
        except GPError:
            diverged = True
            break
        if s < best_score:
            best_spec, best_score = spec.with_log_params(theta), s
    return GPModel(best_spec, fps.positions, fps.targets, fps.scaler, fps.anchor_id,
                   fps.feature_id, best_score, diverged)


def grid_axes(bounds, resolution) -> tuple[np.ndarray, np.ndarray]:
    xmin, ymin, xmax, ymax = bounds
    if np.isscalar(resolution):
        resolution = (int(resolution), int(resolution))
    nx, ny = resolution
    return np.linspace(xmin, xmax, nx), np.linspace(ymin, ymax, ny)


def predict_grid(model: GPModel, bounds, resolution) -> np.ndarray:
    """Rows ``(x, y, mu, sigma)`` over a regular grid, row-major in y then x."""
    xs, ys = grid_axes(bounds, resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    mu, var = model.predict_many(pts)
    return np.column_stack([pts, mu, np.sqrt(var)])


@dataclass
class FieldCache:
    """Predictive mean and variance of a model tabulated on a lattice.

    ``predict_many`` interpolates bilinearly; queries outside ``bounds`` are
    clamped to the nearest lattice edge, so ``bounds`` should enclose the
    region particles can reach with some margin.  The cache stands in for the
    model when the same field is queried by many particles over many steps.
    """

    model: GPModel
    bounds: tuple[float, float, float, float]
    spacing: float = 0.1

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        xmin, ymin, xmax, ymax = self.bounds
        self.xs = np.linspace(xmin, xmax, int(math.ceil((xmax - xmin) / self.spacing)) + 1)
        self.ys = np.linspace(ymin, ymax, int(math.ceil((ymax - ymin) / self.spacing)) + 1)
        gx, gy = np.meshgrid(self.xs, self.ys, indexing="ij")
        mu, var = self.model.predict_many(np.column_stack([gx.ravel(), gy.ravel()]))
        self.mu = mu.reshape(gx.shape)
        self.var = var.reshape(gx.shape)

    def __getattr__(self, name):
        # anchor_id, feature_id, scaler, kernel ... come from the wrapped model
        if name == "model":
            raise AttributeError(name)
        return getattr(self.model, name)

    def predict_many(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(np.asarray(x, float))
        xmin, ymin = self.bounds[:2]
        fx = np.clip((x[:, 0] - xmin) / (self.xs[1] - self.xs[0]), 0, len(self.xs) - 1)
        fy = np.clip((x[:, 1] - ymin) / (self.ys[1] - self.ys[0]), 0, len(self.ys) - 1)
        i = np.minimum(fx.astype(int), len(self.xs) - 2)
        j = np.minimum(fy.astype(int), len(self.ys) - 2)
        tx, ty = fx - i, fy - j
        out = []
        for g in (self.mu, self.var):
            out.append((1 - tx) * (1 - ty) * g[i, j] + tx * (1 - ty) * g[i + 1, j]
                       + (1 - tx) * ty * g[i, j + 1] + tx * ty * g[i + 1, j + 1])
        return out[0], out[1]

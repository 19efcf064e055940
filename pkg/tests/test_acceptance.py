"""Acceptance criteria 1-10, each at its stated tolerance and time budget.

Every criterion prints one ``PASS``/``FAIL`` line (collected again in the
pytest terminal summary).  Run directly with ``python3 tests/test_acceptance.py``
to get the lines without pytest.
"""
from __future__ import annotations

import functools
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cmtrack import autoencoder as ae  # noqa: E402
from cmtrack import gpr  # noqa: E402
from cmtrack import harness as H  # noqa: E402
from cmtrack import tracker as T  # noqa: E402
from cmtrack.channel import PulseConfig, generate_dataset, trajectory_from_waypoints  # noqa: E402
from cmtrack.experiment import load_config, run_experiment  # noqa: E402
from oracles import gp_posterior_oracle, gram_oracle, kernel_oracle  # noqa: E402

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
RESULTS: list[str] = []


def report(n: int, ok: bool, detail: str, seconds: float, budget: float) -> bool:
    timely = seconds < budget
    line = (f"criterion {n:2d}: {'PASS' if ok and timely else 'FAIL'}  {detail}  "
            f"[{seconds:.1f} s of {budget:g} s]")
    RESULTS.append(line)
    print(line)
    return ok and timely


def timed(fn):
    @functools.wraps(fn)
    def run(*args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        return (*out, time.perf_counter() - t0)
    return run


# --- 1: kernel oracle ---------------------------------------------------------

@timed
def kernel_oracle_check():
    rng = np.random.default_rng(101)
    worst, min_eig = 0.0, math.inf
    for i in range(100):
        family = gpr.KERNELS[i % 3]
        ell, sf2 = rng.uniform(0.1, 5.0), rng.uniform(0.1, 4.0)
        x = rng.uniform(0, 10, (int(rng.integers(2, 30)), 2))
        K = gpr.kernel_matrix(gpr.KernelSpec(family, ell, sf2), x, x)
        worst = max(worst, np.abs(K - gram_oracle(family, ell, sf2, x, x)).max())
        min_eig = min(min_eig, np.linalg.eigvalsh(K).min())
    ok = worst <= 1e-12 and min_eig >= -1e-8
    return ok, f"max |k - oracle| {worst:.1e}, min eigenvalue {min_eig:.1e}"


# --- 2: GP exactness -------------------------------------------------------------

LATTICE = np.array([(i, j) for i in range(5) for j in range(4)], float)


@timed
def gp_exactness_check():
    rng = np.random.default_rng(202)
    worst = 0.0
    limits_ok = True
    for i in range(50):
        family = gpr.KERNELS[i % 3]
        ell, sf2, sn2 = rng.uniform(0.3, 3.0), rng.uniform(0.2, 3.0), rng.uniform(0.01, 0.5)
        x, z = rng.uniform(0, 5, (20, 2)), rng.standard_normal(20)
        xs = rng.uniform(-1, 6, (10, 2))
        m = gpr.GPModel(gpr.KernelSpec(family, ell, sf2, sn2), x, z)
        mu, var = m.predict_many(xs)
        mu_o, var_o = gp_posterior_oracle(family, ell, sf2, sn2, x, z, xs)
        worst = max(worst, np.abs(mu - mu_o).max(), np.abs(var - var_o).max())
        far_mu, far_var = gpr.predict(m, (5.0 + 10 * ell + 1.0, 2.5))
        limits_ok &= abs(far_mu) < 1e-3 and abs(far_var / (sf2 + sn2) - 1) < 0.01
        # interpolation: noise at the jitter floor reproduces the targets; points sit on a
        # jittered 1 m lattice so the noise-free Gram matrix stays well conditioned
        xi = LATTICE + rng.uniform(-0.2, 0.2, LATTICE.shape)
        mi = gpr.GPModel(gpr.KernelSpec(family, rng.uniform(0.3, 0.8), sf2, 0.0), xi, z)
        limits_ok &= np.abs(mi.predict_many(xi)[0] - z).max() < 1e-6
    ok = worst <= 1e-8 and limits_ok
    return ok, f"max deviation from direct inverse {worst:.1e}, limits {'hold' if limits_ok else 'violated'}"


# --- 3: marginal-likelihood gradient ------------------------------------------------

@timed
def lml_gradient_check():
    rng = np.random.default_rng(303)
    worst = 0.0
    for i in range(20):
        family = gpr.KERNELS[i % 3]
        fps = gpr.FingerprintSet(rng.uniform(0, 5, (20, 2)), rng.standard_normal(20))
        spec = gpr.KernelSpec(family, rng.uniform(0.5, 3.0), rng.uniform(0.3, 2.0), rng.uniform(0.02, 0.5))
        _, g = gpr.log_marginal_likelihood(fps, spec)
        theta, h = spec.log_params, 1e-5
        num = np.zeros(3)
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            num[k] = (gpr.log_marginal_likelihood(fps, spec.with_log_params(theta + e))[0]
                      - gpr.log_marginal_likelihood(fps, spec.with_log_params(theta - e))[0]) / (2 * h)
        worst = max(worst, np.linalg.norm(g - num) / np.linalg.norm(num))
    return worst < 1e-5, f"max relative gradient error {worst:.1e}"


# --- 4: autoencoder ---------------------------------------------------------------------

def ae_fixture(n=200):
    """Magnitudes from a small cluttered room; the first ``n`` vectors."""
    from cmtrack.channel import Environment
    env = Environment.room(6.0, 4.0, [(0.5, 0.5), (5.5, 0.5), (3.0, 3.5)],
                           obstacles=[(2.5, 1.5, 3.5, 2.0)])
    traj = trajectory_from_waypoints([(0.6, 0.6), (5.4, 0.6), (5.4, 3.4), (0.6, 3.4), (0.6, 1.2)],
                                     1.0, 0.2, smoothing=0.0)
    return H.magnitudes(generate_dataset(env, traj, PulseConfig(), rng_seed=21))[:n]


@timed
def autoencoder_check():
    rng = np.random.default_rng(404)
    worst, checked = 0.0, 0
    while checked < 20:
        m = ae.init(ae.AeConfig(input_dim=16, hidden_dims=(12, 8), latent_dim=4,
                                rng_seed=int(rng.integers(1 << 30))))
        for b in m.biases:
            b[:] = rng.normal(0, 0.1, b.shape)
        x = rng.uniform(0.05, 1.0, (4, 16))
        pres, _ = ae._forward(m, ae.prepare(m, x))
        if any(np.abs(z).min() < 1e-4 for z in pres[:-1]):
            continue  # too close to a rectifier kink for a clean difference quotient
        checked += 1
        _, gw, gb = ae.loss_and_gradients(m, x)
        for arr, g in zip(m.weights + m.biases, gw + gb):
            for _ in range(4):
                idx = tuple(int(rng.integers(0, s)) for s in arr.shape)
                old = arr[idx]
                arr[idx] = old + 1e-6
                up = ae.loss_and_gradients(m, x)[0]
                arr[idx] = old - 1e-6
                down = ae.loss_and_gradients(m, x)[0]
                arr[idx] = old
                num = (up - down) / 2e-6
                worst = max(worst, abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-6))
    data = ae_fixture()
    cfg = ae.AeConfig(epochs=50)
    model = ae.train(ae.init(cfg), data, cfg)
    hist = np.array(model.history)
    ratio = hist[:, 2].min() / hist[0, 2]
    ok = worst < 1e-4 and ratio < 0.5 and len(data) == 200
    return ok, f"max relative gradient error {worst:.1e}, best/initial validation loss {ratio:.3f}"


# --- 5: resampling ----------------------------------------------------------------------

@timed
def resampling_check():
    rng = np.random.default_rng(505)
    w = T.normalize(np.log(rng.uniform(0.05, 1.0, 10)))
    counts = np.zeros(10)
    for _ in range(10_000):
        counts += np.bincount(T.systematic_indices(w, rng), minlength=10)
    tv = 0.5 * np.abs(counts / counts.sum() - np.exp(w)).sum()
    return tv < 0.01, f"total variation {tv:.2e}"


# --- 6-8, 10: tracking experiments ------------------------------------------------------

@functools.lru_cache(maxsize=None)
def experiment(name: str, out: str):
    cfg = load_config(CONFIGS / f"{name}.json")
    t0 = time.perf_counter()
    res = run_experiment(cfg, Path(out))
    return res, time.perf_counter() - t0


def maes(res, mode):
    return np.array([s.mae for s in res.stats[mode]])


@timed
def los_tracking_check(workdir):
    res, _ = experiment("open_room_emi", str(workdir / "open_room"))
    cfg = load_config(CONFIGS / "open_room_emi.json")
    setup = (cfg.tracker.particle_count == 2000 and cfg.tracker.range_noise_std == 0.15
             and cfg.repeats == 20 and len(cfg.scene()[0].anchors) == 3 and not cfg.scene()[0].obstacles)
    mae = maes(res, "EMI").mean()
    return setup and mae < 0.45, f"EMI MAE {mae:.3f} m over {len(maes(res, 'EMI'))} runs (limit 0.45 m)"


def blocked_share(res_dir: Path) -> float:
    from cmtrack import store
    meta = store.read_json(res_dir / "test.json")
    los = np.array(meta["los"], bool)
    return float(np.mean((~los).sum(axis=1) >= 2))


@timed
def fusion_vs_emi_check(workdir):
    res, _ = experiment("shelf_hall_full", str(workdir / "full"))
    share = blocked_share(res.output_dir)
    e, f = maes(res, "EMI"), maes(res, "FUSION")
    wins = int((f < e).sum())
    ratio = f.mean() / e.mean()
    ok = share >= 0.25 and wins >= 18 and len(e) == 20 and ratio < 0.8
    return ok, (f"{share:.0%} of steps have >=2 anchors blocked; FUSION beats EMI in {wins}/20 runs; "
                f"mean MAE FUSION {f.mean():.3f} m vs EMI {e.mean():.3f} m (ratio {ratio:.3f})")


@timed
def sparse_grace_check(workdir):
    full, _ = experiment("shelf_hall_full", str(workdir / "full"))
    sparse, _ = experiment("shelf_hall_sparse", str(workdir / "sparse"))
    e, f, s = maes(full, "EMI"), maes(full, "FUSION"), maes(sparse, "FUSION")
    ok = s.mean() <= 1.5 * f.mean() and s.mean() < e.mean()
    return ok, (f"FUSION sparse {s.mean():.3f} m ({sparse.db_size} fingerprints) vs full {f.mean():.3f} m "
                f"({full.db_size}): ratio {s.mean() / f.mean():.3f} (limit 1.5); EMI {e.mean():.3f} m")


@timed
def determinism_check(workdir):
    first, _ = experiment("shelf_hall_full", str(workdir / "full"))
    cfg = load_config(CONFIGS / "shelf_hall_full.json")
    second = run_experiment(cfg, workdir / "full_again")
    same = all((first.output_dir / n).read_bytes() == (second.output_dir / n).read_bytes()
               for n in ("stats.csv", "aggregate_stats.csv"))
    return same, f"stats files {'byte-identical' if same else 'differ'} across two invocations"


# --- 9: sparse-data variance ---------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def fixture_tables():
    cfg = load_config(CONFIGS / "shelf_hall_full.json")
    env, _ = cfg.scene()
    traj = cfg.survey.build(env)
    return env, H.extract(generate_dataset(env, traj, cfg.pulse, cfg.survey.seed, cfg.propagation))


@timed
def sparse_variance_check():
    env, table = fixture_tables()
    full = H.build_fingerprint_db(table, env, ["mdi"], "full")
    sparse = H.build_fingerprint_db(table, env, ["mdi"], "sparse", 1.5)
    m_full = gpr.fit(full.sets[(0, "mdi")], iterations=100, max_opt_points=300)
    fs = sparse.sets[(0, "mdi")]
    # same hyperparameters, fewer fingerprints
    m_sparse = gpr.GPModel(m_full.kernel, fs.positions, fs.targets)
    sig_full = gpr.predict_grid(m_full, env.bounds, 40)[:, 3].max()
    sig_sparse = gpr.predict_grid(m_sparse, env.bounds, 40)[:, 3].max()
    # particles far outside the sparse coverage: at least 10 length scales from any fingerprint
    ell = m_full.kernel.length_scale
    rng = np.random.default_rng(909)
    pts = rng.uniform(-60, 80, (20000, 2))
    d = gpr.pairwise_distance(pts, fs.positions).min(axis=1)
    far = pts[d >= 10 * ell][:2000]
    p = T.ParticleSet(far, np.zeros_like(far), np.zeros(len(far)))
    w = T.weight_feature(p, float(fs.targets[0]), m_sparse)
    spread = float(w.max() - w.min())
    ok = sig_sparse > sig_full and spread < 0.01 and len(far) >= 100
    return ok, (f"max grid sigma sparse {sig_sparse:.3f} > full {sig_full:.3f}; "
                f"far-field weight spread {spread:.1e} nats over {len(far)} particles")


# --- pytest entry points -----------------------------------------------------------------

@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def test_criterion_01_kernel_oracle():
    assert report(1, *kernel_oracle_check(), budget=1)


def test_criterion_02_gp_exactness():
    assert report(2, *gp_exactness_check(), budget=10)


def test_criterion_03_lml_gradient():
    assert report(3, *lml_gradient_check(), budget=10)


def test_criterion_04_autoencoder():
    assert report(4, *autoencoder_check(), budget=60)


def test_criterion_05_resampling():
    assert report(5, *resampling_check(), budget=10)


@pytest.mark.slow
def test_criterion_06_los_tracking(workdir):
    assert report(6, *los_tracking_check(workdir), budget=120)


@pytest.mark.slow
def test_criterion_07_fusion_beats_emi(workdir):
    assert report(7, *fusion_vs_emi_check(workdir), budget=600)


@pytest.mark.slow
def test_criterion_08_sparse_grace(workdir):
    assert report(8, *sparse_grace_check(workdir), budget=600)


def test_criterion_09_sparse_variance():
    assert report(9, *sparse_variance_check(), budget=30)


@pytest.mark.slow
def test_criterion_10_determinism(workdir):
    assert report(10, *determinism_check(workdir), budget=600)


if __name__ == "__main__":
    import tempfile
    tmp = Path(tempfile.mkdtemp(prefix="acceptance_"))
    checks = [
        (1, kernel_oracle_check, (), 1), (2, gp_exactness_check, (), 10),
        (3, lml_gradient_check, (), 10), (4, autoencoder_check, (), 60),
        (5, resampling_check, (), 10), (6, los_tracking_check, (tmp,), 120),
        (7, fusion_vs_emi_check, (tmp,), 600), (8, sparse_grace_check, (tmp,), 600),
        (9, sparse_variance_check, (), 30), (10, determinism_check, (tmp,), 600),
    ]
    results = [report(n, *fn(*args), budget=b) for n, fn, args, b in checks]
    sys.exit(0 if all(results) else 1)

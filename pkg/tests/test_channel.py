import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cmtrack.channel import (ChannelRealization, DomainError, Environment, PropagationConfig,
                             PulseConfig, generate_dataset, generate_trajectory, mirror_point,
                             propagate, reflection_point, render, segment_hits_rect,
                             trajectory_from_waypoints)

C3 = PropagationConfig(c=3e8)


def free_space(anchor=(0.0, 0.0), size=20.0):
    return Environment((-size, -size, size, size), [anchor])


def single_tap(tau, amp=1.0):
    return ChannelRealization(True, np.array([tau]), np.array([amp], complex), tau, 0.0, 15e-9)


def test_free_space_delay():
    real = propagate(free_space(), (3.0, 0.0), 0, C3, np.random.default_rng(0))
    assert real.los_present
    assert real.delays[0] == pytest.approx(10e-9, rel=1e-12)


def test_obstacle_on_segment_blocks():
    env = Environment((-5, -5, 5, 5), [(0.0, 0.0)], obstacles=[(1.0, -0.2, 2.0, 0.2)])
    real = propagate(env, (3.0, 0.0), 0, C3, np.random.default_rng(0))
    assert not real.los_present
    assert len(real.delays) == 0


def test_reflection_delay_matches_image_point():
    wall = ((-10.0, 2.0), (10.0, 2.0))
    env = Environment((-10, -10, 10, 10), [(-1.0, 0.5)], walls=[wall])
    agent = np.array([3.0, -1.0])
    real = propagate(env, agent, 0, C3, np.random.default_rng(0))
    image = mirror_point(agent, wall)
    np.testing.assert_allclose(image, [3.0, 5.0])
    expected = np.linalg.norm(image - np.array([-1.0, 0.5])) / 3e8
    assert len(real.delays) == 2
    assert real.delays[1] == pytest.approx(expected, rel=1e-12)
    # the specular point is where the image ray crosses the wall
    q = reflection_point((-1.0, 0.5), agent, wall)
    assert q[1] == pytest.approx(2.0)


def test_reflection_needs_same_side():
    wall = ((0.0, 0.0), (10.0, 0.0))
    assert reflection_point((1.0, 1.0), (2.0, -1.0), wall) is None
    assert reflection_point((1.0, 1.0), (50.0, 1.0), wall) is None


def test_segment_rect_cases():
    r = (0.0, 0.0, 1.0, 1.0)
    assert segment_hits_rect((-1, 0.5), (2, 0.5), r)
    assert segment_hits_rect((0.5, 0.5), (0.6, 0.6), r)
    assert not segment_hits_rect((-1, 2), (2, 2), r)
    assert not segment_hits_rect((-1, -1), (-0.5, 3), r)


def test_render_zero():
    real = ChannelRealization(True, np.array([]), np.array([], complex), 0.0, 0.0, 15e-9)
    r = render(real, PulseConfig(noise_std=0.0), 0).samples
    assert r.shape == (128,)
    assert not np.any(r)


def test_render_single_tap_unit_energy():
    pulse = PulseConfig(noise_std=0.0)
    r = render(single_tap(20 * pulse.dt), pulse, 0).samples
    assert np.sum(np.abs(r) ** 2) == pytest.approx(1.0, abs=1e-9)


def test_render_noise_energy_monte_carlo():
    pulse = PulseConfig(noise_std=0.1)
    real = single_tap(20 * pulse.dt)
    clean = render(real, PulseConfig(noise_std=0.0), 0).samples
    e = [np.sum(np.abs(render(real, pulse, s).samples - clean) ** 2) for s in range(1000)]
    assert np.mean(e) == pytest.approx(pulse.length * 0.1 ** 2, rel=0.05)


def test_fractional_delay_keeps_energy():
    pulse = PulseConfig(noise_std=0.0)
    for frac in (0.0, 0.25, 0.5, 0.8):
        r = render(single_tap((30 + frac) * pulse.dt), pulse, 0).samples
        assert np.sum(np.abs(r) ** 2) == pytest.approx(1.0, abs=1e-9)


def test_tap_beyond_window_dropped():
    pulse = PulseConfig(noise_std=0.0)
    r = render(single_tap(200 * pulse.dt), pulse, 0).samples
    assert not np.any(r)


def test_diffuse_only_after_onset():
    pulse = PulseConfig(noise_std=0.0)
    real = ChannelRealization(False, np.array([]), np.array([], complex), 40 * pulse.dt,
                              1e-2, 15e-9, 20e-9)
    r = render(real, pulse, 3).samples
    assert not np.any(r[:40])
    assert np.any(r[41:])


def test_agent_outside_bounds():
    with pytest.raises(DomainError):
        propagate(free_space(size=2.0), (5.0, 0.0), 0)
    with pytest.raises(DomainError):
        propagate(free_space(), (1.0, 0.0), 3)


def test_pulse_config_validation():
    with pytest.raises(DomainError):
        PulseConfig(length=8)
    with pytest.raises(DomainError):
        PulseConfig(noise_std=-1.0)


def test_trajectory_count_and_speed():
    env = Environment.room(10.0, 10.0, [(0.5, 0.5)])
    traj = generate_trajectory(env, 1.0, 10.0, 0.1, rng_seed=5)
    assert len(traj) == 101
    steps = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1)
    assert steps.max() <= 1.05 * 0.1 * 1.0
    again = generate_trajectory(env, 1.0, 10.0, 0.1, rng_seed=5)
    np.testing.assert_array_equal(traj.positions, again.positions)
    assert all(env.contains(p) for p in traj.positions)


def test_waypoint_trajectory_follows_corners():
    traj = trajectory_from_waypoints([(0, 0), (4, 0), (4, 3)], 1.0, 0.5, smoothing=0.0)
    np.testing.assert_allclose(traj.positions[0], [0, 0])
    np.testing.assert_allclose(traj.positions[-1], [4, 3], atol=1e-9)
    assert len(traj) == 15


def test_dataset_counts(box_env):
    traj = generate_trajectory(box_env, 1.0, 9.9, 0.1, rng_seed=1)
    data = generate_dataset(box_env, traj, PulseConfig(), rng_seed=2)
    assert len(data) == 100
    cms = [cm for s in data for cm in s.measurements]
    assert len(cms) == 300
    assert all(len(cm) == 128 for cm in cms)


def test_open_area_all_los():
    env = Environment.room(6.0, 4.0, [(0.5, 0.5), (5.5, 0.5), (3.0, 3.5)])
    traj = generate_trajectory(env, 1.0, 5.0, 0.5, rng_seed=3)
    data = generate_dataset(env, traj, PulseConfig(), rng_seed=4)
    assert all(all(s.los) for s in data)


def test_dataset_seeded(box_env):
    traj = generate_trajectory(box_env, 1.0, 2.0, 0.5, rng_seed=1)
    a = generate_dataset(box_env, traj, PulseConfig(), rng_seed=9)
    b = generate_dataset(box_env, traj, PulseConfig(), rng_seed=9)
    for sa, sb in zip(a, b):
        for ca, cb in zip(sa.measurements, sb.measurements):
            assert np.array_equal(ca.samples, cb.samples)


def test_environment_round_trip(box_env):
    assert Environment.from_dict(box_env.to_dict()) == box_env


coord = st.floats(0.2, 5.8)
ycoord = st.floats(0.2, 3.8)


@given(coord, ycoord, coord, ycoord)
def test_los_reciprocity(ax, ay, bx, by):
    obstacles = [(2.5, 1.5, 3.5, 2.0)]
    e1 = Environment.room(6.0, 4.0, [(bx, by)], obstacles=obstacles)
    e2 = Environment.room(6.0, 4.0, [(ax, ay)], obstacles=obstacles)
    r1 = propagate(e1, (ax, ay), 0, rng=np.random.default_rng(0))
    r2 = propagate(e2, (bx, by), 0, rng=np.random.default_rng(0))
    assert r1.los_present == r2.los_present
    assert r1.diffuse_onset == pytest.approx(r2.diffuse_onset, rel=1e-12, abs=1e-18)
    if len(r1.delays):
        assert r1.delays[0] == pytest.approx(r2.delays[0], rel=1e-12)


@given(st.floats(0.0, 2 * np.pi), st.floats(0.5, 8.0), st.floats(0.01, 5.0))
def test_delay_grows_radially(angle, d, extra):
    u = np.array([np.cos(angle), np.sin(angle)])
    env = free_space()
    t1 = propagate(env, d * u, 0, rng=np.random.default_rng(0)).delays[0]
    t2 = propagate(env, (d + extra) * u, 0, rng=np.random.default_rng(0)).delays[0]
    assert t2 > t1


@given(st.floats(5.0, 60.0), st.floats(0.1, 3.0), st.floats(0.0, 2 * np.pi))
def test_energy_scales_with_square(tau_samples, amp, phase):
    pulse = PulseConfig(noise_std=0.0)
    a = amp * np.exp(1j * phase)
    e1 = np.sum(np.abs(render(single_tap(tau_samples * pulse.dt, a), pulse, 0).samples) ** 2)
    e2 = np.sum(np.abs(render(single_tap(tau_samples * pulse.dt, 2 * a), pulse, 0).samples) ** 2)
    assert e2 == pytest.approx(4 * e1, rel=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_render_bit_identical(seed):
    pulse = PulseConfig()
    real = ChannelRealization(True, np.array([30 * pulse.dt]), np.array([0.3 + 0.1j]),
                              30 * pulse.dt, 1e-3, 15e-9)
    assert np.array_equal(render(real, pulse, seed).samples, render(real, pulse, seed).samples)

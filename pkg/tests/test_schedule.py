"""Noise schedule: kernel statistics, closed-form agreement, sampler steps."""

import numpy as np
import pytest

from egowm.worldmodel import (
    NoiseSchedule,
    ScheduleError,
    ancestral_step,
    forward_noising,
    noising_step,
)

N_SAMPLES = 10_000


def test_schedule_tables():
    sched = NoiseSchedule.linear(1000, 1e-4, 2e-2)
    assert sched.steps == 1000
    assert sched.beta(1) == pytest.approx(1e-4)
    assert sched.beta(1000) == pytest.approx(2e-2)
    abars = sched.alpha_bars
    assert (np.diff(abars) < 0).all()  # strictly decreasing
    assert ((abars > 0) & (abars <= 1)).all()
    assert sched.alpha_bar(0) == 1.0
    with pytest.raises(ScheduleError):
        sched.beta(0)
    with pytest.raises(ScheduleError):
        sched.beta(1001)
    with pytest.raises(ScheduleError):
        NoiseSchedule(np.array([0.0, 0.5]))


def test_noising_step_zero_beta_limit():
    # beta -> 0 keeps the latent (use the smallest representable step)
    sched = NoiseSchedule(np.array([1e-12]))
    z = np.random.default_rng(0).standard_normal(16)
    out = noising_step(z, 1, sched, np.random.default_rng(1))
    np.testing.assert_allclose(out, z, atol=1e-5)


def test_noising_step_moments_match_kernel():
    sched = NoiseSchedule.linear(50, 1e-3, 0.25)
    rng = np.random.default_rng(2)
    z = np.full(4, 1.7)
    t = 30
    samples = np.stack([noising_step(z, t, sched, rng) for _ in range(N_SAMPLES)])
    beta = sched.beta(t)
    want_mean = np.sqrt(1 - beta) * z
    se_mean = np.sqrt(beta / N_SAMPLES)
    assert np.abs(samples.mean(axis=0) - want_mean).max() < 4 * se_mean
    var = samples.var(axis=0)
    se_var = beta * np.sqrt(2.0 / (N_SAMPLES - 1))
    assert np.abs(var - beta).max() < 4 * se_var


def test_stepwise_composition_matches_closed_form():
    """Iterating the kernel t times agrees with the accumulated mixture."""
    sched = NoiseSchedule.linear(40, 5e-3, 0.15)
    rng = np.random.default_rng(3)
    z0 = np.array([0.9, -1.4, 2.1])
    t = 25
    finals = np.empty((N_SAMPLES, z0.size))
    for s in range(N_SAMPLES):
        z = z0
        for step in range(1, t + 1):
            z = noising_step(z, step, sched, rng)
        finals[s] = z
    abar = sched.alpha_bar(t)
    want_mean = np.sqrt(abar) * z0
    want_var = 1.0 - abar
    se_mean = np.sqrt(want_var / N_SAMPLES)
    assert np.abs(finals.mean(axis=0) - want_mean).max() < 4 * se_mean
    se_var = want_var * np.sqrt(2.0 / (N_SAMPLES - 1))
    assert np.abs(finals.var(axis=0) - want_var).max() < 4 * se_var


def test_forward_noising_endpoints_and_energy():
    sched = NoiseSchedule.linear(100, 1e-4, 0.9999 / 1.0)
    rng = np.random.default_rng(4)
    z0 = rng.standard_normal(64)
    eps = rng.standard_normal(64)
    # abar == 1 at t=0 keeps z0 exactly
    np.testing.assert_array_equal(forward_noising(z0, 0, eps, sched), z0)
    # abar -> 0 at the last step of an aggressive schedule approaches eps
    deep = forward_noising(z0, 100, eps, sched)
    assert np.abs(deep - eps).max() < 0.05

    # squared-norm statistics: E||z_t||^2 = abar ||z0||^2 + (1 - abar) dim
    t = 60
    abar = sched.alpha_bar(t)
    rng_mc = np.random.default_rng(5)
    norms = np.array(
        [
            (forward_noising(z0, t, rng_mc.standard_normal(64), sched) ** 2).sum()
            for _ in range(N_SAMPLES)
        ]
    )
    want = abar * (z0**2).sum() + (1 - abar) * 64
    se = norms.std(ddof=1) / np.sqrt(N_SAMPLES)
    assert abs(norms.mean() - want) < 4 * se


def test_forward_noising_shape_check():
    sched = NoiseSchedule.linear(10)
    with pytest.raises(ScheduleError):
        forward_noising(np.zeros(3), 1, np.zeros(4), sched)


def test_sampling_timesteps_respacing():
    sched = NoiseSchedule.linear(1000)
    ts = sched.sampling_timesteps(50)
    assert len(ts) == 50
    assert ts[0] == 1000 and ts[-1] == 1
    assert all(a > b for a, b in zip(ts, ts[1:]))
    assert sched.sampling_timesteps(0) == []
    assert sched.sampling_timesteps(2000) == list(range(1000, 0, -1))


def test_ancestral_step_terminal_is_deterministic_mean():
    sched = NoiseSchedule.linear(100)
    rng = np.random.default_rng(6)
    z = rng.standard_normal(8)
    eps_hat = rng.standard_normal(8)
    a = ancestral_step(z, eps_hat, 1, 0, sched, np.random.default_rng(0))
    b = ancestral_step(z, eps_hat, 1, 0, sched, np.random.default_rng(99))
    np.testing.assert_array_equal(a, b)  # no noise is injected at t_prev = 0
    abar = sched.alpha_bar(1)
    z0_hat = (z - np.sqrt(1 - abar) * eps_hat) / np.sqrt(abar)
    np.testing.assert_allclose(a, z0_hat, rtol=1e-12)


def test_ancestral_chain_recovers_clean_latent_with_oracle_denoiser():
    """With the exact noise as the prediction, sampling returns z0."""
    sched = NoiseSchedule.linear(200)
    rng = np.random.default_rng(7)
    z0 = rng.standard_normal(12)
    eps = rng.standard_normal(12)
    t_seq = sched.sampling_timesteps(25)
    z = forward_noising(z0, t_seq[0], eps, sched)
    for i, t in enumerate(t_seq):
        t_prev = t_seq[i + 1] if i + 1 < len(t_seq) else 0
        abar = sched.alpha_bar(t)
        true_eps = (z - np.sqrt(abar) * z0) / np.sqrt(1 - abar)
        z = ancestral_step(z, true_eps, t, t_prev, sched, rng)
    np.testing.assert_allclose(z, z0, atol=1e-8)


def test_ancestral_step_rejects_bad_pairs():
    sched = NoiseSchedule.linear(10)
    z = np.zeros(3)
    with pytest.raises(ScheduleError):
        ancestral_step(z, z, 5, 5, sched, np.random.default_rng(0))
    with pytest.raises(ScheduleError):
        ancestral_step(z, z, 3, 7, sched, np.random.default_rng(0))

"""Forward diffusion schedule and the ancestral sampling step.

Linear variance schedule by default. Timesteps are 1-based: step t draws
z_t from z_{t-1}; the accumulated attenuation for t=0 is defined as 1 so
z_0 is the clean latent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray  # (T,) in (0, 1)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ScheduleError("betas must be a non-empty vector")
        if (betas <= 0).any() or (betas >= 1).any():
            raise ScheduleError("betas must lie strictly inside (0, 1)")
        object.__setattr__(self, "betas", betas)
        alphas = 1.0 - betas
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", np.cumprod(alphas))

    @staticmethod
    def linear(steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> "NoiseSchedule":
        return NoiseSchedule(np.linspace(beta_start, beta_end, steps))

    @property
    def steps(self) -> int:
        return self.betas.size

    def beta(self, t: int) -> float:
        self._check(t)
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check(t)
        return float(self.alpha_bars[t - 1])

    def _check(self, t: int) -> None:
        if not 1 <= t <= self.steps:
            raise ScheduleError(f"timestep {t} outside [1, {self.steps}]")

    def sampling_timesteps(self, count: int) -> list[int]:
        """Descending sub-sequence of timesteps for respaced ancestral sampling."""
        if count < 0:
            raise ScheduleError("sampling step count must be non-negative")
        if count == 0:
            return []
        count = min(count, self.steps)
        picks = np.linspace(1, self.steps, count)
        ts = sorted({int(round(p)) for p in picks}, reverse=True)
        return ts


def noising_step(z_prev: np.ndarray, t: int, schedule: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """One forward kernel draw: N(sqrt(1-beta_t) z_{t-1}, beta_t I)."""
    beta = schedule.beta(t)
    return np.sqrt(1.0 - beta) * z_prev + np.sqrt(beta) * rng.standard_normal(z_prev.shape)


def forward_noising(z0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form mixture sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    if eps.shape != z0.shape:
        raise ScheduleError(f"noise shape {eps.shape} does not match latent {z0.shape}")
    abar = schedule.alpha_bar(t)
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps


def ancestral_step(
    z_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    clip_clean: float | None = 4.0,
) -> np.ndarray:
    """Ancestral update from timestep t down to t_prev (t_prev < t).

    For consecutive timesteps this is the standard posterior sampling step;
    for a respaced sub-sequence it jumps through the same family using the
    accumulated attenuations of the two endpoints. The implied clean-latent
    estimate is clamped to ``clip_clean`` (latents are calibrated to unit
    scale), which keeps early high-noise steps from exploding the chain.
    """
    if not 0 <= t_prev < t:
        raise ScheduleError(f"invalid step pair t={t}, t_prev={t_prev}")
    abar_t = schedule.alpha_bar(t)
    abar_p = schedule.alpha_bar(t_prev)
    z0_hat = (z_t - np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(abar_t)
    if clip_clean is not None:
        z0_hat = np.clip(z0_hat, -clip_clean, clip_clean)
        eps_hat = (z_t - np.sqrt(abar_t) * z0_hat) / np.sqrt(1.0 - abar_t)
    var = (1.0 - abar_p) / (1.0 - abar_t) * (1.0 - abar_t / abar_p)
    var = max(float(var), 0.0)
    mean = np.sqrt(abar_p) * z0_hat + np.sqrt(max(1.0 - abar_p - var, 0.0)) * eps_hat
    if t_prev == 0 or var == 0.0:
        return mean
    return mean + np.sqrt(var) * rng.standard_normal(z_t.shape)

"""Action-conditioned rollout: joint denoising of the whole clip latent.

The full-horizon latent is denoised over a respaced ancestral schedule,
conditioned on the three embedding streams and the first-frame anchor, then
decoded into frames. Deterministic for a fixed seed.
"""

from __future__ import annotations

import numpy as np

from ..tensor import Tensor, no_grad
from .conditioning import ActionScript, build_conditioning
from .dit import WorldModel
from .schedule import NoiseSchedule, ancestral_step


class RolloutError(ValueError):
    pass


def sample_rollout(
    model: WorldModel,
    first_frame: np.ndarray,
    actions: ActionScript,
    first_mask: np.ndarray,
    steps: int,
    rng: np.random.Generator,
    schedule: NoiseSchedule | None = None,
) -> np.ndarray:
    """Predict (L, 3, S, S) frames from the first frame and an action script."""
    profile = model.cfg.profile
    if actions.frames != profile.frames:
        raise RolloutError(
            f"action horizon {actions.frames} does not match model horizon {profile.frames}"
        )
    if schedule is None:
        schedule = NoiseSchedule.linear()
    with no_grad():
        cond = build_conditioning(model, first_frame, actions, first_mask)
        lat_shape = (profile.latent_channels,) + profile.latent_grid()
        z = rng.standard_normal(lat_shape).astype(np.float32)
        timesteps = schedule.sampling_timesteps(steps)
        for i, t in enumerate(timesteps):
            t_prev = timesteps[i + 1] if i + 1 < len(timesteps) else 0
            eps_hat = model.denoise_predict(Tensor(z), t, cond).data
            z = ancestral_step(z, eps_hat, t, t_prev, schedule, rng).astype(np.float32)
        frames = model.codec.decode_frames(Tensor(z))
    if frames.shape[0] != profile.frames:
        raise RolloutError(
            f"decoded {frames.shape[0]} frames for a horizon of {profile.frames}"
        )
    return frames

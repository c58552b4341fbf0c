"""Two-stage training: codec reconstruction pretraining, then denoising.

The codec trains first on plain reconstruction and is frozen afterwards;
the denoiser stage samples a handful of diffusion timesteps per step so one
encoder forward backs several noise-prediction losses. Per-step randomness
is derived from (seed, step) so an interrupted run resumes bit-for-bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..synth import Clip, clip_window, window_starts
from ..tensor import Parameter, Tensor, write_tns, read_tns
from .codec import LatentCodec
from .conditioning import conditioning_from_clip
from .dit import ModelConfig, WorldModel
from .schedule import NoiseSchedule, forward_noising


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainParams:
    seed: int = 0
    codec_steps: int = 350
    codec_lr: float = 3e-3
    train_steps: int = 600
    lr: float = 1e-5  # config default; overfit runs raise it explicitly
    timesteps_per_step: int = 4
    schedule_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    # low timesteps dominate final sample quality; draw extra there
    low_t_fraction: float = 0.5
    low_t_max: int = 250
    # learning rates drop for the tail of each stage
    lr_decay_at: float = 0.7
    lr_decay_factor: float = 0.25

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule.linear(self.schedule_steps, self.beta_start, self.beta_end)

    def draw_timestep(self, rng: np.random.Generator) -> int:
        if rng.random() < self.low_t_fraction:
            return int(rng.integers(1, min(self.low_t_max, self.schedule_steps) + 1))
        return int(rng.integers(1, self.schedule_steps + 1))


class Adam:
    """Standard Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Parameter], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for key, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * g * g
            update = (self.m[key] / b1c) / (np.sqrt(self.v[key] / b2c) + self.eps)
            p.data -= (self.lr * update).astype(p.data.dtype)

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def _step_rng(seed: int, stage: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stage, step]))


def _fit_clips(clips: list[Clip], frames: int) -> list[Clip]:
    """Clips longer than the model horizon are cut into stride-5 windows."""
    out = []
    for clip in clips:
        if clip.frames == frames:
            out.append(clip)
        elif clip.frames > frames:
            out.extend(clip_window(clip, s, frames) for s in window_starts(clip.frames, frames))
        else:
            raise TrainingError(f"clip of {clip.frames} frames is shorter than the model horizon {frames}")
    return out


@dataclass
class TrainState:
    model: WorldModel
    params: TrainParams
    codec_step: int = 0
    denoise_step: int = 0
    codec_losses: list[tuple[int, float]] = field(default_factory=list)
    denoise_losses: list[tuple[int, float]] = field(default_factory=list)
    codec_optimizer: Adam | None = None
    denoise_optimizer: Adam | None = None


def pretrain_codec(state: TrainState, clips: list[Clip], log=None) -> None:
    """Stage A: reconstruction loss until the configured step count."""
    model, tp = state.model, state.params
    clips = _fit_clips(clips, model.cfg.profile.frames)
    if state.codec_optimizer is None:
        state.codec_optimizer = Adam(model.codec_parameters(), tp.codec_lr)
    opt = state.codec_optimizer
    volumes = [Tensor(c.rgb.transpose(1, 0, 2, 3).astype(np.float32)) for c in clips]
    while state.codec_step < tp.codec_steps:
        step = state.codec_step
        rng = _step_rng(tp.seed, 1, step)
        idx = int(rng.integers(len(volumes)))
        opt.zero_grads()
        loss = model.codec.reconstruction_loss(volumes[idx])
        loss.backward()
        opt.lr = tp.codec_lr * (
            tp.lr_decay_factor if step >= tp.lr_decay_at * tp.codec_steps else 1.0
        )
        opt.step()
        state.codec_step += 1
        state.codec_losses.append((step, loss.item()))
        if log and step % 25 == 0:
            log(f"codec step {step}: loss {loss.item():.6f}")
    _calibrate_latent_scale(model.codec, volumes)


def _calibrate_latent_scale(codec: LatentCodec, volumes: list[Tensor]) -> None:
    """Scale latents to roughly unit standard deviation for diffusion."""
    from ..tensor import no_grad

    with no_grad():
        stds = [float(codec.encode(v).data.std()) for v in volumes]
    raw = float(np.mean(stds)) / codec.latent_scale
    if raw > 1e-6:
        codec.latent_scale = 1.0 / raw


def clip_latents(model: WorldModel, clips: list[Clip]) -> list[np.ndarray]:
    """Frozen-codec latents of whole clips (the diffusion targets)."""
    from ..tensor import no_grad

    out = []
    with no_grad():
        for clip in clips:
            vol = Tensor(clip.rgb.transpose(1, 0, 2, 3).astype(np.float32))
            out.append(model.codec.encode(vol).data.copy())
    return out


def train_denoiser(state: TrainState, clips: list[Clip], log=None) -> None:
    """Stage B: noise prediction with the codec frozen."""
    model, tp = state.model, state.params
    clips = _fit_clips(clips, model.cfg.profile.frames)
    if not clips:
        raise TrainingError("empty dataset")
    schedule = tp.schedule()
    latents = clip_latents(model, clips)
    if state.denoise_optimizer is None:
        state.denoise_optimizer = Adam(model.denoiser_parameters(), tp.lr)
    opt = state.denoise_optimizer
    while state.denoise_step < tp.train_steps:
        step = state.denoise_step
        rng = _step_rng(tp.seed, 2, step)
        idx = int(rng.integers(len(clips)))
        clip, z0 = clips[idx], latents[idx]
        opt.zero_grads()
        cond = conditioning_from_clip(model, clip)
        total = None
        for _ in range(tp.timesteps_per_step):
            t = tp.draw_timestep(rng)
            eps = rng.standard_normal(z0.shape).astype(np.float32)
            z_t = forward_noising(z0, t, eps, schedule).astype(np.float32)
            loss = model.training_loss(Tensor(z_t), t, eps, cond)
            total = loss if total is None else total + loss
        from ..tensor import ops

        mean_loss = ops.scale(total, 1.0 / tp.timesteps_per_step)
        mean_loss.backward()
        opt.lr = tp.lr * (tp.lr_decay_factor if step >= tp.lr_decay_at * tp.train_steps else 1.0)
        opt.step()
        state.denoise_step += 1
        state.denoise_losses.append((step, mean_loss.item()))
        if log and step % 25 == 0:
            log(f"denoise step {step}: loss {mean_loss.item():.6f}")


def train(model: WorldModel, clips: list[Clip], params: TrainParams, log=None, state: TrainState | None = None) -> TrainState:
    """Full run: codec stage then denoiser stage; resumable via ``state``."""
    if not clips:
        raise TrainingError("empty dataset")
    if state is None:
        state = TrainState(model=model, params=params)
    pretrain_codec(state, clips, log=log)
    train_denoiser(state, clips, log=log)
    return state


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = 1


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _tensor_dir_save(directory: Path, tensors: dict[str, np.ndarray]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for name, arr in tensors.items():
        write_tns(directory / f"{name}.tns", arr)


def _tensor_dir_load(directory: Path, names) -> dict[str, np.ndarray]:
    return {name: read_tns(directory / f"{name}.tns") for name in names}


def save_checkpoint(path, state: TrainState, config_text: str = "") -> None:
    """Directory of named .tns tensors plus a manifest."""
    path = Path(path)
    model = state.model
    params = model.parameters()
    _tensor_dir_save(path / "params", {k: v.data for k, v in params.items()})
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config_hash": config_hash(config_text),
        "latent_scale": model.codec.latent_scale,
        "codec_step": state.codec_step,
        "denoise_step": state.denoise_step,
        "params": {k: list(v.data.shape) for k, v in params.items()},
        "train_params": vars(state.params).copy(),
    }
    for label, opt in (("codec", state.codec_optimizer), ("denoise", state.denoise_optimizer)):
        if opt is None:
            continue
        _tensor_dir_save(path / f"optim_{label}_m", opt.m)
        _tensor_dir_save(path / f"optim_{label}_v", opt.v)
        manifest[f"{label}_opt_steps"] = opt.step_count
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_checkpoint(path, model: WorldModel, params: TrainParams | None = None) -> TrainState:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise TrainingError(f"unsupported checkpoint format in {path}")
    model_params = model.parameters()
    if set(manifest["params"]) != set(model_params):
        raise TrainingError("checkpoint parameter names do not match the model")
    stored = _tensor_dir_load(path / "params", manifest["params"])
    for name, param in model_params.items():
        if list(param.data.shape) != manifest["params"][name]:
            raise TrainingError(f"shape mismatch for {name}")
        param.data[...] = stored[name].astype(param.data.dtype)
    model.codec.latent_scale = float(manifest["latent_scale"])
    if params is None:
        params = TrainParams(**manifest["train_params"])
    state = TrainState(
        model=model,
        params=params,
        codec_step=int(manifest["codec_step"]),
        denoise_step=int(manifest["denoise_step"]),
    )
    for label, group in (("codec", model.codec_parameters()), ("denoise", model.denoiser_parameters())):
        key = f"{label}_opt_steps"
        if key not in manifest:
            continue
        lr = params.codec_lr if label == "codec" else params.lr
        opt = Adam(group, lr)
        opt.step_count = int(manifest[key])
        opt.m = {
            k: v.astype(np.float32)
            for k, v in _tensor_dir_load(path / f"optim_{label}_m", group).items()
        }
        opt.v = {
            k: v.astype(np.float32)
            for k, v in _tensor_dir_load(path / f"optim_{label}_v", group).items()
        }
        if label == "codec":
            state.codec_optimizer = opt
        else:
            state.denoise_optimizer = opt
    return state


def save_loss_csv(path, rows: list[tuple[int, float]], header: str = "step,loss") -> None:
    lines = [header] + [f"{step},{value:.8f}" for step, value in rows]
    Path(path).write_text("\n".join(lines) + "\n")

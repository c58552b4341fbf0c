"""Flat key=value run configuration.

Every tunable lives here with its default; unknown keys are rejected so a
typo cannot silently fall back to a default. Each command writes the fully
resolved configuration next to its outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .embeddings import ScaleProfile
from .worldmodel import ModelConfig, TrainParams


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    frames: int = 9
    size: int = 32
    d: int = 64
    blocks: int = 4
    adapter_depth: int = 2
    heads: int = 4
    schedule_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    steps: int = 50  # sampling steps
    lr: float = 1e-5
    codec_steps: int = 350
    codec_lr: float = 3e-3
    train_steps: int = 600
    timesteps_per_step: int = 4
    low_t_fraction: float = 0.5
    low_t_max: int = 250
    lr_decay_at: float = 0.7
    lr_decay_factor: float = 0.25
    data: str = ""
    out: str = ""
    checkpoint: str = ""

    def profile(self) -> ScaleProfile:
        return ScaleProfile(
            name="run",
            frames=self.frames,
            image_size=self.size,
            token_width=self.d,
            hand_hidden=8,
            ref_hidden=8,
            motion_down_channels=16,
            motion_stage_channels=(16, 24, 32),
            latent_channels=16,
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            profile=self.profile(),
            blocks=self.blocks,
            adapter_depth=self.adapter_depth,
            heads=self.heads,
        )

    def train_params(self) -> TrainParams:
        return TrainParams(
            seed=self.seed,
            codec_steps=self.codec_steps,
            codec_lr=self.codec_lr,
            train_steps=self.train_steps,
            lr=self.lr,
            timesteps_per_step=self.timesteps_per_step,
            schedule_steps=self.schedule_steps,
            beta_start=self.beta_start,
            beta_end=self.beta_end,
            low_t_fraction=self.low_t_fraction,
            low_t_max=self.low_t_max,
            lr_decay_at=self.lr_decay_at,
            lr_decay_factor=self.lr_decay_factor,
        )

    def resolved_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name}={getattr(self, f.name)}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    known = {f.name: f.type for f in fields(RunConfig)}
    casts = {"int": int, "float": float, "str": str}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, casts[known[key]](value))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return cfg


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(), base)


def write_resolved(cfg: RunConfig, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved").write_text(cfg.resolved_text())

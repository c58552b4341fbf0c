"""Latent codec, diffusion machinery, denoiser, and train/rollout drivers."""

from .codec import LatentCodec
from .conditioning import ActionScript, build_conditioning, conditioning_from_clip
from .dit import (
    Anchor,
    Conditioning,
    ModelConfig,
    ModelError,
    WorldModel,
    extend_sequence,
    fuse_hand_tokens,
    pad_tokens,
)
from .rollout import RolloutError, sample_rollout
from .schedule import (
    NoiseSchedule,
    ScheduleError,
    ancestral_step,
    forward_noising,
    noising_step,
)
from .training import (
    Adam,
    TrainParams,
    TrainState,
    TrainingError,
    load_checkpoint,
    pretrain_codec,
    save_checkpoint,
    save_loss_csv,
    train,
    train_denoiser,
)

__all__ = [
    "ActionScript",
    "Adam",
    "Anchor",
    "Conditioning",
    "LatentCodec",
    "ModelConfig",
    "ModelError",
    "NoiseSchedule",
    "RolloutError",
    "ScheduleError",
    "TrainParams",
    "TrainState",
    "TrainingError",
    "WorldModel",
    "ancestral_step",
    "build_conditioning",
    "conditioning_from_clip",
    "extend_sequence",
    "forward_noising",
    "fuse_hand_tokens",
    "load_checkpoint",
    "noising_step",
    "pad_tokens",
    "pretrain_codec",
    "sample_rollout",
    "save_checkpoint",
    "save_loss_csv",
    "train",
    "train_denoiser",
]

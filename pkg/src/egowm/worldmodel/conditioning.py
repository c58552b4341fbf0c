"""Turn clip data into the model's conditioning streams.

An action script is exactly what drives the world model: per-frame hand
renders and per-frame head poses relative to frame 1, plus the camera
intrinsics needed to expand poses into per-pixel ray fields. No future RGB
or future object state enters here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Intrinsics, Trajectory, plucker_volume
from ..synth import Clip
from ..tensor import Tensor
from ..tensor.ops import ShapeError
from .dit import Conditioning, WorldModel


@dataclass
class ActionScript:
    """Per-frame control signal: hand render H^t and head pose C^t."""

    hand_maps: np.ndarray  # (L, 1, S, S) in [0, 1]
    trajectory: Trajectory
    intrinsics: Intrinsics

    def __post_init__(self):
        if self.hand_maps.ndim != 4 or self.hand_maps.shape[1] != 1:
            raise ShapeError(f"hand maps must be (L, 1, S, S), got {self.hand_maps.shape}")
        if len(self.trajectory) != self.hand_maps.shape[0]:
            raise ShapeError(
                f"trajectory length {len(self.trajectory)} != {self.hand_maps.shape[0]} frames"
            )

    @property
    def frames(self) -> int:
        return self.hand_maps.shape[0]

    @property
    def size(self) -> int:
        return self.hand_maps.shape[-1]

    @staticmethod
    def from_clip(clip: Clip) -> "ActionScript":
        return ActionScript(clip.hand_maps, clip.trajectory, clip.intrinsics)


def hand_volume(hand_maps: np.ndarray) -> np.ndarray:
    """(L, 1, S, S) silhouettes -> (3, L, S, S) channel-replicated volume."""
    return np.repeat(hand_maps.transpose(1, 0, 2, 3), 3, axis=0).astype(np.float32)


def object_image(first_frame: np.ndarray, first_mask: np.ndarray) -> np.ndarray:
    """First-frame object appearance isolated on black, (3, S, S)."""
    return (first_frame * first_mask).astype(np.float32)


def build_conditioning(
    model: WorldModel,
    first_frame: np.ndarray,
    actions: ActionScript,
    first_mask: np.ndarray,
    use_hand: bool = True,
    use_motion: bool = True,
    use_object: bool = True,
) -> Conditioning:
    """Encode all requested streams for one clip.

    first_frame: (3, S, S) RGB of frame 1; first_mask: (1, S, S) binary
    object mask of frame 1. Streams can be toggled off for ablations and
    init-time equivalence checks.
    """
    profile = model.cfg.profile
    if actions.frames != profile.frames or actions.size != profile.image_size:
        raise ShapeError(
            f"action script ({actions.frames} frames @ {actions.size}px) does not "
            f"match profile ({profile.frames} @ {profile.image_size}px)"
        )
    dtype = model.dtype

    frame_t = Tensor(first_frame.astype(dtype))
    render_t = Tensor(np.repeat(actions.hand_maps[0], 3, axis=0).astype(dtype))
    anchor = model.build_anchor(frame_t, render_t)

    hand = None
    if use_hand:
        hand = model.hand_encoder(Tensor(hand_volume(actions.hand_maps).astype(dtype)))

    motion = None
    if use_motion:
        rays = plucker_volume(
            actions.intrinsics, actions.trajectory, actions.size, actions.size
        ).astype(dtype)
        motion = model.motion_encoder(Tensor(rays))

    objectref = None
    if use_object:
        image = object_image(first_frame, first_mask).astype(dtype)
        objectref = model.object_encoder(Tensor(image), model.frozen_encode_frame)

    return Conditioning(anchor=anchor, hand=hand, motion=motion, objectref=objectref)


def conditioning_from_clip(model: WorldModel, clip: Clip, **kwargs) -> Conditioning:
    return build_conditioning(
        model,
        clip.rgb[0],
        ActionScript.from_clip(clip),
        clip.object_masks[0],
        **kwargs,
    )

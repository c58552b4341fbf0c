"""Learned frame<->latent codec.

Causal 3d encoder with overall temporal stride 4 (frame 1 maps to latent
frame 0) and spatial stride 8; nearest-neighbour upsampling decoder. It is
pretrained with a plain reconstruction loss and then frozen while the
denoiser trains on its latents.
"""

from __future__ import annotations

import numpy as np

from ..embeddings import ScaleProfile
from ..tensor import ConvLayer, LayerSpec, Tensor
from ..tensor import ops
from ..tensor.ops import ShapeError


def codec_encoder_specs(profile: ScaleProfile, channels: tuple[int, int, int]) -> list[LayerSpec]:
    c1, c2, c3 = channels
    rows = [
        ((1, 2, 2), 3, c1),
        ((2, 2, 2), c1, c2),
        ((2, 2, 2), c2, c3),
    ]
    specs = [
        LayerSpec("causal_conv3d", (3, 3, 3), stride, (0, 1, 1), cin, cout)
        for stride, cin, cout in rows
    ]
    specs.append(
        LayerSpec("conv3d", (1, 1, 1), (1, 1, 1), (0, 0, 0), c3, profile.latent_channels)
    )
    return specs


class LatentCodec:
    """Encoder e and decoder g over (3, T, S, S) frame volumes in [0, 1]."""

    def __init__(
        self,
        profile: ScaleProfile,
        rng: np.random.Generator,
        channels: tuple[int, int, int] = (24, 32, 48),
        dtype=np.float32,
    ):
        self.profile = profile
        self.channels = channels
        self.dtype = dtype
        c1, c2, c3 = channels
        self.enc_layers = [
            ConvLayer(spec, rng, f"codec.enc{i}", dtype)
            for i, spec in enumerate(codec_encoder_specs(profile, channels))
        ]
        c_lat = profile.latent_channels

        def conv3(cin, cout, name, kernel=(3, 3, 3), pad=(1, 1, 1)):
            return ConvLayer(
                LayerSpec("conv3d", kernel, (1, 1, 1), pad, cin, cout), rng, name, dtype
            )

        self.dec_layers = {
            "mix": conv3(c_lat, c3, "codec.dec_mix", kernel=(1, 1, 1), pad=(0, 0, 0)),
            "a": conv3(c3, c2, "codec.dec_a"),
            "b": conv3(c2, c1, "codec.dec_b"),
            "c": conv3(c1, c1, "codec.dec_c"),
            "out": conv3(c1, 3, "codec.dec_out"),
        }
        # set after pretraining so latents are roughly unit scale for diffusion
        self.latent_scale = 1.0

    # -- encoding ------------------------------------------------------
    def encode(self, frames: Tensor) -> Tensor:
        """(3, T, S, S) frames -> (c_lat, 1 + (T-1)//4, S//8, S//8) latent."""
        if frames.ndim != 4 or frames.shape[0] != 3:
            raise ShapeError(f"codec expects (3, T, S, S), got {frames.shape}")
        x = ops.scale(frames, 2.0)
        x = ops.add(x, Tensor(np.full(frames.shape, -1.0, frames.dtype.type)))  # [0,1] -> [-1,1]
        for i, layer in enumerate(self.enc_layers):
            x = layer(x)
            if i < len(self.enc_layers) - 1:
                x = ops.silu(x)
        return ops.scale(x, self.latent_scale)

    def encode_frame(self, frame: Tensor) -> Tensor:
        """Single (3, S, S) frame -> (c_lat, 1, S//8, S//8)."""
        return self.encode(ops.reshape(frame, (3, 1) + frame.shape[1:]))

    # -- decoding ------------------------------------------------------
    def _upsample(self, x: Tensor, temporal: bool) -> Tensor:
        t = x.shape[1]
        x = ops.repeat(ops.repeat(x, 2, axis=2), 2, axis=3)
        if temporal and t > 1:
            x = ops.repeat(x, 2, axis=1)
            x = ops.crop(x, (slice(None), slice(0, 2 * t - 1)))
        return x

    def decode(self, latent: Tensor) -> Tensor:
        """Latent -> (3, T, S, S); the inverse layout of encode."""
        d = self.dec_layers
        x = ops.scale(latent, 1.0 / self.latent_scale)
        x = ops.silu(d["mix"](x))
        x = ops.silu(d["a"](self._upsample(x, temporal=True)))
        x = ops.silu(d["b"](self._upsample(x, temporal=True)))
        x = ops.silu(d["c"](self._upsample(x, temporal=False)))
        x = d["out"](x)
        half = Tensor(np.full(x.shape, 0.5, x.dtype.type))
        return ops.add(ops.scale(x, 0.5), half)  # [-1,1] -> [0,1]

    def decode_frames(self, latent: Tensor) -> np.ndarray:
        """Decode and clamp to displayable [0, 1] frames as (T, 3, S, S)."""
        out = self.decode(latent).data
        return np.clip(out.transpose(1, 0, 2, 3), 0.0, 1.0).astype(np.float32)

    def params(self):
        out = []
        for layer in self.enc_layers:
            out += layer.params()
        for layer in self.dec_layers.values():
            out += layer.params()
        return out

    def reconstruction_loss(self, frames: Tensor) -> Tensor:
        recon = self.decode(self.encode(frames))
        diff = ops.sub(recon, frames)
        return ops.tmean(ops.mul(diff, diff))

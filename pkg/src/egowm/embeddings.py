"""The three conditioning encoders: hand-kinematics stream, ego-motion
stream, and the first-frame object anchor stream, plus the reference-hand
pyramid.

Layer topology is fixed; a ScaleProfile swaps the input extents, channel
widths, and token width between the published full-scale configuration and
the desk-scale one that actually executes. Chains are described as LayerSpec
lists so output shapes can be audited analytically without allocating.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ConvLayer, GroupNormLayer, LayerSpec, LinearLayer, Parameter, Tensor
from .tensor import infer_chain
from .tensor import ops
from .tensor.ops import ShapeError

NORM_GROUPS = 8
MASK_CHANNELS = 4  # first-frame visibility channels concatenated onto the latent


@dataclass(frozen=True)
class ScaleProfile:
    """Extent/channel configuration tying all encoders to one scale."""

    name: str
    frames: int
    image_size: int
    token_width: int
    hand_hidden: int
    ref_hidden: int
    motion_down_channels: int
    motion_stage_channels: tuple[int, ...]
    latent_channels: int
    stage_spatial_stride: int = 1  # stride-2 stages are available but off by default

    @property
    def anchor_channels(self) -> int:
        return self.latent_channels + MASK_CHANNELS

    def latent_grid(self) -> tuple[int, int, int]:
        """Latent (T, H, W): temporal stride 4 keeping frame 1, spatial stride 8."""
        if (self.frames - 1) % 4 != 0 or self.image_size % 8 != 0:
            raise ShapeError(
                f"profile {self.name}: frames must be 4k+1 and size divisible by 8"
            )
        return (1 + (self.frames - 1) // 4, self.image_size // 8, self.image_size // 8)

    def token_grid(self) -> tuple[int, int, int]:
        t, h, w = self.latent_grid()
        return (t, h // 2, w // 2)

    def token_count(self) -> int:
        t, h, w = self.token_grid()
        return t * h * w


PAPER = ScaleProfile(
    name="paper",
    frames=81,
    image_size=480,
    token_width=5120,
    hand_hidden=16,
    ref_hidden=16,
    motion_down_channels=64,
    motion_stage_channels=(64, 128, 256),
    latent_channels=16,
)

DESK = ScaleProfile(
    name="desk",
    frames=9,
    image_size=32,
    token_width=64,
    hand_hidden=8,
    ref_hidden=8,
    motion_down_channels=16,
    motion_stage_channels=(16, 24, 32),
    latent_channels=16,
)

PROFILES = {"paper": PAPER, "desk": DESK}


def grid_positions(grid: tuple[int, int, int]) -> np.ndarray:
    """(N, 3) integer (t, h, w) coordinates in token order."""
    t, h, w = grid
    tt, hh, ww = np.meshgrid(np.arange(t), np.arange(h), np.arange(w), indexing="ij")
    return np.stack([tt.reshape(-1), hh.reshape(-1), ww.reshape(-1)], axis=1)


def token_index(grid: tuple[int, int, int], t: int, h: int, w: int) -> int:
    return (t * grid[1] + h) * grid[2] + w


def token_coords(grid: tuple[int, int, int], index: int) -> tuple[int, int, int]:
    w = index % grid[2]
    h = (index // grid[2]) % grid[1]
    t = index // (grid[1] * grid[2])
    return (t, h, w)


@dataclass
class EmbeddingTokens:
    """One encoder's token stream plus its grid provenance and rope shift."""

    tokens: Tensor  # (N, d)
    grid: tuple[int, int, int]
    stream: str  # "hand" | "ego" | "object"
    shift: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        t, h, w = self.grid
        if self.tokens.shape[0] != t * h * w:
            raise ShapeError(
                f"{self.stream}: {self.tokens.shape[0]} tokens do not tile grid {self.grid}"
            )
        if self.stream == "object" and not any(self.shift):
            raise ShapeError("object stream must carry a nonzero rope shift")

    @property
    def count(self) -> int:
        return self.tokens.shape[0]

    @property
    def width(self) -> int:
        return self.tokens.shape[1]

    def positions(self) -> np.ndarray:
        return grid_positions(self.grid)


# ---------------------------------------------------------------------------
# layer chains (the analytic source of truth for shape audits)
# ---------------------------------------------------------------------------


def hand_stack_specs(profile: ScaleProfile) -> list[LayerSpec]:
    """Seven-layer temporal 3d stack; channels rise into the token width."""
    h, d = profile.hand_hidden, profile.token_width
    k3, p1 = (3, 3, 3), (1, 1, 1)
    rows = [
        (k3, (1, 1, 1), 3, h, p1),
        (k3, (1, 1, 1), h, h, p1),
        (k3, (1, 1, 1), h, h, p1),
        (k3, (1, 2, 2), h, h, p1),
        (k3, (2, 2, 2), h, h, p1),
        (k3, (2, 2, 2), h, h, p1),
        ((1, 2, 2), (1, 2, 2), h, d, (0, 0, 0)),
    ]
    return [
        LayerSpec("conv3d", kernel, stride, pad, cin, cout)
        for kernel, stride, cin, cout, pad in rows
    ]


def reference_pyramid_specs(profile: ScaleProfile) -> list[LayerSpec]:
    """Six 3x3 conv layers, strides 1,1,1,2,2,2, ending at the anchor width."""
    h, out = profile.ref_hidden, profile.anchor_channels
    channels = [(3, h), (h, h), (h, h), (h, h), (h, h), (h, out)]
    strides = [1, 1, 1, 2, 2, 2]
    return [
        LayerSpec("conv2d", (3, 3), (s, s), (1, 1), cin, cout)
        for (cin, cout), s in zip(channels, strides)
    ]


def motion_downsampler_specs(profile: ScaleProfile) -> list[LayerSpec]:
    c = profile.motion_down_channels
    strides = [(2, 2, 2), (2, 2, 2), (1, 2, 2)]
    chans = [(6, c), (c, c), (c, c)]
    return [
        LayerSpec("causal_conv3d", (3, 3, 3), s, (0, 1, 1), cin, cout)
        for (cin, cout), s in zip(chans, strides)
    ]


def hand_stack_output_shape(profile: ScaleProfile) -> tuple[int, ...]:
    s = profile.image_size
    return infer_chain(hand_stack_specs(profile), (3, profile.frames, s, s))


def reference_pyramid_output_shape(profile: ScaleProfile) -> tuple[int, ...]:
    s = profile.image_size
    return infer_chain(reference_pyramid_specs(profile), (3, s, s))


def motion_downsampler_output_shape(profile: ScaleProfile) -> tuple[int, ...]:
    s = profile.image_size
    return infer_chain(motion_downsampler_specs(profile), (6, profile.frames, s, s))


def motion_token_grid(profile: ScaleProfile) -> tuple[int, int, int]:
    _, t, h, w = motion_downsampler_output_shape(profile)
    if profile.stage_spatial_stride == 2:
        div = 2 ** len(profile.motion_stage_channels)
        h, w = h // div, w // div
    return (t, h // 2, w // 2)


def object_latent_shape(profile: ScaleProfile) -> tuple[int, int, int, int]:
    """Latent grid of the first-frame object image after temporal broadcast."""
    t, h, w = profile.latent_grid()
    return (profile.latent_channels, t, h, w)


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------


class HandStreamEncoder:
    """Temporal 3d stack over stacked hand-kinematics renders."""

    def __init__(self, profile: ScaleProfile, rng: np.random.Generator, dtype=np.float32):
        self.profile = profile
        self.specs = hand_stack_specs(profile)
        self.layers = [
            ConvLayer(spec, rng, f"hand.stack{i}", dtype) for i, spec in enumerate(self.specs)
        ]

    def output_shape(self, input_shape) -> tuple[int, ...]:
        return infer_chain(self.specs, tuple(input_shape))

    def __call__(self, hand_volume: Tensor) -> EmbeddingTokens:
        expected = (3, self.profile.frames, self.profile.image_size, self.profile.image_size)
        if hand_volume.shape != expected:
            raise ShapeError(
                f"hand volume shape {hand_volume.shape} does not match profile {expected}"
            )
        x = hand_volume
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ops.silu(x)
        d, t, h, w = x.shape
        tokens = ops.reshape(ops.transpose(x, (1, 2, 3, 0)), (t * h * w, d))
        return EmbeddingTokens(tokens, (t, h, w), "hand")

    def params(self):
        return [p for layer in self.layers for p in layer.params()]


class ReferenceHandEncoder:
    """Six-layer 2d pyramid mapping the first hand render to a compact map."""

    def __init__(self, profile: ScaleProfile, rng: np.random.Generator, dtype=np.float32):
        self.profile = profile
        self.specs = reference_pyramid_specs(profile)
        self.layers = [
            ConvLayer(spec, rng, f"hand.ref{i}", dtype) for i, spec in enumerate(self.specs)
        ]

    def output_shape(self, input_shape) -> tuple[int, ...]:
        return infer_chain(self.specs, tuple(input_shape))

    def __call__(self, first_render: Tensor) -> Tensor:
        s = self.profile.image_size
        if first_render.shape != (3, s, s):
            raise ShapeError(f"reference render must be (3,{s},{s}), got {first_render.shape}")
        x = first_render
        for layer in self.layers:
            x = ops.silu(layer(x))
        return x  # (anchor_channels, H'', W'')

    def params(self):
        return [p for layer in self.layers for p in layer.params()]


class TemporalAttention:
    """Self-attention along the frame axis, shared across spatial positions."""

    def __init__(self, channels: int, rng: np.random.Generator, name: str, dtype=np.float32):
        self.channels = channels
        self.q = LinearLayer(channels, channels, rng, f"{name}.q", dtype)
        self.k = LinearLayer(channels, channels, rng, f"{name}.k", dtype)
        self.v = LinearLayer(channels, channels, rng, f"{name}.v", dtype)
        self.out = LinearLayer(channels, channels, rng, f"{name}.out", dtype, zero_init=True)

    def attend(self, x: Tensor) -> Tensor:
        """Pure attention mix of a (C, T, H, W) feature along T."""
        c, t, h, w = x.shape
        seq = ops.reshape(ops.transpose(x, (2, 3, 1, 0)), (h * w * t, c))
        q = ops.reshape(self.q(seq), (h * w, t, c))
        k = ops.reshape(self.k(seq), (h * w, t, c))
        v = ops.reshape(self.v(seq), (h * w, t, c))
        logits = ops.scale(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(c))
        mixed = ops.matmul(ops.softmax(logits, axis=-1), v)  # (HW, T, C)
        mixed = self.out(ops.reshape(mixed, (h * w * t, c)))
        return ops.transpose(ops.reshape(mixed, (h, w, t, c)), (3, 2, 0, 1))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add(x, self.attend(x))

    def params(self):
        return self.q.params() + self.k.params() + self.v.params() + self.out.params()


class HybridStage:
    """Two 3x3 residual convs applied per frame, then temporal attention."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        rng: np.random.Generator,
        name: str,
        spatial_stride: int = 1,
        dtype=np.float32,
    ):
        s = spatial_stride
        self.conv1 = ConvLayer(
            LayerSpec("conv2d", (3, 3), (s, s), (1, 1), c_in, c_out), rng, f"{name}.conv1", dtype
        )
        self.conv2 = ConvLayer(
            LayerSpec("conv2d", (3, 3), (1, 1), (1, 1), c_out, c_out), rng, f"{name}.conv2", dtype
        )
        self.skip = None
        if c_in != c_out or s != 1:
            self.skip = ConvLayer(
                LayerSpec("conv2d", (1, 1), (s, s), (0, 0), c_in, c_out), rng, f"{name}.skip", dtype
            )
        self.attn = TemporalAttention(c_out, rng, f"{name}.tattn", dtype)

    def __call__(self, x: Tensor) -> Tensor:
        c, t, h, w = x.shape
        frames = []
        for i in range(t):
            f = ops.crop(x, (slice(None), slice(i, i + 1)))
            f = ops.reshape(f, (c, h, w))
            y = ops.silu(self.conv1(f))
            y = self.conv2(y)
            base = f if self.skip is None else self.skip(f)
            y = ops.silu(ops.add(y, base))
            frames.append(ops.reshape(y, (y.shape[0], 1) + y.shape[1:]))
        stacked = ops.concat(frames, axis=1)
        return self.attn(stacked)

    def params(self):
        out = self.conv1.params() + self.conv2.params()
        if self.skip is not None:
            out += self.skip.params()
        return out + self.attn.params()


class EgoMotionEncoder:
    """Causal downsampler, hybrid spatiotemporal stages, projection head."""

    def __init__(self, profile: ScaleProfile, rng: np.random.Generator, dtype=np.float32):
        self.profile = profile
        self.down_specs = motion_downsampler_specs(profile)
        self.down = []
        for i, spec in enumerate(self.down_specs):
            conv = ConvLayer(spec, rng, f"motion.down{i}", dtype)
            # per-frame statistics keep the downsampler causal end to end
            norm = GroupNormLayer(
                spec.channels_out, NORM_GROUPS, f"motion.norm{i}", dtype, per_frame=True
            )
            self.down.append((conv, norm))
        chans = (profile.motion_down_channels,) + profile.motion_stage_channels
        self.stages = [
            HybridStage(
                chans[i], chans[i + 1], rng, f"motion.stage{i}", profile.stage_spatial_stride, dtype
            )
            for i in range(len(profile.motion_stage_channels))
        ]
        c_last = chans[-1]
        self.head_norm = GroupNormLayer(c_last, NORM_GROUPS, "motion.head_norm", dtype)
        self.head_mix = ConvLayer(
            LayerSpec("conv3d", (1, 1, 1), (1, 1, 1), (0, 0, 0), c_last, c_last),
            rng,
            "motion.head_mix",
            dtype,
        )
        self.patchify = ConvLayer(
            LayerSpec("patchify3d", (1, 2, 2), (1, 2, 2), (0, 0, 0), c_last, profile.token_width),
            rng,
            "motion.patchify",
            dtype,
        )

    def downsample(self, volume: Tensor) -> Tensor:
        x = volume
        for conv, norm in self.down:
            x = ops.silu(norm(conv(x)))
        return x

    def __call__(self, ray_volume: Tensor) -> EmbeddingTokens:
        p = self.profile
        expected = (6, p.frames, p.image_size, p.image_size)
        if ray_volume.shape != expected:
            raise ShapeError(
                f"ray volume shape {ray_volume.shape} does not match profile {expected}"
            )
        x = self.downsample(ray_volume)
        for stage in self.stages:
            x = stage(x)
        x = self.head_mix(self.head_norm(x))
        tokens = self.patchify(x)
        _, t, h, w = x.shape
        return EmbeddingTokens(tokens, (t, h // 2, w // 2), "ego")

    def params(self):
        out = []
        for conv, norm in self.down:
            out += conv.params() + norm.params()
        for stage in self.stages:
            out += stage.params()
        return out + self.head_norm.params() + self.head_mix.params() + self.patchify.params()


class ObjectAnchorEncoder:
    """First-frame object image through the frozen codec, then patchified.

    The codec encode is injected as a callable so this module stays agnostic
    of the codec implementation; its weights never train through this path.
    """

    def __init__(
        self,
        profile: ScaleProfile,
        rng: np.random.Generator,
        shift: tuple[int, int, int] | None = None,
        dtype=np.float32,
    ):
        self.profile = profile
        grid = profile.token_grid()
        # anchor the reference stream in a disjoint spatial region by default
        self.shift = shift if shift is not None else (0, grid[1], grid[2])
        self.patchify = ConvLayer(
            LayerSpec(
                "patchify3d", (1, 2, 2), (1, 2, 2), (0, 0, 0),
                profile.latent_channels, profile.token_width,
            ),
            rng,
            "object.patchify",
            dtype,
        )

    def __call__(self, mask_image: Tensor, encode_fn) -> EmbeddingTokens:
        s = self.profile.image_size
        if mask_image.shape != (3, s, s):
            raise ShapeError(f"mask image must be (3,{s},{s}), got {mask_image.shape}")
        latent = encode_fn(mask_image)  # (c_lat, 1, h, w), detached/frozen
        t_lat = self.profile.latent_grid()[0]
        latent = ops.repeat(latent, t_lat, axis=1)
        want = object_latent_shape(self.profile)
        if latent.shape != want:
            raise ShapeError(f"object latent {latent.shape} does not match {want}")
        tokens = self.patchify(latent)
        t, h, w = self.profile.token_grid()
        return EmbeddingTokens(tokens, (t, h, w), "object", self.shift)

    def params(self):
        return self.patchify.params()

"""Token-space denoiser with gated hand fusion, zero-initialized motion
adapters, KV-only object context, and the first-frame anchor.

The noisy latent is concatenated channel-wise with the anchor, patchified
into main tokens, fused with the hand stream through a learnable gate, and
extended with object tokens that serve as attention keys/values only. The
first ``adapter_depth`` blocks add zero-initialized linear residuals of the
ego-motion tokens. Only main tokens are decoded into the noise estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..embeddings import (
    DESK,
    MASK_CHANNELS,
    EgoMotionEncoder,
    EmbeddingTokens,
    HandStreamEncoder,
    ObjectAnchorEncoder,
    ReferenceHandEncoder,
    ScaleProfile,
    grid_positions,
)
from ..tensor import (
    ConvLayer,
    LayerNormLayer,
    LayerSpec,
    LinearLayer,
    ParamBag,
    Parameter,
    Tensor,
)
from ..tensor import ops
from ..tensor.ops import ShapeError
from .codec import LatentCodec


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    profile: ScaleProfile = DESK
    blocks: int = 4
    adapter_depth: int = 2  # first D blocks receive motion-token residuals
    heads: int = 4
    mlp_ratio: int = 4
    hand_gate_init: float = 0.0
    guidance_scale: float = 1.0  # fixed: no classifier-free branch
    codec_channels: tuple[int, int, int] = (24, 32, 48)

    def __post_init__(self):
        if not 1 <= self.adapter_depth <= self.blocks:
            raise ModelError(
                f"adapter depth {self.adapter_depth} outside [1, {self.blocks}]"
            )
        d = self.profile.token_width
        if d % self.heads != 0 or (d // self.heads) % 2 != 0:
            raise ModelError(f"token width {d} incompatible with {self.heads} heads")


@dataclass
class Anchor:
    """First-frame latent context: channel block plus global context vector."""

    channels: Tensor  # (anchor_channels, T_lat, h, w)
    context: Tensor  # (1, d) cross-attention key/value source


@dataclass
class Conditioning:
    anchor: Anchor
    hand: EmbeddingTokens | None = None
    motion: EmbeddingTokens | None = None
    objectref: EmbeddingTokens | None = None


def timestep_embedding(t: int, dim: int, dtype=np.float32) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t * freqs
    emb = np.concatenate([np.sin(args), np.cos(args)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb.astype(dtype)


# ---------------------------------------------------------------------------
# fusion rules
# ---------------------------------------------------------------------------


def fuse_hand_tokens(main_tokens: Tensor, hand_tokens: Tensor, gate: Parameter) -> Tensor:
    """Gated residual update: main + gate * hand, elementwise."""
    if main_tokens.shape != hand_tokens.shape:
        raise ShapeError(
            f"hand tokens {hand_tokens.shape} do not match main tokens {main_tokens.shape}"
        )
    return ops.add(main_tokens, ops.mul(gate, hand_tokens))


def extend_sequence(fused_tokens: Tensor, object_tokens: Tensor) -> tuple[Tensor, int]:
    """Append object tokens as KV-only context; returns (sequence, main length)."""
    if fused_tokens.shape[1] != object_tokens.shape[1]:
        raise ShapeError(
            f"token widths differ: {fused_tokens.shape[1]} vs {object_tokens.shape[1]}"
        )
    n_main = fused_tokens.shape[0]
    return ops.concat([fused_tokens, object_tokens], axis=0), n_main


def pad_tokens(tokens: Tensor, total: int) -> Tensor:
    """Zero-pad a token matrix along the sequence axis to ``total`` rows."""
    missing = total - tokens.shape[0]
    if missing < 0:
        raise ShapeError(f"cannot pad {tokens.shape[0]} tokens down to {total}")
    if missing == 0:
        return tokens
    zeros = Tensor(np.zeros((missing, tokens.shape[1]), tokens.dtype.type))
    return ops.concat([tokens, zeros], axis=0)


# ---------------------------------------------------------------------------
# transformer pieces
# ---------------------------------------------------------------------------


def _modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    one = Tensor(np.ones(scale.shape, scale.dtype.type))
    return ops.add(ops.mul(x, ops.add(scale, one)), shift)


class GlobalContextEncoder:
    """Conv pyramid over the first frame pooled to one context vector."""

    def __init__(self, profile: ScaleProfile, rng: np.random.Generator, dtype=np.float32):
        self.profile = profile
        widths = [(3, 16), (16, 24), (24, 32)]
        self.convs = [
            ConvLayer(
                LayerSpec("conv2d", (3, 3), (2, 2), (1, 1), cin, cout),
                rng,
                f"context.conv{i}",
                dtype,
            )
            for i, (cin, cout) in enumerate(widths)
        ]
        self.proj = LinearLayer(32, profile.token_width, rng, "context.proj", dtype)

    def __call__(self, frame: Tensor) -> Tensor:
        x = frame
        for conv in self.convs:
            x = ops.silu(conv(x))
        pooled = ops.tmean(ops.reshape(x, (x.shape[0], -1)), axis=1)
        return self.proj(ops.reshape(pooled, (1, x.shape[0])))

    def params(self):
        return [p for c in self.convs for p in c.params()] + self.proj.params()


class DenoiserBlock:
    """Pre-norm block: modulated self-attention over the extended sequence
    (main tokens as queries), cross-attention to the global context, MLP.
    Modulations and gates come from the timestep embedding and start at zero
    so the block is the identity at initialization."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, name: str, dtype=np.float32):
        d = cfg.profile.token_width
        self.heads = cfg.heads
        self.norm1 = LayerNormLayer(d, f"{name}.norm1", dtype)
        self.wq = LinearLayer(d, d, rng, f"{name}.wq", dtype)
        self.wk = LinearLayer(d, d, rng, f"{name}.wk", dtype)
        self.wv = LinearLayer(d, d, rng, f"{name}.wv", dtype)
        self.wo = LinearLayer(d, d, rng, f"{name}.wo", dtype)
        self.norm_cross = LayerNormLayer(d, f"{name}.norm_cross", dtype)
        self.cq = LinearLayer(d, d, rng, f"{name}.cq", dtype)
        self.ck = LinearLayer(d, d, rng, f"{name}.ck", dtype)
        self.cv = LinearLayer(d, d, rng, f"{name}.cv", dtype)
        self.co = LinearLayer(d, d, rng, f"{name}.co", dtype, zero_init=True)
        self.norm2 = LayerNormLayer(d, f"{name}.norm2", dtype)
        self.mlp_in = LinearLayer(d, cfg.mlp_ratio * d, rng, f"{name}.mlp_in", dtype)
        self.mlp_out = LinearLayer(cfg.mlp_ratio * d, d, rng, f"{name}.mlp_out", dtype)
        self.modulation = LinearLayer(d, 6 * d, rng, f"{name}.mod", dtype, zero_init=True)

    def __call__(
        self,
        x_all: Tensor,
        n_main: int,
        t_emb: Tensor,
        context: Tensor,
        q_angles: np.ndarray,
        k_angles: np.ndarray,
    ) -> Tensor:
        d = x_all.shape[1]
        mods = self.modulation(ops.silu(t_emb))  # (1, 6d)
        parts = [ops.crop(mods, (slice(0, 1), slice(i * d, (i + 1) * d))) for i in range(6)]
        shift1, scale1, gate1, shift2, scale2, gate2 = parts

        normed = _modulate(self.norm1(x_all), shift1, scale1)
        q = self.wq(ops.crop(normed, (slice(0, n_main), slice(None))))
        k = self.wk(normed)
        v = self.wv(normed)
        attn = ops.attention(q, k, v, heads=self.heads, q_angles=q_angles, k_angles=k_angles)
        main = ops.crop(x_all, (slice(0, n_main), slice(None)))
        rest = ops.crop(x_all, (slice(n_main, x_all.shape[0]), slice(None)))
        main = ops.add(main, ops.mul(gate1, self.wo(attn)))

        cx = self.norm_cross(main)
        cross = ops.attention(self.cq(cx), self.ck(context), self.cv(context), heads=1)
        main = ops.add(main, self.co(cross))

        h = _modulate(self.norm2(main), shift2, scale2)
        h = self.mlp_out(ops.silu(self.mlp_in(h)))
        main = ops.add(main, ops.mul(gate2, h))
        if rest.shape[0] == 0:
            return main
        return ops.concat([main, rest], axis=0)

    def params(self):
        groups = [
            self.norm1, self.wq, self.wk, self.wv, self.wo,
            self.norm_cross, self.cq, self.ck, self.cv, self.co,
            self.norm2, self.mlp_in, self.mlp_out, self.modulation,
        ]
        return [p for g in groups for p in g.params()]


class WorldModel:
    """Latent-diffusion world model: codec, conditioning encoders, denoiser."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        profile = cfg.profile
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
        d = profile.token_width

        self.codec = LatentCodec(profile, rng, cfg.codec_channels, dtype)
        self.hand_encoder = HandStreamEncoder(profile, rng, dtype)
        self.reference_encoder = ReferenceHandEncoder(profile, rng, dtype)
        self.motion_encoder = EgoMotionEncoder(profile, rng, dtype)
        self.object_encoder = ObjectAnchorEncoder(profile, rng, dtype=dtype)
        self.context_encoder = GlobalContextEncoder(profile, rng, dtype)

        in_channels = profile.latent_channels + profile.anchor_channels
        self.patch_embed = ConvLayer(
            LayerSpec("patchify3d", (1, 2, 2), (1, 2, 2), (0, 0, 0), in_channels, d),
            rng,
            "dit.patch_embed",
            dtype,
        )
        self.time_in = LinearLayer(d, d, rng, "dit.time_in", dtype)
        self.time_out = LinearLayer(d, d, rng, "dit.time_out", dtype)
        self.hand_gate = Parameter(
            np.full((1,), cfg.hand_gate_init, dtype=dtype), "dit.hand_gate"
        )
        self.adapters = [
            LinearLayer(d, d, rng, f"dit.adapter{l}", dtype, zero_init=True)
            for l in range(cfg.adapter_depth)
        ]
        self.blocks = [
            DenoiserBlock(cfg, rng, f"dit.block{l}", dtype) for l in range(cfg.blocks)
        ]
        self.head_norm = LayerNormLayer(d, "dit.head_norm", dtype)
        self.head_mod = LinearLayer(d, 2 * d, rng, "dit.head_mod", dtype, zero_init=True)
        self.head_out = LinearLayer(
            d, profile.latent_channels * 4, rng, "dit.head_out", dtype, zero_init=True
        )
        # identity path from the noisy latent, opened by a timestep-dependent
        # gate: the token width cannot losslessly carry the latent at desk
        # scale, and the noise target is dominated by z_t at high timesteps
        c_lat = profile.latent_channels
        ident = np.zeros((c_lat, c_lat, 1, 1, 1), dtype=dtype)
        ident[np.arange(c_lat), np.arange(c_lat), 0, 0, 0] = 1.0
        self.skip_mix = ConvLayer(
            LayerSpec("conv3d", (1, 1, 1), (1, 1, 1), (0, 0, 0), c_lat, c_lat),
            rng,
            "dit.skip_mix",
            dtype,
        )
        self.skip_mix.weight.data[...] = ident
        self.skip_gain = LinearLayer(d, 1, rng, "dit.skip_gain", dtype, zero_init=True)

        self._bag = ParamBag()
        self._bag.absorb(
            self.codec, self.hand_encoder, self.reference_encoder, self.motion_encoder,
            self.object_encoder, self.context_encoder, self.patch_embed,
            self.time_in, self.time_out,
        )
        self._bag.add(self.hand_gate)
        for a in self.adapters:
            self._bag.absorb(a)
        for b in self.blocks:
            self._bag.absorb(b)
        self._bag.absorb(self.head_norm, self.head_mod, self.head_out)
        self._bag.absorb(self.skip_mix, self.skip_gain)

    # -- parameter groups ------------------------------------------------
    def parameters(self) -> dict[str, Parameter]:
        return dict(self._bag.params)

    def codec_parameters(self) -> dict[str, Parameter]:
        return {k: v for k, v in self._bag.params.items() if k.startswith("codec.")}

    def denoiser_parameters(self) -> dict[str, Parameter]:
        return {k: v for k, v in self._bag.params.items() if not k.startswith("codec.")}

    # -- anchor ----------------------------------------------------------
    def frozen_encode_frame(self, frame: Tensor) -> Tensor:
        """Codec encode with gradients cut: the codec never trains here."""
        return Tensor(self.codec.encode_frame(frame).data)

    def build_anchor(self, first_frame: Tensor, first_hand_render: Tensor) -> Anchor:
        profile = self.cfg.profile
        t_lat, h, w = profile.latent_grid()
        latent = self.frozen_encode_frame(first_frame)  # (c_lat, 1, h, w)
        latent = ops.repeat(latent, t_lat, axis=1)
        visibility = np.zeros((MASK_CHANNELS, t_lat, h, w), dtype=self.dtype)
        visibility[:, 0] = 1.0  # only the first latent frame is observed
        channels = ops.concat([latent, Tensor(visibility)], axis=0)

        ref = self.reference_encoder(first_hand_render)  # (anchor_channels, h, w)
        ref_first = ops.reshape(ref, (ref.shape[0], 1, h, w))
        if t_lat > 1:
            zeros = Tensor(np.zeros((ref.shape[0], t_lat - 1, h, w), self.dtype))
            ref_all = ops.concat([ref_first, zeros], axis=1)
        else:
            ref_all = ref_first
        channels = ops.add(channels, ref_all)
        context = self.context_encoder(first_frame)
        return Anchor(channels=channels, context=context)

    # -- denoising ---------------------------------------------------------
    def adapter_residual(self, motion_tokens: Tensor, block_index: int, total_len: int) -> Tensor | None:
        """Zero-initialized linear residual for block ``block_index``.

        Returns None past the adapter depth (a no-op by contract). The motion
        tokens are zero-padded to the extended length before the projection.
        """
        if block_index >= self.cfg.adapter_depth:
            return None
        padded = pad_tokens(motion_tokens, total_len)
        return self.adapters[block_index](padded)

    def denoise_predict(self, z_t: Tensor, t: int, cond: Conditioning) -> Tensor:
        profile = self.cfg.profile
        d = profile.token_width
        grid = profile.token_grid()
        lat_shape = (profile.latent_channels,) + profile.latent_grid()
        if z_t.shape != lat_shape:
            raise ShapeError(f"noisy latent {z_t.shape} does not match {lat_shape}")
        for stream in (cond.hand, cond.motion, cond.objectref):
            if stream is not None and stream.width != d:
                raise ShapeError(
                    f"{stream.stream} token width {stream.width} != model width {d}"
                )

        x_in = ops.concat([z_t, cond.anchor.channels], axis=0)
        main = self.patch_embed(x_in)  # (N, d)
        n_tokens = main.shape[0]

        if cond.hand is not None:
            main = fuse_hand_tokens(main, cond.hand.tokens, self.hand_gate)

        positions = grid_positions(grid)
        pair_dim = d // self.cfg.heads // 2
        q_angles = ops.rope_angles(positions, pair_dim)
        if cond.objectref is not None:
            x_all, n_main = extend_sequence(main, cond.objectref.tokens)
            obj_angles = ops.rope_angles(
                cond.objectref.positions(), pair_dim, shift=cond.objectref.shift
            )
            k_angles = np.concatenate([q_angles, obj_angles], axis=0)
        else:
            x_all, n_main = main, n_tokens
            k_angles = q_angles

        t_vec = timestep_embedding(t, d, self.dtype)
        t_emb = self.time_out(ops.silu(self.time_in(Tensor(t_vec[None, :]))))

        for index, block in enumerate(self.blocks):
            if cond.motion is not None:
                delta = self.adapter_residual(cond.motion.tokens, index, x_all.shape[0])
                if delta is not None:
                    x_all = ops.add(x_all, delta)
            x_all = block(x_all, n_main, t_emb, cond.anchor.context, q_angles, k_angles)

        decoded = ops.crop(x_all, (slice(0, n_main), slice(None)))
        mods = self.head_mod(ops.silu(t_emb))
        shift = ops.crop(mods, (slice(0, 1), slice(0, d)))
        scale = ops.crop(mods, (slice(0, 1), slice(d, 2 * d)))
        decoded = _modulate(self.head_norm(decoded), shift, scale)
        out_tokens = self.head_out(decoded)  # (N, c_lat * 4)
        out = ops.unpatchify3d(out_tokens, grid, profile.latent_channels, (1, 2, 2))
        gain = ops.reshape(self.skip_gain(ops.silu(t_emb)), (1, 1, 1, 1))
        return ops.add(out, ops.mul(gain, self.skip_mix(z_t)))

    def training_loss(self, z_t: Tensor, t: int, eps: np.ndarray, cond: Conditioning) -> Tensor:
        eps_hat = self.denoise_predict(z_t, t, cond)
        diff = ops.sub(eps_hat, Tensor(eps.astype(self.dtype)))
        return ops.tmean(ops.mul(diff, diff))

"""Layer descriptions, analytic shape inference, and parameterized wrappers.

A LayerSpec chain describes an encoder topology; ``infer_chain`` walks it
without allocating anything, which is how the published full-scale tensor
shapes are audited while actual execution happens at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Parameter, Tensor
from . import ops
from .ops import ShapeError, conv_extent

KINDS = (
    "conv2d",
    "conv3d",
    "causal_conv3d",
    "group_norm",
    "silu",
    "linear",
    "attention",
    "patchify3d",
)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of an encoder chain; extents are per spatial/temporal axis."""

    kind: str
    kernel: tuple[int, ...] = ()
    stride: tuple[int, ...] = ()
    padding: tuple[int, ...] = ()
    channels_in: int = 0
    channels_out: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        for name in ("kernel", "stride"):
            if any(v < 1 for v in getattr(self, name)):
                raise ShapeError(f"{name} extents must be positive: {self}")
        if any(v < 0 for v in self.padding):
            raise ShapeError(f"padding must be non-negative: {self}")


def infer_layer(spec: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Output shape of one layer given a (C, ...) input shape."""
    if spec.kind in ("silu", "group_norm", "attention"):
        if spec.kind == "group_norm" and shape[0] % spec.groups != 0:
            raise ShapeError(f"{shape[0]} channels not divisible by {spec.groups}")
        return shape
    if spec.kind == "linear":
        if shape[-1] != spec.channels_in:
            raise ShapeError(
                f"linear expects trailing {spec.channels_in}, got {shape[-1]}"
            )
        return shape[:-1] + (spec.channels_out,)
    if spec.kind in ("conv2d", "conv3d", "causal_conv3d"):
        nd = 2 if spec.kind == "conv2d" else 3
        if len(shape) != nd + 1:
            raise ShapeError(f"{spec.kind} expects rank {nd + 1}, got {shape}")
        if shape[0] != spec.channels_in:
            raise ShapeError(
                f"{spec.kind} expects {spec.channels_in} channels, got {shape[0]}"
            )
        out = [spec.channels_out]
        for axis in range(nd):
            n, k, s = shape[1 + axis], spec.kernel[axis], spec.stride[axis]
            if spec.kind == "causal_conv3d" and axis == 0:
                e = (n + (k - 1) - k) // s + 1
                if e < 1:
                    raise ShapeError(f"causal temporal extent collapsed for {n}")
                out.append(e)
            else:
                out.append(conv_extent(n, k, s, spec.padding[axis]))
        return tuple(out)
    if spec.kind == "patchify3d":
        if len(shape) != 4 or shape[0] != spec.channels_in:
            raise ShapeError(f"patchify3d expects (C, T, H, W) with C={spec.channels_in}")
        kt, kh, kw = spec.kernel
        if shape[1] % kt or shape[2] % kh or shape[3] % kw:
            raise ShapeError(f"grid {shape[1:]} not divisible by patch {spec.kernel}")
        return (spec.channels_out, shape[1] // kt, shape[2] // kh, shape[3] // kw)
    raise ShapeError(f"unhandled kind {spec.kind}")


def infer_chain(specs: list[LayerSpec], shape: tuple[int, ...]) -> tuple[int, ...]:
    """Dry-run the whole chain; raises on any incompatible extent."""
    for spec in specs:
        shape = infer_layer(spec, shape)
    return shape


# ---------------------------------------------------------------------------
# parameterized wrappers
# ---------------------------------------------------------------------------


def _fan_in_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class ConvLayer:
    """Conv weights bound to a LayerSpec; dispatches on the spec kind."""

    def __init__(
        self,
        spec: LayerSpec,
        rng: np.random.Generator,
        name: str,
        dtype=np.float32,
        zero_init: bool = False,
    ):
        self.spec = spec
        k = spec.kernel
        wshape = (spec.channels_out, spec.channels_in) + tuple(k)
        fan_in = spec.channels_in * int(np.prod(k))
        if zero_init:
            w = np.zeros(wshape, dtype=dtype)
        else:
            w = _fan_in_init(rng, wshape, fan_in, dtype)
        self.weight = Parameter(w, f"{name}.weight")
        self.bias = Parameter(np.zeros(spec.channels_out, dtype=dtype), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        s = self.spec
        if s.kind == "conv2d":
            return ops.conv2d(x, self.weight, self.bias, s.stride, s.padding)
        if s.kind == "conv3d":
            return ops.conv3d(x, self.weight, self.bias, s.stride, s.padding)
        if s.kind == "causal_conv3d":
            return ops.causal_conv3d(x, self.weight, self.bias, s.stride, s.padding)
        if s.kind == "patchify3d":
            return ops.patchify3d(x, self.weight, self.bias, s.kernel)
        raise ShapeError(f"ConvLayer cannot run kind {s.kind}")

    def params(self) -> list[Parameter]:
        return [self.weight, self.bias]


class GroupNormLayer:
    def __init__(
        self, channels: int, groups: int, name: str, dtype=np.float32, per_frame: bool = False
    ):
        self.groups = groups
        self.per_frame = per_frame
        self.gamma = Parameter(np.ones(channels, dtype=dtype), f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels, dtype=dtype), f"{name}.beta")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.group_norm(x, self.groups, self.gamma, self.beta, per_frame=self.per_frame)

    def params(self) -> list[Parameter]:
        return [self.gamma, self.beta]


class LinearLayer:
    def __init__(
        self,
        d_in: int,
        d_out: int,
        rng: np.random.Generator,
        name: str,
        dtype=np.float32,
        zero_init: bool = False,
    ):
        if zero_init:
            w = np.zeros((d_in, d_out), dtype=dtype)
        else:
            w = _fan_in_init(rng, (d_in, d_out), d_in, dtype)
        self.weight = Parameter(w, f"{name}.weight")
        self.bias = Parameter(np.zeros(d_out, dtype=dtype), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)

    def params(self) -> list[Parameter]:
        return [self.weight, self.bias]


class LayerNormLayer:
    def __init__(self, d: int, name: str, dtype=np.float32):
        self.gamma = Parameter(np.ones(d, dtype=dtype), f"{name}.gamma")
        self.beta = Parameter(np.zeros(d, dtype=dtype), f"{name}.beta")

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta)

    def params(self) -> list[Parameter]:
        return [self.gamma, self.beta]


@dataclass
class ParamBag:
    """Flat named collection of parameters for optimizers and checkpoints."""

    params: dict[str, Parameter] = field(default_factory=dict)

    def absorb(self, *holders) -> None:
        for holder in holders:
            for p in holder.params() if hasattr(holder, "params") else holder:
                if p.name in self.params:
                    raise ValueError(f"duplicate parameter name {p.name}")
                self.params[p.name] = p

    def add(self, param: Parameter) -> Parameter:
        if param.name in self.params:
            raise ValueError(f"duplicate parameter name {param.name}")
        self.params[param.name] = param
        return param

    def values(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

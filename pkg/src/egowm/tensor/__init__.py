"""Minimal dense-tensor kernel library with reverse-mode gradients."""

from .core import GradientModeError, Parameter, Tensor, as_tensor, grad, no_grad
from .layers import (
    ConvLayer,
    GroupNormLayer,
    LayerNormLayer,
    LayerSpec,
    LinearLayer,
    ParamBag,
    infer_chain,
    infer_layer,
)
from .ops import ShapeError, conv_extent
from .tns import TnsFormatError, read_tns, write_tns

__all__ = [
    "ConvLayer",
    "GradientModeError",
    "GroupNormLayer",
    "LayerNormLayer",
    "LayerSpec",
    "LinearLayer",
    "ParamBag",
    "Parameter",
    "ShapeError",
    "Tensor",
    "TnsFormatError",
    "as_tensor",
    "conv_extent",
    "grad",
    "infer_chain",
    "infer_layer",
    "no_grad",
    "read_tns",
    "write_tns",
]

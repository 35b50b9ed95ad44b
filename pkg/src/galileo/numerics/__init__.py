"""Dense numerics with reverse-mode differentiation."""

from galileo.numerics.autodiff import Graph, Tensor, backward
from galileo.numerics.nn import (
    layer_norm,
    linear,
    multi_head_attention,
    sincos_embedding,
)

__all__ = [
    "Graph",
    "Tensor",
    "backward",
    "layer_norm",
    "linear",
    "multi_head_attention",
    "sincos_embedding",
]

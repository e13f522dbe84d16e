"""
Utterance classification head: mean-pool over time, then a linear layer.
"""

from dataclasses import dataclass

from redapt.nn.blocks import linear
from redapt.nn.params import ParamGroup, uniform_fan_in, zeros
from redapt.tensor import ops
from redapt.tensor.core import Tensor, mac_section
from redapt.utils.errors import ShapeError


@dataclass
class HeadParams(ParamGroup):
    w: Tensor
    b: Tensor


def init_head(d_model, n_classes, rng):
    return HeadParams(w=uniform_fan_in(rng, (d_model, n_classes), d_model), b=zeros(n_classes))


def classify(encoded, head):
    """
    Args:
        encoded: Tensor [b, n, d]
        head: HeadParams

    Returns:
        logits Tensor [b, n_classes]
    """
    if encoded.ndim != 3:
        raise ShapeError(f"classifier expects [b, n, d], got {encoded.shape}")
    pooled = ops.mean(encoded, axis=1)
    with mac_section('head'):
        return linear(pooled, head.w, head.b, name='classifier')

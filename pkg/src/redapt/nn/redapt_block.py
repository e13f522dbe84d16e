"""
The RedApt reducer-adaptor block.

A strided pooling convolution shrinks the sequence (a -> a'), then a
length-preserving convolution re-learns local, position-wise information
and is added back as a residual:

    a'  = GELU(Norm(CNN_1(a)))
    a'' = a' + GELU(Norm(CNN_2(a')))

Both Norm and GELU wrappers, and the whole second convolution, can be
switched off for ablations.
"""

import logging
from dataclasses import dataclass

from redapt.lengths import POOLING_SPEC, RESTORING_SPEC, ReductionSpec
from redapt.nn.params import ParamGroup, ones, uniform_fan_in, zeros
from redapt.tensor import ops
from redapt.tensor.core import Tensor
from redapt.utils.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RedAptSpec:
    """
    Shape and ablation flags of one RedApt block.

    Args:
        channels: model width d (input and output channels of both convs)
        block1: pooling convolution, default <3, 2, 1>
        block2: restoring convolution, default <3, 1, 1>; must preserve length
        enable_second_cnn: keep the restoring convolution and its residual
        enable_layernorm: wrap each convolution in layer normalization
        enable_gelu: apply GELU after each (normalized) convolution
    """

    channels: int
    block1: ReductionSpec = POOLING_SPEC
    block2: ReductionSpec = RESTORING_SPEC
    enable_second_cnn: bool = True
    enable_layernorm: bool = True
    enable_gelu: bool = True

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError(f"RedApt channels must be >= 1, got {self.channels}", key='d_model')
        if not self.block2.is_length_preserving:
            raise ConfigError(
                f"second RedApt convolution must preserve length (s=1, 2p=k-1), got {self.block2}",
                key='redapt.k2',
            )

    @property
    def ablation_label(self):
        dropped = [name for name, on in (
            ('second_cnn', self.enable_second_cnn),
            ('layernorm', self.enable_layernorm),
            ('gelu', self.enable_gelu),
        ) if not on]
        return 'full' if not dropped else 'no_' + '_no_'.join(dropped)


@dataclass
class RedAptParams(ParamGroup):
    """Convolution and norm weights; disabled components are None."""

    w1: Tensor
    b1: Tensor
    ln1_gain: Tensor = None
    ln1_bias: Tensor = None
    w2: Tensor = None
    b2: Tensor = None
    ln2_gain: Tensor = None
    ln2_bias: Tensor = None


def init_redapt_params(spec, rng):
    """Fan-in uniform conv weights, zero biases, identity norm affine."""
    d = spec.channels
    k1, k2 = spec.block1.k, spec.block2.k
    params = RedAptParams(w1=uniform_fan_in(rng, (k1, d, d), k1 * d), b1=zeros(d))
    if spec.enable_layernorm:
        params.ln1_gain, params.ln1_bias = ones(d), zeros(d)
    if spec.enable_second_cnn:
        params.w2 = uniform_fan_in(rng, (k2, d, d), k2 * d)
        params.b2 = zeros(d)
        if spec.enable_layernorm:
            params.ln2_gain, params.ln2_bias = ones(d), zeros(d)
    return params


def _wrap(h, gain, bias, spec):
    if spec.enable_layernorm:
        h = ops.layernorm(h, gain, bias)
    if spec.enable_gelu:
        h = ops.gelu(h)
    return h


def redapt_forward(a, params, spec, train_flag=False):
    """
    Apply one RedApt block.

    Args:
        a: Tensor [b, n, d]
        params: RedAptParams
        spec: RedAptSpec
        train_flag: accepted for a uniform forward signature; the block has no stochastic parts

    Returns:
        Tensor [b, n', d] with n' = reduced_length(n, spec.block1)

    Raises:
        SequenceLengthError: if n + 2p < k for the pooling convolution
    """
    a1 = ops.conv1d(a, params.w1, params.b1, spec.block1, name='redapt_pool')
    a1 = _wrap(a1, params.ln1_gain, params.ln1_bias, spec)
    if not spec.enable_second_cnn:
        return a1
    restored = ops.conv1d(a1, params.w2, params.b2, spec.block2, name='redapt_restore')
    restored = _wrap(restored, params.ln2_gain, params.ln2_bias, spec)
    return ops.add(a1, restored)


def param_count(spec):
    """
    Closed-form parameter count of one block.

    With both convolutions and norms enabled: 2*(k*d^2 + d) + 2*(2d).
    """
    d = spec.channels
    norm = 2 * d if spec.enable_layernorm else 0
    count = spec.block1.k * d * d + d + norm
    if spec.enable_second_cnn:
        count += spec.block2.k * d * d + d + norm
    return count

"""
Transformer encoder layer and strided-CNN feature extractor.

Mirrors the wav2vec2 context network (pre-norm Transformer layers) and its
convolutional feature encoder at configurable scale.
"""

import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from redapt.lengths import ReductionSpec, chained_length
from redapt.nn.params import ParamGroup, ones, uniform_fan_in, zeros
from redapt.tensor import ops
from redapt.tensor.core import Tensor, mac_section
from redapt.utils.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

# wav2vec2 feature encoder layout: 16 kHz waveform -> ~50 frames/s
W2V2_FE_KERNELS = (10, 3, 3, 3, 3, 2, 2)
W2V2_FE_STRIDES = (5, 2, 2, 2, 2, 2, 2)


def linear(x, w, b, name='linear'):
    """x @ w + b with MACs counted under ``name``."""
    out = ops.matmul(x, w, name=name)
    return ops.add(out, b) if b is not None else out


@dataclass
class TransformerLayerParams(ParamGroup):
    """Weights of one pre-norm Transformer encoder layer."""

    d_model: int
    n_heads: int
    d_ffn: int
    dropout_p: float
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    w_ffn1: Tensor
    b_ffn1: Tensor
    w_ffn2: Tensor
    b_ffn2: Tensor

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}", key='n_heads'
            )
        d, f = self.d_model, self.d_ffn
        expected = {
            'w_q': (d, d), 'w_k': (d, d), 'w_v': (d, d), 'w_o': (d, d),
            'b_q': (d,), 'b_k': (d,), 'b_v': (d,), 'b_o': (d,),
            'ln1_gain': (d,), 'ln1_bias': (d,), 'ln2_gain': (d,), 'ln2_bias': (d,),
            'w_ffn1': (d, f), 'b_ffn1': (f,), 'w_ffn2': (f, d), 'b_ffn2': (d,),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ShapeError(f"{name} has shape {actual}, expected {shape}")


def init_transformer_layer(d_model, n_heads, d_ffn, dropout_p, rng):
    """Fan-in uniform projection weights, zero biases, unit layer-norm gains."""
    d, f = d_model, d_ffn
    return TransformerLayerParams(
        d_model=d, n_heads=n_heads, d_ffn=f, dropout_p=dropout_p,
        w_q=uniform_fan_in(rng, (d, d), d), b_q=zeros(d),
        w_k=uniform_fan_in(rng, (d, d), d), b_k=zeros(d),
        w_v=uniform_fan_in(rng, (d, d), d), b_v=zeros(d),
        w_o=uniform_fan_in(rng, (d, d), d), b_o=zeros(d),
        ln1_gain=ones(d), ln1_bias=zeros(d),
        ln2_gain=ones(d), ln2_bias=zeros(d),
        w_ffn1=uniform_fan_in(rng, (d, f), d), b_ffn1=zeros(f),
        w_ffn2=uniform_fan_in(rng, (f, d), f), b_ffn2=zeros(d),
    )


def mhsa_forward(x, params, train_flag=False, seed=0, layer_id=0, step=0, return_attention=False):
    """
    Pre-norm multi-head self-attention sublayer with residual.

    Computes x + O(softmax(Q K^T / sqrt(d_h)) V) where Q, K, V are projections
    of LayerNorm(x). MACs: 4*b*t*d^2 for the projections plus b*t^2*d each
    for scores and context.

    Args:
        x: Tensor [b, t, d]
        params: TransformerLayerParams
        train_flag: enables dropout on the sublayer output
        seed, layer_id, step: dropout stream key
        return_attention: also return the attention weights [b, heads, t, t]

    Returns:
        Tensor [b, t, d] (and the attention tensor when requested)
    """
    batch, t, d = x.shape
    if t < 1:
        raise ShapeError(f"attention needs at least one position, got {x.shape}")
    heads = params.n_heads
    d_head = d // heads

    h = ops.layernorm(x, params.ln1_gain, params.ln1_bias)
    q = linear(h, params.w_q, params.b_q, name='attention_projection')
    k = linear(h, params.w_k, params.b_k, name='attention_projection')
    v = linear(h, params.w_v, params.b_v, name='attention_projection')

    def split_heads(z):
        return ops.transpose(ops.reshape(z, (batch, t, heads, d_head)), (0, 2, 1, 3))

    qh, kh, vh = split_heads(q), split_heads(k), split_heads(v)
    scores = ops.matmul(qh, ops.transpose(kh, (0, 1, 3, 2)), name='attention_scores')
    scores = ops.mul(scores, 1.0 / np.sqrt(d_head))
    attention = ops.softmax_lastaxis(scores)
    context = ops.matmul(attention, vh, name='attention_context')
    merged = ops.reshape(ops.transpose(context, (0, 2, 1, 3)), (batch, t, d))
    out = linear(merged, params.w_o, params.b_o, name='attention_projection')
    out = ops.dropout(out, params.dropout_p, train_flag, seed=seed, layer_id=2 * layer_id, step=step)
    result = ops.add(x, out)
    if return_attention:
        return result, attention
    return result


def transformer_layer_forward(x, params, train_flag=False, seed=0, layer_id=0, step=0):
    """
    One pre-norm Transformer layer: attention sublayer then FFN sublayer, each with residual.

    Output shape equals input shape.
    """
    h = mhsa_forward(x, params, train_flag=train_flag, seed=seed, layer_id=layer_id, step=step)
    f = ops.layernorm(h, params.ln2_gain, params.ln2_bias)
    f = ops.gelu(linear(f, params.w_ffn1, params.b_ffn1, name='ffn'))
    f = linear(f, params.w_ffn2, params.b_ffn2, name='ffn')
    f = ops.dropout(f, params.dropout_p, train_flag, seed=seed, layer_id=2 * layer_id + 1, step=step)
    return ops.add(h, f)


@dataclass(frozen=True)
class FeatureExtractorConfig:
    """
    Strided CNN stack turning raw samples into frames.

    Args:
        kernels: kernel size per layer
        strides: stride per layer
        channels: channel width of every conv layer
        downsample: optional declared overall downsample factor (checked against the strides)
    """

    kernels: Tuple[int, ...] = W2V2_FE_KERNELS
    strides: Tuple[int, ...] = W2V2_FE_STRIDES
    channels: int = 512
    downsample: int = None

    def __post_init__(self):
        object.__setattr__(self, 'kernels', tuple(int(k) for k in self.kernels))
        object.__setattr__(self, 'strides', tuple(int(s) for s in self.strides))
        if len(self.kernels) != len(self.strides) or not self.kernels:
            raise ConfigError(
                f"fe_kernels ({len(self.kernels)}) and fe_strides ({len(self.strides)}) must be non-empty and equally long",
                key='fe_strides',
            )
        if any(s < 1 for s in self.strides):
            raise ConfigError(f"all feature-extractor strides must be >= 1, got {self.strides}", key='fe_strides')
        if any(k < 1 for k in self.kernels):
            raise ConfigError(f"all feature-extractor kernels must be >= 1, got {self.kernels}", key='fe_kernels')
        if self.channels < 1:
            raise ConfigError(f"fe_channels must be >= 1, got {self.channels}", key='fe_channels')
        if self.downsample is not None and self.downsample != self.downsample_factor:
            raise ConfigError(
                f"declared downsample {self.downsample} != product of strides {self.downsample_factor}",
                key='fe_strides',
            )

    @property
    def specs(self):
        return [ReductionSpec(k, s, 0) for k, s in zip(self.kernels, self.strides)]

    @property
    def downsample_factor(self):
        return int(np.prod(self.strides))

    @property
    def receptive_field(self):
        field_size = 1
        for k, s in zip(reversed(self.kernels), reversed(self.strides)):
            field_size = (field_size - 1) * s + k
        return field_size

    def frame_lengths(self, samples):
        """Length after every conv layer (Eq. 1 chained with p=0)."""
        return chained_length(samples, self.specs, where='feature extractor')

    def frames(self, samples):
        return self.frame_lengths(samples)[-1]


@dataclass
class FeatureExtractorParams(ParamGroup):
    conv_weights: list = field(default_factory=list)
    conv_biases: list = field(default_factory=list)
    norm_gains: list = field(default_factory=list)
    norm_biases: list = field(default_factory=list)
    proj_norm_gain: Tensor = None
    proj_norm_bias: Tensor = None
    w_proj: Tensor = None
    b_proj: Tensor = None


def init_feature_extractor(cfg, d_model, rng):
    params = FeatureExtractorParams()
    c_in = 1
    for k in cfg.kernels:
        params.conv_weights.append(uniform_fan_in(rng, (k, c_in, cfg.channels), k * c_in))
        params.conv_biases.append(zeros(cfg.channels))
        params.norm_gains.append(ones(cfg.channels))
        params.norm_biases.append(zeros(cfg.channels))
        c_in = cfg.channels
    params.proj_norm_gain = ones(cfg.channels)
    params.proj_norm_bias = zeros(cfg.channels)
    params.w_proj = uniform_fan_in(rng, (cfg.channels, d_model), cfg.channels)
    params.b_proj = zeros(d_model)
    return params


def feature_extractor_forward(wave, params, cfg):
    """
    Raw waveform to frame features: per layer Conv -> LayerNorm -> GELU.

    Args:
        wave: Tensor [b, samples]
        params: FeatureExtractorParams
        cfg: FeatureExtractorConfig

    Returns:
        Tensor [b, frames, channels]

    Raises:
        SequenceLengthError: if samples is below the receptive field
    """
    if wave.ndim != 2:
        raise ShapeError(f"feature extractor expects [b, samples], got {wave.shape}")
    x = ops.reshape(wave, (wave.shape[0], wave.shape[1], 1))
    for i, spec in enumerate(cfg.specs):
        x = ops.conv1d(x, params.conv_weights[i], params.conv_biases[i], spec, name='feature_conv')
        x = ops.layernorm(x, params.norm_gains[i], params.norm_biases[i])
        x = ops.gelu(x)
    return x


def feature_projection(features, params):
    """LayerNorm then linear map from extractor channels to d_model."""
    with mac_section('feature_projection'):
        h = ops.layernorm(features, params.proj_norm_gain, params.proj_norm_bias)
        return linear(h, params.w_proj, params.b_proj, name='projection')

"""
Speech encoder: feature extractor + Transformer stack + RedApt blocks at configured positions.

A block at position p is applied to the OUTPUT of layer p (0-based), so
layers p+1 onwards see the pooled sequence.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Tuple

from redapt.lengths import POOLING_SPEC, reduced_length
from redapt.nn.blocks import (
    FeatureExtractorConfig,
    FeatureExtractorParams,
    feature_extractor_forward,
    feature_projection,
    init_feature_extractor,
    init_transformer_layer,
    transformer_layer_forward,
)
from redapt.nn.params import ParamGroup, ones, uniform_fan_in, zeros
from redapt.nn.redapt_block import RedAptSpec, init_redapt_params, redapt_forward
from redapt.tensor import ops
from redapt.tensor.core import Tensor, mac_section
from redapt.utils.errors import ConfigError, ShapeError
from redapt.utils import seeding

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PositionConfig:
    """Strictly increasing 0-based layer indices after which RedApt blocks run."""

    positions: Tuple[int, ...] = ()

    def __post_init__(self):
        positions = tuple(int(p) for p in self.positions)
        object.__setattr__(self, 'positions', positions)
        if any(p < 0 for p in positions):
            raise ConfigError(f"positions must be >= 0, got {list(positions)}", key='positions')
        if any(b <= a for a, b in zip(positions, positions[1:])):
            raise ConfigError(f"positions must be strictly increasing, got {list(positions)}", key='positions')

    @property
    def m(self):
        return len(self.positions)

    def check_layers(self, layers):
        if self.positions and self.positions[-1] >= layers:
            raise ConfigError(
                f"position {self.positions[-1]} out of range for {layers} layers", key='positions'
            )

    def __iter__(self):
        return iter(self.positions)

    def __contains__(self, item):
        return item in self.positions

    def __len__(self):
        return len(self.positions)

    def __str__(self):
        return '[' + ','.join(str(p) for p in self.positions) + ']'


def as_positions(value):
    """Accept a PositionConfig, a sequence of ints, or a '13,15,20' / '[13,15,20]' string."""
    if isinstance(value, PositionConfig):
        return value
    if isinstance(value, str):
        text = value.strip().strip('[]').strip()
        value = [int(p) for p in text.split(',') if p.strip()] if text else []
    return PositionConfig(tuple(value))


@dataclass(frozen=True)
class EncoderConfig:
    """
    Full encoder shape.

    ``redapt`` defaults to the standard block at width ``d_model``;
    ``length_adaptor_layers`` appends stride-2 Conv->GELU layers after the
    stack (the post-encoder length adaptor baseline).
    """

    layers: int = 8
    d_model: int = 64
    n_heads: int = 4
    d_ffn: int = 256
    dropout: float = 0.1
    feature_extractor: FeatureExtractorConfig = field(default_factory=lambda: FeatureExtractorConfig(channels=32))
    redapt: RedAptSpec = None
    positions: PositionConfig = field(default_factory=PositionConfig)
    reinit_top_k: int = 0
    length_adaptor_layers: int = 0

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}", key='layers')
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}", key='n_heads')
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}", key='dropout')
        if self.redapt is None:
            object.__setattr__(self, 'redapt', RedAptSpec(channels=self.d_model))
        elif self.redapt.channels != self.d_model:
            raise ConfigError(
                f"RedApt width {self.redapt.channels} != d_model {self.d_model}", key='d_model'
            )
        object.__setattr__(self, 'positions', as_positions(self.positions))
        self.positions.check_layers(self.layers)
        if not 0 <= self.reinit_top_k <= self.layers:
            raise ConfigError(f"reinit_top_k must be in [0, {self.layers}], got {self.reinit_top_k}", key='reinit_top_k')
        if self.length_adaptor_layers < 0:
            raise ConfigError("length_adaptor_layers must be >= 0", key='length_adaptor_layers')

    def with_positions(self, positions):
        return replace(self, positions=as_positions(positions))


@dataclass(frozen=True)
class LengthTrace:
    """
    Sequence lengths through the encoder.

    Args:
        n0: frames out of the feature extractor
        layer_inputs: input length of each Transformer layer
        final: output length of the encoder
    """

    n0: int
    layer_inputs: Tuple[int, ...]
    final: int

    @property
    def lengths(self):
        return (self.n0,) + self.layer_inputs + (self.final,)


def length_trace(cfg, raw_samples):
    """
    Per-layer sequence lengths for ``raw_samples`` input samples.

    Raises:
        SequenceLengthError: if the input is shorter than the receptive field
    """
    n0 = cfg.feature_extractor.frames(raw_samples)
    n = n0
    inputs = []
    for i in range(cfg.layers):
        inputs.append(n)
        if i in cfg.positions:
            n = reduced_length(n, cfg.redapt.block1, where=f"RedApt after layer {i}")
    for j in range(cfg.length_adaptor_layers):
        n = reduced_length(n, POOLING_SPEC, where=f"length adaptor {j}")
    return LengthTrace(n0=n0, layer_inputs=tuple(inputs), final=n)


@dataclass
class EncoderParams(ParamGroup):
    feature_extractor: FeatureExtractorParams
    layers: list
    redapt: dict
    final_norm_gain: Tensor
    final_norm_bias: Tensor
    adaptor_weights: list = field(default_factory=list)
    adaptor_biases: list = field(default_factory=list)


def init_encoder_params(cfg, seed):
    """
    Draw encoder weights. Every component has its own seeded stream, so
    adding or removing RedApt blocks never changes the other weights.
    """
    fe = init_feature_extractor(
        cfg.feature_extractor, cfg.d_model, seeding.rng_for(seed, seeding.STREAM_FEATURE_EXTRACTOR)
    )
    layers = [
        init_transformer_layer(
            cfg.d_model, cfg.n_heads, cfg.d_ffn, cfg.dropout, seeding.rng_for(seed, seeding.STREAM_LAYER, i)
        )
        for i in range(cfg.layers)
    ]
    blocks = {
        p: init_redapt_params(cfg.redapt, seeding.rng_for(seed, seeding.STREAM_REDAPT, p))
        for p in cfg.positions
    }
    params = EncoderParams(
        feature_extractor=fe,
        layers=layers,
        redapt=blocks,
        final_norm_gain=ones(cfg.d_model),
        final_norm_bias=zeros(cfg.d_model),
    )
    d = cfg.d_model
    for j in range(cfg.length_adaptor_layers):
        rng = seeding.rng_for(seed, seeding.STREAM_LENGTH_ADAPTOR, j)
        params.adaptor_weights.append(uniform_fan_in(rng, (POOLING_SPEC.k, d, d), POOLING_SPEC.k * d))
        params.adaptor_biases.append(zeros(d))
    if cfg.reinit_top_k:
        params = reinit_top_layers(params, cfg, cfg.reinit_top_k, seed)
    logger.debug(f"initialized encoder with {params.num_parameters():,} parameters")
    return params


def encoder_stack_forward(x, params, cfg, train_flag=False, seed=0, step=0):
    """
    Run the Transformer stack on projected features [b, n0, d_model].

    Covers the layers with their RedApt blocks, the final norm and the
    length adaptor; ``encoder_forward`` is the extractor plus this.
    """
    for i, layer in enumerate(params.layers):
        with mac_section(f"layer{i}"):
            x = transformer_layer_forward(x, layer, train_flag=train_flag, seed=seed, layer_id=i, step=step)
        if i in cfg.positions:
            with mac_section(f"redapt{i}"):
                x = redapt_forward(x, params.redapt[i], cfg.redapt, train_flag=train_flag)
    x = ops.layernorm(x, params.final_norm_gain, params.final_norm_bias)
    for j, (w, b) in enumerate(zip(params.adaptor_weights, params.adaptor_biases)):
        with mac_section(f"length_adaptor{j}"):
            x = ops.gelu(ops.conv1d(x, w, b, POOLING_SPEC, name='length_adaptor'))
    return x


def encode_features(wave, params, cfg):
    """Feature extractor and projection: [b, samples] -> [b, n0, d_model]."""
    if wave.ndim != 2:
        raise ShapeError(f"encoder expects [b, samples], got {wave.shape}")
    with mac_section('feature_extractor'):
        features = feature_extractor_forward(wave, params.feature_extractor, cfg.feature_extractor)
    return feature_projection(features, params.feature_extractor)


def encoder_forward(wave, params, cfg, train_flag=False, seed=0, step=0):
    """
    Encode a batch of waveforms.

    Args:
        wave: Tensor [b, samples]
        params: EncoderParams
        cfg: EncoderConfig
        train_flag: enables dropout
        seed, step: dropout stream key

    Returns:
        Tensor [b, n_L, d_model] with n_L = length_trace(cfg, samples).final
    """
    x = encode_features(wave, params, cfg)
    return encoder_stack_forward(x, params, cfg, train_flag=train_flag, seed=seed, step=step)


def reinit_top_layers(params, cfg, k, seed):
    """
    Re-draw the top ``k`` Transformer layers from the init distribution.

    Lower layers (and everything else) are shared unchanged.

    Raises:
        ConfigError: if k is outside [0, L]
    """
    if not 0 <= k <= cfg.layers:
        raise ConfigError(f"cannot re-initialize {k} of {cfg.layers} layers", key='reinit_top_k')
    layers = list(params.layers)
    for i in range(cfg.layers - k, cfg.layers):
        layers[i] = init_transformer_layer(
            cfg.d_model, cfg.n_heads, cfg.d_ffn, cfg.dropout, seeding.rng_for(seed, seeding.STREAM_REINIT, i)
        )
    if k:
        logger.info(f"re-initialized top {k} Transformer layers (seed={seed})")
    return replace(params, layers=layers)

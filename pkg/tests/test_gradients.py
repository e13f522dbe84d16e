"""
Central finite-difference checks of every differentiable op, the RedApt
block and a full Transformer layer at fp64 over ten seeds, plus one check
of the whole encoder.
"""

import numpy as np
import pytest

from redapt.lengths import POOLING_SPEC, RESTORING_SPEC
from redapt.nn.blocks import FeatureExtractorConfig, init_transformer_layer, transformer_layer_forward
from redapt.nn.encoder import EncoderConfig, encoder_forward, init_encoder_params, length_trace
from redapt.nn.redapt_block import RedAptSpec, init_redapt_params, redapt_forward
from redapt.tensor import ops
from redapt.tensor.core import Tensor
from redapt.tensor.gradcheck import gradcheck, max_relative_error

SEEDS = range(10)
TOLERANCE = 1e-4
# Denominator floor keeps round-off on near-zero gradients from dominating
FLOOR = 1e-4


def _param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _weighted_sum(out, weights):
    return ops.sum(ops.mul(out, weights))


def _check(fn, tensors):
    assert gradcheck(fn, tensors, h=1e-5, floor=FLOOR) < TOLERANCE


@pytest.mark.parametrize('seed', SEEDS)
def test_elementwise_ops(seed):
    rng = np.random.default_rng(seed)
    a, b = _param(rng, 3, 4), _param(rng, 4)
    w = Tensor(rng.normal(size=(3, 4)))
    _check(lambda: _weighted_sum(ops.add(a, b), w), [a, b])
    _check(lambda: _weighted_sum(ops.sub(a, b), w), [a, b])
    _check(lambda: _weighted_sum(ops.mul(a, b), w), [a, b])


@pytest.mark.parametrize('seed', SEEDS)
def test_matmul(seed):
    rng = np.random.default_rng(seed)
    a, b = _param(rng, 2, 3, 4), _param(rng, 4, 5)
    w = Tensor(rng.normal(size=(2, 3, 5)))
    _check(lambda: _weighted_sum(ops.matmul(a, b), w), [a, b])


@pytest.mark.parametrize('seed', SEEDS)
@pytest.mark.parametrize('spec', [POOLING_SPEC, RESTORING_SPEC], ids=['pool', 'restore'])
def test_conv1d(seed, spec):
    rng = np.random.default_rng(seed)
    x, w, bias = _param(rng, 2, 7, 3), _param(rng, 3, 3, 4, scale=0.5), _param(rng, 4)
    t_out = (7 + 2 * spec.p - spec.k) // spec.s + 1
    weights = Tensor(rng.normal(size=(2, t_out, 4)))
    _check(lambda: _weighted_sum(ops.conv1d(x, w, bias, spec), weights), [x, w, bias])


@pytest.mark.parametrize('seed', SEEDS)
def test_layernorm(seed):
    rng = np.random.default_rng(seed)
    x, gain, bias = _param(rng, 2, 3, 6), _param(rng, 6), _param(rng, 6)
    w = Tensor(rng.normal(size=(2, 3, 6)))
    _check(lambda: _weighted_sum(ops.layernorm(x, gain, bias), w), [x, gain, bias])


@pytest.mark.parametrize('seed', SEEDS)
def test_gelu_softmax(seed):
    rng = np.random.default_rng(seed)
    x = _param(rng, 3, 5)
    w = Tensor(rng.normal(size=(3, 5)))
    _check(lambda: _weighted_sum(ops.gelu(x), w), [x])
    _check(lambda: _weighted_sum(ops.softmax_lastaxis(x), w), [x])


@pytest.mark.parametrize('seed', SEEDS)
def test_reductions_and_views(seed):
    rng = np.random.default_rng(seed)
    x = _param(rng, 2, 3, 4)
    w3 = Tensor(rng.normal(size=(2, 4)))
    w_t = Tensor(rng.normal(size=(4, 2, 3)))
    w_r = Tensor(rng.normal(size=(6, 4)))
    _check(lambda: _weighted_sum(ops.mean(x, axis=1), w3), [x])
    _check(lambda: _weighted_sum(ops.sum(x, axis=1), w3), [x])
    _check(lambda: _weighted_sum(ops.transpose(x, (2, 0, 1)), w_t), [x])
    _check(lambda: _weighted_sum(ops.reshape(x, (6, 4)), w_r), [x])


@pytest.mark.parametrize('seed', SEEDS)
def test_dropout_in_training(seed):
    rng = np.random.default_rng(seed)
    x = _param(rng, 4, 5)
    w = Tensor(rng.normal(size=(4, 5)))
    _check(lambda: _weighted_sum(ops.dropout(x, 0.3, True, seed=seed, layer_id=1, step=2), w), [x])


@pytest.mark.parametrize('seed', SEEDS)
def test_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    logits = _param(rng, 5, 4)
    target = rng.integers(0, 4, size=5)
    _check(lambda: ops.cross_entropy_label_smoothed(logits, target, smoothing=0.2), [logits])


@pytest.mark.parametrize('seed', SEEDS)
def test_redapt_block(seed):
    rng = np.random.default_rng(seed)
    spec = RedAptSpec(channels=6)
    params = init_redapt_params(spec, rng)
    a = _param(rng, 2, 9, 6)
    w = Tensor(rng.normal(size=(2, 5, 6)))
    _check(lambda: _weighted_sum(redapt_forward(a, params, spec), w), [a] + params.parameters())


@pytest.mark.parametrize('seed', SEEDS)
def test_transformer_layer(seed):
    rng = np.random.default_rng(seed)
    params = init_transformer_layer(8, 2, 16, 0.0, rng)
    x = _param(rng, 2, 5, 8)
    w = Tensor(rng.normal(size=(2, 5, 8)))
    _check(lambda: _weighted_sum(transformer_layer_forward(x, params), w), [x] + params.parameters())


def test_full_encoder():
    cfg = EncoderConfig(
        layers=2, d_model=8, n_heads=2, d_ffn=16, dropout=0.0,
        feature_extractor=FeatureExtractorConfig(kernels=(4, 2), strides=(2, 2), channels=4), positions=(0,),
    )
    params = init_encoder_params(cfg, seed=0)
    rng = np.random.default_rng(0)
    wave = _param(rng, 1, 64)
    n_final = length_trace(cfg, 64).final
    w = Tensor(rng.normal(size=(1, n_final, 8)))
    _check(lambda: _weighted_sum(encoder_forward(wave, params, cfg), w), [wave] + params.parameters())


def test_max_relative_error_floor():
    assert max_relative_error(np.array([1e-9]), np.array([2e-9]), floor=1e-6) == pytest.approx(1e-3)
    assert max_relative_error(np.array([1.0]), np.array([1.0])) == 0.0

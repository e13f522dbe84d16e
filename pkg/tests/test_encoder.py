import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pytest

from conftest import TINY_FE, TINY_RAW
from redapt.cost.model import estimate
from redapt.nn.encoder import (
    EncoderConfig,
    PositionConfig,
    as_positions,
    encoder_forward,
    init_encoder_params,
    length_trace,
    reinit_top_layers,
)
from redapt.tensor import ops
from redapt.tensor.core import MacCounter, Tape, Tensor
from redapt.utils.errors import ConfigError, ShapeError


def _wave(batch=1, samples=TINY_RAW, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal((batch, samples)))


def test_position_config_validation():
    assert PositionConfig((2, 5, 6)).m == 3
    with pytest.raises(ConfigError):
        PositionConfig((5, 2))
    with pytest.raises(ConfigError):
        PositionConfig((3, 3))
    with pytest.raises(ConfigError):
        PositionConfig((-1,))


def test_as_positions_parsing():
    assert as_positions('13,15,20').positions == (13, 15, 20)
    assert as_positions('[13, 15, 20]').positions == (13, 15, 20)
    assert as_positions('').positions == ()
    assert str(as_positions([1, 2])) == '[1,2]'


def test_position_out_of_range(tiny_cfg):
    with pytest.raises(ConfigError):
        tiny_cfg.with_positions((2,))


def test_heads_must_divide_width():
    with pytest.raises(ConfigError):
        EncoderConfig(d_model=10, n_heads=4)


def test_output_length_matches_trace(tiny_cfg):
    params = init_encoder_params(tiny_cfg, seed=0)
    out = encoder_forward(_wave(batch=2), params, tiny_cfg)
    trace = length_trace(tiny_cfg, TINY_RAW)
    assert trace.n0 == 64
    assert trace.layer_inputs == (64, 32)
    assert out.shape == (2, trace.final, 16)


def test_no_positions_keeps_length(tiny_cfg):
    cfg = tiny_cfg.with_positions(())
    out = encoder_forward(_wave(), init_encoder_params(cfg, seed=0), cfg)
    assert out.shape == (1, 64, 16)


def test_length_adaptor_divides_by_eight(tiny_cfg):
    cfg = replace(tiny_cfg.with_positions(()), length_adaptor_layers=3)
    out = encoder_forward(_wave(), init_encoder_params(cfg, seed=0), cfg)
    assert length_trace(cfg, TINY_RAW).final == 8
    assert out.shape == (1, 8, 16)


def test_wave_must_be_batched(tiny_cfg):
    with pytest.raises(ShapeError):
        encoder_forward(Tensor(np.zeros(TINY_RAW)), init_encoder_params(tiny_cfg, seed=0), tiny_cfg)


def test_adding_blocks_leaves_other_weights_unchanged(tiny_cfg):
    base = init_encoder_params(tiny_cfg.with_positions(()), seed=3)
    more = init_encoder_params(tiny_cfg.with_positions((0, 1)), seed=3)
    base_named = base.named_parameters()
    more_named = more.named_parameters()
    for name, tensor in base_named.items():
        np.testing.assert_array_equal(tensor.data, more_named[name].data)
    assert set(more_named) - set(base_named)


def test_forward_is_deterministic(tiny_cfg):
    params = init_encoder_params(tiny_cfg, seed=1)
    a = encoder_forward(_wave(), params, tiny_cfg, train_flag=True, seed=5, step=2).data
    b = encoder_forward(_wave(), params, tiny_cfg, train_flag=True, seed=5, step=2).data
    np.testing.assert_array_equal(a, b)


def test_reinit_top_layers_only_touches_top(tiny_cfg):
    params = init_encoder_params(tiny_cfg, seed=0)
    fresh = reinit_top_layers(params, tiny_cfg, 1, seed=9)
    np.testing.assert_array_equal(fresh.layers[0].w_q.data, params.layers[0].w_q.data)
    assert not np.array_equal(fresh.layers[1].w_q.data, params.layers[1].w_q.data)
    with pytest.raises(ConfigError):
        reinit_top_layers(params, tiny_cfg, 3, seed=9)


def test_gradients_reach_layers_below_pooling(tiny_cfg):
    params = init_encoder_params(tiny_cfg, seed=0)
    with Tape() as tape:
        out = encoder_forward(_wave(), params, tiny_cfg)
        loss = ops.sum(ops.mul(out, out))
    tape.backward(loss)
    assert np.any(params.layers[0].w_q.grad != 0)
    assert np.any(params.feature_extractor.conv_weights[0].grad != 0)


@pytest.mark.parametrize('positions', [(), (0,), (1,), (0, 1)])
def test_closed_form_macs_equal_counter(tiny_cfg, positions):
    cfg = tiny_cfg.with_positions(positions)
    params = init_encoder_params(cfg, seed=0)
    with MacCounter() as counter:
        encoder_forward(_wave(), params, cfg)
    report = estimate(cfg, raw_samples=TINY_RAW, batch=1)
    assert report.total_macs == counter.total_macs
    rows = {row.component: row for row in report.rows}
    for i in range(cfg.layers):
        assert rows[f"layer{i}"].macs == counter.total(prefix=f"layer{i}")
    for p in positions:
        assert rows[f"redapt{p}"].macs == counter.total(prefix=f"redapt{p}")
    fe_macs = sum(r.macs for name, r in rows.items() if name.startswith('fe_conv'))
    assert fe_macs == counter.total(prefix='feature_extractor')
    assert rows['feature_projection'].macs == counter.total(prefix='feature_projection')


def test_closed_form_macs_with_length_adaptor(tiny_cfg):
    cfg = replace(tiny_cfg, length_adaptor_layers=2)
    with MacCounter() as counter:
        encoder_forward(_wave(batch=2), init_encoder_params(cfg, seed=0), cfg)
    assert estimate(cfg, raw_samples=TINY_RAW, batch=2).total_macs == counter.total_macs


def test_no_positions_reproduces_plain_encoder(tiny_cfg):
    plain_cfg = tiny_cfg.with_positions(())
    with_blocks = init_encoder_params(tiny_cfg.with_positions((0, 1)), seed=4)
    plain = init_encoder_params(plain_cfg, seed=4)
    a = encoder_forward(_wave(), with_blocks, plain_cfg).data
    b = encoder_forward(_wave(), plain, plain_cfg).data
    np.testing.assert_array_equal(a, b)


def test_reinit_zero_layers_is_a_no_op(tiny_cfg):
    params = init_encoder_params(tiny_cfg, seed=0)
    same = reinit_top_layers(params, tiny_cfg, 0, seed=9)
    for name, tensor in params.named_parameters().items():
        np.testing.assert_array_equal(tensor.data, same.named_parameters()[name].data)


def test_reinit_all_layers_is_seeded(tiny_cfg):
    params = init_encoder_params(tiny_cfg, seed=0)
    a = reinit_top_layers(params, tiny_cfg, tiny_cfg.layers, seed=9)
    b = reinit_top_layers(params, tiny_cfg, tiny_cfg.layers, seed=9)
    for old, x, y in zip(params.layers, a.layers, b.layers):
        assert not np.array_equal(old.w_ffn1.data, x.w_ffn1.data)
        np.testing.assert_array_equal(x.w_ffn1.data, y.w_ffn1.data)


def test_concurrent_forwards_share_frozen_params(tiny_cfg):
    params = init_encoder_params(tiny_cfg, seed=2)
    waves = [_wave(seed=s) for s in range(4)]
    serial = [encoder_forward(w, params, tiny_cfg).data for w in waves]
    with ThreadPoolExecutor(max_workers=4) as pool:
        parallel = list(pool.map(lambda w: encoder_forward(w, params, tiny_cfg).data, waves))
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a, b)


def test_mac_counter_leaves_outputs_unchanged(tiny_cfg):
    params = init_encoder_params(tiny_cfg, seed=6)
    plain = encoder_forward(_wave(batch=2), params, tiny_cfg).data
    with MacCounter() as counter:
        counted = encoder_forward(_wave(batch=2), params, tiny_cfg).data
    assert counter.total_macs > 0
    np.testing.assert_array_equal(plain, counted)


def _ref_gelu(v):
    return 0.5 * v * (1.0 + math.tanh(ops.GELU_TANH_COEFF * (v + ops.GELU_CUBIC_COEFF * v ** 3)))


def _ref_layernorm(rows, gain, bias):
    out = []
    for row in rows:
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        out.append([(v - mu) / math.sqrt(var + 1e-5) * g + b for v, g, b in zip(row, gain, bias)])
    return out


def _ref_linear(rows, w, b):
    return [
        [sum(row[i] * w[i][j] for i in range(len(row))) + b[j] for j in range(len(b))]
        for row in rows
    ]


def _ref_conv(rows, w, b, k, s, p):
    c_in = len(rows[0])
    padded = [[0.0] * c_in] * p + rows + [[0.0] * c_in] * p
    n_out = (len(rows) + 2 * p - k) // s + 1
    return [
        [
            b[co] + sum(padded[t * s + j][ci] * w[j][ci][co] for j in range(k) for ci in range(c_in))
            for co in range(len(b))
        ]
        for t in range(n_out)
    ]


def _ref_apply(rows, fn):
    return [[fn(v) for v in row] for row in rows]


def _ref_add(a, b):
    return [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def _ref_attention(x, layer, heads):
    d = len(x[0])
    d_head = d // heads
    h = _ref_layernorm(x, layer.ln1_gain.data.tolist(), layer.ln1_bias.data.tolist())
    q, k, v = (
        _ref_linear(h, getattr(layer, f"w_{n}").data.tolist(), getattr(layer, f"b_{n}").data.tolist())
        for n in 'qkv'
    )
    merged = [[0.0] * d for _ in x]
    for head in range(heads):
        cols = range(head * d_head, (head + 1) * d_head)
        for t in range(len(x)):
            scores = [sum(q[t][c] * k[u][c] for c in cols) / math.sqrt(d_head) for u in range(len(x))]
            top = max(scores)
            e = [math.exp(s - top) for s in scores]
            total = sum(e)
            for c in cols:
                merged[t][c] = sum(e[u] / total * v[u][c] for u in range(len(x)))
    out = _ref_linear(merged, layer.w_o.data.tolist(), layer.b_o.data.tolist())
    return _ref_add(x, out)


def _ref_layer(x, layer, heads):
    h = _ref_attention(x, layer, heads)
    f = _ref_layernorm(h, layer.ln2_gain.data.tolist(), layer.ln2_bias.data.tolist())
    f = _ref_apply(_ref_linear(f, layer.w_ffn1.data.tolist(), layer.b_ffn1.data.tolist()), _ref_gelu)
    f = _ref_linear(f, layer.w_ffn2.data.tolist(), layer.b_ffn2.data.tolist())
    return _ref_add(h, f)


def _ref_redapt(x, block, spec):
    a1 = _ref_conv(x, block.w1.data.tolist(), block.b1.data.tolist(), spec.block1.k, spec.block1.s, spec.block1.p)
    a1 = _ref_apply(_ref_layernorm(a1, block.ln1_gain.data.tolist(), block.ln1_bias.data.tolist()), _ref_gelu)
    r = _ref_conv(a1, block.w2.data.tolist(), block.b2.data.tolist(), spec.block2.k, spec.block2.s, spec.block2.p)
    r = _ref_apply(_ref_layernorm(r, block.ln2_gain.data.tolist(), block.ln2_bias.data.tolist()), _ref_gelu)
    return _ref_add(a1, r)


def _ref_encoder(samples, params, cfg):
    fe = params.feature_extractor
    x = [[v] for v in samples]
    for i, (k, s) in enumerate(zip(cfg.feature_extractor.kernels, cfg.feature_extractor.strides)):
        x = _ref_conv(x, fe.conv_weights[i].data.tolist(), fe.conv_biases[i].data.tolist(), k, s, 0)
        x = _ref_apply(_ref_layernorm(x, fe.norm_gains[i].data.tolist(), fe.norm_biases[i].data.tolist()), _ref_gelu)
    x = _ref_layernorm(x, fe.proj_norm_gain.data.tolist(), fe.proj_norm_bias.data.tolist())
    x = _ref_linear(x, fe.w_proj.data.tolist(), fe.b_proj.data.tolist())
    for i, layer in enumerate(params.layers):
        x = _ref_layer(x, layer, cfg.n_heads)
        if i in cfg.positions:
            x = _ref_redapt(x, params.redapt[i], cfg.redapt)
    return _ref_layernorm(x, params.final_norm_gain.data.tolist(), params.final_norm_bias.data.tolist())


def test_matches_scalar_loop_reference():
    cfg = EncoderConfig(
        layers=4, d_model=16, n_heads=2, d_ffn=32, dropout=0.0,
        feature_extractor=TINY_FE, positions=(1,),
    )
    params = init_encoder_params(cfg, seed=8)
    rng = np.random.default_rng(8)
    # Non-trivial biases and norm affines so every term is exercised
    for tensor in params.parameters():
        tensor.data = tensor.data + rng.normal(0.0, 0.1, size=tensor.shape)
    wave = _wave(seed=8)
    out = encoder_forward(wave, params, cfg).data
    expected = np.array(_ref_encoder(wave.data[0].tolist(), params, cfg))
    assert out.shape == (1,) + expected.shape == (1, 32, 16)
    np.testing.assert_allclose(out[0], expected, rtol=1e-10, atol=1e-10)

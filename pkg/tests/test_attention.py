import numpy as np
import pytest

from conftest import random_tensor
from redapt.nn.blocks import init_transformer_layer, mhsa_forward, transformer_layer_forward
from redapt.tensor.core import MacCounter


@pytest.fixture
def layer(rng):
    return init_transformer_layer(d_model=8, n_heads=2, d_ffn=16, dropout_p=0.1, rng=rng)


def test_single_position_attends_to_itself(rng, layer):
    _, attention = mhsa_forward(random_tensor(rng, 1, 1, 8), layer, return_attention=True)
    np.testing.assert_allclose(attention.data, np.ones((1, 2, 1, 1)))


def test_attention_rows_sum_to_one(rng, layer):
    _, attention = mhsa_forward(random_tensor(rng, 2, 5, 8), layer, return_attention=True)
    assert attention.shape == (2, 2, 5, 5)
    np.testing.assert_allclose(attention.data.sum(axis=-1), np.ones((2, 2, 5)))


def test_zero_output_projection_is_identity(rng, layer):
    layer.w_o.data[...] = 0.0
    layer.b_o.data[...] = 0.0
    x = random_tensor(rng, 1, 6, 8)
    np.testing.assert_array_equal(mhsa_forward(x, layer).data, x.data)


def test_score_macs_grow_quadratically(rng, layer):
    counts = {}
    for t in (4, 8):
        with MacCounter() as counter:
            mhsa_forward(random_tensor(rng, 1, t, 8), layer)
        counts[t] = counter.total(op='attention_scores')
        assert counts[t] == t * t * 8
        assert counter.total(op='attention_projection') == 4 * t * 8 * 8
    assert counts[8] == 4 * counts[4]


def test_layer_preserves_shape(rng, layer):
    out = transformer_layer_forward(random_tensor(rng, 3, 7, 8), layer, train_flag=True, seed=1)
    assert out.shape == (3, 7, 8)

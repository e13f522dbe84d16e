import numpy as np
import pytest

from redapt.nn.blocks import FeatureExtractorConfig
from redapt.nn.encoder import EncoderConfig
from redapt.presets import desk_config, w2v2_large_config
from redapt.tensor.core import Tensor

# L=2, d=16; 2 layers of stride 2 turn 260 samples into n0=64 frames
TINY_FE = FeatureExtractorConfig(kernels=(4, 2), strides=(2, 2), channels=8)
TINY_RAW = 260


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return EncoderConfig(
        layers=2, d_model=16, n_heads=2, d_ffn=32, dropout=0.0,
        feature_extractor=TINY_FE, positions=(0,),
    )


@pytest.fixture
def desk_cfg():
    return desk_config()


@pytest.fixture
def large_cfg():
    return w2v2_large_config()


def random_tensor(rng, *shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)

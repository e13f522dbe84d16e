"""
Named encoder presets and the position configurations studied for RedApt.
"""

from redapt.nn.blocks import FeatureExtractorConfig
from redapt.nn.encoder import EncoderConfig

# Average raw-signal length used for throughput / FLOPs measurements
MEASUREMENT_RAW_SAMPLES = 88000

# One configuration per block count m = 1..4
TABLE_COMP_POSITIONS = [(15,), (15, 20), (15, 18, 19), (14, 15, 18, 19)]
REFERENCE_FLOPS_RATIOS = {1: 0.86, 2: 0.84, 3: 0.81, 4: 0.76}

# Position study, in increasing FLOPs order
TABLE_POSITION_CONFIGS = [
    (2, 5, 6),
    (7, 9, 11),
    (13, 15, 20),
    (14, 18, 20),
    (15, 18, 19),
    (16, 18, 20),
    (17, 19, 20),
]

BEST_POSITIONS = (13, 15, 20)
SEARCH_START = (14, 15, 18, 19)

# Single documented calibration point for the feature-extractor FLOPs share
CALIBRATION_POSITIONS = (15, 18, 19)
CALIBRATION_FLOPS_RATIO = 0.81

# d_model * layers above this is refused by the benchmark unless overridden
BENCH_SIZE_CAP = 4096


def desk_config(positions=(2,), **overrides):
    """Runnable desk-scale encoder: L=8, d=64, 4 heads, FFN 256, 32 extractor channels."""
    values = dict(
        layers=8, d_model=64, n_heads=4, d_ffn=256, dropout=0.1,
        feature_extractor=FeatureExtractorConfig(channels=32),
        positions=positions,
    )
    values.update(overrides)
    return EncoderConfig(**values)


def w2v2_large_config(positions=(), **overrides):
    """wav2vec2-large shape, used by the closed-form cost model only."""
    values = dict(
        layers=24, d_model=1024, n_heads=16, d_ffn=4096, dropout=0.1,
        feature_extractor=FeatureExtractorConfig(channels=512),
        positions=positions,
    )
    values.update(overrides)
    return EncoderConfig(**values)


def w2v2_large_adaptor_config(**overrides):
    """Baseline with no RedApt blocks and a 3-layer (x8) length adaptor on top of the encoder."""
    return w2v2_large_config(positions=(), length_adaptor_layers=3, **overrides)


PRESETS = {
    'desk': desk_config,
    'w2v2-large': lambda: w2v2_large_config(positions=BEST_POSITIONS),
    'w2v2-large-adaptor': w2v2_large_adaptor_config,
}

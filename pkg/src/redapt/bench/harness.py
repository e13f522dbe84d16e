"""
Benchmark functions for the RedApt pipeline.

Provides throughput and peak-allocation measurement of encoder forward
passes on seeded synthetic batches, and batch-size sweeps that emit
plot-ready tables.
"""

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np
import pandas as pd
from threadpoolctl import threadpool_limits
from tqdm import tqdm

from redapt.io.config import config_digest
from redapt.nn.encoder import encode_features, encoder_forward, encoder_stack_forward, init_encoder_params
from redapt.presets import BENCH_SIZE_CAP, MEASUREMENT_RAW_SAMPLES
from redapt.tensor.core import AllocationTracker, Tape, Tensor
from redapt.utils import seeding
from redapt.utils.errors import BenchCapError, ConfigError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass
class BenchReport:
    """
    Timing and allocation summary of one benchmark run.

    ``throughput`` is sequences per second over the measured iterations;
    ``peak_tracked_elements`` is the largest number of live tensor elements
    during one forward pass recorded for training (every activation kept).

    The ``stack_*`` fields time the Transformer stack alone on features
    computed once up front. The extractor cost does not depend on the
    positions, so these fields isolate what pooling changes.
    """

    config_digest: str
    positions: List[int]
    batch: int
    raw_samples: int
    warmup: int
    iters: int
    throughput: float
    mean_s: float
    p50_s: float
    p95_s: float
    peak_tracked_elements: int
    stack_throughput: float
    stack_p50_s: float
    timings_s: List[float] = field(default_factory=list)
    stack_timings_s: List[float] = field(default_factory=list)

    def to_dict(self):
        return {'schema_version': SCHEMA_VERSION, **asdict(self)}


def check_size_cap(cfg, allow_large=False, cap=BENCH_SIZE_CAP):
    """
    Refuse configs whose d_model * layers exceeds ``cap``.

    Raises:
        BenchCapError: when over the cap and ``allow_large`` is False
    """
    size = cfg.d_model * cfg.layers
    if size > cap and not allow_large:
        raise BenchCapError(
            f"d_model * layers = {size} exceeds the benchmark cap {cap}; pass allow_large to override"
        )
    if size > cap:
        logger.warning(f"benchmarking over-cap model (d_model * layers = {size})")


def synthetic_batch(batch, raw_samples, seed):
    return seeding.rng_for(seed, seeding.STREAM_BATCH, batch, raw_samples).standard_normal((batch, raw_samples))


def peak_forward_elements(cfg, params, waves):
    """Peak live tensor elements of one taped forward pass."""
    with AllocationTracker() as tracker:
        with Tape():
            out = encoder_forward(Tensor(waves), params, cfg, train_flag=False)
        del out
    return tracker.peak


def run_bench(cfg, batch=1, raw_samples=MEASUREMENT_RAW_SAMPLES, warmup=1, iters=5, seed=0, allow_large=False,
              params=None):
    """
    Time encoder forward passes on one seeded synthetic batch.

    Args:
        cfg: EncoderConfig
        batch: sequences per forward pass
        raw_samples: waveform length
        warmup: untimed passes before measurement
        iters: timed passes (>= 1)
        seed: seeds weights and the batch
        allow_large: bypass the size cap
        params: optional pre-built EncoderParams

    Returns:
        BenchReport
    """
    if iters < 1:
        raise ConfigError(f"iters must be >= 1, got {iters}", key='iters')
    if warmup < 0:
        raise ConfigError(f"warmup must be >= 0, got {warmup}", key='warmup')
    if batch < 1:
        raise ConfigError(f"batch must be >= 1, got {batch}", key='batch')
    check_size_cap(cfg, allow_large)

    params = params or init_encoder_params(cfg, seed)
    waves = synthetic_batch(batch, raw_samples, seed)
    timings = []
    stack_timings = []
    with threadpool_limits(limits=1):
        features = encode_features(Tensor(waves), params, cfg)
        for _ in range(warmup):
            encoder_forward(Tensor(waves), params, cfg)
            encoder_stack_forward(features, params, cfg)
        for _ in range(iters):
            start = time.perf_counter()
            encoder_forward(Tensor(waves), params, cfg)
            timings.append(time.perf_counter() - start)
        for _ in range(iters):
            start = time.perf_counter()
            encoder_stack_forward(features, params, cfg)
            stack_timings.append(time.perf_counter() - start)
    peak = peak_forward_elements(cfg, params, waves)

    elapsed = float(np.sum(timings))
    stack_p50 = float(np.median(stack_timings))
    report = BenchReport(
        config_digest=config_digest(cfg),
        positions=list(cfg.positions.positions),
        batch=batch,
        raw_samples=raw_samples,
        warmup=warmup,
        iters=iters,
        throughput=batch * iters / elapsed if elapsed > 0 else float('inf'),
        mean_s=float(np.mean(timings)),
        p50_s=float(np.percentile(timings, 50)),
        p95_s=float(np.percentile(timings, 95)),
        peak_tracked_elements=int(peak),
        stack_throughput=batch / stack_p50 if stack_p50 > 0 else float('inf'),
        stack_p50_s=stack_p50,
        timings_s=[float(t) for t in timings],
        stack_timings_s=[float(t) for t in stack_timings],
    )
    logger.info(
        f"bench positions {cfg.positions} batch {batch}: {report.throughput:.2f} seq/s, "
        f"p50 {report.p50_s * 1000:.1f} ms (stack {report.stack_p50_s * 1000:.1f} ms), "
        f"peak {report.peak_tracked_elements:,} elements"
    )
    return report


def batch_sweep(cfg, batch_sizes, raw_samples=MEASUREMENT_RAW_SAMPLES, warmup=1, iters=3, seed=0,
                allow_large=False, progress=False):
    """
    One BenchReport per batch size, as a DataFrame (one row per batch size).
    """
    check_size_cap(cfg, allow_large)
    params = init_encoder_params(cfg, seed)
    rows = []
    for batch in tqdm(batch_sizes, desc='batch sweep', disable=not progress):
        report = run_bench(cfg, batch=batch, raw_samples=raw_samples, warmup=warmup, iters=iters, seed=seed,
                           allow_large=allow_large, params=params)
        row = report.to_dict()
        row.pop('timings_s')
        row.pop('stack_timings_s')
        row['positions'] = str(row['positions'])
        rows.append(row)
    return pd.DataFrame(rows)

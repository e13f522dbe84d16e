"""
Closed-form cost model for RedApt-integrated encoders.

Provides FLOPs, activation-memory and parameter estimates for any encoder
config, position configuration and input length, plus ratio tables against
the no-RedApt baseline.

Conventions:
    - FLOPs = 2 x MACs. Only matmul and convolution MACs are counted;
      softmax, norm and activation arithmetic is excluded, which makes the
      MAC totals match MacCounter exactly.
    - Memory counts retained activation elements (no optimizer state, no
      bytes), using the per-component retention constants below.
    - Encoder only; no decoder.
    - A block after the last layer (position L-1) shortens no Transformer
      layer, so it only adds its own convolutions: its FLOPs and memory
      ratios are above 1.0. Every other added position lowers both.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import pandas as pd

from redapt.lengths import POOLING_SPEC, reduced_length
from redapt.nn.encoder import as_positions, length_trace
from redapt.nn.redapt_block import param_count as redapt_param_count
from redapt.utils.errors import ConfigError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FLOPS_PER_MAC = 2

# Activations retained per Transformer layer per (position, channel): norms,
# Q/K/V/O, residuals, FFN hidden (counted in units of d)
ACTIVATIONS_PER_LAYER = 12
# Per RedApt convolution: conv output, norm output, GELU output; plus the residual sum
ACTIVATIONS_PER_REDAPT_CONV = 3
# Per feature-extractor layer: conv output, norm output, GELU output
ACTIVATIONS_PER_FE_LAYER = 3


@dataclass
class CostRow:
    """One component of the encoder: feature-extractor conv, projection, layer, RedApt block or adaptor."""

    component: str
    n: int
    macs: int
    flops: float
    memory: float


@dataclass
class CostReport:
    """
    Cost estimate of one configuration.

    Ratios are relative to the same encoder without RedApt blocks; they are
    exactly 1.0 for the baseline itself.
    """

    positions: Tuple[int, ...]
    raw_samples: int
    batch: int
    fe_share: float
    rows: List[CostRow]
    param_count: int
    flops_ratio: float = 1.0
    memory_ratio: float = 1.0
    param_ratio: float = 1.0
    baseline_flops: float = None
    baseline_memory: float = None
    lengths: Tuple[int, ...] = field(default_factory=tuple)

    @property
    def total_macs(self):
        return sum(r.macs for r in self.rows)

    @property
    def total_flops(self):
        return sum(r.flops for r in self.rows)

    @property
    def activation_memory_elements(self):
        return sum(r.memory for r in self.rows)

    def to_frame(self):
        """Per-component rows with CSV columns layer, n_i, flops, mem."""
        return pd.DataFrame(
            {
                'layer': [r.component for r in self.rows],
                'n_i': [r.n for r in self.rows],
                'flops': [r.flops for r in self.rows],
                'mem': [r.memory for r in self.rows],
            }
        )

    def to_dict(self):
        return {
            'schema_version': SCHEMA_VERSION,
            'flops_convention': 'FLOPs = 2 x MACs (matmul/conv only)',
            'positions': list(self.positions),
            'raw_samples': self.raw_samples,
            'batch': self.batch,
            'fe_share': self.fe_share,
            'total_macs': self.total_macs,
            'total_flops': self.total_flops,
            'activation_memory_elements': self.activation_memory_elements,
            'param_count': self.param_count,
            'flops_ratio': self.flops_ratio,
            'memory_ratio': self.memory_ratio,
            'param_ratio': self.param_ratio,
            'lengths': list(self.lengths),
            'rows': [
                {'layer': r.component, 'n_i': r.n, 'macs': r.macs, 'flops': r.flops, 'mem': r.memory}
                for r in self.rows
            ],
        }


def _row(component, n, macs, memory, scale=1.0):
    return CostRow(component=component, n=n, macs=int(macs), flops=FLOPS_PER_MAC * macs * scale, memory=float(memory))


def _cost_rows(cfg, raw_samples, batch, fe_share):
    b = batch
    d, f, h = cfg.d_model, cfg.d_ffn, cfg.n_heads
    fe = cfg.feature_extractor
    rows = []

    c_in = 1
    for j, (spec, t_out) in enumerate(zip(fe.specs, fe.frame_lengths(raw_samples))):
        macs = b * t_out * spec.k * c_in * fe.channels
        rows.append(_row(f"fe_conv{j}", t_out, macs, b * ACTIVATIONS_PER_FE_LAYER * t_out * fe.channels, fe_share))
        c_in = fe.channels

    trace = length_trace(cfg, raw_samples)
    n0 = trace.n0
    rows.append(_row('feature_projection', n0, b * n0 * fe.channels * d, b * (n0 * fe.channels + n0 * d)))

    spec = cfg.redapt
    convs = 2 if spec.enable_second_cnn else 1
    for i, n in enumerate(trace.layer_inputs):
        macs = b * (4 * n * d * d + 2 * n * n * d + 2 * n * d * f)
        memory = b * (ACTIVATIONS_PER_LAYER * n * d + h * n * n)
        rows.append(_row(f"layer{i}", n, macs, memory))
        if i in cfg.positions:
            n_out = reduced_length(n, spec.block1)
            macs = b * n_out * spec.block1.k * d * d
            if spec.enable_second_cnn:
                macs += b * n_out * spec.block2.k * d * d
            per_conv = 1 + int(spec.enable_layernorm) + int(spec.enable_gelu)
            memory = b * (convs * per_conv + (1 if spec.enable_second_cnn else 0)) * n_out * d
            rows.append(_row(f"redapt{i}", n_out, macs, memory))

    n = trace.layer_inputs[-1]
    if cfg.layers - 1 in cfg.positions:
        n = reduced_length(n, spec.block1)
    for j in range(cfg.length_adaptor_layers):
        n = reduced_length(n, POOLING_SPEC)
        rows.append(_row(f"length_adaptor{j}", n, b * n * POOLING_SPEC.k * d * d, b * 2 * n * d))
    return rows, trace


def encoder_param_count(cfg):
    """Parameter count of the encoder as built by init_encoder_params."""
    d, f = cfg.d_model, cfg.d_ffn
    fe = cfg.feature_extractor
    c = fe.channels
    count = 0
    c_in = 1
    for k in fe.kernels:
        count += k * c_in * c + c + 2 * c
        c_in = c
    count += 2 * c + c * d + d
    per_layer = 4 * (d * d + d) + 4 * d + d * f + f + f * d + d
    count += cfg.layers * per_layer
    count += 2 * d
    count += len(cfg.positions) * redapt_param_count(cfg.redapt)
    count += cfg.length_adaptor_layers * (POOLING_SPEC.k * d * d + d)
    return count


def estimate(cfg, positions=None, raw_samples=88000, batch=1, fe_share=1.0):
    """
    Estimate FLOPs, activation memory and parameters.

    Args:
        cfg: EncoderConfig
        positions: position configuration (defaults to cfg.positions)
        raw_samples: raw waveform length
        batch: batch size (1 for FLOPs reporting)
        fe_share: calibration scalar applied to feature-extractor FLOPs

    Returns:
        CostReport with ratios against the same encoder without RedApt blocks
    """
    if positions is not None:
        cfg = cfg.with_positions(positions)
    rows, trace = _cost_rows(cfg, raw_samples, batch, fe_share)
    report = CostReport(
        positions=tuple(cfg.positions.positions),
        raw_samples=raw_samples,
        batch=batch,
        fe_share=fe_share,
        rows=rows,
        param_count=encoder_param_count(cfg),
        lengths=trace.lengths,
    )
    base_cfg = cfg.with_positions(())
    base_rows, _ = _cost_rows(base_cfg, raw_samples, batch, fe_share)
    base_flops = sum(r.flops for r in base_rows)
    base_memory = sum(r.memory for r in base_rows)
    report.baseline_flops = base_flops
    report.baseline_memory = base_memory
    if cfg.positions.m:
        report.flops_ratio = report.total_flops / base_flops
        report.memory_ratio = report.activation_memory_elements / base_memory
        report.param_ratio = report.param_count / encoder_param_count(base_cfg)
    return report


def calibrate_fe_share(cfg, positions, target_flops_ratio, raw_samples=88000):
    """
    Solve for the feature-extractor FLOPs scale that puts ``positions`` exactly at ``target_flops_ratio``.

    With F the extractor FLOPs, T the rest for ``positions`` and T0 the rest
    for the baseline: (g*F + T) / (g*F + T0) = r  =>  g = (r*T0 - T) / (F*(1 - r)).

    Raises:
        ConfigError: if no positive scale reaches the target
    """
    report = estimate(cfg, positions, raw_samples=raw_samples, batch=1, fe_share=1.0)
    fe_flops = sum(r.flops for r in report.rows if r.component.startswith('fe_conv'))
    rest = report.total_flops - fe_flops
    rest_base = report.baseline_flops - fe_flops
    r = float(target_flops_ratio)
    if not 0.0 < r < 1.0 or fe_flops <= 0:
        raise ConfigError(f"cannot calibrate to flops ratio {r}", key='target_flops_ratio')
    share = (r * rest_base - rest) / (fe_flops * (1.0 - r))
    if share <= 0:
        logger.warning(f"calibration target {r} unreachable for positions {list(positions)}")
        raise ConfigError(
            f"flops ratio {r} unreachable for positions {list(positions)} (scale would be {share:.4f})",
            key='target_flops_ratio',
        )
    logger.info(f"feature-extractor FLOPs share calibrated to {share:.4f} at positions {list(positions)} -> {r}")
    return share


@dataclass
class RatioRow:
    positions: Tuple[int, ...]
    flops_ratio: float
    memory_ratio: float
    total_flops: float
    activation_memory_elements: float


def ratio_table(cfg, position_configs, raw_samples=88000, batch=1, fe_share=1.0):
    """
    One cost estimate per position configuration, sorted by FLOPs ratio.

    Returns:
        list of RatioRow; the empty configuration has ratio exactly 1.0
    """
    rows = []
    for positions in position_configs:
        positions = as_positions(positions)
        report = estimate(cfg, positions, raw_samples=raw_samples, batch=batch, fe_share=fe_share)
        rows.append(RatioRow(
            positions=report.positions,
            flops_ratio=report.flops_ratio,
            memory_ratio=report.memory_ratio,
            total_flops=report.total_flops,
            activation_memory_elements=report.activation_memory_elements,
        ))
    rows.sort(key=lambda r: (r.flops_ratio, r.positions))
    return rows


def ratio_frame(rows):
    return pd.DataFrame(
        {
            'positions': [str(list(r.positions)) for r in rows],
            'flops_ratio': [r.flops_ratio for r in rows],
            'memory_ratio': [r.memory_ratio for r in rows],
            'flops': [r.total_flops for r in rows],
            'mem': [r.activation_memory_elements for r in rows],
        }
    )


def flops_ratio_fn(cfg, raw_samples=88000, fe_share=1.0):
    """Callable positions -> FLOPs ratio, the cost model used by position search."""
    def flops_ratio(positions):
        return estimate(cfg, positions, raw_samples=raw_samples, batch=1, fe_share=fe_share).flops_ratio
    return flops_ratio

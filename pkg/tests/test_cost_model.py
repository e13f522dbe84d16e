import os
from dataclasses import replace

import pytest
import yaml

from redapt.cost import model
from redapt.cost.model import (
    calibrate_fe_share,
    encoder_param_count,
    estimate,
    flops_ratio_fn,
    ratio_frame,
    ratio_table,
)
from redapt.nn.encoder import init_encoder_params
from redapt.presets import (
    CALIBRATION_FLOPS_RATIO,
    CALIBRATION_POSITIONS,
    MEASUREMENT_RAW_SAMPLES,
    REFERENCE_FLOPS_RATIOS,
    TABLE_COMP_POSITIONS,
    TABLE_POSITION_CONFIGS,
    w2v2_large_config,
)
from redapt.utils.errors import ConfigError

CONFIG_DIR = os.path.join(os.path.dirname(__file__), '..', 'configs')


@pytest.fixture(scope='module')
def calibrated_share():
    return calibrate_fe_share(w2v2_large_config(), CALIBRATION_POSITIONS, CALIBRATION_FLOPS_RATIO)


def test_baseline_ratio_is_exactly_one(large_cfg):
    report = estimate(large_cfg, positions=())
    assert report.flops_ratio == 1.0
    assert report.memory_ratio == 1.0
    assert report.param_ratio == 1.0
    assert report.total_flops == report.baseline_flops


def test_flops_are_twice_macs(large_cfg):
    report = estimate(large_cfg, positions=(13, 15, 20))
    assert report.total_flops == pytest.approx(2 * report.total_macs)


def test_best_positions_lengths(large_cfg):
    report = estimate(large_cfg, positions=(13, 15, 20))
    assert report.lengths[0] == 274
    assert report.lengths[-1] == 35


def test_calibration_hits_target(large_cfg, calibrated_share):
    report = estimate(large_cfg, positions=CALIBRATION_POSITIONS, fe_share=calibrated_share)
    assert calibrated_share > 0
    assert report.flops_ratio == pytest.approx(CALIBRATION_FLOPS_RATIO, abs=1e-9)


@pytest.mark.parametrize('positions', TABLE_COMP_POSITIONS)
def test_block_count_ratios_near_reference(large_cfg, calibrated_share, positions):
    report = estimate(large_cfg, positions=positions, fe_share=calibrated_share)
    assert abs(report.flops_ratio - REFERENCE_FLOPS_RATIOS[len(positions)]) <= 0.05


def test_more_blocks_reduce_flops_and_memory(large_cfg, calibrated_share):
    rows = ratio_table(large_cfg, TABLE_COMP_POSITIONS, fe_share=calibrated_share)
    flops = [r.flops_ratio for r in rows]
    memory = [r.memory_ratio for r in rows]
    assert [len(r.positions) for r in rows] == [4, 3, 2, 1]
    assert flops == sorted(flops)
    assert memory == sorted(memory)
    assert all(r < 1.0 for r in flops + memory)


def test_position_table_order(large_cfg):
    rows = ratio_table(large_cfg, TABLE_POSITION_CONFIGS)
    assert [r.positions for r in rows] == TABLE_POSITION_CONFIGS


def test_ratio_table_with_empty_config(large_cfg):
    rows = ratio_table(large_cfg, [(), (15,)])
    assert rows[-1].positions == ()
    assert rows[-1].flops_ratio == 1.0
    frame = ratio_frame(rows)
    assert list(frame.columns) == ['positions', 'flops_ratio', 'memory_ratio', 'flops', 'mem']
    assert frame['positions'].iloc[-1] == '[]'


def test_unreachable_calibration(large_cfg):
    with pytest.raises(ConfigError):
        calibrate_fe_share(large_cfg, (22,), 0.2)
    with pytest.raises(ConfigError):
        calibrate_fe_share(large_cfg, CALIBRATION_POSITIONS, 1.5)


def test_param_count_matches_built_encoder(tiny_cfg):
    assert encoder_param_count(tiny_cfg) == init_encoder_params(tiny_cfg, seed=0).num_parameters()


def test_param_ratio_counts_blocks(large_cfg):
    base = encoder_param_count(large_cfg.with_positions(()))
    assert encoder_param_count(large_cfg.with_positions((13, 15, 20))) == base + 3 * 6_297_600


def test_length_adaptor_rows(tiny_cfg):
    cfg = replace(tiny_cfg.with_positions(()), length_adaptor_layers=3)
    report = estimate(cfg, raw_samples=260)
    adaptor = [r for r in report.rows if r.component.startswith('length_adaptor')]
    assert [r.n for r in adaptor] == [32, 16, 8]


def test_report_frame_columns(desk_cfg):
    report = estimate(desk_cfg, raw_samples=16000)
    frame = report.to_frame()
    assert list(frame.columns) == ['layer', 'n_i', 'flops', 'mem']
    assert frame['flops'].sum() == pytest.approx(report.total_flops)
    assert report.to_dict()['schema_version'] == model.SCHEMA_VERSION


def test_flops_ratio_fn(large_cfg):
    ratio = flops_ratio_fn(large_cfg)
    assert ratio(()) == 1.0
    assert ratio((2, 5, 6)) < ratio((17, 19, 20)) < 1.0


def test_cost_model_yaml_matches_constants():
    with open(os.path.join(CONFIG_DIR, 'cost_model.yaml')) as f:
        values = yaml.safe_load(f)
    assert values['measurement']['raw_samples'] == MEASUREMENT_RAW_SAMPLES
    assert tuple(values['calibration']['positions']) == CALIBRATION_POSITIONS
    assert values['calibration']['flops_ratio'] == CALIBRATION_FLOPS_RATIO
    assert values['reference_flops_ratios'] == REFERENCE_FLOPS_RATIOS
    assert values['memory'] == {
        'transformer_layer': model.ACTIVATIONS_PER_LAYER,
        'redapt_conv': model.ACTIVATIONS_PER_REDAPT_CONV,
        'feature_extractor_layer': model.ACTIVATIONS_PER_FE_LAYER,
    }


def test_later_single_position_costs_more(large_cfg):
    ratio = flops_ratio_fn(large_cfg)
    ratios = [ratio((i,)) for i in range(large_cfg.layers)]
    assert all(a < b for a, b in zip(ratios, ratios[1:]))


def test_block_after_last_layer_only_adds_cost(large_cfg):
    last = large_cfg.layers - 1
    report = estimate(large_cfg, positions=(last,))
    assert report.flops_ratio > 1.0
    assert report.memory_ratio > 1.0
    baseline = estimate(large_cfg, positions=())
    block = next(r for r in report.rows if r.component == f"redapt{last}")
    assert report.total_flops - baseline.total_flops == pytest.approx(block.flops)


# Any extra position below L-1; a block after the last layer is covered above
@pytest.mark.parametrize('base, extra', [((15,), 20), ((2, 9), 17), ((), 0), ((3,), 22)])
def test_adding_a_position_lowers_flops_and_memory(large_cfg, base, extra):
    before = estimate(large_cfg, positions=base)
    after = estimate(large_cfg, positions=tuple(sorted(base + (extra,))))
    assert after.total_flops < before.total_flops
    assert after.activation_memory_elements < before.activation_memory_elements

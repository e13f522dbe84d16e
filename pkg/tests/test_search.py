from itertools import combinations

import pytest

from redapt.presets import SEARCH_START, desk_config
from redapt.search.backward_selection import (
    Bucket,
    ConstantEvaluator,
    Evaluation,
    SearchState,
    backward_select,
    buckets_for,
    neighbors,
    trace_records,
)
from redapt.search.evaluators import ToyTaskEvaluator
from redapt.training.toy import ToyTaskConfig
from redapt.utils.errors import ConfigError

MID_TOP = Bucket('mid_top', 12, 23)


class CountingEvaluator:
    """Quality = -|config xor target|; the target is the unique optimum."""

    def __init__(self, target):
        self.target = set(target)
        self.calls = []

    def __call__(self, positions):
        self.calls.append(tuple(positions))
        return -float(len(set(positions) ^ self.target))


def _cost(positions):
    return 1.0 - 0.01 * len(positions)


def test_buckets_for_large_encoder():
    low, high = buckets_for(24)
    assert (low.low, low.high) == (0, 11)
    assert (high.low, high.high) == (12, 23)
    assert 11 in low and 12 not in low
    assert len(list(high)) == 12


def test_neighbors_of_single_position():
    expected = {()} | {(layer,) for layer in range(12, 24) if layer != 15}
    assert neighbors((15,), MID_TOP) == expected


def test_neighbors_of_empty_config():
    assert neighbors((), MID_TOP) == set()


def test_neighbors_of_search_start():
    result = neighbors(SEARCH_START, MID_TOP)
    assert len(result) == 36
    assert (15, 18, 19) in result
    assert (14, 15, 16, 18) in result
    assert tuple(SEARCH_START) not in result
    assert all(list(c) == sorted(set(c)) for c in result)


def test_state_refuses_duplicate_records():
    state = SearchState(current=(1,))
    state.record(Evaluation((1,), 0.0, 1.0, 0))
    with pytest.raises(ValueError):
        state.record(Evaluation((1,), 0.5, 1.0, 1))


def test_constant_evaluator_keeps_start():
    best, trace = backward_select(SEARCH_START, ConstantEvaluator(), _cost)
    assert best == tuple(SEARCH_START)
    assert trace[0].positions == tuple(SEARCH_START)
    assert trace[0].round == 0
    assert {e.round for e in trace} == {0, 1}


def test_search_reaches_brute_force_optimum():
    layers = 6
    target = (1, 4)
    evaluator = CountingEvaluator(target)
    best, trace = backward_select((0, 1, 3, 4, 5), evaluator, _cost, layers=layers)
    space = [c for m in range(layers + 1) for c in combinations(range(layers), m)]
    optimum = max(space, key=lambda c: (CountingEvaluator(target)(c), -len(c)))
    assert best == optimum == target


def test_each_configuration_evaluated_once():
    evaluator = CountingEvaluator((1, 4))
    _, trace = backward_select((0, 1, 3, 4, 5), evaluator, _cost, layers=6)
    assert len(evaluator.calls) == len(set(evaluator.calls)) == len(trace)


def test_parallel_search_matches_serial():
    serial = backward_select((0, 1, 3, 4, 5), CountingEvaluator((1, 4)), _cost, layers=6)
    parallel = backward_select((0, 1, 3, 4, 5), CountingEvaluator((1, 4)), _cost, layers=6, workers=4)
    assert serial[0] == parallel[0]
    assert [e.positions for e in serial[1]] == [e.positions for e in parallel[1]]


def test_ties_prefer_lower_flops():
    # Every neighbour scores the same as the start except the two single-drop configs
    def evaluator(positions):
        return 1.0 if len(positions) == 1 else 0.0

    def cost(positions):
        return {(2,): 0.7, (3,): 0.9}.get(tuple(positions), 1.0)

    best, _ = backward_select((2, 3), evaluator, cost, max_rounds=1, buckets=[Bucket('b', 2, 3)])
    assert best == (2,)


def test_max_rounds_limits_moves():
    best, trace = backward_select((0, 1, 3, 4, 5), CountingEvaluator((1, 4)), _cost, layers=6, max_rounds=1)
    assert len(best) == 4
    assert max(e.round for e in trace) == 1


def test_trace_records():
    _, trace = backward_select((3,), ConstantEvaluator(0.5), _cost, layers=6)
    records = trace_records(trace)
    assert records[0] == {
        'schema_version': 1, 'round': 0, 'positions': [3], 'quality': 0.5, 'flops_ratio': _cost((3,)),
    }


def test_toy_evaluator_is_deterministic(tiny_cfg):
    task = ToyTaskConfig(duration_s=0.025, train_size=8, val_size=4, batch_size=4, eval_interval=1)
    evaluator = ToyTaskEvaluator(tiny_cfg, steps=1, seed=3, task=task)
    assert evaluator((0,)) == evaluator((0,))
    assert evaluator.calls == 1
    assert evaluator.hits == 1
    assert evaluator(()) < 0
    assert evaluator.calls == 2


def test_toy_evaluator_memo_keys_on_sorted_positions(tiny_cfg):
    task = ToyTaskConfig(duration_s=0.025, train_size=8, val_size=4, batch_size=4, eval_interval=1)
    evaluator = ToyTaskEvaluator(tiny_cfg, steps=1, seed=3, task=task)
    first = evaluator([1, 0])
    assert evaluator((0, 1)) == first
    assert (evaluator.calls, evaluator.hits) == (1, 1)


def test_toy_evaluator_rejects_unknown_metric(tiny_cfg):
    with pytest.raises(ConfigError):
        ToyTaskEvaluator(tiny_cfg, metric='wer')


def test_position_sum_climbs_to_top_of_bucket():
    best, _ = backward_select(SEARCH_START, lambda c: float(sum(c)), _cost, layers=24)
    reachable = [c for m in range(len(SEARCH_START) + 1) for c in combinations(range(12, 24), m)]
    assert best == max(reachable, key=sum) == (20, 21, 22, 23)


@pytest.mark.slow
def test_desk_search_scores_lowest_pooling_worst():
    cfg = desk_config()
    evaluator = ToyTaskEvaluator(cfg, steps=100, seed=0)
    _, trace = backward_select((2, 5), evaluator, lambda c: 1.0 - 0.01 * len(c), max_rounds=1, layers=cfg.layers)
    worst = min(trace, key=lambda e: e.quality)
    assert set(worst.positions) & {0, 1}
    assert evaluator.calls == len(trace)

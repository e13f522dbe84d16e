"""
Backward selection over RedApt position configurations.

Starting from a configuration, each round scores every neighbour (drop one
position, or swap one position for another layer inside a bucket) and moves
to the best one if it beats the incumbent.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from tqdm import tqdm

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Bucket:
    """Inclusive layer range [low, high]."""

    name: str
    low: int
    high: int

    def __iter__(self):
        return iter(range(self.low, self.high + 1))

    def __contains__(self, layer):
        return self.low <= layer <= self.high


def buckets_for(layers):
    """
    Split [0, L-1] into low-mid and mid-top halves (0-11 / 12-23 at L=24).
    """
    split = layers // 2
    return [Bucket('low_mid', 0, split - 1), Bucket('mid_top', split, layers - 1)]


def neighbors(config, bucket):
    """
    All remove-one and replace-one variants of ``config``.

    A replacement swaps one position for a layer inside ``bucket`` that the
    config does not already use; the result is re-sorted so positions stay
    strictly increasing.

    Args:
        config: tuple of positions
        bucket: Bucket (or any iterable of layer indices)

    Returns:
        set of tuples, never containing ``config`` itself
    """
    config = tuple(config)
    used = set(config)
    out = set()
    for i in range(len(config)):
        rest = config[:i] + config[i + 1:]
        out.add(rest)
        for layer in bucket:
            if layer in used:
                continue
            out.add(tuple(sorted(rest + (layer,))))
    out.discard(config)
    return out


@dataclass
class Evaluation:
    positions: Tuple[int, ...]
    quality: float
    flops_ratio: float
    round: int


@dataclass
class SearchState:
    """Incumbent configuration plus the append-only memo of evaluated configurations."""

    current: Tuple[int, ...]
    evaluated: Dict[Tuple[int, ...], Evaluation] = field(default_factory=dict)
    trace: List[Evaluation] = field(default_factory=list)

    def record(self, evaluation):
        if evaluation.positions in self.evaluated:
            raise ValueError(f"configuration {list(evaluation.positions)} evaluated twice")
        self.evaluated[evaluation.positions] = evaluation
        self.trace.append(evaluation)


def _rank_key(evaluation):
    # Higher quality first, then cheaper, then lexicographic positions
    return (-evaluation.quality, evaluation.flops_ratio, evaluation.positions)


class ConstantEvaluator:
    """Scores every configuration the same; search then keeps its start point."""

    def __init__(self, value=0.0):
        self.value = float(value)

    def __call__(self, positions):
        return self.value


def backward_select(start, evaluator, cost_model, max_rounds=10, buckets=None, layers=24,
                    workers=1, progress=False):
    """
    Greedy hill-climb over position configurations.

    Each round evaluates all not-yet-seen neighbours of the incumbent across
    ``buckets`` and moves to the best-ranked configuration (quality, then
    lower FLOPs ratio, then lexicographic) only if its quality is strictly
    higher than the incumbent's. Stops at a local optimum or after
    ``max_rounds`` rounds.

    Args:
        start: initial positions
        evaluator: callable positions -> quality (higher is better); must be deterministic
        cost_model: callable positions -> FLOPs ratio
        max_rounds: round limit
        buckets: list of Buckets (default: both halves of ``layers``)
        layers: encoder depth used for the default buckets
        workers: parallel evaluations per round; selection does not depend on completion order
        progress: show a tqdm bar over rounds

    Returns:
        (best positions, list of Evaluation in evaluation order)
    """
    buckets = buckets if buckets is not None else buckets_for(layers)
    state = SearchState(current=tuple(start))

    def evaluate(positions, round_id):
        return Evaluation(
            positions=positions,
            quality=float(evaluator(positions)),
            flops_ratio=float(cost_model(positions)),
            round=round_id,
        )

    state.record(evaluate(state.current, 0))
    rounds = tqdm(range(1, max_rounds + 1), desc='search rounds', disable=not progress)
    for round_id in rounds:
        candidates = set()
        for bucket in buckets:
            candidates |= neighbors(state.current, bucket)
        fresh = sorted(c for c in candidates if c not in state.evaluated)
        if workers > 1 and len(fresh) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda c: evaluate(c, round_id), fresh))
        else:
            results = [evaluate(c, round_id) for c in fresh]
        for evaluation in results:
            state.record(evaluation)

        pool_evals = [state.evaluated[c] for c in candidates]
        if not pool_evals:
            logger.info(f"round {round_id}: no neighbours of {list(state.current)}")
            break
        best = min(pool_evals, key=_rank_key)
        incumbent = state.evaluated[state.current]
        if best.quality > incumbent.quality:
            logger.info(
                f"round {round_id}: {list(state.current)} -> {list(best.positions)} "
                f"(quality {incumbent.quality:.4f} -> {best.quality:.4f}, flops {best.flops_ratio:.3f})"
            )
            state.current = best.positions
        else:
            logger.info(f"round {round_id}: local optimum at {list(state.current)}")
            break
    return state.current, state.trace


def trace_records(trace):
    """JSON-serializable records, one per evaluation."""
    return [
        {
            'schema_version': SCHEMA_VERSION,
            'round': e.round,
            'positions': list(e.positions),
            'quality': e.quality,
            'flops_ratio': e.flops_ratio,
        }
        for e in trace
    ]

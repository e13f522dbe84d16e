"""
Quality evaluators for position search.
"""

import logging
import threading

from redapt.training.optim import OptimizerConfig
from redapt.training.toy import ToyTaskConfig, train_toy
from redapt.utils.errors import ConfigError

logger = logging.getLogger(__name__)


class ToyTaskEvaluator:
    """
    Quality of a position configuration = final validation score after a
    short toy-task training run.

    Args:
        cfg: base EncoderConfig (positions are replaced per call)
        steps: training steps per evaluation
        seed: same seed for every configuration, so scores are comparable
        metric: 'neg_loss' (continuous, default) or 'accuracy'

    Scores are memoized by position set, so ``calls`` counts training runs
    and ``hits`` counts repeated requests answered from the memo.
    """

    def __init__(self, cfg, steps=100, seed=0, opt=None, task=None, metric='neg_loss'):
        if metric not in ('neg_loss', 'accuracy'):
            raise ConfigError(f"unknown search metric '{metric}'", key='metric')
        self.cfg = cfg
        self.steps = steps
        self.seed = seed
        self.opt = opt or OptimizerConfig()
        self.task = task or ToyTaskConfig()
        self.metric = metric
        self._lock = threading.Lock()
        self._scores = {}
        self.calls = 0
        self.hits = 0

    def __call__(self, positions):
        key = tuple(sorted(positions))
        with self._lock:
            if key in self._scores:
                self.hits += 1
                return self._scores[key]
            self.calls += 1
        history, _ = train_toy(self.cfg.with_positions(key), self.opt, self.steps, self.seed, task=self.task)
        final = history.iloc[-1]
        score = float(final['accuracy']) if self.metric == 'accuracy' else -float(final['loss'])
        logger.info(f"positions {list(key)}: {self.metric} {score:.4f}")
        with self._lock:
            self._scores[key] = score
        return score

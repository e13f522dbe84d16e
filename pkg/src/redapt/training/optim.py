"""
Optimizer functions for the RedApt pipeline.

Provides the Adam optimizer with bias correction, global-norm gradient
clipping and the learning-rate plateau schedule used by the toy trainer.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from redapt.utils.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    """
    Adam and loss settings.

    beta1 defaults to 0.99; 0.9 is the common alternative.
    """

    lr: float = 5e-4
    beta1: float = 0.99
    beta2: float = 0.98
    eps: float = 1e-8
    clip_norm: float = 20.0
    label_smoothing: float = 0.2
    dropout: float = 0.1

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}", key='lr')
        for key in ('beta1', 'beta2'):
            value = getattr(self, key)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{key} must be in [0, 1), got {value}", key=key)
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}", key='eps')
        if self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}", key='clip_norm')
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}", key='label_smoothing')
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}", key='dropout')


@dataclass
class AdamState:
    """First/second moment estimates keyed by parameter name, plus the step counter."""

    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values())))


def clip_grad_norm(grads, max_norm):
    """
    Scale gradients so their global L2 norm is at most ``max_norm``.

    Args:
        grads: dict name -> ndarray
        max_norm: clipping threshold

    Returns:
        (clipped grads dict, norm before clipping)
    """
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0:
        return dict(grads), norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


def adam_step(params, grads, state, cfg, lr=None):
    """
    One clipped Adam update, in place.

    Args:
        params: dict name -> Tensor (updated in place)
        grads: dict name -> ndarray, same names and shapes as ``params``
        state: AdamState (updated in place)
        cfg: OptimizerConfig
        lr: learning rate override (plateau schedule); defaults to cfg.lr

    Returns:
        AdamState
    """
    if set(params) != set(grads):
        missing = sorted(set(params) ^ set(grads))
        raise ShapeError(f"adam_step: params and grads differ in names: {missing[:5]}")
    for name, p in params.items():
        if np.shape(grads[name]) != p.shape:
            raise ShapeError(f"adam_step: grad for '{name}' has shape {np.shape(grads[name])}, param {p.shape}")

    lr = cfg.lr if lr is None else lr
    grads, _ = clip_grad_norm(grads, cfg.clip_norm)
    state.step += 1
    t = state.step
    bias1 = 1.0 - cfg.beta1 ** t
    bias2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - cfg.beta1) * g if m is None else cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = (1.0 - cfg.beta2) * g * g if v is None else cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        p.data = p.data - lr * (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)
    return state


@dataclass
class PlateauSchedule:
    """Multiply lr by ``factor`` once eval loss fails to improve for ``patience`` evals."""

    lr: float
    patience: int = 3
    factor: float = 0.5
    best: float = np.inf
    stalled: int = 0

    def observe(self, loss):
        if loss < self.best:
            self.best = loss
            self.stalled = 0
            return self.lr
        self.stalled += 1
        if self.stalled >= self.patience:
            self.lr *= self.factor
            self.stalled = 0
            logger.warning(f"eval loss plateaued at {self.best:.4f}; lr reduced to {self.lr:.3g}")
        return self.lr

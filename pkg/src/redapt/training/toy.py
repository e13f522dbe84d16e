"""
Toy-task training functions for the RedApt pipeline.

Provides the synthetic tone-classification dataset and a desk-scale trainer
that fits a RedApt-integrated encoder plus a mean-pool linear head with
clipped Adam and label-smoothed cross-entropy.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from tqdm import tqdm

from redapt.nn.encoder import encoder_forward, init_encoder_params
from redapt.nn.head import classify, init_head
from redapt.signals.augment import AugmentPolicy, augment, normalize
from redapt.signals.synth import DEFAULT_SAMPLE_RATE, AudioClip, synth_clip
from redapt.tensor import ops
from redapt.tensor.core import Tape, Tensor
from redapt.training.checkpoint import from_training_state
from redapt.training.optim import AdamState, PlateauSchedule, adam_step
from redapt.utils import seeding
from redapt.utils.errors import ConfigError, DivergenceError

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ['step', 'loss', 'accuracy', 'lr']

SPLIT_TRAIN = 0
SPLIT_VAL = 1


@dataclass(frozen=True)
class ToyTaskConfig:
    """Synthetic dataset and loop settings."""

    n_classes: int = 4
    duration_s: float = 0.25
    sample_rate: int = DEFAULT_SAMPLE_RATE
    noise_std: float = 0.1
    train_size: int = 256
    val_size: int = 64
    batch_size: int = 16
    eval_interval: int = 25
    plateau_patience: int = 3
    plateau_factor: float = 0.5

    def __post_init__(self):
        for key in ('n_classes', 'train_size', 'val_size', 'batch_size', 'eval_interval', 'plateau_patience'):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}", key=key)
        if self.batch_size > self.train_size:
            raise ConfigError(
                f"batch_size {self.batch_size} exceeds train_size {self.train_size}", key='batch_size'
            )
        if not 0.0 < self.plateau_factor <= 1.0:
            raise ConfigError(f"plateau_factor must be in (0, 1], got {self.plateau_factor}", key='plateau_factor')

    @property
    def samples(self):
        return int(round(self.duration_s * self.sample_rate))


@dataclass
class ToyDataset:
    waves: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.labels.size


def _clip_seed(seed, split, index):
    return int(seeding.rng_for(seed, seeding.STREAM_CLIP, split, index).integers(2 ** 31))


def build_toy_dataset(size, seed, task=None, split=SPLIT_TRAIN):
    """
    Balanced set of normalized tone clips, seeded per clip index.

    Args:
        size: number of clips
        seed: dataset seed
        task: ToyTaskConfig
        split: SPLIT_TRAIN or SPLIT_VAL (independent streams)

    Returns:
        ToyDataset with waves [size, samples] and int labels [size]
    """
    task = task or ToyTaskConfig()
    labels = np.arange(size) % task.n_classes
    waves = np.stack([
        normalize(synth_clip(
            int(label), task.duration_s, _clip_seed(seed, split, i),
            n_classes=task.n_classes, sample_rate=task.sample_rate, noise_std=task.noise_std,
        )).samples
        for i, label in enumerate(labels)
    ])
    return ToyDataset(waves=waves, labels=labels.astype(np.int64))


def _fit_length(samples, n):
    # Tempo changes the length; crop or zero-pad back to the batch width
    if samples.size >= n:
        return samples[:n]
    return np.concatenate([samples, np.zeros(n - samples.size)])


def _augment_batch(waves, labels, policy, seed, step, indices, sample_rate):
    out = np.empty_like(waves)
    for row, (wave, label, index) in enumerate(zip(waves, labels, indices)):
        clip_seed = int(seeding.rng_for(seed, seeding.STREAM_AUGMENT, step, index).integers(2 ** 31))
        clip = augment(AudioClip(wave, sample_rate, int(label)), policy, clip_seed)
        out[row] = _fit_length(clip.samples, waves.shape[1])
    return out


def evaluate(params, head, cfg, dataset, batch_size, smoothing):
    """Mean loss and accuracy over ``dataset`` with dropout off."""
    total_loss = 0.0
    correct = 0
    for start in range(0, len(dataset), batch_size):
        waves = dataset.waves[start:start + batch_size]
        labels = dataset.labels[start:start + batch_size]
        logits = classify(encoder_forward(Tensor(waves), params, cfg, train_flag=False), head)
        loss = ops.cross_entropy_label_smoothed(logits, labels, smoothing)
        total_loss += loss.item() * labels.size
        correct += int(np.sum(np.argmax(logits.data, axis=1) == labels))
    return total_loss / len(dataset), correct / len(dataset)


def train_toy(cfg, opt, steps, seed, task=None, freeze_head=False, augment_policy=None, progress=False):
    """
    Train encoder + linear head on the synthetic tone task.

    Args:
        cfg: EncoderConfig
        opt: OptimizerConfig (its dropout replaces cfg.dropout)
        steps: optimizer steps (0 evaluates the freshly initialized model)
        seed: seeds weights, data, batches and dropout
        task: ToyTaskConfig
        freeze_head: keep the head at its initial weights
        augment_policy: optional AugmentPolicy applied to training batches
        progress: show a tqdm bar

    Returns:
        (history DataFrame with columns step, loss, accuracy, lr; Checkpoint)

    Raises:
        DivergenceError: if the training loss stops being finite
    """
    task = task or ToyTaskConfig()
    if steps < 0:
        raise ConfigError(f"steps must be >= 0, got {steps}", key='steps')
    if cfg.dropout != opt.dropout:
        cfg = replace(cfg, dropout=opt.dropout)
    if augment_policy is not None and not isinstance(augment_policy, AugmentPolicy):
        raise ConfigError("augment_policy must be an AugmentPolicy", key='augment')

    train = build_toy_dataset(task.train_size, seed, task, SPLIT_TRAIN)
    val = build_toy_dataset(task.val_size, seed, task, SPLIT_VAL)
    params = init_encoder_params(cfg, seed)
    head = init_head(cfg.d_model, task.n_classes, seeding.rng_for(seed, seeding.STREAM_HEAD))
    if freeze_head:
        head.freeze()

    named = {f"encoder.{k}": v for k, v in params.named_parameters().items()}
    named.update({f"head.{k}": v for k, v in head.named_parameters().items()})
    trainable = {name: p for name, p in named.items() if p.requires_grad}
    logger.info(
        f"Training {cfg.layers}-layer encoder, positions {cfg.positions}, "
        f"{sum(p.size for p in trainable.values()):,} trainable parameters, {steps} steps"
    )

    state = AdamState()
    schedule = PlateauSchedule(lr=opt.lr, patience=task.plateau_patience, factor=task.plateau_factor)
    history = []

    def record(step):
        loss, accuracy = evaluate(params, head, cfg, val, task.batch_size, opt.label_smoothing)
        history.append({'step': step, 'loss': loss, 'accuracy': accuracy, 'lr': schedule.lr})
        logger.info(f"step {step}: val loss {loss:.4f}, accuracy {accuracy:.3f}, lr {schedule.lr:.3g}")
        return loss

    record(0)
    last_finite = None
    for step in tqdm(range(1, steps + 1), desc='train', disable=not progress):
        indices = seeding.rng_for(seed, seeding.STREAM_BATCH, step).choice(
            task.train_size, size=task.batch_size, replace=False
        )
        waves = train.waves[indices]
        labels = train.labels[indices]
        if augment_policy is not None:
            waves = _augment_batch(waves, labels, augment_policy, seed, step, indices, task.sample_rate)

        with Tape() as tape:
            encoded = encoder_forward(Tensor(waves), params, cfg, train_flag=True, seed=seed, step=step)
            loss = ops.cross_entropy_label_smoothed(classify(encoded, head), labels, opt.label_smoothing)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(step, last_finite)
            tape.backward(loss)
        last_finite = value

        grads = {name: p.grad for name, p in trainable.items()}
        adam_step(trainable, grads, state, opt, lr=schedule.lr)
        for p in trainable.values():
            p.zero_grad()

        if step % task.eval_interval == 0 or step == steps:
            schedule.observe(record(step))

    frame = pd.DataFrame(history, columns=HISTORY_COLUMNS)
    return frame, from_training_state(named, state)

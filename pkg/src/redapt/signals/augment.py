"""
Audio augmentation functions for the RedApt pipeline.

Provides tempo change, pitch shift, echo and normalization of AudioClips,
and the seeded augmentation policy that chains them for training.

The tempo and pitch effects are simple DSP stand-ins for an external audio
tool: tempo is linear-interpolation resampling (it also moves pitch), and
pitch is resampling followed by a WSOLA time-stretch back to the original
length, which keeps the shifted frequency content.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import signal

from redapt.signals.synth import MIN_SAMPLES
from redapt.utils import seeding
from redapt.utils.errors import ConfigError, SignalError

logger = logging.getLogger(__name__)

MAX_PITCH_CENTS = 1200.0
WSOLA_FRAME = 512


@dataclass(frozen=True)
class AugmentPolicy:
    """
    Augmentation probability and parameter ranges.

    One draw per clip decides whether all three effects are applied.
    """

    probability: float = 0.8
    tempo_range: Tuple[float, float] = (0.85, 1.3)
    pitch_range: Tuple[float, float] = (-300.0, 300.0)
    echo_delay_ms: Tuple[float, float] = (20.0, 200.0)
    echo_decay: Tuple[float, float] = (0.05, 0.2)

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError(f"probability must be in [0, 1], got {self.probability}", key='probability')
        for key in ('tempo_range', 'pitch_range', 'echo_delay_ms', 'echo_decay'):
            low, high = getattr(self, key)
            if low > high:
                raise ConfigError(f"{key} must be (low, high), got ({low}, {high})", key=key)
            object.__setattr__(self, key, (float(low), float(high)))
        if self.tempo_range[0] <= 0:
            raise ConfigError("tempo rates must be positive", key='tempo_range')
        if max(abs(c) for c in self.pitch_range) > MAX_PITCH_CENTS:
            raise ConfigError(f"pitch range exceeds +/-{MAX_PITCH_CENTS:.0f} cents", key='pitch_range')

    @classmethod
    def from_dict(cls, values):
        known = set(cls.__dataclass_fields__)
        for key in values:
            if key not in known:
                raise ConfigError("unknown augmentation setting", key=key)
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in values.items()})


@dataclass(frozen=True)
class AugmentParams:
    tempo_rate: float
    pitch_cents: float
    echo_delay_ms: float
    echo_decay: float


def _resample(samples, factor, n_out):
    # Read the input at positions i * factor
    positions = np.arange(n_out) * factor
    return np.interp(positions, np.arange(samples.size), samples)


def _tempo_samples(x, rate):
    if not rate > 0:
        raise SignalError(f"tempo rate must be positive, got {rate}")
    n_out = max(int(round(x.size / rate)), 1)
    return _resample(x, rate, n_out)


def tempo(clip, rate):
    """
    Change playback speed by linear-interpolation resampling.

    Args:
        clip: AudioClip of length n
        rate: speed factor (> 0); 2.0 halves the length

    Returns:
        AudioClip of length round(n / rate)

    Raises:
        SignalError: if rate <= 0, or the result is shorter than MIN_SAMPLES
    """
    return clip.with_samples(_tempo_samples(clip.samples, rate))


def _wsola(samples, n_out, frame=WSOLA_FRAME):
    """
    Time-stretch ``samples`` to ``n_out`` samples without changing pitch.

    Hann-windowed frames are overlap-added at half-frame hop; each analysis
    frame is shifted within +/- a quarter frame to best match the natural
    continuation of the previous one.
    """
    hop = frame // 2
    tolerance = frame // 4
    analysis_hop = hop * samples.size / n_out
    window = signal.get_window('hann', frame)
    n_frames = n_out // hop + 2

    pad = frame + tolerance
    tail = int(np.ceil(n_frames * analysis_hop)) + 2 * frame + tolerance
    padded = np.concatenate([np.zeros(pad), samples, np.zeros(max(tail - samples.size, 0) + pad)])

    out = np.zeros(n_frames * hop + frame)
    weight = np.zeros_like(out)
    prev = None
    for k in range(n_frames):
        # Frame k covers input [pos - frame/2, pos + frame/2) in unpadded coordinates
        nominal = pad + int(round(k * analysis_hop)) - hop
        if prev is None:
            start = nominal
        else:
            template = padded[prev + hop:prev + hop + frame]
            region = padded[nominal - tolerance:nominal + tolerance + frame]
            score = signal.correlate(region, template, mode='valid')
            start = nominal - tolerance + int(np.argmax(score))
        out[k * hop:k * hop + frame] += window * padded[start:start + frame]
        weight[k * hop:k * hop + frame] += window
        prev = start
    out = out / np.maximum(weight, 1e-8)
    return out[hop:hop + n_out]


def _pitch_samples(x, cents):
    if abs(cents) > MAX_PITCH_CENTS:
        raise SignalError(f"pitch shift must be within +/-{MAX_PITCH_CENTS:.0f} cents, got {cents}")
    if cents == 0:
        return x.copy()
    n = x.size
    factor = 2.0 ** (cents / 1200.0)
    shifted = _resample(x, factor, max(int(round(n / factor)), 1))
    frame = min(WSOLA_FRAME, 2 * (min(n, shifted.size) // 4))
    return _wsola(shifted, n, frame=max(frame, 8))


def pitch(clip, cents):
    """
    Shift pitch by ``cents`` while keeping the clip length.

    The clip is resampled by 2^(cents/1200), which moves every frequency,
    then time-stretched back to the original length.

    Args:
        clip: AudioClip
        cents: shift in cents, |cents| <= 1200

    Returns:
        AudioClip of the same length
    """
    return clip.with_samples(_pitch_samples(clip.samples, cents))


def _echo_samples(x, sample_rate, delay_ms, decay):
    if delay_ms < 0:
        raise SignalError(f"echo delay must be >= 0, got {delay_ms}")
    y = x.copy()
    if decay == 0:
        return y
    d = int(round(delay_ms * sample_rate / 1000.0))
    if d < x.size:
        y[d:] += decay * x[:x.size - d]
    return y


def echo(clip, delay_ms, decay):
    """
    Add a single delayed copy: y[t] = x[t] + decay * x[t - d].

    Args:
        clip: AudioClip
        delay_ms: delay in milliseconds; d = round(delay_ms * rate / 1000)
        decay: gain of the delayed copy

    Returns:
        AudioClip of the same length
    """
    return clip.with_samples(_echo_samples(clip.samples, clip.sample_rate, delay_ms, decay))


def _normalize_samples(x):
    centered = x - x.mean()
    std = centered.std()
    if std == 0 or not np.isfinite(std):
        raise SignalError("cannot normalize a constant clip (zero variance)")
    y = centered / std
    # Second pass removes the rounding residue left by the first
    y = y - y.mean()
    return y / y.std()


def normalize(clip):
    """
    Scale to zero mean and unit variance.

    Raises:
        SignalError: for a constant clip
    """
    return clip.with_samples(_normalize_samples(clip.samples))


def draw_augment_params(policy, seed):
    """
    Draw augmentation parameters for one clip.

    Returns:
        AugmentParams, or None when the Bernoulli(probability) draw skips augmentation
    """
    rng = seeding.rng_for(seed, seeding.STREAM_AUGMENT)
    if rng.random() >= policy.probability:
        return None
    return AugmentParams(
        tempo_rate=float(rng.uniform(*policy.tempo_range)),
        pitch_cents=float(rng.uniform(*policy.pitch_range)),
        echo_delay_ms=float(rng.uniform(*policy.echo_delay_ms)),
        echo_decay=float(rng.uniform(*policy.echo_decay)),
    )




def augment(clip, policy, seed):
    """
    Apply tempo, pitch and echo (all or none), then normalize.

    The effects run on the raw samples and only the result is checked as a
    clip. A result shorter than MIN_SAMPLES (fast tempo on a short clip) is
    zero-padded up to MIN_SAMPLES before normalization.

    Args:
        clip: AudioClip
        policy: AugmentPolicy
        seed: per-clip seed

    Returns:
        normalized AudioClip (its length changes when tempo is applied)
    """
    params = draw_augment_params(policy, seed)
    x = clip.samples
    if params is not None:
        logger.debug(f"augmenting clip (seed={seed}): {params}")
        x = _tempo_samples(x, params.tempo_rate)
        x = _pitch_samples(x, params.pitch_cents)
        x = _echo_samples(x, clip.sample_rate, params.echo_delay_ms, params.echo_decay)
        if x.size < MIN_SAMPLES:
            x = np.concatenate([x, np.zeros(MIN_SAMPLES - x.size)])
    return clip.with_samples(_normalize_samples(x))

"""
Synthetic audio functions for the RedApt pipeline.

Provides the AudioClip container, seeded tone-class clips for the toy
classification task and WAV export for inspection.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from redapt.utils import seeding
from redapt.utils.errors import SignalError

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 16000
# Feature-extractor receptive field: shortest clip that yields one frame
MIN_SAMPLES = 400

# Fundamental of each tone class; class c also carries a weaker 1.5x partial
CLASS_FREQUENCIES_HZ = (250.0, 500.0, 1000.0, 2000.0)


@dataclass(frozen=True)
class AudioClip:
    """
    Mono waveform with its sample rate and class label.

    Args:
        samples: 1-D float64 array
        sample_rate: Hz
        label: class id (-1 when unlabeled)
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    label: int = -1

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise SignalError(f"clip must be 1-D, got shape {samples.shape}")
        if samples.size < MIN_SAMPLES:
            raise SignalError(f"clip has {samples.size} samples, need at least {MIN_SAMPLES}")
        if not np.all(np.isfinite(samples)):
            raise SignalError("clip contains non-finite samples")
        if self.sample_rate <= 0:
            raise SignalError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, 'samples', samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self):
        return self.samples.size / self.sample_rate

    def with_samples(self, samples):
        return AudioClip(samples=samples, sample_rate=self.sample_rate, label=self.label)


def synth_clip(class_id, duration_s, seed, n_classes=4, sample_rate=DEFAULT_SAMPLE_RATE,
               noise_std=0.1, frequencies=CLASS_FREQUENCIES_HZ):
    """
    Generate one clip of tone class ``class_id``.

    The clip is the class fundamental plus a weaker partial at 1.5x, with a
    random phase and amplitude jitter, plus Gaussian noise. Same
    (class_id, seed) always gives the same samples.

    Args:
        class_id: integer in [0, n_classes)
        duration_s: clip duration in seconds
        seed: stream seed
        n_classes: number of tone classes (at most len(frequencies))
        sample_rate: Hz
        noise_std: standard deviation of additive noise (0 for pure tones)
        frequencies: fundamentals per class

    Returns:
        AudioClip labeled with class_id
    """
    if not 0 < n_classes <= len(frequencies):
        raise SignalError(f"n_classes must be in [1, {len(frequencies)}], got {n_classes}")
    if not 0 <= class_id < n_classes:
        raise SignalError(f"class_id {class_id} out of range for {n_classes} classes")
    n = int(round(duration_s * sample_rate))
    rng = seeding.rng_for(seed, seeding.STREAM_CLIP, class_id)
    t = np.arange(n) / sample_rate
    f0 = frequencies[class_id]
    phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
    amplitude = rng.uniform(0.8, 1.2)
    samples = amplitude * np.sin(2.0 * np.pi * f0 * t + phase[0])
    samples += 0.3 * amplitude * np.sin(2.0 * np.pi * 1.5 * f0 * t + phase[1])
    if noise_std > 0:
        samples += rng.normal(0.0, noise_std, size=n)
    return AudioClip(samples=samples, sample_rate=sample_rate, label=class_id)


def dominant_frequency(clip):
    """Frequency (Hz) of the largest magnitude-spectrum bin, DC excluded."""
    spectrum = np.abs(np.fft.rfft(clip.samples))
    spectrum[0] = 0.0
    freqs = np.fft.rfftfreq(clip.samples.size, d=1.0 / clip.sample_rate)
    return float(freqs[int(np.argmax(spectrum))])


def write_wav(clip, path):
    """
    Export a clip as 16-bit PCM mono WAV.

    Samples are peak-scaled into the int16 range; a silent clip is written as zeros.
    """
    peak = float(np.max(np.abs(clip.samples)))
    scale = 32767.0 / peak if peak > 0 else 0.0
    pcm = np.round(clip.samples * scale).astype('<i2')
    wavfile.write(path, clip.sample_rate, pcm)
    logger.info(f"Wrote {clip.samples.size} samples to {path}")


def read_wav(path, label=-1):
    """Read a mono WAV back as float samples in [-1, 1]."""
    sample_rate, data = wavfile.read(path)
    data = np.asarray(data)
    if data.ndim != 1:
        raise SignalError(f"expected mono WAV, got {data.ndim} channels in {path}")
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32767.0
    return AudioClip(samples=data, sample_rate=int(sample_rate), label=label)

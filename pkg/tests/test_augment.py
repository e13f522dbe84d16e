import numpy as np
import pytest

from redapt.signals.augment import (
    AugmentPolicy,
    augment,
    draw_augment_params,
    echo,
    normalize,
    pitch,
    tempo,
)
from redapt.signals.synth import AudioClip, dominant_frequency, read_wav, synth_clip, write_wav
from redapt.utils.errors import ConfigError, SignalError


def _sine(freq, seconds=1.0, rate=16000):
    t = np.arange(int(seconds * rate)) / rate
    return AudioClip(np.sin(2 * np.pi * freq * t), rate)


def test_synth_is_deterministic():
    a = synth_clip(2, 0.05, seed=11)
    b = synth_clip(2, 0.05, seed=11)
    c = synth_clip(2, 0.05, seed=12)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)
    assert len(a) == 800
    assert a.label == 2


@pytest.mark.parametrize('class_id, freq', [(0, 250.0), (1, 500.0), (2, 1000.0), (3, 2000.0)])
def test_synth_dominant_frequency(class_id, freq):
    clip = synth_clip(class_id, 0.5, seed=0, noise_std=0.0)
    assert dominant_frequency(clip) == pytest.approx(freq, abs=2.0)


def test_synth_rejects_bad_class():
    with pytest.raises(SignalError):
        synth_clip(4, 0.1, seed=0)


def test_clip_validation():
    with pytest.raises(SignalError):
        AudioClip(np.zeros(399))
    with pytest.raises(SignalError):
        AudioClip(np.full(500, np.nan))
    with pytest.raises(SignalError):
        AudioClip(np.zeros((2, 400)))


def test_tempo_length_and_frequency():
    clip = _sine(100.0)
    faster = tempo(clip, 1.25)
    assert len(faster) == 12800
    assert dominant_frequency(faster) == pytest.approx(125.0, abs=1.5)
    assert len(tempo(clip, 0.5)) == 32000
    np.testing.assert_allclose(tempo(clip, 1.0).samples, clip.samples)


def test_tempo_rejects_non_positive_rate():
    with pytest.raises(SignalError):
        tempo(_sine(100.0), 0.0)


def test_pitch_zero_is_a_copy():
    clip = _sine(100.0)
    out = pitch(clip, 0)
    np.testing.assert_array_equal(out.samples, clip.samples)
    assert out.samples is not clip.samples


def test_pitch_octave_up_doubles_frequency():
    out = pitch(_sine(100.0), 1200)
    assert len(out) == 16000
    assert dominant_frequency(out) == pytest.approx(200.0, abs=5.0)


def test_pitch_octave_down_halves_frequency():
    out = pitch(_sine(400.0), -1200)
    assert len(out) == 16000
    assert dominant_frequency(out) == pytest.approx(200.0, abs=5.0)


def test_pitch_keeps_length_for_random_clips():
    rng = np.random.default_rng(5)
    for seed in range(100):
        n = int(rng.integers(400, 5000))
        cents = float(rng.uniform(-1200, 1200))
        clip = AudioClip(np.random.default_rng(seed).standard_normal(n))
        out = pitch(clip, cents)
        assert len(out) == n
        assert np.all(np.isfinite(out.samples))


def test_pitch_range_limit():
    with pytest.raises(SignalError):
        pitch(_sine(100.0), 1500)


def test_echo_adds_delayed_copy():
    clip = AudioClip(np.random.default_rng(0).standard_normal(1000))
    out = echo(clip, delay_ms=10.0, decay=0.5)
    d = 160
    np.testing.assert_array_equal(out.samples[:d], clip.samples[:d])
    np.testing.assert_allclose(out.samples[d:], clip.samples[d:] + 0.5 * clip.samples[:-d])


def test_echo_identities():
    clip = AudioClip(np.random.default_rng(0).standard_normal(1000))
    np.testing.assert_array_equal(echo(clip, 50.0, 0.0).samples, clip.samples)
    np.testing.assert_array_equal(echo(clip, 1000.0, 0.3).samples, clip.samples)
    with pytest.raises(SignalError):
        echo(clip, -1.0, 0.3)


def test_normalize_moments_and_idempotence():
    clip = AudioClip(3.0 + 7.0 * np.random.default_rng(2).standard_normal(4000))
    once = normalize(clip)
    assert abs(once.samples.mean()) < 1e-12
    assert once.samples.std() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(normalize(once).samples, once.samples, atol=1e-12)


def test_normalize_constant_clip_fails():
    with pytest.raises(SignalError):
        normalize(AudioClip(np.ones(500)))


def test_augmentation_rate():
    policy = AugmentPolicy()
    applied = sum(draw_augment_params(policy, seed) is not None for seed in range(10_000))
    assert 0.78 <= applied / 10_000 <= 0.82


def test_draw_is_deterministic_and_in_range():
    policy = AugmentPolicy(probability=1.0)
    a = draw_augment_params(policy, 7)
    assert a == draw_augment_params(policy, 7)
    assert 0.85 <= a.tempo_rate <= 1.3
    assert -300 <= a.pitch_cents <= 300
    assert 20 <= a.echo_delay_ms <= 200
    assert 0.05 <= a.echo_decay <= 0.2


def test_skipped_augmentation_only_normalizes():
    clip = synth_clip(1, 0.1, seed=4)
    out = augment(clip, AugmentPolicy(probability=0.0), seed=9)
    np.testing.assert_array_equal(out.samples, normalize(clip).samples)


def test_full_augmentation_changes_length_by_tempo():
    clip = synth_clip(1, 0.25, seed=4)
    policy = AugmentPolicy(probability=1.0)
    params = draw_augment_params(policy, 3)
    out = augment(clip, policy, seed=3)
    assert len(out) == int(round(len(clip) / params.tempo_rate))
    assert abs(out.samples.mean()) < 1e-12


def test_fast_tempo_on_short_clip_pads_to_minimum():
    clip = synth_clip(1, 450 / 16000, seed=4)
    policy = AugmentPolicy(probability=1.0, tempo_range=(1.25, 1.25))
    out = augment(clip, policy, seed=5)
    assert len(out) == 400
    tail = out.samples[360:]
    np.testing.assert_allclose(tail, tail[0])
    assert not np.allclose(out.samples[:360], tail[0])
    assert abs(out.samples.std() - 1.0) < 1e-9
    with pytest.raises(SignalError):
        tempo(clip, 1.25)


def test_policy_validation():
    with pytest.raises(ConfigError):
        AugmentPolicy(probability=1.5)
    with pytest.raises(ConfigError):
        AugmentPolicy(pitch_range=(-2000, 0))
    with pytest.raises(ConfigError) as info:
        AugmentPolicy.from_dict({'speed': 1.0})
    assert info.value.key == 'speed'
    assert AugmentPolicy.from_dict({'tempo_range': [0.9, 1.1]}).tempo_range == (0.9, 1.1)


def test_wav_export_round_trip(tmp_path):
    clip = synth_clip(0, 0.1, seed=1)
    path = tmp_path / 'clip.wav'
    write_wav(clip, str(path))
    back = read_wav(str(path), label=0)
    assert back.sample_rate == clip.sample_rate
    expected = clip.samples / np.max(np.abs(clip.samples))
    np.testing.assert_allclose(back.samples, expected, atol=1.0 / 32767)

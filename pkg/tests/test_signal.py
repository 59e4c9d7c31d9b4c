import math
import wave

import numpy as np
import pytest

from geoat.errors import CorruptHeader, UnsupportedFormat
from geoat.signal import (
    CLIP_SAMPLES,
    AudioClip,
    MelConfig,
    hz_to_mel,
    load_wav,
    logmel,
    mel_filterbank,
    mel_to_hz,
    write_wav,
)


def _raw_wav(path, samples_i16, rate=16000, channels=1, width=2):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(np.asarray(samples_i16).astype(f"<i{width}").tobytes())


def _tone(freq, amp=1.0, n=CLIP_SAMPLES):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / 16000)


def test_load_zeros(tmp_path):
    _raw_wav(tmp_path / "z.wav", np.zeros(CLIP_SAMPLES))
    clip = load_wav(tmp_path / "z.wav")
    assert clip.samples.shape == (CLIP_SAMPLES,) and not clip.samples.any()


def test_load_scaling_and_pad(tmp_path):
    x = np.full(8 * 16000, 16384)
    x[0] = -32768
    _raw_wav(tmp_path / "s.wav", x)
    clip = load_wav(tmp_path / "s.wav")
    assert clip.samples[0] == -1.0 and clip.samples[1] == 0.5
    assert clip.samples.size == CLIP_SAMPLES
    assert not clip.samples[-32000:].any() and clip.samples[-32001] == 0.5


def test_load_truncates_long(tmp_path):
    _raw_wav(tmp_path / "l.wav", np.arange(CLIP_SAMPLES + 500) % 1000)
    assert load_wav(tmp_path / "l.wav").samples.size == CLIP_SAMPLES


def test_load_rejects_formats(tmp_path):
    _raw_wav(tmp_path / "r.wav", np.zeros(441), rate=44100)
    with pytest.raises(UnsupportedFormat, match="16000"):
        load_wav(tmp_path / "r.wav")
    _raw_wav(tmp_path / "c.wav", np.zeros(32), channels=2)
    with pytest.raises(UnsupportedFormat, match="channel"):
        load_wav(tmp_path / "c.wav")
    _raw_wav(tmp_path / "w.wav", np.zeros(32), width=4)
    with pytest.raises(UnsupportedFormat, match="16-bit"):
        load_wav(tmp_path / "w.wav")


def test_load_corrupt(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"RIFF\x00\x00\x00\x00JUNKJUNK")
    with pytest.raises(CorruptHeader):
        load_wav(tmp_path / "bad.wav")
    (tmp_path / "empty.wav").write_bytes(b"")
    with pytest.raises(CorruptHeader):
        load_wav(tmp_path / "empty.wav")


def test_optional_resampling(tmp_path):
    _raw_wav(tmp_path / "r.wav", np.full(8000, 1000), rate=8000)
    clip = load_wav(tmp_path / "r.wav", resample=True)
    assert clip.sample_rate == 16000
    assert np.allclose(clip.samples[:15990], 1000 / 32768)


def test_write_round_trip(tmp_path):
    x = _tone(440, 0.5)
    write_wav(tmp_path / "t.wav", x)
    assert np.max(np.abs(load_wav(tmp_path / "t.wav").samples - x)) <= 1 / 32768


def test_frame_count_and_shape():
    assert MelConfig().n_frames() == 997
    spec = logmel(AudioClip(np.zeros(CLIP_SAMPLES)))
    assert spec.frames.shape == (997, 64) and (spec.T, spec.F) == (997, 64)


def test_zero_clip_is_log_floor():
    spec = logmel(AudioClip(np.zeros(CLIP_SAMPLES)))
    assert np.all(spec.frames == math.log(1e-10))


def _htk_mel(f):
    return 2595.0 * math.log10(1.0 + f / 700.0)


def test_one_khz_tone_lands_in_bracketing_bin():
    # closed-form HTK band edges, independent of the implementation
    lo, hi = _htk_mel(50.0), _htk_mel(8000.0)
    edges_mel = [lo + (hi - lo) * i / 65 for i in range(66)]
    target = _htk_mel(1000.0)
    expected = min(range(64), key=lambda k: abs(edges_mel[k + 1] - target))
    assert edges_mel[expected] < target < edges_mel[expected + 2]
    frames = logmel(AudioClip(_tone(1000.0))).frames
    assert set(frames.argmax(axis=1)) == {expected}


def test_one_khz_tone_slaney_bin_brackets_tone():
    cfg = MelConfig(mel_scale="slaney")
    edges = mel_to_hz(np.linspace(hz_to_mel(50.0, "slaney"), hz_to_mel(8000.0, "slaney"), 66), "slaney")
    bins = set(logmel(AudioClip(_tone(1000.0)), cfg).frames.argmax(axis=1))
    assert len(bins) == 1
    (k,) = bins
    assert edges[k] < 1000.0 < edges[k + 2]


def test_mel_scale_round_trip_and_slaney_knee():
    f = np.array([0.0, 50.0, 999.0, 1000.0, 4000.0, 8000.0])
    for scale in ("htk", "slaney"):
        assert np.allclose(mel_to_hz(hz_to_mel(f, scale), scale), f)
    assert hz_to_mel(1000.0, "slaney") == pytest.approx(15.0)
    assert hz_to_mel(1000.0) == pytest.approx(999.9855, abs=1e-3)


def test_filterbank_shape_and_peaks():
    fb = mel_filterbank(MelConfig())
    assert fb.shape == (257, 64)
    assert np.all(fb >= 0) and np.all(fb.max(axis=0) <= 1.0 + 1e-12)
    assert np.all(np.diff(fb.argmax(axis=0)) >= 0)


def test_amplitude_halving_lowers_every_entry():
    rng = np.random.default_rng(3)
    x = 0.5 * rng.uniform(-1, 1, CLIP_SAMPLES)
    full = logmel(AudioClip(x)).frames
    half = logmel(AudioClip(0.5 * x)).frames
    assert np.all(half < full)


@pytest.mark.parametrize("c", [0.9, 0.3, 1e-3])
def test_scaling_never_increases(c):
    x = _tone(523.0, 0.8) + 0.1 * np.random.default_rng(0).standard_normal(CLIP_SAMPLES)
    assert np.all(logmel(AudioClip(c * x)).frames <= logmel(AudioClip(x)).frames)


def test_determinism_and_digest():
    x = _tone(300.0, 0.2)
    a, b = logmel(AudioClip(x)), logmel(AudioClip(x.copy()))
    assert np.array_equal(a.frames, b.frames) and a.config_digest == b.config_digest
    assert MelConfig(mel_scale="slaney").digest() != MelConfig().digest()

"""WAV loading and log-Mel spectrogram front end."""

from __future__ import annotations

import hashlib
import json
import wave
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptHeader, UnsupportedFormat

SAMPLE_RATE = 16000
CLIP_SECONDS = 10
CLIP_SAMPLES = SAMPLE_RATE * CLIP_SECONDS


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def fit_length(x: np.ndarray, n: int = CLIP_SAMPLES) -> np.ndarray:
    if x.size >= n:
        return x[:n].copy()
    return np.concatenate([x, np.zeros(n - x.size, dtype=x.dtype)])


def linear_resample(x: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    if src_rate == dst_rate:
        return x
    n_out = int(round(x.size * dst_rate / src_rate))
    t_out = np.arange(n_out) * (src_rate / dst_rate)
    return np.interp(t_out, np.arange(x.size), x)


def load_wav(path, resample: bool = False) -> AudioClip:
    """Read a 16 kHz mono PCM16 WAV into a fixed 10 s clip.

    Other rates are rejected unless ``resample`` is set, in which case a
    linear interpolator is applied.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, nframes = (
                w.getnchannels(),
                w.getsampwidth(),
                w.getframerate(),
                w.getnframes(),
            )
            raw = w.readframes(nframes)
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedFormat(f"{path}: only PCM16 is supported ({msg})") from None
        raise CorruptHeader(f"{path}: {msg}") from None
    except EOFError:
        raise CorruptHeader(f"{path}: truncated header") from None
    if channels != 1:
        raise UnsupportedFormat(f"{path}: expected 1 channel, got {channels}")
    if width != 2:
        raise UnsupportedFormat(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if rate != SAMPLE_RATE and not resample:
        raise UnsupportedFormat(f"{path}: expected {SAMPLE_RATE} Hz, got {rate} Hz")
    x = np.frombuffer(raw[: len(raw) // 2 * 2], dtype="<i2").astype(np.float64) / 32768.0
    if rate != SAMPLE_RATE:
        x = linear_resample(x, rate, SAMPLE_RATE)
    return AudioClip(fit_length(x), SAMPLE_RATE)


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE):
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = SAMPLE_RATE
    win_length: int = 512
    hop_length: int = 160
    n_fft: int = 512
    n_mels: int = 64
    fmin: float = 50.0
    fmax: float = 8000.0
    log_floor: float = 1e-10
    mel_scale: str = "htk"

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def n_frames(self, n_samples: int = CLIP_SAMPLES) -> int:
        return 1 + (n_samples - self.win_length) // self.hop_length


@dataclass
class MelSpec:
    frames: np.ndarray  # (T, F)
    config_digest: str

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def F(self) -> int:
        return self.frames.shape[1]


def hz_to_mel(f, scale: str = "htk"):
    f = np.asarray(f, dtype=np.float64)
    if scale == "htk":
        return 2595.0 * np.log10(1.0 + f / 700.0)
    if scale == "slaney":
        f_sp = 200.0 / 3
        min_log_hz = 1000.0
        min_log_mel = min_log_hz / f_sp
        logstep = np.log(6.4) / 27.0
        return np.where(
            f >= min_log_hz,
            min_log_mel + np.log(np.maximum(f, 1e-12) / min_log_hz) / logstep,
            f / f_sp,
        )
    raise ValueError(f"unknown mel scale {scale!r}")


def mel_to_hz(m, scale: str = "htk"):
    m = np.asarray(m, dtype=np.float64)
    if scale == "htk":
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    if scale == "slaney":
        f_sp = 200.0 / 3
        min_log_hz = 1000.0
        min_log_mel = min_log_hz / f_sp
        logstep = np.log(6.4) / 27.0
        return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)
    raise ValueError(f"unknown mel scale {scale!r}")


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular filters, shape (n_fft // 2 + 1, n_mels).

    The slaney variant is additionally area-normalised.
    """
    edges_mel = np.linspace(hz_to_mel(cfg.fmin, cfg.mel_scale), hz_to_mel(cfg.fmax, cfg.mel_scale), cfg.n_mels + 2)
    edges = mel_to_hz(edges_mel, cfg.mel_scale)
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    if cfg.mel_scale == "slaney":
        fb *= (2.0 / (hi - lo))
    return fb.T


def _hann(n: int) -> np.ndarray:
    # periodic Hann, the usual STFT choice
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def logmel(clip: AudioClip, cfg: MelConfig = MelConfig()) -> MelSpec:
    x = np.asarray(clip.samples, dtype=np.float64)
    n_frames = cfg.n_frames(x.size)
    idx = np.arange(cfg.win_length)[None, :] + cfg.hop_length * np.arange(n_frames)[:, None]
    frames = x[idx] * _hann(cfg.win_length)[None, :]
    mag = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=1))
    mel = mag @ mel_filterbank(cfg)
    return MelSpec(np.log(mel + cfg.log_floor), cfg.digest())

"""Waveform I/O, resampling, segmentation and classical features (power STFT, LFCC)."""
from __future__ import annotations

import logging
import math
import wave
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.fft import dct

from .errors import (
    AudioFormatError,
    ConfigError,
    EmptyRangeError,
    LengthError,
    UnsupportedAudioError,
)

log = logging.getLogger(__name__)

CANONICAL_RATE = 16000
LOG_FLOOR = 1e-10
PCM_SCALE = 32767.0


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("waveform must be mono (1-D)")
        if x.size < 1:
            raise ValueError("waveform must hold at least one sample")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @classmethod
    def zeros(cls, n: int, sample_rate: int = CANONICAL_RATE) -> "Waveform":
        return cls(np.zeros(n), sample_rate)


@dataclass(frozen=True)
class Spectrogram:
    frames: np.ndarray  # T x F power
    hop_seconds: float
    n_fft: int


@dataclass(frozen=True)
class FeatureSequence:
    frames: np.ndarray  # T x D
    frame_rate: float
    source_tag: str  # lfcc | spectrogram | embedding

    def __post_init__(self):
        x = np.asarray(self.frames, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"feature sequence must be T x D with T, D >= 1, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("feature sequence contains non-finite values")
        if self.source_tag not in ("lfcc", "spectrogram", "embedding"):
            raise ValueError(f"unknown source_tag {self.source_tag!r}")
        object.__setattr__(self, "frames", x)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


# --------------------------------------------------------------------------- I/O


def read_wav(path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as fh:
            n_channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            comptype = fh.getcomptype()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedAudioError(f"{path}: {msg}") from exc
        raise AudioFormatError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise AudioFormatError(f"{path}: truncated header") from exc
    if comptype != "NONE":
        raise UnsupportedAudioError(f"{path}: compressed WAV ({comptype}) not supported")
    if width != 2:
        raise UnsupportedAudioError(f"{path}: only 16-bit PCM supported, got {8 * width}-bit")
    if n_channels not in (1, 2):
        raise UnsupportedAudioError(f"{path}: {n_channels} channels not supported")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    if pcm.size == 0:
        raise AudioFormatError(f"{path}: empty data chunk")
    pcm = pcm[: pcm.size - pcm.size % n_channels].reshape(-1, n_channels).mean(axis=1)
    return Waveform(np.clip(pcm / PCM_SCALE, -1.0, 1.0), rate)


def write_wav(w: Waveform, path) -> None:
    x = w.samples
    if np.any(np.abs(x) > 1.0):
        log.warning("clipping %d samples outside [-1, 1] while writing %s",
                    int(np.sum(np.abs(x) > 1.0)), path)
        x = np.clip(x, -1.0, 1.0)
    pcm = np.round(x * PCM_SCALE).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


# ---------------------------------------------------------------- resampling

_HALF_TAPS = 16
_KAISER_BETA = 8.0


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Kaiser-windowed sinc interpolation (16 taps per side, beta 8).

    Kernel weights are renormalised per output sample so DC passes exactly,
    including at the edges where the support is truncated.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    src = w.sample_rate
    if target_rate == src:
        return w
    x = w.samples
    n_in = x.size
    n_out = max(1, (n_in * target_rate + src // 2) // src)
    cutoff = min(1.0, target_rate / src)
    # support widens when downsampling so the window still spans 16 zero crossings
    half = int(math.ceil(_HALF_TAPS / cutoff))
    out = np.empty(n_out)
    offs = np.arange(-half + 1, half + 1)
    i0 = np.i0(_KAISER_BETA)
    chunk = max(1, 2_000_000 // offs.size)
    for lo in range(0, n_out, chunk):
        pos = np.arange(lo, min(n_out, lo + chunk)) * (src / target_rate)
        base = np.floor(pos).astype(np.int64)
        idx = base[:, None] + offs[None, :]
        d = pos[:, None] - idx
        u = np.clip(d * cutoff / _HALF_TAPS, -1.0, 1.0)
        win = np.i0(_KAISER_BETA * np.sqrt(1.0 - u * u)) / i0
        h = cutoff * np.sinc(cutoff * d) * win
        h[np.abs(d * cutoff) >= _HALF_TAPS] = 0.0
        valid = (idx >= 0) & (idx < n_in)
        h = np.where(valid, h, 0.0)
        vals = x[np.clip(idx, 0, n_in - 1)]
        norm = h.sum(axis=1)
        norm[norm == 0] = 1.0
        out[lo: lo + pos.size] = (h * vals).sum(axis=1) / norm
    return Waveform(out, target_rate)


def segment_clip(w: Waveform, start_s: float, dur_s: float) -> Waveform:
    if start_s < 0:
        raise ValueError("start_s must be >= 0")
    if dur_s <= 0:
        raise ValueError("dur_s must be > 0")
    start = int(round(start_s * w.sample_rate))
    n = int(round(dur_s * w.sample_rate))
    if start >= len(w):
        raise EmptyRangeError(f"segment start {start_s}s is beyond clip end {w.duration}s")
    piece = w.samples[start:start + n]
    if piece.size < n:
        piece = np.concatenate([piece, np.zeros(n - piece.size)])
    return Waveform(piece, w.sample_rate)


# ------------------------------------------------------------------ features


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    if x.size < frame_len:
        raise LengthError(f"signal of {x.size} samples is shorter than one frame ({frame_len})")
    n_frames = (x.size - frame_len) // hop + 1
    view = np.lib.stride_tricks.sliding_window_view(x, frame_len)
    return view[: (n_frames - 1) * hop + 1: hop]


def n_frames(n_samples: int, frame_len: int, hop: int) -> int:
    return (n_samples - frame_len) // hop + 1


def stft_power(w: Waveform, n_fft: int = 512, hop_s: float = 0.010) -> Spectrogram:
    hop = int(round(hop_s * w.sample_rate))
    frames = frame_signal(w.samples, n_fft, hop) * hann(n_fft)
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    return Spectrogram(power, hop / w.sample_rate, n_fft)


def linear_filterbank(n_filters: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters with linearly spaced edges over [0, Nyquist]; shape (n_filters, n_fft//2+1)."""
    freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    edges = np.linspace(0.0, sample_rate / 2.0, n_filters + 2)
    fb = np.zeros((n_filters, freqs.size))
    for i in range(n_filters):
        lo, mid, hi = edges[i:i + 3]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        fb[i] = np.clip(np.minimum(rise, fall), 0.0, None)
    return fb


def deltas(c: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas along time (axis 0) with edge replication."""
    denom = 2.0 * sum(n * n for n in range(1, width + 1))
    padded = np.pad(c, ((width, width), (0, 0)), mode="edge")
    t = c.shape[0]
    out = np.zeros_like(c)
    for n in range(1, width + 1):
        out += n * (padded[width + n: width + n + t] - padded[width - n: width - n + t])
    return out / denom


def lfcc(
    w: Waveform,
    frame_s: float = 0.020,
    hop_s: float = 0.010,
    n_coeff: int = 60,
    n_filters: int = 20,
) -> FeatureSequence:
    """Linear-frequency cepstra.

    The DCT of ``n_filters`` log energies yields at most ``n_filters`` static
    coefficients; anything beyond that is filled with first then second order
    deltas, so the default 60 = 20 static + 20 delta + 20 delta-delta.
    """
    if n_coeff < 1 or n_coeff > 3 * n_filters:
        raise ConfigError(f"n_coeff={n_coeff} must be in [1, {3 * n_filters}] for {n_filters} filters")
    sr = w.sample_rate
    frame_len = int(round(frame_s * sr))
    hop = int(round(hop_s * sr))
    n_fft = 1 << max(0, (frame_len - 1).bit_length())
    frames = frame_signal(w.samples, frame_len, hop) * hann(frame_len)
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    energies = power @ linear_filterbank(n_filters, n_fft, sr).T
    ceps = dct(np.log(np.maximum(energies, LOG_FLOOR)), type=2, axis=1, norm="ortho")
    n_static = min(n_coeff, n_filters)
    parts = [ceps[:, :n_static]]
    if n_coeff > n_filters:
        d1 = deltas(ceps)
        parts.append(d1[:, : min(n_filters, n_coeff - n_filters)])
        if n_coeff > 2 * n_filters:
            parts.append(deltas(d1)[:, : n_coeff - 2 * n_filters])
    return FeatureSequence(np.concatenate(parts, axis=1), 1.0 / (hop / sr), "lfcc")


def measure_snr(signal: Waveform, noise: Waveform) -> float:
    """10*log10(signal power / noise power); +inf when the noise is silent."""
    s = signal.samples if isinstance(signal, Waveform) else np.asarray(signal, float)
    n = noise.samples if isinstance(noise, Waveform) else np.asarray(noise, float)
    if s.size != n.size:
        raise LengthError(f"signal ({s.size}) and noise ({n.size}) lengths differ")
    pn = float(np.dot(n, n))
    if pn == 0.0:
        return math.inf
    return 10.0 * math.log10(float(np.dot(s, s)) / pn)


def load_stem(path, target_rate: Optional[int] = CANONICAL_RATE) -> Waveform:
    w = read_wav(path)
    if target_rate is not None and w.sample_rate != target_rate:
        w = resample(w, target_rate)
    return w

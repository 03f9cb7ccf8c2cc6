"""Per-stem feature sequences: embedding files, LFCC, sinc-bank band energies,
and time alignment of the instrumental and vocal streams."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..dsp import LOG_FLOOR, FeatureSequence, Waveform, lfcc, stft_power
from ..errors import AudioFormatError, LengthError

EMB_MAGIC = b"SGEMB1"
_EMB_HEADER = struct.Struct("<6sIIf")


def save_embedding_file(seq: FeatureSequence, path) -> None:
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    t, d = frames.shape
    with open(path, "wb") as fh:
        fh.write(_EMB_HEADER.pack(EMB_MAGIC, t, d, float(seq.frame_rate)))
        fh.write(frames.tobytes())


def load_embedding_file(path) -> FeatureSequence:
    raw = Path(path).read_bytes()
    if len(raw) < _EMB_HEADER.size:
        raise AudioFormatError(f"{path}: embedding header truncated ({len(raw)} bytes)")
    magic, t, d, rate = _EMB_HEADER.unpack_from(raw)
    if magic != EMB_MAGIC:
        raise AudioFormatError(f"{path}: bad magic {magic!r}, expected {EMB_MAGIC!r}")
    expected = t * d * 4
    payload = raw[_EMB_HEADER.size:]
    if len(payload) < expected:
        raise LengthError(f"{path}: payload has {len(payload)} bytes, expected {expected} (T={t}, D={d})")
    frames = np.frombuffer(payload, dtype="<f4", count=t * d).reshape(t, d)
    return FeatureSequence(frames.astype(np.float64), float(rate), "embedding")


# ------------------------------------------------------------------ sinc bank

SINC_TAPS = 129


def sinc_bank_response(n_bands: int, n_fft: int = 512, taps: int = SINC_TAPS) -> np.ndarray:
    """Squared magnitude responses (n_fft//2+1, n_bands) of Hamming-windowed
    sinc band-pass filters with linearly spaced edges over [0, Nyquist]."""
    n = np.arange(taps) - taps // 2
    edges = np.linspace(0.0, 0.5, n_bands + 1)
    win = np.hamming(taps)
    bank = np.empty((n_bands, taps))
    for k in range(n_bands):
        lo, hi = edges[k], edges[k + 1]
        bank[k] = (2 * hi * np.sinc(2 * hi * n) - 2 * lo * np.sinc(2 * lo * n)) * win
    return (np.abs(np.fft.rfft(bank, n=n_fft, axis=1)) ** 2).T


def sinc_band_energies(w: Waveform, n_bands: int, n_fft: int = 512, hop_s: float = 0.010) -> FeatureSequence:
    """Log band energies of a fixed sinc filter bank, applied in the frequency
    domain of the 512-point / 10 ms power STFT."""
    spec = stft_power(w, n_fft, hop_s)
    energies = spec.frames @ sinc_bank_response(n_bands, n_fft) / n_fft
    return FeatureSequence(np.log(np.maximum(energies, LOG_FLOOR)), 1.0 / spec.hop_seconds, "spectrogram")


def stem_features(w: Waveform, frontend: str, n_bins: int, lfcc_coeffs: int = 60) -> FeatureSequence:
    if frontend == "raw_lfcc":
        return lfcc(w, n_coeff=lfcc_coeffs)
    if frontend == "raw_spectrogram":
        return sinc_band_energies(w, n_bins)
    raise ValueError(f"frontend {frontend!r} does not take waveforms")


# ------------------------------------------------------------------ fusion


def _resample_frames(seq: FeatureSequence, rate: float, n_out: int) -> np.ndarray:
    if seq.frame_rate == rate and seq.n_frames == n_out:
        return seq.frames
    pos = np.arange(n_out) * (seq.frame_rate / rate)
    src = np.arange(seq.n_frames)
    return np.stack([np.interp(pos, src, seq.frames[:, j]) for j in range(seq.dim)], axis=1)


def fuse_branches(o_ins: FeatureSequence, o_voc: FeatureSequence) -> FeatureSequence:
    """Interpolate both streams to the higher frame rate (edges held) and
    concatenate features: instrumental columns first."""
    rate = max(o_ins.frame_rate, o_voc.frame_rate)
    n_out = max(int(round(s.n_frames * rate / s.frame_rate)) for s in (o_ins, o_voc))
    fused = np.concatenate([_resample_frames(o_ins, rate, n_out),
                            _resample_frames(o_voc, rate, n_out)], axis=1)
    tag = o_voc.source_tag if o_ins.source_tag == o_voc.source_tag else "embedding"
    return FeatureSequence(fused, rate, tag)

"""Singing-voice augmentation: RawBoost-style coloured noise on vocals and
beat-matched instrumental substitution."""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .dsp import Waveform, measure_snr, segment_clip
from .errors import AlignmentError, ConfigError, LookupFailure, RateMismatchError
from .manifest import ClipRecord, TempoIndex

log = logging.getLogger(__name__)

MIX_PEAK = 0.95


def derive_seed(global_seed: int, epoch: int, clip_id: str) -> int:
    """Stable 64-bit seed for one (epoch, clip) pair, independent of PYTHONHASHSEED."""
    h = hashlib.blake2b(f"{int(global_seed)}:{int(epoch)}:{clip_id}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RawBoostConfig:
    snr_db_min: float = 10.0
    snr_db_max: float = 40.0
    n_bands: int = 5
    band_gain_db_range: tuple = (-20.0, 20.0)
    fir_taps: int = 127

    def __post_init__(self):
        object.__setattr__(self, "band_gain_db_range", tuple(float(g) for g in self.band_gain_db_range))
        if not self.snr_db_min <= self.snr_db_max:
            raise ConfigError("snr_db_min must be <= snr_db_max")
        if self.n_bands < 1:
            raise ConfigError("n_bands must be >= 1")
        if self.fir_taps < 3 or self.fir_taps % 2 == 0:
            raise ConfigError("fir_taps must be odd and >= 3")
        lo, hi = self.band_gain_db_range
        if lo > hi:
            raise ConfigError("band_gain_db_range must be (low, high)")


@dataclass(frozen=True)
class FilterCoeffs:
    taps: np.ndarray
    band_gains_db: np.ndarray

    def response(self, freqs_norm: np.ndarray) -> np.ndarray:
        """Magnitude response at normalised frequencies (cycles/sample, 0..0.5)."""
        n = np.arange(self.taps.size)
        return np.abs(np.exp(-2j * np.pi * np.outer(freqs_norm, n)) @ self.taps)


def band_centers(n_bands: int) -> np.ndarray:
    """Band centres in cycles/sample for n equal bands over [0, 0.5]."""
    return (np.arange(n_bands) + 0.5) * 0.5 / n_bands


_DESIGN_GRID = 4096


def random_fir_coloration(rng: np.random.Generator, cfg: RawBoostConfig) -> FilterCoeffs:
    lo, hi = cfg.band_gain_db_range
    gains_db = rng.uniform(lo, hi, size=cfg.n_bands)
    # frequency sampling on a dense grid, zero phase, then truncate + Hann window
    freqs = np.arange(_DESIGN_GRID // 2 + 1) / _DESIGN_GRID
    band = np.minimum((freqs / 0.5 * cfg.n_bands).astype(int), cfg.n_bands - 1)
    desired = 10.0 ** (gains_db[band] / 20.0)
    impulse = np.fft.irfft(desired, n=_DESIGN_GRID)
    half = cfg.fir_taps // 2
    taps = np.concatenate([impulse[-half:], impulse[: half + 1]])
    taps *= np.hanning(cfg.fir_taps + 2)[1:-1]
    # the ideal response is real and even; remove irfft rounding asymmetry
    taps = 0.5 * (taps + taps[::-1])
    return FilterCoeffs(taps, gains_db)


def rawboost_si(voc: Waveform, cfg: RawBoostConfig, rng: np.random.Generator,
                return_info: bool = False):
    """Add signal-independent coloured Gaussian noise at a random SNR.

    The noise gain is solved from the realised noise power, so the SNR of the
    injected component matches the drawn target up to rounding.
    """
    x = voc.samples
    sig_pow = float(np.dot(x, x))
    if sig_pow == 0.0:
        log.warning("silent vocal: RawBoost skipped")
        return (voc, {"target_snr_db": None, "realized_snr_db": None}) if return_info else voc
    target = float(rng.uniform(cfg.snr_db_min, cfg.snr_db_max)) \
        if math.isfinite(cfg.snr_db_min) else cfg.snr_db_min
    coeffs = random_fir_coloration(rng, cfg)
    white = rng.standard_normal(x.size)
    z = fftconvolve(white, coeffs.taps, mode="same")
    if math.isinf(target) and target > 0:
        gain = 0.0
    else:
        gain = math.sqrt(sig_pow / (float(np.dot(z, z)) * 10.0 ** (target / 10.0)))
    noise = gain * z
    out = Waveform(x + noise, voc.sample_rate)
    if not return_info:
        return out
    realized = measure_snr(voc, Waveform(noise, voc.sample_rate)) if gain > 0 else math.inf
    return out, {"target_snr_db": target, "realized_snr_db": realized}


# ---------------------------------------------------------------- beat matching


def beat_match_select(idx: TempoIndex, clip: ClipRecord, rng: np.random.Generator) -> str:
    cid = clip.clip_id if isinstance(clip, ClipRecord) else str(clip)
    bucket = idx.bucket(cid)
    others = [c for c in bucket if c != cid]
    if not others:
        return cid
    return others[int(rng.integers(len(others)))]


def downbeat_period(downbeats: Sequence[float]) -> float:
    d = np.diff(np.asarray(downbeats, dtype=float))
    return float(np.median(d)) if d.size else math.inf


_TIE_TOL = 1e-9


def downbeat_align(replacement_downbeats_s: Sequence[float], vocal_segment_start_s: float,
                   segment_dur_s: float, replacement_dur_s: float) -> float:
    """Pick the replacement downbeat whose bar phase best matches the vocal start.

    The bar period is the median downbeat spacing; phase error is
    ``|(d mod period) - (start mod period)|``; ties go to the earliest downbeat.
    """
    beats = [float(b) for b in replacement_downbeats_s]
    fitting = [d for d in beats if d + segment_dur_s <= replacement_dur_s]
    if not fitting:
        raise AlignmentError("no replacement downbeat leaves room for the segment")
    period = downbeat_period(beats)
    if not math.isfinite(period) or period <= 0:
        return fitting[0]
    # floor-mod: phases land in [0, period) even for negative starts
    phase = vocal_segment_start_s % period
    best, best_err = fitting[0], math.inf
    for d in fitting:
        err = abs(d % period - phase)
        if err < best_err - _TIE_TOL:
            best, best_err = d, err
    return best


def mix_stems(ins: Waveform, voc: Waveform) -> Waveform:
    if ins.sample_rate != voc.sample_rate:
        raise RateMismatchError(
            f"stem rates differ ({ins.sample_rate} vs {voc.sample_rate}); resample first")
    n = max(len(ins), len(voc))
    mix = np.zeros(n)
    mix[: len(ins)] += ins.samples
    mix[: len(voc)] += voc.samples
    peak = float(np.max(np.abs(mix)))
    if peak > 1.0:
        mix *= MIX_PEAK / peak
    return Waveform(mix, ins.sample_rate)


@dataclass(frozen=True)
class AugmentedPair:
    vocal: Waveform
    instrumental: Waveform
    provenance: dict

    def __post_init__(self):
        if len(self.vocal) != len(self.instrumental) or \
                self.vocal.sample_rate != self.instrumental.sample_rate:
            raise ValueError("augmented stems must share length and sample rate")


def augment_segment(
    clip: ClipRecord,
    voc: Waveform,
    ins: Waveform,
    start_s: float,
    dur_s: float,
    rng: np.random.Generator,
    rawboost: Optional[RawBoostConfig] = None,
    tempo_index: Optional[TempoIndex] = None,
    load_instrumental=None,
) -> AugmentedPair:
    """Cut one training segment and apply the enabled augmentations.

    ``load_instrumental(clip_id) -> (Waveform, ClipRecord)`` supplies
    replacement stems when beat matching is on (``tempo_index`` given).
    Draw order is fixed: replacement choice, then RawBoost.
    """
    voc_seg = segment_clip(voc, start_s, dur_s)
    ins_seg = segment_clip(ins, start_s, dur_s)
    prov = {"source": clip.clip_id, "replacement": None, "offset_s": None,
            "realized_snr_db": None}
    if tempo_index is not None:
        try:
            rep_id = beat_match_select(tempo_index, clip, rng)
        except LookupFailure:
            rep_id = None
        if rep_id is not None and rep_id != clip.clip_id:
            rep_wave, rep_rec = load_instrumental(rep_id)
            # vocal phase is measured against the source's own bar grid
            ref = start_s - (clip.downbeats_s[0] if clip.downbeats_s else 0.0)
            try:
                offset = downbeat_align(rep_rec.downbeats_s, ref, dur_s, rep_wave.duration)
            except AlignmentError:
                log.debug("no fitting downbeat in %s; keeping original instrumental", rep_id)
            else:
                ins_seg = segment_clip(rep_wave, offset, dur_s)
                prov.update(replacement=rep_id, offset_s=offset)
    if rawboost is not None:
        voc_seg, info = rawboost_si(voc_seg, rawboost, rng, return_info=True)
        prov["realized_snr_db"] = info["realized_snr_db"]
    return AugmentedPair(voc_seg, ins_seg, prov)

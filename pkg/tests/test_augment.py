import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import fftconvolve

from singgraph.augment import (
    RawBoostConfig,
    augment_segment,
    band_centers,
    beat_match_select,
    derive_seed,
    downbeat_align,
    mix_stems,
    random_fir_coloration,
    rawboost_si,
)
from singgraph.dsp import Waveform, measure_snr
from singgraph.errors import AlignmentError, ConfigError, LookupFailure, RateMismatchError
from singgraph.manifest import ClipRecord, Manifest, TempoIndex, build_tempo_index

from oracles import argmin_downbeat, direct_snr_db

SR = 16000


def tone(dur=1.0, f=220.0, amp=0.8):
    t = np.arange(int(dur * SR)) / SR
    return Waveform(amp * np.sin(2 * np.pi * f * t), SR)


def test_derive_seed_is_stable():
    assert derive_seed(0, 1, "a") == derive_seed(0, 1, "a")
    assert len({derive_seed(0, e, c) for e in range(5) for c in "abc"}) == 15
    assert 0 <= derive_seed(2 ** 64 - 1, 0, "x") < 2 ** 64


def test_config_validation():
    with pytest.raises(ConfigError):
        RawBoostConfig(snr_db_min=30, snr_db_max=10)
    with pytest.raises(ConfigError):
        RawBoostConfig(fir_taps=128)
    with pytest.raises(ConfigError):
        RawBoostConfig(n_bands=0)


# ---------------------------------------------------------------- FIR coloration


def test_flat_gains_give_unit_response():
    cfg = RawBoostConfig(band_gain_db_range=(0.0, 0.0))
    fc = random_fir_coloration(np.random.default_rng(0), cfg)
    assert np.all(np.abs(fc.response(band_centers(cfg.n_bands)) - 1.0) <= 0.01)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_taps_symmetric(seed):
    fc = random_fir_coloration(np.random.default_rng(seed), RawBoostConfig())
    assert fc.taps.size == 127 and np.all(np.isfinite(fc.taps))
    assert np.allclose(fc.taps, fc.taps[::-1], atol=0, rtol=0)


@pytest.mark.parametrize("seed", range(10))
def test_band_center_response_matches_drawn_gains(seed):
    cfg = RawBoostConfig()
    fc = random_fir_coloration(np.random.default_rng(seed), cfg)
    # independent evaluation: zero-padded FFT of the taps, read at exact band centres
    n = 4000
    spec = np.abs(np.fft.rfft(fc.taps, n=n))
    idx = np.round(band_centers(cfg.n_bands) * n).astype(int)
    got_db = 20 * np.log10(spec[idx])
    assert np.all(np.abs(got_db - fc.band_gains_db) <= 1.0)


# ---------------------------------------------------------------- rawboost


def test_infinite_snr_is_identity():
    cfg = RawBoostConfig(snr_db_min=math.inf, snr_db_max=math.inf)
    v = tone()
    out, info = rawboost_si(v, cfg, np.random.default_rng(0), return_info=True)
    assert np.array_equal(out.samples, v.samples)
    assert info["realized_snr_db"] == math.inf


def test_fixed_twenty_db_on_sine():
    v = tone(amp=1.0)
    out = rawboost_si(v, RawBoostConfig(snr_db_min=20, snr_db_max=20), np.random.default_rng(1))
    noise = out.samples - v.samples
    assert abs(direct_snr_db(v.samples, noise) - 20.0) <= 0.1


def test_rawboost_deterministic():
    v = tone()
    a = rawboost_si(v, RawBoostConfig(), np.random.default_rng(7))
    b = rawboost_si(v, RawBoostConfig(), np.random.default_rng(7))
    c = rawboost_si(v, RawBoostConfig(), np.random.default_rng(8))
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_silent_vocal_skipped(caplog):
    z = Waveform.zeros(1000)
    out = rawboost_si(z, RawBoostConfig(), np.random.default_rng(0))
    assert out is z and "silent" in caplog.text


def test_noise_is_coloured_by_the_drawn_filter():
    # replay the generator to recover the raw white noise and filter
    cfg = RawBoostConfig(snr_db_min=20, snr_db_max=20)
    v = tone(2.0)
    out = rawboost_si(v, cfg, np.random.default_rng(3))
    r = np.random.default_rng(3)
    r.uniform(20, 20)
    fc = random_fir_coloration(r, cfg)
    white = r.standard_normal(len(v))
    z = fftconvolve(white, fc.taps, mode="same")
    noise = out.samples - v.samples
    g = float(np.dot(noise, z) / np.dot(z, z))
    assert np.allclose(noise, g * z, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 1.0))
def test_rawboost_snr_property(seed, amp):
    v = tone(0.25, amp=amp)
    out, info = rawboost_si(v, RawBoostConfig(), np.random.default_rng(seed), return_info=True)
    assert 10.0 <= info["target_snr_db"] <= 40.0
    realized = measure_snr(v, Waveform(out.samples - v.samples, SR))
    assert abs(realized - info["target_snr_db"]) <= 0.1


# ---------------------------------------------------------------- beat matching


def _index(groups):
    return TempoIndex(groups, 2.0)


def test_singleton_bucket_returns_self():
    assert beat_match_select(_index({60: ["a"]}), "a", np.random.default_rng(0)) == "a"


def test_pair_bucket_forced():
    idx = _index({60: ["a", "b"]})
    r = np.random.default_rng(0)
    assert {beat_match_select(idx, "a", r) for _ in range(50)} == {"b"}


def test_absent_clip_lookup_error():
    with pytest.raises(LookupFailure):
        beat_match_select(_index({60: ["a"]}), "zz", np.random.default_rng(0))


def test_selection_frequencies():
    idx = _index({60: list("abcde")})
    r = np.random.default_rng(11)
    counts = Counter(beat_match_select(idx, "a", r) for _ in range(10000))
    assert set(counts) == set("bcde")
    for c in "bcde":
        assert abs(counts[c] / 10000 - 0.25) <= 0.02


def test_align_tie_goes_earliest():
    assert downbeat_align([0.0, 2.0, 4.0], 2.0, 1.0, 5.0) == 0.0


def test_align_exact_match():
    # non-periodic grid where the vocal start sits on a downbeat
    beats = [0.1, 1.9, 4.05, 6.0]
    assert downbeat_align(beats, 4.05, 1.0, 8.0) == 4.05


def test_align_no_fit():
    with pytest.raises(AlignmentError):
        downbeat_align([3.0, 5.0], 0.0, 4.0, 6.0)


def test_align_negative_start_wraps_phase():
    # -0.1 s sits 0.1 s before a bar line: phase 1.9 of a 2 s bar
    assert downbeat_align([0.0, 2.0, 3.9, 6.0], -0.1, 1.0, 8.0) == 3.9


def test_align_single_downbeat():
    assert downbeat_align([1.0], 7.3, 1.0, 3.0) == 1.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_align_matches_bruteforce(seed):
    r = np.random.default_rng(seed)
    period = r.uniform(1.5, 3.0)
    n = int(r.integers(2, 12))
    beats = np.cumsum(np.r_[r.uniform(0, period), period + r.normal(0, 0.05, n - 1)])
    total = beats[-1] + r.uniform(0, 2 * period)
    seg = r.uniform(0.5, 4.0)
    start = r.uniform(-5, 30)
    if not np.any(beats + seg <= total):
        with pytest.raises(AlignmentError):
            downbeat_align(beats, start, seg, total)
        return
    got = downbeat_align(beats, start, seg, total)
    assert got in beats.tolist()
    assert got + seg <= total
    assert got == argmin_downbeat(beats.tolist(), start, seg, total)


# ---------------------------------------------------------------- mixing


def test_mix_zero_vocal_identity():
    ins = tone(0.1, amp=0.5)
    assert np.array_equal(mix_stems(ins, Waveform.zeros(len(ins))).samples, ins.samples)


def test_mix_cancellation():
    v = tone(0.1)
    assert not mix_stems(Waveform(-v.samples, SR), v).samples.any()


def test_mix_peak_normalisation():
    r = np.random.default_rng(4)
    a, b = r.uniform(-0.5, 0.5, 400), r.uniform(-0.5, 0.5, 400)
    a[17], b[17] = 0.7, 0.7
    raw = a + b
    out = mix_stems(Waveform(a, SR), Waveform(b, SR)).samples
    assert abs(np.max(np.abs(out)) - 0.95) <= 1e-6
    assert np.allclose(out, raw * (0.95 / 1.4), atol=1e-12)


def test_mix_pads_shorter():
    out = mix_stems(Waveform(np.full(10, 0.1), SR), Waveform(np.full(4, 0.2), SR)).samples
    assert out.size == 10 and np.allclose(out[:4], 0.3) and np.allclose(out[4:], 0.1)


def test_mix_rate_mismatch():
    with pytest.raises(RateMismatchError):
        mix_stems(Waveform.zeros(10, 16000), Waveform.zeros(10, 8000))


# ---------------------------------------------------------------- augment_segment


def _two_track_setup():
    beats_a = (0.2, 2.2, 4.2, 6.2)
    beats_b = (0.5, 2.5, 4.5, 6.5)
    recs = [ClipRecord("a", "bonafide", "s1", "train", "a.wav", "ai.wav", tempo_bpm=120.0, downbeats_s=beats_a),
            ClipRecord("b", "spoof", "s2", "train", "b.wav", "bi.wav", tempo_bpm=120.5, downbeats_s=beats_b)]
    m = Manifest(recs)
    r = np.random.default_rng(0)
    ins = {c: Waveform(r.uniform(-0.3, 0.3, 8 * SR), SR) for c in "ab"}
    return m, ins


def test_augment_segment_replaces_and_aligns():
    m, ins = _two_track_setup()
    idx = build_tempo_index(m)
    voc = tone(8.0)
    pair = augment_segment(m["a"], voc, ins["a"], 2.2, 4.0, np.random.default_rng(1),
                           tempo_index=idx, load_instrumental=lambda c: (ins[c], m[c]))
    p = pair.provenance
    assert p["source"] == "a" and p["replacement"] == "b"
    # the vocal segment starts on a's downbeat: bar phase 0 relative to a's grid
    assert p["offset_s"] == 0.5
    start = int(round(0.5 * SR))
    assert np.array_equal(pair.instrumental.samples, ins["b"].samples[start:start + 4 * SR])
    assert len(pair.vocal) == len(pair.instrumental) == 4 * SR


def test_augment_segment_deterministic():
    m, ins = _two_track_setup()
    idx = build_tempo_index(m)
    voc = tone(8.0)
    kw = dict(rawboost=RawBoostConfig(), tempo_index=idx, load_instrumental=lambda c: (ins[c], m[c]))
    a = augment_segment(m["a"], voc, ins["a"], 1.0, 3.0, np.random.default_rng(5), **kw)
    b = augment_segment(m["a"], voc, ins["a"], 1.0, 3.0, np.random.default_rng(5), **kw)
    assert np.array_equal(a.vocal.samples, b.vocal.samples)
    assert np.array_equal(a.instrumental.samples, b.instrumental.samples)
    assert a.provenance == b.provenance


def test_augment_segment_no_fit_keeps_original():
    m, ins = _two_track_setup()
    idx = build_tempo_index(m)
    voc = tone(8.0)
    pair = augment_segment(m["a"], voc, ins["a"], 0.0, 7.9, np.random.default_rng(1),
                           tempo_index=idx, load_instrumental=lambda c: (ins[c], m[c]))
    assert pair.provenance["replacement"] is None
    assert np.array_equal(pair.instrumental.samples, ins["a"].samples[: len(pair.instrumental)])


def test_augment_segment_plain():
    voc = tone(2.0)
    ins = tone(2.0, f=110.0)
    rec = ClipRecord("x", "spoof", "s", "train", "x.wav", "xi.wav")
    pair = augment_segment(rec, voc, ins, 0.5, 1.0, np.random.default_rng(0))
    assert np.array_equal(pair.vocal.samples, voc.samples[SR // 2: SR // 2 + SR])
    assert pair.provenance["realized_snr_db"] is None

import math
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singgraph.dsp import (
    FeatureSequence,
    Waveform,
    hann,
    lfcc,
    measure_snr,
    n_frames,
    read_wav,
    resample,
    segment_clip,
    stft_power,
    write_wav,
)
from singgraph.errors import (
    AudioFormatError,
    ConfigError,
    EmptyRangeError,
    LengthError,
    UnsupportedAudioError,
)

from oracles import direct_snr_db

SR = 16000


def sine(freq, dur, sr=SR, amp=1.0):
    t = np.arange(int(dur * sr)) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


# ---------------------------------------------------------------- types


def test_waveform_validation():
    with pytest.raises(ValueError):
        Waveform(np.zeros(0), SR)
    with pytest.raises(ValueError):
        Waveform(np.array([0.0, np.nan]), SR)
    with pytest.raises(ValueError):
        Waveform(np.zeros(4), 0)
    assert Waveform.zeros(8000, SR).duration == 0.5


def test_feature_sequence_validation():
    with pytest.raises(ValueError):
        FeatureSequence(np.zeros((0, 3)), 100.0, "lfcc")
    with pytest.raises(ValueError):
        FeatureSequence(np.zeros((2, 3)), 100.0, "mfcc")


# ---------------------------------------------------------------- wav i/o


def _write_pcm(path, frames, channels=1, width=2, rate=SR):
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(width)
        fh.setframerate(rate)
        fh.writeframes(frames)


def test_read_silence(tmp_path):
    p = tmp_path / "s.wav"
    _write_pcm(p, np.zeros(SR, "<i2").tobytes())
    w = read_wav(p)
    assert len(w) == SR and w.sample_rate == SR and not w.samples.any()


def test_stereo_downmix_cancels(tmp_path):
    p = tmp_path / "st.wav"
    v = int(round(0.5 * 32767))
    _write_pcm(p, np.tile(np.array([v, -v], "<i2"), 100).tobytes(), channels=2)
    w = read_wav(p)
    assert len(w) == 100 and np.all(w.samples == 0.0)


def test_sine_round_trip(tmp_path):
    w = sine(440.0, 1.0)
    p = tmp_path / "sine.wav"
    write_wav(w, p)
    back = read_wav(p)
    assert np.max(np.abs(back.samples - w.samples)) <= 1 / 32767


def test_zero_waveform_writes_zero_bytes(tmp_path):
    p = tmp_path / "z.wav"
    write_wav(Waveform.zeros(50), p)
    with wave.open(str(p)) as fh:
        assert fh.readframes(50) == b"\x00" * 100


def test_full_scale_encodes_to_32767(tmp_path):
    p = tmp_path / "one.wav"
    write_wav(Waveform(np.array([1.0, -1.0, 0.0]), SR), p)
    with wave.open(str(p)) as fh:
        pcm = np.frombuffer(fh.readframes(3), "<i2")
    assert pcm.tolist() == [32767, -32767, 0]


def test_out_of_range_is_clipped_with_warning(tmp_path, caplog):
    p = tmp_path / "hot.wav"
    write_wav(Waveform(np.array([1.5, -0.2]), SR), p)
    assert "clipping" in caplog.text
    assert read_wav(p).samples[0] == 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 2000), st.integers(0, 2 ** 32 - 1))
def test_random_round_trip(tmp_path_factory, n, seed):
    x = np.random.default_rng(seed).uniform(-1, 1, n)
    p = tmp_path_factory.mktemp("rt") / "r.wav"
    write_wav(Waveform(x, SR), p)
    assert np.max(np.abs(read_wav(p).samples - x)) <= 1 / 32767 + 1e-15


def test_bad_header(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"RIFX0000WAVEjunk")
    with pytest.raises(AudioFormatError):
        read_wav(p)


def test_truncated_file(tmp_path):
    p = tmp_path / "short.wav"
    p.write_bytes(b"RIFF")
    with pytest.raises(AudioFormatError):
        read_wav(p)


def test_unsupported_width(tmp_path):
    p = tmp_path / "w8.wav"
    _write_pcm(p, bytes(100), width=1)
    with pytest.raises(UnsupportedAudioError):
        read_wav(p)


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        read_wav(tmp_path / "nope.wav")


# ---------------------------------------------------------------- resample


def test_resample_identity():
    w = sine(100.0, 0.1)
    assert resample(w, SR) is w


@pytest.mark.parametrize("src,dst", [(16000, 8000), (8000, 16000), (44100, 16000), (16000, 22050)])
def test_resample_dc(src, dst):
    w = resample(Waveform(np.full(src // 4, 0.3), src), dst)
    assert np.max(np.abs(w.samples - 0.3)) <= 1e-3


@pytest.mark.parametrize("src,dst", [(16000, 8000), (44100, 16000), (8000, 12000)])
def test_resample_preserves_duration(src, dst):
    w = Waveform(np.random.default_rng(0).uniform(-0.5, 0.5, 12345), src)
    out = resample(w, dst)
    assert abs(out.duration - w.duration) <= 1.0 / dst


def test_resample_sine_peak():
    out = resample(sine(440.0, 1.0), 8000)
    spec = np.abs(np.fft.rfft(out.samples))
    freqs = np.fft.rfftfreq(out.samples.size, 1 / 8000)
    bin_hz = freqs[1]
    assert abs(freqs[np.argmax(spec)] - 440.0) <= bin_hz


def test_downsampling_attenuates_above_nyquist():
    out = resample(sine(6000.0, 0.5, amp=0.5), 8000)
    assert np.sqrt(np.mean(out.samples[200:-200] ** 2)) < 0.01


# ---------------------------------------------------------------- segmentation


def test_segment_full_is_identity():
    w = sine(50.0, 1.0)
    assert np.array_equal(segment_clip(w, 0.0, w.duration).samples, w.samples)


def test_segment_second_half():
    x = np.arange(2 * SR, dtype=float) / (2 * SR)
    seg = segment_clip(Waveform(x, SR), 1.0, 1.0)
    assert np.array_equal(seg.samples, x[SR:])


def test_segment_overrun_pads():
    w = Waveform(np.ones(SR), SR)
    seg = segment_clip(w, 0.5, 1.0)
    assert len(seg) == SR
    assert np.all(seg.samples[: SR // 2] == 1.0) and not seg.samples[SR // 2:].any()


def test_segment_errors():
    w = Waveform(np.ones(100), SR)
    with pytest.raises(EmptyRangeError):
        segment_clip(w, 1.0, 0.1)
    with pytest.raises(ValueError):
        segment_clip(w, -0.1, 0.1)
    with pytest.raises(ValueError):
        segment_clip(w, 0.0, 0.0)


# ---------------------------------------------------------------- stft / lfcc


def test_stft_zero_input():
    spec = stft_power(Waveform.zeros(SR))
    assert spec.frames.shape == (97, 257) and not spec.frames.any()


def test_stft_one_second_shape():
    spec = stft_power(sine(300.0, 1.0))
    assert spec.frames.shape == (97, 257)
    assert spec.hop_seconds == 0.01 and spec.n_fft == 512


def test_stft_sine_bin():
    spec = stft_power(sine(1000.0, 0.5))
    assert np.all(np.argmax(spec.frames, axis=1) == 32)


def test_stft_too_short():
    with pytest.raises(LengthError):
        stft_power(Waveform.zeros(511))


def test_parseval_per_frame():
    x = np.random.default_rng(5).normal(size=512)
    spec = stft_power(Waveform(np.clip(x / 4, -1, 1), SR))
    windowed = np.clip(x / 4, -1, 1) * hann(512)
    assert spec.frames[0].sum() * 2 - spec.frames[0, 0] - spec.frames[0, -1] == pytest.approx(
        512 * np.sum(windowed ** 2), rel=1e-6)


def test_lfcc_defaults():
    seq = lfcc(sine(440.0, 2.0, amp=0.5))
    assert seq.frames.shape == (199, 60)
    assert seq.frame_rate == 100.0 and seq.source_tag == "lfcc"


def test_lfcc_zero_input_constant():
    f = lfcc(Waveform.zeros(SR)).frames
    assert np.all(f == f[0])


def test_lfcc_coefficient_limit():
    with pytest.raises(ConfigError):
        lfcc(Waveform.zeros(SR), n_coeff=61)
    assert lfcc(Waveform.zeros(SR), n_coeff=13).dim == 13


def test_lfcc_shift_equivariance():
    x = np.random.default_rng(2).uniform(-0.5, 0.5, SR)
    a = lfcc(Waveform(x, SR)).frames
    b = lfcc(Waveform(x[160:], SR)).frames
    # frame k of the shifted input is frame k+1 of the original; deltas reach
    # two frames either side, so skip the edges of both sequences
    assert b.shape[0] == a.shape[0] - 1
    assert np.max(np.abs(a[5:-5] - b[4:a.shape[0] - 6])) < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(320, 40000))
def test_frame_count_formulas(n):
    w = Waveform.zeros(n)
    assert lfcc(w).n_frames == (n - 320) // 160 + 1
    if n >= 512:
        assert stft_power(w).frames.shape[0] == (n - 512) // 160 + 1
    assert n_frames(n, 320, 160) == (n - 320) // 160 + 1


# ---------------------------------------------------------------- snr


def test_snr_analytic():
    s = sine(200.0, 0.5)
    assert measure_snr(s, s) == pytest.approx(0.0, abs=1e-12)
    assert measure_snr(s, Waveform(s.samples / 10, SR)) == pytest.approx(20.0, abs=1e-9)


def test_snr_silent_noise_is_inf():
    assert measure_snr(sine(200.0, 0.1), Waveform.zeros(1600)) == math.inf


def test_snr_length_mismatch():
    with pytest.raises(LengthError):
        measure_snr(Waveform.zeros(10), Waveform.zeros(11))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_snr_direct_sum(seed):
    r = np.random.default_rng(seed)
    s, n = r.uniform(-1, 1, 500), r.uniform(-1, 1, 500) * r.uniform(0.01, 1)
    assert abs(measure_snr(Waveform(s, SR), Waveform(n, SR)) - direct_snr_db(s, n)) < 1e-9

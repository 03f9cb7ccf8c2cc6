"""Synthetic singing-clip corpus for smoke tests and the overfit check.

Bona fide vocals are harmonic tones shaped by fixed formant bumps and
amplitude-modulated at a syllable rate; spoofed vocals keep the same long-term
magnitude spectrum but get random phases, which smears the syllable envelope.
Instrumentals are chords with beat-synchronous decays, so tempo and downbeats
are known exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .dsp import CANONICAL_RATE, FeatureSequence, Waveform, lfcc, write_wav
from .manifest import ClipRecord, Manifest, save_manifest

FORMANTS_HZ = (700.0, 1200.0, 2600.0)
BEATS_PER_BAR = 4


@dataclass(frozen=True)
class SynthClip:
    record: ClipRecord
    vocal: Waveform
    instrumental: Waveform


def instrumental(rng, tempo_bpm: float, dur_s: float, sr: int = CANONICAL_RATE,
                 first_downbeat_s: float = 0.0):
    t = np.arange(int(round(dur_s * sr))) / sr
    beat = 60.0 / tempo_bpm
    root = rng.uniform(90.0, 180.0)
    chord = sum(np.sin(2 * np.pi * root * r * t + rng.uniform(0, 2 * np.pi)) for r in (1.0, 1.25, 1.5, 2.0))
    phase = np.mod(t - first_downbeat_s, beat)
    env = 0.3 + 0.7 * np.exp(-phase / (0.25 * beat))
    n_beats = np.floor((t - first_downbeat_s) / beat)
    accent = np.where(np.mod(n_beats, BEATS_PER_BAR) == 0, 1.0, 0.7)
    x = chord * env * accent
    downbeats = np.arange(first_downbeat_s, dur_s, beat * BEATS_PER_BAR)
    return Waveform(0.25 * x / np.max(np.abs(x)), sr), [round(float(d), 6) for d in downbeats]


def vocal(rng, dur_s: float, sr: int = CANONICAL_RATE, syllable_hz: Optional[float] = None):
    t = np.arange(int(round(dur_s * sr))) / sr
    f0 = rng.uniform(180.0, 300.0)
    vibrato = 1.0 + 0.01 * np.sin(2 * np.pi * 5.5 * t)
    phase = 2 * np.pi * f0 * np.cumsum(vibrato) / sr
    x = np.zeros_like(t)
    for h in range(1, int(4000 // f0)):
        fh = h * f0
        amp = sum(np.exp(-0.5 * ((fh - f) / 150.0) ** 2) for f in FORMANTS_HZ) + 0.05
        x += amp / h ** 0.5 * np.sin(h * phase)
    rate = syllable_hz if syllable_hz is not None else rng.uniform(3.0, 5.0)
    am = np.clip(np.sin(np.pi * rate * t + rng.uniform(0, np.pi)), 0.0, None) ** 2
    x *= am
    return Waveform(0.5 * x / np.max(np.abs(x)), sr)


def phase_randomize(w: Waveform, rng) -> Waveform:
    spec = np.fft.rfft(w.samples)
    ph = rng.uniform(0.0, 2 * np.pi, size=spec.size)
    ph[0] = 0.0
    if w.samples.size % 2 == 0:
        ph[-1] = 0.0
    y = np.fft.irfft(np.abs(spec) * np.exp(1j * ph), n=w.samples.size)
    return Waveform(0.5 * y / np.max(np.abs(y)), w.sample_rate)


def make_corpus(n_clips: int = 32, dur_s: float = 4.0, seed: int = 0,
                splits: Optional[List[str]] = None, tempos=(91.0, 101.0, 121.0, 129.0)) -> List[SynthClip]:
    """Half bona fide, half spoof; ``splits`` assigns each clip a split (default all train)."""
    rng = np.random.default_rng(seed)
    clips = []
    for i in range(n_clips):
        label = "bonafide" if i % 2 == 0 else "spoof"
        split = splits[i] if splits else "train"
        tempo = float(tempos[i % len(tempos)]) + float(rng.uniform(-0.5, 0.5))
        ins, downbeats = instrumental(rng, tempo, dur_s, first_downbeat_s=float(rng.uniform(0, 0.5)))
        voc = vocal(rng, dur_s)
        if label == "spoof":
            voc = phase_randomize(voc, rng)
        cid = f"syn{i:03d}"
        rec = ClipRecord(
            clip_id=cid, label=label, singer_id=f"{split}_singer{i % 4}", split=split,
            vocal_path=f"audio/{cid}_voc.wav", instrumental_path=f"audio/{cid}_ins.wav",
            embedding_voc_path=f"emb/{cid}_voc.emb", embedding_ins_path=f"emb/{cid}_ins.emb",
            tempo_bpm=round(tempo, 4), downbeats_s=tuple(downbeats))
        clips.append(SynthClip(rec, voc, ins))
    return clips


def proxy_embeddings(clip: SynthClip):
    """Stand-in 'SSL' sequences: 16 LFCC statics at 50 Hz (vocal), 8 at 100 Hz (instrumental)."""
    v = lfcc(clip.vocal, n_coeff=16).frames[::2]
    i = lfcc(clip.instrumental, n_coeff=8).frames
    return FeatureSequence(i, 100.0, "embedding"), FeatureSequence(v, 50.0, "embedding")


def write_corpus(clips: List[SynthClip], out_dir, with_embeddings: bool = True) -> Path:
    from .model.frontend import save_embedding_file

    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    if with_embeddings:
        (out / "emb").mkdir(exist_ok=True)
    records = []
    for c in clips:
        write_wav(c.vocal, out / c.record.vocal_path)
        write_wav(c.instrumental, out / c.record.instrumental_path)
        rec = c.record
        if with_embeddings:
            e_ins, e_voc = proxy_embeddings(c)
            save_embedding_file(e_ins, out / rec.embedding_ins_path)
            save_embedding_file(e_voc, out / rec.embedding_voc_path)
        else:
            d = rec.to_json()
            d.update(embedding_ins_path=None, embedding_voc_path=None)
            rec = ClipRecord(**d)
        records.append(rec)
    path = out / "manifest.jsonl"
    save_manifest(Manifest(records, root=out), path)
    return path


def beat_corpus(n_tracks: int = 50, dur_s: float = 12.0, seed: int = 0,
                tempos=(91.0, 101.0, 121.0, 129.0, 141.0), jitter_s: float = 0.01
                ) -> Tuple[Manifest, Dict[str, Waveform], Dict[str, Waveform]]:
    """In-memory train-split corpus for beat-matching checks.

    Downbeat annotations get Gaussian jitter (like a real tracker), so bar
    phases differ between tracks and the alignment choice is non-trivial.
    Returns (manifest, vocals, instrumentals) keyed by clip_id.
    """
    rng = np.random.default_rng(seed)
    records, vocs, inss = [], {}, {}
    for i in range(n_tracks):
        cid = f"trk{i:03d}"
        tempo = float(tempos[i % len(tempos)]) + float(rng.uniform(-0.5, 0.5))
        ins, grid = instrumental(rng, tempo, dur_s, first_downbeat_s=float(rng.uniform(0, 1.5)))
        beats = np.sort(np.asarray(grid) + rng.normal(0.0, jitter_s, size=len(grid)))
        beats = np.maximum.accumulate(np.clip(beats, 0.0, None) + np.arange(len(beats)) * 1e-6)
        records.append(ClipRecord(
            clip_id=cid, label="bonafide" if i % 2 == 0 else "spoof", singer_id=f"s{i % 7}",
            split="train", vocal_path=f"audio/{cid}_voc.wav", instrumental_path=f"audio/{cid}_ins.wav",
            tempo_bpm=round(tempo, 4), downbeats_s=tuple(round(float(b), 6) for b in beats)))
        vocs[cid] = vocal(rng, dur_s)
        inss[cid] = ins
    return Manifest(records), vocs, inss

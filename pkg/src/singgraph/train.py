"""Training with on-the-fly augmentation, and clip-level scoring."""
from __future__ import annotations

import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional

import numpy as np

from .augment import RawBoostConfig, augment_segment, derive_seed, mix_stems
from .dsp import FeatureSequence, Waveform, load_stem, segment_clip
from .errors import ConfigError, DataError, SingGraphError
from .manifest import ClipRecord, Manifest, build_tempo_index
from .metrics import ScoreFile, compute_eer
from .model import BONAFIDE, SPOOF, ModelConfig, SingGraph, load_embedding_file, prepare_input, \
    load_checkpoint, read_checkpoint, save_checkpoint, weighted_cross_entropy
from .autograd import Adam

log = logging.getLogger(__name__)

REPLACEMENT_POOLS = ("all", "bonafide")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    input_setup: str = "IV"
    use_rawboost: bool = True
    use_beat_matching: bool = True
    clip_dur_s: float = 4.0
    bucket_width_bpm: float = 2.0
    replacement_pool: str = "all"

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.lr > 0 or not self.clip_dur_s > 0 or not self.bucket_width_bpm > 0:
            raise ConfigError("lr, clip_dur_s and bucket_width_bpm must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.input_setup not in ("M", "V", "IV"):
            raise ConfigError(f"input_setup must be M, V or IV, got {self.input_setup!r}")
        if self.replacement_pool not in REPLACEMENT_POOLS:
            raise ConfigError(f"replacement_pool must be one of {REPLACEMENT_POOLS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config key(s): {sorted(unknown)}")
        return cls(**d)


# ------------------------------------------------------------------ stems


class StemStore:
    """Loads (instrumental, vocal) stems per clip, as waveforms or embedding
    sequences depending on the front-end. Results are cached."""

    def __init__(self, m: Manifest, frontend: str, setup: str = "IV"):
        self.m = m
        self.embeddings = frontend == "embedding_files"
        self.setup = setup
        self._cache: Dict[str, tuple] = {}
        self._lock = threading.Lock()

    def _load(self, rec: ClipRecord):
        need_ins = self.setup in ("IV", "M")
        if self.embeddings:
            if not rec.embedding_voc_path or (need_ins and not rec.embedding_ins_path):
                raise DataError(f"{rec.clip_id}: embedding path missing from manifest")
            voc = load_embedding_file(self.m.resolve(rec.embedding_voc_path))
            ins = load_embedding_file(self.m.resolve(rec.embedding_ins_path)) if rec.embedding_ins_path else None
            return ins, voc
        voc = load_stem(self.m.resolve(rec.vocal_path))
        if rec.instrumental_path:
            ins = load_stem(self.m.resolve(rec.instrumental_path))
        elif need_ins:
            raise DataError(f"{rec.clip_id}: setup {self.setup} needs an instrumental stem")
        else:
            ins = None
        return ins, voc

    def get(self, clip_id: str):
        with self._lock:
            hit = self._cache.get(clip_id)
        if hit is None:
            try:
                hit = self._load(self.m[clip_id])
            except OSError as exc:
                raise DataError(f"{clip_id}: {exc}") from None
            with self._lock:
                self._cache[clip_id] = hit
        return hit


def stem_duration(x) -> float:
    if isinstance(x, Waveform):
        return x.duration
    return x.n_frames / x.frame_rate


def segment_frames(seq: FeatureSequence, start_s: float, dur_s: float) -> FeatureSequence:
    """Frame-domain counterpart of segment_clip: zero-padded past the end."""
    s = int(round(start_s * seq.frame_rate))
    n = max(1, int(round(dur_s * seq.frame_rate)))
    piece = seq.frames[s:s + n]
    if piece.shape[0] < n:
        piece = np.concatenate([piece, np.zeros((n - piece.shape[0], seq.dim))])
    return FeatureSequence(piece, seq.frame_rate, seq.source_tag)


def _segment(x, start_s, dur_s):
    return segment_clip(x, start_s, dur_s) if isinstance(x, Waveform) else segment_frames(x, start_s, dur_s)


def segment_input(ins, voc, start_s: float, dur_s: float, model_cfg: ModelConfig, setup: str) -> np.ndarray:
    """Fused (T, D) frames for one segment without augmentation."""
    v = _segment(voc, start_s, dur_s)
    i = _segment(ins, start_s, dur_s) if ins is not None else None
    if setup == "M":
        return prepare_input(None, mix_stems(i, v), model_cfg, "M").frames
    return prepare_input(i, v, model_cfg, setup).frames


# ------------------------------------------------------------------ scoring


def segment_starts(duration_s: float, clip_dur_s: float) -> List[float]:
    n = max(1, math.ceil(duration_s / clip_dur_s - 1e-9))
    return [k * clip_dur_s for k in range(n)]


def score_clip(model: SingGraph, ins, voc, setup: str, clip_dur_s: float) -> float:
    """Mean of the scores of consecutive fixed-length segments."""
    starts = segment_starts(stem_duration(voc), clip_dur_s)
    batch = np.stack([segment_input(ins, voc, s, clip_dur_s, model.cfg, setup) for s in starts])
    return float(np.mean(model.score_frames(batch)))


def score_model(model: SingGraph, m: Manifest, split: str, setup: str = "IV", clip_dur_s: float = 4.0,
                jobs: int = 1, store: Optional[StemStore] = None) -> ScoreFile:
    records = m.split(split)
    if not records:
        raise DataError(f"split {split!r} has no clips")
    store = store or StemStore(m, model.cfg.frontend, setup)
    was_training = model.training
    model.eval()

    def one(rec):
        try:
            ins, voc = store.get(rec.clip_id)
            return score_clip(model, ins, voc, setup, clip_dur_s), None
        except SingGraphError as exc:
            return None, str(exc)

    try:
        if jobs > 1:
            with ThreadPoolExecutor(jobs) as pool:
                results = list(pool.map(one, records))
        else:
            results = [one(r) for r in records]
    finally:
        model.train(was_training)
    sf = ScoreFile()
    for rec, (s, err) in zip(records, results):
        if err is not None:
            log.error("could not score %s: %s", rec.clip_id, err)
            sf.failures.append((rec.clip_id, err))
        else:
            sf.add(rec.clip_id, s, rec.label)
    if sf.failures:
        log.warning("%d of %d clips in %s could not be scored", len(sf.failures), len(records), split)
    return sf


def score(checkpoint, m: Manifest, split: str, setup: Optional[str] = None,
          clip_dur_s: Optional[float] = None, jobs: int = 1) -> ScoreFile:
    """Score a split with a saved model; setup and segment length default to
    the values stored with the checkpoint."""
    _, _, _, extra = read_checkpoint(checkpoint)
    tcfg = extra.get("train", {})
    setup = setup or tcfg.get("input_setup", "IV")
    clip_dur_s = clip_dur_s or tcfg.get("clip_dur_s", 4.0)
    model = load_checkpoint(checkpoint)
    return score_model(model, m, split, setup, clip_dur_s, jobs)


# ------------------------------------------------------------------ training


@dataclass
class TrainResult:
    model: SingGraph
    best_epoch: Optional[int]
    best_val_eer: Optional[float]
    history: List[dict] = field(default_factory=list)


def class_weights(labels: np.ndarray) -> np.ndarray:
    """Inverse class frequency, scaled so a balanced set gets weight 1."""
    counts = np.bincount(labels, minlength=2).astype(float)
    return labels.size / (2.0 * counts)


class _Example:
    """Builds one augmented training example for a given epoch."""

    def __init__(self, cfg: TrainConfig, m: Manifest, model_cfg: ModelConfig,
                 rawboost: Optional[RawBoostConfig], store: StemStore):
        self.cfg, self.m, self.model_cfg, self.store = cfg, m, model_cfg, store
        self.rawboost = rawboost
        self.tempo_index = None
        if cfg.use_beat_matching:
            labels = ("bonafide",) if cfg.replacement_pool == "bonafide" else None
            self.tempo_index = build_tempo_index(m, cfg.bucket_width_bpm, labels)

    def _load_instrumental(self, clip_id):
        return self.store.get(clip_id)[0], self.m[clip_id]

    def __call__(self, rec: ClipRecord, epoch: int) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(self.cfg.seed, epoch, rec.clip_id))
        ins, voc = self.store.get(rec.clip_id)
        span = max(0.0, stem_duration(voc) - self.cfg.clip_dur_s)
        start = float(rng.uniform(0.0, span)) if span > 0 else 0.0
        if isinstance(voc, FeatureSequence):
            return segment_input(ins, voc, start, self.cfg.clip_dur_s, self.model_cfg, self.cfg.input_setup)
        if ins is None:
            ins = Waveform.zeros(len(voc), voc.sample_rate)
        pair = augment_segment(rec, voc, ins, start, self.cfg.clip_dur_s, rng, rawboost=self.rawboost,
                               tempo_index=self.tempo_index if rec.instrumental_path else None,
                               load_instrumental=self._load_instrumental)
        if self.cfg.input_setup == "M":
            return prepare_input(None, mix_stems(pair.instrumental, pair.vocal), self.model_cfg, "M").frames
        return prepare_input(pair.instrumental, pair.vocal, self.model_cfg, self.cfg.input_setup).frames


def train(cfg: TrainConfig, m: Manifest, model_cfg: ModelConfig, out_path=None,
          rawboost_cfg: Optional[RawBoostConfig] = None, log_path=None, jobs: int = 1,
          on_epoch=None) -> TrainResult:
    """Train from scratch; the checkpoint with the lowest validation EER is kept
    (the last epoch when there is no validation split).

    ``on_epoch(row, model)`` runs after each epoch; returning True stops early.
    """
    records = m.split("train")
    labels = np.array([BONAFIDE if r.label == "bonafide" else SPOOF for r in records], dtype=int)
    if labels.size == 0 or np.unique(labels).size < 2:
        raise DataError("training set needs at least one bona fide and one spoof clip")
    if model_cfg.frontend == "embedding_files" and (cfg.use_rawboost or cfg.use_beat_matching):
        log.warning("augmentation works on waveforms; disabled for the embedding_files frontend")
        cfg = TrainConfig.from_dict({**cfg.to_dict(), "use_rawboost": False, "use_beat_matching": False})
    rawboost = (rawboost_cfg or RawBoostConfig()) if cfg.use_rawboost else None
    store = StemStore(m, model_cfg.frontend, cfg.input_setup)
    make = _Example(cfg, m, model_cfg, rawboost, store)
    has_val = bool(m.split("val"))

    model = SingGraph(model_cfg)
    opt = Adam(model.parameters(), lr=cfg.lr)
    weights = class_weights(labels)
    best_state, best_epoch, best_eer = model.state_dict(), None, None
    history = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    pool = ThreadPoolExecutor(jobs) if jobs > 1 else None
    try:
        for epoch in range(cfg.epochs):
            model.train()
            order = np.random.default_rng(derive_seed(cfg.seed, epoch, "#shuffle")).permutation(labels.size)
            losses, sizes = [], []
            for b in range(0, order.size, cfg.batch_size):
                idx = order[b:b + cfg.batch_size]
                args = [(records[i], epoch) for i in idx]
                xs = list(pool.map(lambda a: make(*a), args)) if pool else [make(*a) for a in args]
                loss = weighted_cross_entropy(model(np.stack(xs)), labels[idx], weights)
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(float(loss.data))
                sizes.append(idx.size)
            epoch_loss = float(np.average(losses, weights=sizes))
            val_eer = None
            if has_val:
                sf = score_model(model, m, "val", cfg.input_setup, cfg.clip_dur_s, jobs, store)
                val_eer = compute_eer(sf)[0]
            row = {"epoch": epoch, "loss": epoch_loss, "val_eer": val_eer}
            history.append(row)
            log.info("epoch %d loss %.6f val_eer %s", epoch, epoch_loss, val_eer)
            if log_fh:
                log_fh.write(json.dumps(row, sort_keys=True) + "\n")
                log_fh.flush()
            if not has_val or best_eer is None or val_eer < best_eer:
                best_state, best_epoch, best_eer = model.state_dict(), epoch, val_eer
            if on_epoch is not None and on_epoch(row, model):
                break
    finally:
        if log_fh:
            log_fh.close()
        if pool:
            pool.shutdown()
    model.load_state_dict(best_state)
    model.eval()
    if out_path is not None:
        save_checkpoint(out_path, model, cfg.seed, extra={
            "train": cfg.to_dict(), "best_epoch": best_epoch, "val_eer": best_eer})
    return TrainResult(model, best_epoch, best_eer, history)

"""Clip records, JSON-lines manifests, tempo buckets and split checks."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path, PurePosixPath
from typing import Dict, Iterable, List, Optional

from .errors import AnnotationError, IntegrityError, LookupFailure, ManifestParseError

MANIFEST_VERSION = "1"
LABELS = ("bonafide", "spoof")
SPLITS = ("train", "val", "T01", "T02", "T03")
# splits that must not share singers with train; T01 is the seen-singer split
UNSEEN_SPLITS = ("val", "T02", "T03")


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    label: str
    singer_id: str
    split: str
    vocal_path: str
    instrumental_path: str
    embedding_voc_path: Optional[str] = None
    embedding_ins_path: Optional[str] = None
    tempo_bpm: Optional[float] = None
    downbeats_s: tuple = ()

    def __post_init__(self):
        if not self.clip_id:
            raise ValueError("clip_id must be non-empty")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.tempo_bpm is not None and not (30.0 < self.tempo_bpm < 300.0):
            raise ValueError(f"tempo_bpm {self.tempo_bpm} outside (30, 300)")
        beats = tuple(float(b) for b in self.downbeats_s)
        if any(b1 <= b0 for b0, b1 in zip(beats, beats[1:])):
            raise ValueError("downbeats_s must be strictly increasing")
        object.__setattr__(self, "downbeats_s", beats)
        for key in ("vocal_path", "instrumental_path", "embedding_voc_path", "embedding_ins_path"):
            p = getattr(self, key)
            if p and (PurePosixPath(p).is_absolute() or "\\" in p):
                raise ValueError(f"{key} must be a POSIX path relative to the manifest root: {p!r}")

    @property
    def is_bonafide(self) -> bool:
        return self.label == "bonafide"

    def to_json(self) -> dict:
        d = asdict(self)
        d["downbeats_s"] = list(self.downbeats_s)
        return d


@dataclass
class Manifest:
    records: List[ClipRecord]
    version: str = MANIFEST_VERSION
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.clip_id in seen:
                raise IntegrityError(f"duplicate clip_id {r.clip_id!r}")
            seen.add(r.clip_id)
        self._by_id = {r.clip_id: r for r in self.records}

    def __len__(self):
        return len(self.records)

    def __getitem__(self, clip_id: str) -> ClipRecord:
        try:
            return self._by_id[clip_id]
        except KeyError:
            raise LookupFailure(f"clip {clip_id!r} not in manifest") from None

    def split(self, name: str) -> List[ClipRecord]:
        return [r for r in self.records if r.split == name]

    def resolve(self, rel: str) -> Path:
        return Path(self.root) / rel


_FIELDS = {f for f in ClipRecord.__dataclass_fields__}
_REQUIRED = {"clip_id", "label", "singer_id", "split", "vocal_path", "instrumental_path"}


def _record_from_obj(obj, line_no) -> ClipRecord:
    if not isinstance(obj, dict):
        raise ManifestParseError(line_no, "expected a JSON object")
    unknown = set(obj) - _FIELDS
    if unknown:
        raise ManifestParseError(line_no, f"unknown field(s) {sorted(unknown)}")
    missing = _REQUIRED - set(obj)
    if missing:
        raise ManifestParseError(line_no, f"missing field(s) {sorted(missing)}")
    try:
        return ClipRecord(**{**obj, "downbeats_s": tuple(obj.get("downbeats_s") or ())})
    except (TypeError, ValueError) as exc:
        raise ManifestParseError(line_no, str(exc)) from None


def load_manifest(path) -> Manifest:
    path = Path(path)
    records: List[ClipRecord] = []
    version = MANIFEST_VERSION
    ids: Dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestParseError(line_no, f"invalid JSON ({exc.msg})") from None
            if isinstance(obj, dict) and "_manifest" in obj:
                version = str(obj["_manifest"].get("version", MANIFEST_VERSION))
                continue
            rec = _record_from_obj(obj, line_no)
            if rec.clip_id in ids:
                raise IntegrityError(
                    f"duplicate clip_id {rec.clip_id!r} on lines {ids[rec.clip_id]} and {line_no}")
            ids[rec.clip_id] = line_no
            records.append(rec)
    return Manifest(records, version, path.parent)


def save_manifest(m: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"_manifest": {"version": m.version}}) + "\n")
        for r in m.records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def import_beat_annotation(rec: ClipRecord, path) -> ClipRecord:
    """Merge an external beat-tracker result ({"bpm": .., "downbeats": [..]}) into a record."""
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        bpm = float(obj["bpm"])
        downbeats = tuple(float(x) for x in obj["downbeats"])
    except (KeyError, TypeError, ValueError) as exc:
        raise AnnotationError(f"{path}: bad beat annotation ({exc})") from None
    d = rec.to_json()
    d.update(tempo_bpm=bpm, downbeats_s=downbeats)
    try:
        return ClipRecord(**d)
    except ValueError as exc:
        raise AnnotationError(f"{path}: {exc}") from None


# ------------------------------------------------------------------ tempo index


@dataclass(frozen=True)
class TempoIndex:
    groups: Dict[int, List[str]]
    bucket_width_bpm: float

    @property
    def key_of(self) -> Dict[str, int]:
        return {cid: k for k, ids in self.groups.items() for cid in ids}

    def bucket(self, clip_id: str) -> List[str]:
        for ids in self.groups.values():
            if clip_id in ids:
                return ids
        raise LookupFailure(f"clip {clip_id!r} is not in the tempo index")


def tempo_key(tempo_bpm: float, bucket_width_bpm: float) -> int:
    return int(math.floor(tempo_bpm / bucket_width_bpm))


def build_tempo_index(m: Manifest, bucket_width_bpm: float = 2.0,
                      labels: Optional[Iterable[str]] = None) -> TempoIndex:
    """Group train clips that carry an instrumental stem by floor(bpm / width).

    ``labels`` restricts the replacement pool (e.g. ``("bonafide",)``); the
    default keeps every label.
    """
    if bucket_width_bpm <= 0:
        raise ValueError("bucket_width_bpm must be positive")
    allowed = set(labels) if labels is not None else None
    groups: Dict[int, List[str]] = {}
    for r in m.records:
        if r.split != "train" or not r.instrumental_path:
            continue
        if allowed is not None and r.label not in allowed:
            continue
        if r.tempo_bpm is None:
            raise AnnotationError(f"train clip {r.clip_id!r} has no tempo_bpm")
        groups.setdefault(tempo_key(r.tempo_bpm, bucket_width_bpm), []).append(r.clip_id)
    return TempoIndex(dict(sorted(groups.items())), bucket_width_bpm)


# ------------------------------------------------------------------ split check


@dataclass(frozen=True)
class SplitViolation:
    singer_id: str
    train_split: str
    other_split: str

    def __str__(self):
        return f"singer {self.singer_id!r} appears in both {self.train_split} and {self.other_split}"


def verify_splits(m: Manifest) -> List[SplitViolation]:
    train_singers = {r.singer_id for r in m.records if r.split == "train"}
    found = set()
    for r in m.records:
        if r.split in UNSEEN_SPLITS and r.singer_id in train_singers:
            found.add(SplitViolation(r.singer_id, "train", r.split))
    return sorted(found, key=lambda v: (v.singer_id, v.other_split))

"""Equal error rate and the TSV score-file format."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import IntegrityError, ManifestParseError, MetricError


@dataclass
class ScoreFile:
    clip_ids: List[str] = field(default_factory=list)
    scores: List[float] = field(default_factory=list)
    labels: List[Optional[str]] = field(default_factory=list)
    # (clip_id, message) for clips that could not be scored
    failures: List[Tuple[str, str]] = field(default_factory=list, compare=False)

    def __post_init__(self):
        if len(set(self.clip_ids)) != len(self.clip_ids):
            raise IntegrityError("score file has duplicate clip_ids")
        if not all(math.isfinite(s) for s in self.scores):
            raise ValueError("scores must be finite")

    def __len__(self):
        return len(self.clip_ids)

    def add(self, clip_id: str, score: float, label: Optional[str] = None):
        if clip_id in self.clip_ids:
            raise IntegrityError(f"duplicate clip_id {clip_id!r}")
        if not math.isfinite(score):
            raise ValueError(f"non-finite score for {clip_id!r}")
        self.clip_ids.append(clip_id)
        self.scores.append(float(score))
        self.labels.append(label)

    def split_by_label(self) -> Tuple[np.ndarray, np.ndarray]:
        bona = [s for s, l in zip(self.scores, self.labels) if l == "bonafide"]
        spoof = [s for s, l in zip(self.scores, self.labels) if l == "spoof"]
        return np.asarray(bona, float), np.asarray(spoof, float)


def write_scores(sf: ScoreFile, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for cid, s, lab in zip(sf.clip_ids, sf.scores, sf.labels):
            fh.write(f"{cid}\t{s:.6f}" + (f"\t{lab}" if lab else "") + "\n")


def read_scores(path) -> ScoreFile:
    sf = ScoreFile()
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise ManifestParseError(n, f"expected 2 or 3 tab-separated fields, got {len(parts)}")
            try:
                score = float(parts[1])
            except ValueError:
                raise ManifestParseError(n, f"bad score {parts[1]!r}") from None
            label = parts[2] if len(parts) == 3 else None
            if label not in (None, "bonafide", "spoof"):
                raise ManifestParseError(n, f"bad label {label!r}")
            try:
                sf.add(parts[0], score, label)
            except (IntegrityError, ValueError) as exc:
                raise ManifestParseError(n, str(exc)) from None
    return sf


@dataclass(frozen=True)
class OperatingPoints:
    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray


def operating_points(bona: np.ndarray, spoof: np.ndarray) -> OperatingPoints:
    """FAR/FRR at every distinct score, plus one point just above the maximum.

    FAR(t) = #spoof >= t / #spoof, FRR(t) = #bona < t / #bona.
    """
    bona = np.sort(np.asarray(bona, float))
    spoof = np.sort(np.asarray(spoof, float))
    thr = np.unique(np.concatenate([bona, spoof]))
    thr = np.append(thr, np.nextafter(thr[-1], np.inf))
    far = (spoof.size - np.searchsorted(spoof, thr, side="left")) / spoof.size
    frr = np.searchsorted(bona, thr, side="left") / bona.size
    return OperatingPoints(thr, far, frr)


def compute_eer(scores, labels=None) -> Tuple[float, float]:
    """EER and its threshold from a ScoreFile, or from (bona, spoof) arrays.

    The crossing of the FAR and FRR step curves is located over consecutive
    operating points and linearly interpolated when it falls between two.
    """
    if isinstance(scores, ScoreFile):
        bona, spoof = scores.split_by_label()
    elif labels is None:
        bona, spoof = scores
    else:
        s = np.asarray(scores, float)
        lab = np.asarray(labels)
        bona, spoof = s[lab == "bonafide"], s[lab == "spoof"]
    bona, spoof = np.asarray(bona, float), np.asarray(spoof, float)
    if bona.size == 0 or spoof.size == 0:
        raise MetricError("EER needs at least one bona fide and one spoof score")
    op = operating_points(bona, spoof)
    d = op.far - op.frr  # non-increasing, starts at +1, ends at -1
    k = int(np.argmax(d <= 0))
    if d[k] == 0:
        return float(op.far[k]), float(op.thresholds[k])
    # crossing strictly between k-1 and k
    a = d[k - 1] / (d[k - 1] - d[k])
    eer = op.far[k - 1] + a * (op.far[k] - op.far[k - 1])
    thr = op.thresholds[k - 1] + a * (op.thresholds[k] - op.thresholds[k - 1])
    return float(eer), float(thr)


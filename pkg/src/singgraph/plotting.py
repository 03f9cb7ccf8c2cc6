"""Figures written next to the tabular reports (PNG files).

Figures are built on bare ``Figure`` objects rather than pyplot, so they can be
drawn from worker threads and never touch a GUI backend.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import List, Sequence

import numpy as np
from matplotlib.figure import Figure

from .metrics import ScoreFile, compute_eer, operating_points

# fixed metadata keeps PNG bytes stable across runs
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    return path


def plot_scores(sf: ScoreFile, path) -> Path:
    """Score histograms per class and the FAR/FRR curves with the EER point."""
    bona, spoof = sf.split_by_label()
    eer, thr = compute_eer(sf)
    op = operating_points(bona, spoof)
    fig = Figure(figsize=(10, 4))
    ax1, ax2 = fig.subplots(1, 2)
    bins = np.histogram_bin_edges(np.concatenate([bona, spoof]), bins=30)
    ax1.hist(bona, bins=bins, alpha=0.6, label="bonafide")
    ax1.hist(spoof, bins=bins, alpha=0.6, label="spoof")
    ax1.axvline(thr, color="k", ls="--", lw=1)
    ax1.set_xlabel("score")
    ax1.set_ylabel("clips")
    ax1.legend()
    ax2.step(op.thresholds, op.far, where="post", label="FAR")
    ax2.step(op.thresholds, op.frr, where="post", label="FRR")
    ax2.plot([thr], [eer], "ko")
    ax2.set_xlabel("threshold")
    ax2.set_ylabel("rate")
    ax2.set_title(f"EER {eer:.4f}")
    ax2.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_training(history: Sequence[dict], path) -> Path:
    epochs = [h["epoch"] for h in history]
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    ax.plot(epochs, [h["loss"] for h in history], label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    val = [(h["epoch"], h["val_eer"]) for h in history if h.get("val_eer") is not None]
    if val:
        ax2 = ax.twinx()
        ax2.plot(*zip(*val), color="C1", label="val EER")
        ax2.set_ylabel("val EER")
    ax.legend(loc="upper right")
    fig.tight_layout()
    return _save(fig, path)


def plot_augmentation(original: np.ndarray, augmented: np.ndarray, sample_rate: int, path,
                      title: str = "") -> Path:
    """Before/after spectrogram of one augmented vocal."""
    fig = Figure(figsize=(8, 5))
    axes = fig.subplots(2, 1, sharex=True)
    for ax, x, name in zip(axes, (original, augmented), ("original", "augmented")):
        with np.errstate(divide="ignore"):
            ax.specgram(x, NFFT=512, Fs=sample_rate, noverlap=352, cmap="magma")
        ax.set_ylabel(f"{name}\nHz")
    axes[-1].set_xlabel("s")
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def read_history(path) -> List[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]

"""The full detector: fused front-end, encoder, SA aggregation, MGO, readout, head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .. import autograd as ag
from ..autograd import Tensor
from ..dsp import FeatureSequence, Waveform
from ..errors import ConfigError, InputError
from .frontend import fuse_branches, stem_features
from .layers import MGO, Encoder, Graph, Linear, Module, SAAggregate, encoder_frames, readout

FRONTENDS = ("embedding_files", "raw_lfcc", "raw_spectrogram")
SETUPS = ("M", "V", "IV")
BONAFIDE, SPOOF = 1, 0


@dataclass(frozen=True)
class ModelConfig:
    frontend: str = "raw_spectrogram"
    encoder_channels: tuple = (16, 16, 16)
    n_bins: int = 8
    time_pool: int = 2
    d_node: int = 32
    pool_keep_ratio: tuple = (0.5, 0.7)
    n_classes: int = 2
    seed: int = 0
    ins_dim: int = 0
    voc_dim: int = 0
    lfcc_coeffs: int = 60

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        ratios = self.pool_keep_ratio
        if isinstance(ratios, (int, float)):
            ratios = (ratios, ratios)
        object.__setattr__(self, "pool_keep_ratio", tuple(float(r) for r in ratios))
        if self.frontend not in FRONTENDS:
            raise ConfigError(f"frontend must be one of {FRONTENDS}, got {self.frontend!r}")
        if self.d_node < 4:
            raise ConfigError("d_node must be >= 4")
        if self.n_classes != 2:
            raise ConfigError("n_classes is fixed at 2")
        if len(self.pool_keep_ratio) != 2 or not all(0 < r <= 1 for r in self.pool_keep_ratio):
            raise ConfigError("pool_keep_ratio must hold two ratios in (0, 1]")
        if not self.encoder_channels or min(self.encoder_channels) < 1:
            raise ConfigError("encoder_channels must list at least one positive width")
        if self.n_bins < 1 or self.time_pool < 1:
            raise ConfigError("n_bins and time_pool must be >= 1")
        if self.frontend == "embedding_files" and (self.ins_dim < 1 or self.voc_dim < 1):
            raise ConfigError("embedding_files frontend needs ins_dim and voc_dim")
        if self.input_dim % self.n_bins:
            raise ConfigError(
                f"fused feature dim {self.input_dim} is not divisible by n_bins={self.n_bins}")

    @property
    def stem_dims(self) -> Tuple[int, int]:
        if self.frontend == "embedding_files":
            return self.ins_dim, self.voc_dim
        if self.frontend == "raw_lfcc":
            return self.lfcc_coeffs, self.lfcc_coeffs
        return self.n_bins, self.n_bins

    @property
    def input_dim(self) -> int:
        return sum(self.stem_dims)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        d["pool_keep_ratio"] = list(self.pool_keep_ratio)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config key(s): {sorted(unknown)}")
        return cls(**d)


Stem = Union[Waveform, FeatureSequence, None]


def prepare_input(ins: Stem, voc: Stem, cfg: ModelConfig, setup: str = "IV") -> FeatureSequence:
    """Turn stems into the fused (T x D) frame matrix for one example.

    IV uses both stems; V replaces the instrumental with silence of the same
    length; M expects the mixture in ``voc`` (or ``ins``) and feeds it to both paths.
    """
    if setup not in SETUPS:
        raise InputError(f"input setup must be one of {SETUPS}, got {setup!r}")
    if setup == "IV" and (ins is None or voc is None):
        raise InputError("setup IV needs both instrumental and vocal inputs")
    if setup == "V" and voc is None:
        raise InputError("setup V needs the vocal input")
    if setup == "M":
        mix = voc if voc is not None else ins
        if mix is None:
            raise InputError("setup M needs the mixture input")
        if cfg.frontend == "embedding_files":
            raise InputError("setup M is not available with the embedding_files frontend")
        ins = voc = mix
    if cfg.frontend == "embedding_files":
        if not isinstance(voc, FeatureSequence):
            raise InputError("embedding_files frontend takes FeatureSequence inputs")
        if setup == "V":
            ins = FeatureSequence(np.zeros((voc.n_frames, cfg.ins_dim)), voc.frame_rate, "embedding")
        for seq, want, name in ((ins, cfg.ins_dim, "instrumental"), (voc, cfg.voc_dim, "vocal")):
            if seq.dim != want:
                raise InputError(f"{name} embedding has D={seq.dim}, config expects {want}")
        return fuse_branches(ins, voc)
    if not isinstance(voc, Waveform):
        raise InputError(f"{cfg.frontend} frontend takes Waveform inputs")
    if setup == "V":
        ins = Waveform.zeros(len(voc), voc.sample_rate)
    return fuse_branches(stem_features(ins, cfg.frontend, cfg.n_bins, cfg.lfcc_coeffs),
                         stem_features(voc, cfg.frontend, cfg.n_bins, cfg.lfcc_coeffs))


class SingGraph(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.encoder = Encoder(rng, cfg.input_dim, cfg.n_bins, cfg.encoder_channels, cfg.time_pool)
        self.aggregate = SAAggregate(rng, cfg.encoder_channels[-1], cfg.d_node)
        self.mgo = MGO(rng, cfg.d_node, cfg.pool_keep_ratio)
        self.head = Linear(rng, 5 * cfg.d_node, 2)

    def encoded_frames(self, n_frames: int) -> int:
        return encoder_frames(n_frames, len(self.cfg.encoder_channels), self.cfg.time_pool)

    def encode(self, x) -> Tensor:
        return self.encoder(ag.as_tensor(x))

    def hidden(self, x) -> Tensor:
        s_map = self.encode(x)
        gs, gt = self.aggregate(s_map)
        gs, gt, stack = self.mgo(gs, gt)
        return readout(gs, gt, stack)

    def __call__(self, x) -> Tensor:
        """x: (B, T, D) fused frames -> (B, 2) logits, index 1 = bona fide."""
        x = ag.as_tensor(x)
        if x.ndim == 2:
            x = ag.reshape(x, (1,) + x.shape)
        if x.shape[-1] != self.cfg.input_dim:
            raise InputError(f"input has D={x.shape[-1]}, model expects {self.cfg.input_dim}")
        return self.head(self.hidden(x))

    def score_frames(self, x: np.ndarray) -> np.ndarray:
        """Eval-mode scores logit(bonafide) - logit(spoof) for a (B, T, D) batch."""
        with ag.no_grad():
            logits = self(x).data
        return logits[:, BONAFIDE] - logits[:, SPOOF]

    def forward(self, ins_input: Stem, voc_input: Stem, setup: str = "IV") -> Tuple[np.ndarray, float]:
        fused = prepare_input(ins_input, voc_input, self.cfg, setup)
        with ag.no_grad():
            logits = self(fused.frames[None]).data[0]
        return logits, float(logits[BONAFIDE] - logits[SPOOF])


def weighted_cross_entropy(logits: Tensor, labels: Sequence[int], class_weights: np.ndarray) -> Tensor:
    """Weighted mean of -log p(label); weights normalise like torch's 'mean' reduction."""
    labels = np.asarray(labels, dtype=int)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.size), labels] = 1.0
    w = class_weights[labels]
    nll = -ag.sum_(ag.log_softmax(logits, axis=-1) * onehot, axis=-1)
    return ag.sum_(nll * w) / float(w.sum())


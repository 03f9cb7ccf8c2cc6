"""Versioned binary checkpoints: magic, JSON header, float64 payload."""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from ..errors import CheckpointError
from .network import ModelConfig, SingGraph

MAGIC = b"SGCKPT"
VERSION = 1
_PREFIX = struct.Struct("<6sHI")


def save_checkpoint(path, model: SingGraph, seed: int, extra: Optional[dict] = None) -> None:
    state = model.state_dict()
    index, offset = [], 0
    for name in sorted(state):
        arr = state[name]
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = json.dumps({"config": model.cfg.to_dict(), "seed": int(seed), "tensors": index,
                         "extra": extra or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for name in sorted(state):
            fh.write(np.ascontiguousarray(state[name], dtype="<f8").tobytes())


def read_checkpoint(path) -> Tuple[Dict[str, np.ndarray], ModelConfig, int, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[_PREFIX.size:_PREFIX.size + hlen])
    payload = np.frombuffer(raw, dtype="<f8", offset=_PREFIX.size + hlen)
    state = {}
    for ent in header["tensors"]:
        n = int(np.prod(ent["shape"], dtype=np.int64))
        if ent["offset"] + n > payload.size:
            raise CheckpointError(f"{path}: payload truncated at {ent['name']}")
        state[ent["name"]] = payload[ent["offset"]:ent["offset"] + n].reshape(ent["shape"]).copy()
    cfg = ModelConfig.from_dict(header["config"])
    return state, cfg, header["seed"], header.get("extra", {})


def load_checkpoint(path, expected_config: Optional[ModelConfig] = None) -> SingGraph:
    state, cfg, _, _ = read_checkpoint(path)
    if expected_config is not None and expected_config != cfg:
        diff = {k: (v, cfg.to_dict()[k]) for k, v in expected_config.to_dict().items()
                if cfg.to_dict()[k] != v}
        raise CheckpointError(f"{path}: config mismatch (expected, stored): {diff}")
    model = SingGraph(cfg)
    model.load_state_dict(state)
    return model.eval()

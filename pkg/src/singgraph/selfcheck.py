"""Finite-difference self-checks of the autograd ops and of the whole model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import autograd as ag
from .autograd import GradCheckResult, grad_check
from .model import ModelConfig, SingGraph, weighted_cross_entropy

TINY_MODEL = ModelConfig(frontend="embedding_files", ins_dim=4, voc_dim=4, n_bins=4,
                         encoder_channels=(4, 4), time_pool=1, d_node=8)


@dataclass(frozen=True)
class GradCheckConfig:
    batch: int = 2
    frames: int = 6
    eps: float = 1e-5
    tol: float = 1e-5
    op_tol: float = 1e-6
    seed: int = 0


def _op_cases(rng) -> Dict[str, tuple]:
    """name -> (fn(*params) -> Tensor, [param arrays])."""
    n = lambda *s: rng.normal(size=s)
    pos = lambda *s: rng.uniform(0.5, 2.0, size=s)
    idx = np.argsort(rng.normal(size=(3, 4)), axis=1)[:, :2]
    rm, rv = np.zeros(3), np.ones(3)
    return {
        "add": (lambda a, b: a + b, [n(3, 4), n(4)]),
        "sub": (lambda a, b: a - b, [n(3, 1), n(3, 4)]),
        "mul": (lambda a, b: a * b, [n(3, 4), n(3, 4)]),
        "div": (lambda a, b: a / b, [n(3, 4), pos(3, 4)]),
        "power": (lambda a: ag.power(a, 3.0), [pos(3, 4)]),
        "maximum": (lambda a, b: ag.maximum(a, b), [n(3, 4), n(3, 4)]),
        "exp": (lambda a: ag.exp(a), [n(3, 4)]),
        "log": (lambda a: ag.log(a), [pos(3, 4)]),
        "sigmoid": (lambda a: ag.sigmoid(a), [n(3, 4)]),
        "tanh": (lambda a: ag.tanh(a), [n(3, 4)]),
        "leaky_relu": (lambda a: ag.leaky_relu(a, 0.2), [n(3, 4)]),
        "selu": (lambda a: ag.selu(a), [n(3, 4)]),
        "matmul": (lambda a, b: a @ b, [n(2, 3, 4), n(4, 5)]),
        "sum": (lambda a: ag.sum_(a, axis=1, keepdims=True), [n(3, 4)]),
        "mean": (lambda a: ag.mean(a, axis=0), [n(3, 4)]),
        "max": (lambda a: ag.max_(a, axis=1), [n(3, 4)]),
        "softmax": (lambda a: ag.softmax(a, axis=-1), [n(3, 4)]),
        "log_softmax": (lambda a: ag.log_softmax(a, axis=-1), [n(3, 4)]),
        "reshape": (lambda a: ag.reshape(a, (4, 3)), [n(3, 4)]),
        "transpose": (lambda a: ag.transpose(a, (1, 0, 2)), [n(2, 3, 4)]),
        "getitem": (lambda a: ag.getitem(a, (slice(None), [0, 2, 2])), [n(3, 4)]),
        "concat": (lambda a, b: ag.concat([a, b], axis=1), [n(3, 2), n(3, 4)]),
        "take_along": (lambda a: ag.take_along(a, idx, axis=1), [n(3, 4)]),
        "conv1d": (lambda x, w, b: ag.conv1d(x, w, b, stride=2, padding=1), [n(2, 3, 9), n(4, 3, 3), n(4)]),
        "batchnorm1d": (lambda x, g, b: ag.batchnorm1d(x, g, b, rm, rv, training=True),
                        [n(4, 3, 5), pos(3), n(3)]),
    }


def op_checks(seed: int = 0, eps: float = 1e-5) -> Dict[str, GradCheckResult]:
    """Gradient check of every differentiable primitive on random inputs."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, (fn, arrays) in _op_cases(rng).items():
        params = [ag.tensor(a, requires_grad=True) for a in arrays]
        # a random projection keeps every output coordinate in play
        weights = np.random.default_rng(seed + 1).normal(size=fn(*params).shape)
        out[name] = grad_check(lambda: ag.sum_(fn(*params) * weights), params, eps=eps)
    return out


def model_check(model_cfg: ModelConfig = TINY_MODEL, check: GradCheckConfig = GradCheckConfig()
                ) -> GradCheckResult:
    """Gradient check of the eval-mode model loss w.r.t. every parameter."""
    model = SingGraph(model_cfg).eval()
    rng = np.random.default_rng(check.seed)
    x = rng.normal(size=(check.batch, check.frames, model_cfg.input_dim))
    labels = np.arange(check.batch) % 2
    weights = np.ones(2)
    return grad_check(lambda: weighted_cross_entropy(model(x), labels, weights),
                      model.parameters(), eps=check.eps, rng=rng)

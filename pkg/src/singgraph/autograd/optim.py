"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    t: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(0, [np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """Update ``params`` in place and return the advanced state."""
    if len(state.m) != len(params):
        raise ValueError("Adam state does not match parameter list")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if m.shape != p.data.shape:
            raise ValueError(f"Adam state shape {m.shape} != param shape {p.data.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState.for_params(self.params)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr,
                  self.betas[0], self.betas[1], self.eps)

"""Building blocks of the graph back-end, written against the in-house autograd."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .. import autograd as ag
from ..autograd import Tensor
from ..autograd.tensor import _report_kink
from ..errors import ShapeError


class Module:
    """Minimal parameter container: attributes that are Tensors with
    requires_grad are parameters, Modules are children, ``_buffers`` names
    plain arrays saved alongside parameters."""

    _buffers: Tuple[str, ...] = ()

    def __init__(self):
        self.training = False

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, val in vars(self).items():
            if isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {k: p.data.copy() for k, p in self.named_parameters()}
        out.update({k: b.copy() for k, b in self.named_buffers()})
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        targets = {k: p.data for k, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = set(targets) - set(state)
        extra = set(state) - set(targets)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, arr in targets.items():
            if arr.shape != state[k].shape:
                raise ShapeError(f"{k}: checkpoint shape {state[k].shape} != model shape {arr.shape}")
            arr[...] = state[k]

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()


def param(arr) -> Tensor:
    return Tensor(arr, requires_grad=True)


class Linear(Module):
    def __init__(self, rng, n_in, n_out, bias=True):
        super().__init__()
        self.weight = param(rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out)))
        self.bias = param(np.zeros(n_out)) if bias else None

    def __call__(self, x):
        y = ag.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class BatchNorm(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels):
        super().__init__()
        self.gamma = param(np.ones(channels))
        self.beta = param(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def __call__(self, x):
        return ag.batchnorm1d(x, self.gamma, self.beta, self.running_mean, self.running_var, self.training)


class Conv1d(Module):
    def __init__(self, rng, c_in, c_out, k, padding=0, bias=False):
        super().__init__()
        self.weight = param(rng.normal(0.0, 1.0 / math.sqrt(c_in * k), size=(c_out, c_in, k)))
        self.bias = param(np.zeros(c_out)) if bias else None
        self.padding = padding

    def __call__(self, x):
        return ag.conv1d(x, self.weight, self.bias, padding=self.padding)


def max_pool_time(x: Tensor, p: int) -> Tensor:
    """Non-overlapping max pool over the last axis; a ragged tail is dropped."""
    if p <= 1 or x.shape[-1] < p:
        return x
    n, c, t = x.shape
    keep = (t // p) * p
    if keep != t:
        x = x[:, :, :keep]
    return ag.reshape(x, (n, c, keep // p, p)).max(axis=-1)


class ResidualBlock(Module):
    """conv-bn-selu-conv-bn + skip, selu, then time max-pool."""

    def __init__(self, rng, c_in, c_out, time_pool):
        super().__init__()
        self.conv1 = Conv1d(rng, c_in, c_out, 3, padding=1)
        self.bn1 = BatchNorm(c_out)
        self.conv2 = Conv1d(rng, c_out, c_out, 3, padding=1)
        self.bn2 = BatchNorm(c_out)
        self.skip = Conv1d(rng, c_in, c_out, 1) if c_in != c_out else None
        self.time_pool = time_pool

    def __call__(self, x):
        h = ag.selu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        res = self.skip(x) if self.skip is not None else x
        return max_pool_time(ag.selu(h + res), self.time_pool)


def encoder_frames(n_frames: int, n_blocks: int, time_pool: int) -> int:
    """Time frames left after the residual stack."""
    t = n_frames
    for _ in range(n_blocks):
        if time_pool > 1 and t >= time_pool:
            t //= time_pool
    return t


class Encoder(Module):
    """(B, T, D) feature frames -> (B, C, F, T_enc) map.

    The feature axis is split into F bins of D/F values; a shared linear map
    lifts every bin to C0 channels, then residual blocks convolve over time
    independently per bin.
    """

    def __init__(self, rng, in_dim, n_bins, channels, time_pool):
        super().__init__()
        if in_dim % n_bins:
            raise ValueError(f"feature dim {in_dim} not divisible by {n_bins} bins")
        self.n_bins = n_bins
        self.bin_size = in_dim // n_bins
        self.in_norm = BatchNorm(in_dim)
        self.lift = Linear(rng, self.bin_size, channels[0])
        blocks = []
        c_in = channels[0]
        for c in channels:
            blocks.append(ResidualBlock(rng, c_in, c, time_pool))
            c_in = c
        self.blocks = blocks

    def __call__(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        x = ag.transpose(self.in_norm(ag.transpose(x, (0, 2, 1))), (0, 2, 1))
        h = self.lift(ag.reshape(x, (b, t, self.n_bins, self.bin_size)))  # B,T,F,C
        c = h.shape[-1]
        h = ag.reshape(ag.transpose(h, (0, 2, 3, 1)), (b * self.n_bins, c, t))
        for blk in self.blocks:
            h = blk(h)
        c, te = h.shape[1], h.shape[2]
        return ag.transpose(ag.reshape(h, (b, self.n_bins, c, te)), (0, 2, 1, 3))


# ------------------------------------------------------------------ graphs


@dataclass
class Graph:
    nodes: Tensor  # B x N x D
    kind: str  # spectral | temporal | combined
    stack: Optional[Tensor] = None  # B x 1 x D

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[1]


class SAAggregate(Module):
    """Attention-weighted aggregation of the encoder map into spectral and temporal nodes."""

    def __init__(self, rng, channels, d_node):
        super().__init__()
        self.att_spec = param(rng.normal(0.0, 0.1, size=(channels, 1)))
        self.att_temp = param(rng.normal(0.0, 0.1, size=(channels, 1)))
        self.proj_spec = Linear(rng, channels, d_node)
        self.proj_temp = Linear(rng, channels, d_node)
        self.last_weights = None

    def __call__(self, s_map: Tensor) -> Tuple[Graph, Graph]:
        by_ft = ag.transpose(s_map, (0, 2, 3, 1))  # B,F,T,C
        w_t = ag.softmax(ag.matmul(by_ft, self.att_spec), axis=2)  # over T
        spec = ag.sum_(by_ft * w_t, axis=2)  # B,F,C
        by_tf = ag.transpose(s_map, (0, 3, 2, 1))  # B,T,F,C
        w_f = ag.softmax(ag.matmul(by_tf, self.att_temp), axis=2)  # over F
        temp = ag.sum_(by_tf * w_f, axis=2)  # B,T,C
        self.last_weights = (w_t.data[..., 0], w_f.data[..., 0])
        return (Graph(self.proj_spec(spec), "spectral"), Graph(self.proj_temp(temp), "temporal"))


class HSGAL(Module):
    """Heterogeneous stacking graph attention over the union of two node sets.

    Pair scores are ``a_k . (n_i * n_j)`` with ``a_k`` picked by the pair's
    domain (a-a, b-b, cross); each node is updated from its softmax-weighted
    neighbourhood with a residual connection. The stack node reads from every
    ordinary node but is never read by them.
    """

    def __init__(self, rng, d, slope=0.2):
        super().__init__()
        scale = 1.0 / math.sqrt(d)
        self.att_aa = param(rng.normal(0.0, scale, size=d))
        self.att_bb = param(rng.normal(0.0, scale, size=d))
        self.att_ab = param(rng.normal(0.0, scale, size=d))
        self.att_stack = param(rng.normal(0.0, scale, size=d))
        self.proj = Linear(rng, d, d)
        self.proj_stack = Linear(rng, d, d)
        self.slope = slope
        self.last_attention = None

    def scores(self, nodes: Tensor, n_a: int) -> Tensor:
        n = nodes.shape[1]
        mask_a = np.zeros((n, n))
        mask_a[:n_a, :n_a] = 1.0
        mask_b = np.zeros((n, n))
        mask_b[n_a:, n_a:] = 1.0
        mask_x = 1.0 - mask_a - mask_b
        ut = ag.transpose(nodes, (0, 2, 1))
        out = None
        for att, mask in ((self.att_aa, mask_a), (self.att_bb, mask_b), (self.att_ab, mask_x)):
            if not mask.any():
                continue
            term = ag.matmul(nodes * att, ut) * mask
            out = term if out is None else out + term
        return out

    def __call__(self, g_a: Graph, g_b: Graph, stack_in: Optional[Tensor] = None):
        if g_a.nodes.shape[-1] != g_b.nodes.shape[-1]:
            raise ShapeError(f"hs_gal: node dims differ {g_a.nodes.shape} vs {g_b.nodes.shape}")
        n_a = g_a.n_nodes
        u = ag.concat([g_a.nodes, g_b.nodes], axis=1)
        alpha = ag.softmax(self.scores(u, n_a), axis=-1)
        upd = u + ag.leaky_relu(self.proj(ag.matmul(alpha, u)), self.slope)

        stack = stack_in if stack_in is not None else ag.mean(u, axis=1, keepdims=True)
        s_scores = ag.sum_(u * (stack * self.att_stack), axis=-1, keepdims=True)  # B,N,1
        beta = ag.softmax(s_scores, axis=1)
        s_agg = ag.sum_(u * beta, axis=1, keepdims=True)
        stack_out = stack + ag.leaky_relu(self.proj_stack(s_agg), self.slope)
        self.last_attention = (alpha.data, beta.data[..., 0])
        return Graph(upd[:, :n_a], g_a.kind), Graph(upd[:, n_a:], g_b.kind), stack_out


def topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Per row, indices of the k largest scores (ties to lower index), ascending."""
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :k]
    return np.sort(order, axis=-1)


class NodePool(Module):
    """Keep the top ceil(ratio * N) nodes by a sigmoid score and scale them by it."""

    def __init__(self, rng, d, ratio):
        super().__init__()
        if not 0.0 < ratio <= 1.0:
            raise ValueError("keep ratio must be in (0, 1]")
        self.score = Linear(rng, d, 1)
        self.ratio = ratio

    def keep_count(self, n: int) -> int:
        return max(1, math.ceil(self.ratio * n - 1e-12))

    def __call__(self, g: Graph) -> Graph:
        s = ag.sigmoid(self.score(g.nodes))  # B,N,1
        n = g.n_nodes
        k = self.keep_count(n)
        sd = s.data[..., 0]
        if k < n:
            srt = -np.sort(-sd, axis=-1)
            _report_kink("topk", srt[:, k - 1] - srt[:, k])
        idx = topk_indices(sd, k)[..., None]  # B,k,1
        kept = ag.take_along(g.nodes, idx, axis=1)
        ks = ag.take_along(s, idx, axis=1)
        self.last_index = idx[..., 0]
        return Graph(kept * ks, g.kind, g.stack)


class GraphPoolLayer(Module):
    """One pooling layer acting on both the spectral and the temporal graph."""

    def __init__(self, rng, d, ratio):
        super().__init__()
        self.spec = NodePool(rng, d, ratio)
        self.temp = NodePool(rng, d, ratio)

    def __call__(self, gs: Graph, gt: Graph):
        return self.spec(gs), self.temp(gt)


class Branch(Module):
    def __init__(self, rng, d, ratios):
        super().__init__()
        self.gal1 = HSGAL(rng, d)
        self.pool1 = GraphPoolLayer(rng, d, ratios[0])
        self.gal2 = HSGAL(rng, d)
        self.pool2 = GraphPoolLayer(rng, d, ratios[1])

    def __call__(self, gs: Graph, gt: Graph):
        gs, gt, stack = self.gal1(gs, gt, None)
        gs, gt = self.pool1(gs, gt)
        gs, gt, stack = self.gal2(gs, gt, stack)
        gs, gt = self.pool2(gs, gt)
        return gs, gt, stack


class MGO(Module):
    """Two independent branches merged by elementwise maximum (ties -> first branch)."""

    def __init__(self, rng, d, ratios):
        super().__init__()
        self.branch1 = Branch(rng, d, ratios)
        self.branch2 = Branch(rng, d, ratios)

    def __call__(self, gs: Graph, gt: Graph):
        s1, t1, st1 = self.branch1(gs, gt)
        s2, t2, st2 = self.branch2(gs, gt)
        if s1.nodes.shape != s2.nodes.shape or t1.nodes.shape != t2.nodes.shape:
            raise RuntimeError("MGO branches emitted different node counts")
        stack = ag.maximum(st1, st2)
        return (Graph(ag.maximum(s1.nodes, s2.nodes), "spectral"),
                Graph(ag.maximum(t1.nodes, t2.nodes), "temporal"),
                stack)


def readout(gs: Graph, gt: Graph, stack: Tensor) -> Tensor:
    """[max_s, mean_s, max_t, mean_t, stack] -> B x 5D."""
    return ag.concat([
        gs.nodes.max(axis=1), gs.nodes.mean(axis=1),
        gt.nodes.max(axis=1), gt.nodes.mean(axis=1),
        ag.reshape(stack, (stack.shape[0], stack.shape[-1])),
    ], axis=-1)

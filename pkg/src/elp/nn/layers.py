"""Parameterised layers built on the autograd ops."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Params:
    """Ordered name -> Tensor registry with an L2-decay flag per entry."""

    def __init__(self):
        self.tensors: dict[str, Tensor] = {}
        self.decay: dict[str, bool] = {}

    def add(self, name: str, value: np.ndarray, decay: bool = True) -> Tensor:
        if name in self.tensors:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(value, requires_grad=True, name=name)
        self.tensors[name] = t
        self.decay[name] = decay
        return t

    def __getitem__(self, name):
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None


def dense(params: Params, name: str, n_in: int, n_out: int, rng) -> tuple[Tensor, Tensor]:
    w = params.add(f"{name}.w", glorot(rng, (n_in, n_out), n_in, n_out))
    b = params.add(f"{name}.b", np.zeros(n_out), decay=False)
    return w, b


def apply_dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ag.add(ag.matmul(x, w), b)


class LSTMLayer:
    """One LSTM direction.

    Gate layout along the 4H axis: input, forget, cell candidate, output.
    The forget-gate bias starts at +1.
    """

    def __init__(self, params: Params, name: str, n_in: int, hidden: int, rng):
        H = hidden
        self.hidden = H
        self.wx = params.add(f"{name}.wx", glorot(rng, (n_in, 4 * H), n_in, 4 * H))
        self.wh = params.add(f"{name}.wh", glorot(rng, (H, 4 * H), H, 4 * H))
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        self.b = params.add(f"{name}.b", b, decay=False)

    def cell(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        H = self.hidden
        z = ag.add(ag.add(ag.matmul(x, self.wx), ag.matmul(h, self.wh)), self.b)
        i = ag.sigmoid(ag.slice_last(z, 0, H))
        f = ag.sigmoid(ag.slice_last(z, H, 2 * H))
        g = ag.tanh(ag.slice_last(z, 2 * H, 3 * H))
        o = ag.sigmoid(ag.slice_last(z, 3 * H, 4 * H))
        c_new = ag.add(ag.mul(f, c), ag.mul(i, g))
        h_new = ag.mul(o, ag.tanh(c_new))
        return h_new, c_new

    def run(self, xs: Tensor, mask: np.ndarray, reverse: bool = False) -> tuple[Tensor, Tensor]:
        """Run over (B, T, D); masked steps carry the state through unchanged.

        Returns per-step outputs (B, T, H), zero at masked steps, and the
        final hidden state.
        """
        B, T, _ = xs.shape
        h = Tensor(np.zeros((B, self.hidden)))
        c = Tensor(np.zeros((B, self.hidden)))
        outs: list[Tensor | None] = [None] * T
        steps = range(T - 1, -1, -1) if reverse else range(T)
        for t in steps:
            m = mask[:, t:t + 1].astype(np.float64)
            h_new, c_new = self.cell(ag.time_step(xs, t), h, c)
            if m.all():
                h, c = h_new, c_new
            else:
                keep = 1.0 - m
                h = ag.add(ag.mul(h_new, m), ag.mul(h, keep))
                c = ag.add(ag.mul(c_new, m), ag.mul(c, keep))
            outs[t] = h if m.all() else ag.mul(h, m)
        return ag.stack_time(outs), h


class LSTMStack:
    def __init__(self, params: Params, name: str, n_in: int, hidden: int, layers: int,
                 bidirectional: bool, rng):
        self.layers = []
        width = n_in
        for li in range(layers):
            fwd = LSTMLayer(params, f"{name}.l{li}.fwd", width, hidden, rng)
            bwd = LSTMLayer(params, f"{name}.l{li}.bwd", width, hidden, rng) if bidirectional else None
            self.layers.append((fwd, bwd))
            width = hidden * (2 if bidirectional else 1)
        self.out_dim = width

    def __call__(self, xs: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """Per-step features and a summary vector (final states of each direction)."""
        finals = None
        for fwd, bwd in self.layers:
            seq_f, h_f = fwd.run(xs, mask)
            if bwd is None:
                xs, finals = seq_f, h_f
            else:
                seq_b, h_b = bwd.run(xs, mask, reverse=True)
                xs = ag.concat([seq_f, seq_b], axis=-1)
                finals = ag.concat([h_f, h_b], axis=-1)
        return xs, finals


class AttentionPool:
    """score_t = v . tanh(W f_t + b); softmax over unmasked steps; weighted sum."""

    def __init__(self, params: Params, name: str, n_in: int, attn_dim: int, rng):
        self.w = params.add(f"{name}.w", glorot(rng, (n_in, attn_dim), n_in, attn_dim))
        self.b = params.add(f"{name}.b", np.zeros(attn_dim), decay=False)
        self.v = params.add(f"{name}.v", glorot(rng, (attn_dim, 1), attn_dim, 1))

    def __call__(self, feats: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        return attention_pool(feats, mask, self.w, self.b, self.v)


def attention_pool(feats: Tensor, mask: np.ndarray, w: Tensor, b: Tensor,
                   v: Tensor) -> tuple[Tensor, Tensor]:
    B, T, H = feats.shape
    proj = ag.tanh(ag.add(ag.matmul(feats, w), b))              # (B, T, A)
    scores = ag.reshape(ag.matmul(proj, v), (B, T))
    weights = ag.masked_softmax(scores, mask)
    return ag.weighted_sum(weights, feats), weights

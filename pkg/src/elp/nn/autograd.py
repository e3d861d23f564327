"""A small reverse-mode differentiation engine over float64 numpy arrays.

Every op builds a new :class:`Tensor` holding its parents and a closure that
pushes the output gradient back to them.  ``Tensor.backward`` walks the graph
in reverse topological order (iteratively, so long recurrent graphs do not
hit the recursion limit).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    def zero_grad(self):
        self.grad = None

    def _accum(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            node._backward(g, grads)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward) -> Tensor:
    """Create an op output; ``backward(g)`` returns one gradient per parent (or None)."""
    parents = tuple(parents)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents

        def push(g, grads):
            for p, pg in zip(parents, backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if p._backward is None:
                    p._accum(pg)
                elif id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

        out._backward = push
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # derivative at 0 is 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def square_sum(a: Tensor) -> Tensor:
    return _node(np.sum(a.data * a.data), (a,), lambda g: (2.0 * g * a.data,))


def sum_all(a: Tensor) -> Tensor:
    return _node(np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: (g * c,))


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(a.data @ b.data, (a, b), back)


def reshape(a: Tensor, shape) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(ts: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([t.data for t in ts], axis=axis), ts,
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        return (full,)

    return _node(a.data[..., start:stop], (a,), back)


def time_step(a: Tensor, t: int) -> Tensor:
    """``a[:, t, :]`` for a (B, T, H) tensor."""
    def back(g):
        full = np.zeros_like(a.data)
        full[:, t, :] = g
        return (full,)

    return _node(a.data[:, t, :], (a,), back)


def stack_time(ts: Sequence[Tensor]) -> Tensor:
    """Stack (B, H) tensors into (B, T, H)."""
    return _node(np.stack([t.data for t in ts], axis=1), ts,
                 lambda g: tuple(g[:, i, :] for i in range(len(ts))))


def embedding(table: Tensor, ids: np.ndarray, pad_id: int | None = 0) -> Tensor:
    """Row lookup; gradient for ``pad_id`` rows is dropped so PAD stays fixed."""
    ids = np.asarray(ids, dtype=np.int64)

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        if pad_id is not None:
            full[pad_id] = 0.0
        return (full,)

    out = table.data[ids]
    if pad_id is not None:
        out = out * (ids != pad_id)[..., None]
    return _node(out, (table,), back)


def dropout(a: Tensor, keep: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; the identity when not training or ``keep == 1``."""
    if not training or keep >= 1.0:
        return a
    mask = (rng.random(a.shape) < keep) / keep
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# convolution and pooling


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """'Same' 1-D convolution, stride 1.

    ``x`` is (B, T, C), ``w`` is (K, C, F); output (B, T, F) with
    ``y[t] = sum_k x[t + k - (K-1)//2] @ w[k]`` (zeros outside the sequence).
    """
    B, T, C = x.shape
    K, C2, F = w.shape
    if C != C2:
        raise ValueError(f"conv1d channel mismatch: input {C}, kernel {C2}")
    if T < 1:
        raise ValueError("conv1d needs at least one time step")
    left = (K - 1) // 2
    xp = np.pad(x.data, ((0, 0), (left, K - 1 - left), (0, 0)))
    idx = np.arange(T)[:, None] + np.arange(K)[None, :]          # (T, K)
    cols = xp[:, idx, :].reshape(B, T, K * C)                     # (B, T, K*C)
    wm = w.data.reshape(K * C, F)
    y = cols @ wm
    parents = [x, w]
    if b is not None:
        y = y + b.data
        parents.append(b)

    def back(g):
        gw = (cols.reshape(-1, K * C).T @ g.reshape(-1, F)).reshape(K, C, F)
        gcols = (g @ wm.T).reshape(B, T, K, C)
        gxp = np.zeros_like(xp)
        for k in range(K):
            gxp[:, k:k + T, :] += gcols[:, :, k, :]
        gx = gxp[:, left:left + T, :]
        out = [gx, gw]
        if b is not None:
            out.append(g.sum(axis=(0, 1)))
        return tuple(out)

    return _node(y, parents, back)


def maxpool1d(x: Tensor, size: int, stride: int) -> Tensor:
    """Max over time windows of (B, T, C); ties route to the first index."""
    if size < 1 or stride < 1:
        raise ValueError("pool size and stride must be >= 1")
    B, T, C = x.shape
    if T < size:
        raise ValueError(f"sequence length {T} shorter than pool size {size}")
    n_out = (T - size) // stride + 1
    idx = np.arange(n_out)[:, None] * stride + np.arange(size)[None, :]   # (n_out, size)
    win = x.data[:, idx, :]                                              # (B, n_out, size, C)
    arg = win.argmax(axis=2)                                             # first max
    y = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0, :]
    src = idx[np.arange(n_out)[None, :, None], arg]                      # (B, n_out, C) time index

    def back(g):
        gx = np.zeros_like(x.data)
        bi = np.broadcast_to(np.arange(B)[:, None, None], src.shape)
        ci = np.broadcast_to(np.arange(C)[None, None, :], src.shape)
        if stride >= size:   # disjoint windows: every source index is hit once
            gx[bi, src, ci] = g
        else:
            np.add.at(gx, (bi, src, ci), g)
        return (gx,)

    return _node(y, (x,), back)


# ---------------------------------------------------------------------------
# attention and loss


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis, masked positions excluded (weight exactly 0)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("every row needs at least one unmasked position")
    s = np.where(mask, scores.data, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(s), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _node(p, (scores,), back)


def weighted_sum(weights: Tensor, feats: Tensor) -> Tensor:
    """sum_t weights[b, t] * feats[b, t, :] -> (B, H)."""
    def back(g):
        gw = np.einsum("bh,bth->bt", g, feats.data)
        gf = weights.data[:, :, None] * g[:, None, :]
        return gw, gf

    return _node(np.einsum("bt,bth->bh", weights.data, feats.data), (weights, feats), back)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of softmax probabilities, log clamped at 1e-12."""
    labels = np.asarray(labels, dtype=np.int64)
    B, K = logits.shape
    if labels.shape != (B,):
        raise ValueError("one label per row expected")
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"label outside [0, {K})")
    p = softmax(logits.data)
    picked = p[np.arange(B), labels]
    clamped = picked < 1e-12
    loss = -np.log(np.maximum(picked, 1e-12)).mean()

    def back(g):
        grad = p.copy()
        grad[np.arange(B), labels] -= 1.0
        grad[clamped] = 0.0  # the clamp is flat there
        return (g * grad / B,)

    return _node(loss, (logits,), back)

"""Wave vectorisation: bag-of-waves counts and skip-gram wave embeddings."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .serial import matrix_from_json, matrix_to_json, read_matrix_sidecar, write_matrix_sidecar
from .vocab import PAD, TokenSequence

logger = logging.getLogger(__name__)


def count_vectorize(seq: TokenSequence | Sequence[int], vocab_size: int,
                    normalize: bool = False) -> np.ndarray:
    """Histogram of token ids (length ``vocab_size``); PAD is never counted."""
    tokens = np.asarray(seq.tokens if isinstance(seq, TokenSequence) else seq, dtype=np.int64)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab_size):
        raise ValueError("token id outside the vocabulary")
    counts = np.bincount(tokens[tokens != PAD], minlength=vocab_size).astype(np.float64)
    if normalize and counts.sum() > 0:
        counts /= counts.sum()
    return counts


@dataclass(frozen=True)
class SkipGramConfig:
    dim: int = 64
    window: int = 2
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    min_lr_fraction: float = 1e-4
    batch_pairs: int = 256
    seed: int = 0


@dataclass
class EmbeddingMatrix:
    matrix: np.ndarray
    config: SkipGramConfig = field(default_factory=SkipGramConfig)
    vocab_hash: str = ""
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("embedding contains non-finite values")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    def header(self) -> dict:
        return {"config": asdict(self.config), "vocab_hash": self.vocab_hash,
                "loss_history": self.loss_history}

    def to_json(self) -> dict:
        return {**self.header(), "matrix": matrix_to_json(self.matrix)}

    @classmethod
    def from_json(cls, obj: dict) -> "EmbeddingMatrix":
        return cls(matrix_from_json(obj["matrix"]), SkipGramConfig(**obj["config"]),
                   obj.get("vocab_hash", ""), list(obj.get("loss_history", [])))

    def save(self, path: str | Path) -> None:
        write_matrix_sidecar(path, self.matrix, **self.header())

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingMatrix":
        M, meta = read_matrix_sidecar(path)
        return cls(M, SkipGramConfig(**meta["config"]), meta.get("vocab_hash", ""),
                   list(meta.get("loss_history", [])))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def pair_loss_and_grads(v: np.ndarray, u_pos: np.ndarray, u_neg: np.ndarray):
    """Negative-sampling loss for one (centre, context) pair and its gradients.

    ``v`` is the centre input vector, ``u_pos`` the context output vector and
    ``u_neg`` the (n_neg, d) noise output vectors.  Returns
    ``(loss, d_v, d_u_pos, d_u_neg)``.
    """
    s_pos = u_pos @ v
    s_neg = u_neg @ v
    loss = -_log_sigmoid(s_pos) - _log_sigmoid(-s_neg).sum()
    g_pos = _sigmoid(s_pos) - 1.0
    g_neg = _sigmoid(s_neg)
    d_v = g_pos * u_pos + g_neg @ u_neg
    d_u_pos = g_pos * v
    d_u_neg = g_neg[:, None] * v[None, :]
    return float(loss), d_v, d_u_pos, d_u_neg


def skipgram_pairs(corpus: Sequence[TokenSequence | Sequence[int]], window: int) -> np.ndarray:
    """All (centre, context) pairs within ``window`` positions, PAD skipped."""
    pairs = []
    for seq in corpus:
        toks = np.asarray(seq.tokens if isinstance(seq, TokenSequence) else seq, dtype=np.int64)
        toks = toks[toks != PAD]
        n = toks.size
        for off in range(1, window + 1):
            if n > off:
                pairs.append(np.stack([toks[:-off], toks[off:]], axis=1))
                pairs.append(np.stack([toks[off:], toks[:-off]], axis=1))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(pairs)


def init_embeddings(vocab_size: int, dim: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    w_in = rng.uniform(-0.5 / dim, 0.5 / dim, size=(vocab_size, dim))
    w_in[PAD] = 0.0
    w_out = np.zeros((vocab_size, dim))
    return w_in, w_out


def _row_mean_update(w: np.ndarray, rows: np.ndarray, delta: np.ndarray) -> None:
    acc = np.zeros_like(w)
    np.add.at(acc, rows, delta)
    hits = np.bincount(rows, minlength=w.shape[0])
    touched = hits > 0
    w[touched] += acc[touched] / hits[touched, None]


def skipgram_train(corpus: Sequence[TokenSequence | Sequence[int]], vocab_size: int,
                   config: SkipGramConfig = SkipGramConfig(),
                   vocab_hash: str = "") -> EmbeddingMatrix:
    """Train wave embeddings with skip-gram and negative sampling.

    Noise tokens are drawn from the unigram distribution raised to 0.75 (PAD
    excluded).  Updates are applied per mini-batch of pairs in a fixed order,
    so a given seed always gives the same matrix; a row touched several times
    in one batch moves by the mean of its per-pair updates.  The learning rate decays
    linearly over all steps.
    """
    if config.dim < 2:
        raise ValueError("embedding dimension must be at least 2")
    if not corpus:
        raise ValueError("empty corpus")
    all_tokens = np.concatenate([
        np.asarray(s.tokens if isinstance(s, TokenSequence) else s, dtype=np.int64) for s in corpus
    ])
    if all_tokens.size and (all_tokens.min() < 0 or all_tokens.max() >= vocab_size):
        raise ValueError("token id outside the vocabulary")
    counts = np.bincount(all_tokens[all_tokens != PAD], minlength=vocab_size).astype(np.float64)
    if np.count_nonzero(counts) < 2:
        raise ValueError("corpus needs at least 2 distinct tokens")

    w_in, w_out = init_embeddings(vocab_size, config.dim, config.seed)
    history: list[float] = []
    pairs = skipgram_pairs(corpus, config.window)
    if config.epochs <= 0 or pairs.shape[0] == 0:
        return EmbeddingMatrix(w_in, config, vocab_hash, history)

    noise = counts ** 0.75
    noise /= noise.sum()
    cdf = np.cumsum(noise)
    rng = np.random.default_rng(config.seed + 1)
    total_steps = config.epochs * int(np.ceil(pairs.shape[0] / config.batch_pairs))
    step = 0
    B = config.batch_pairs
    for _ in range(config.epochs):
        order = rng.permutation(pairs.shape[0])
        epoch_loss = 0.0
        for s in range(0, order.size, B):
            lr = config.lr * max(1.0 - step / total_steps, config.min_lr_fraction)
            step += 1
            batch = pairs[order[s:s + B]]
            centre, ctx = batch[:, 0], batch[:, 1]
            neg = np.searchsorted(cdf, rng.random((batch.shape[0], config.negatives)), side="right")
            neg = np.minimum(neg, vocab_size - 1)

            v = w_in[centre]                       # (b, d)
            u_pos = w_out[ctx]                     # (b, d)
            u_neg = w_out[neg]                     # (b, n, d)
            s_pos = np.einsum("bd,bd->b", u_pos, v)
            s_neg = np.einsum("bnd,bd->bn", u_neg, v)
            epoch_loss += float(-_log_sigmoid(s_pos).sum() - _log_sigmoid(-s_neg).sum())
            g_pos = _sigmoid(s_pos) - 1.0
            g_neg = _sigmoid(s_neg)

            d_v = g_pos[:, None] * u_pos + np.einsum("bn,bnd->bd", g_neg, u_neg)
            d_u_pos = g_pos[:, None] * v
            d_u_neg = g_neg[:, :, None] * v[:, None, :]

            # rows hit many times in one batch get the mean of their updates;
            # summing them diverges when the vocabulary is small
            _row_mean_update(w_in, centre, -lr * d_v)
            out_rows = np.concatenate([ctx, neg.reshape(-1)])
            out_grads = np.concatenate([d_u_pos, d_u_neg.reshape(-1, config.dim)])
            _row_mean_update(w_out, out_rows, -lr * out_grads)
            w_in[PAD] = 0.0
        history.append(epoch_loss / pairs.shape[0])
    return EmbeddingMatrix(w_in, config, vocab_hash, history)


def embed_lookup(emb: EmbeddingMatrix | np.ndarray, seq: TokenSequence | Sequence[int]) -> np.ndarray:
    """Rows of the embedding for each token; PAD positions are zero."""
    M = emb.matrix if isinstance(emb, EmbeddingMatrix) else np.asarray(emb, dtype=np.float64)
    tokens = np.asarray(seq.tokens if isinstance(seq, TokenSequence) else seq, dtype=np.int64)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= M.shape[0]):
        bad = tokens[(tokens < 0) | (tokens >= M.shape[0])][0]
        raise ValueError(f"token {bad} outside embedding of size {M.shape[0]}")
    out = M[tokens].copy()
    out[tokens == PAD] = 0.0
    return out


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))

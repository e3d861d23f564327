"""Mini-batch Adam training with dropout, L2, clipping and best-epoch selection."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .models import ModelSpec, SequenceClassifier

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 25
    batch_size: int = 64
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    l2: float = 1e-5
    keep_prob: float = 0.8
    seed: int = 0
    patience: int | None = None
    clip_norm: float | None = 5.0
    val_fraction: float = 0.1

    def __post_init__(self):
        if not 0 < self.keep_prob <= 1:
            raise ValueError("keep_prob must lie in (0, 1]")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("batch_size must be >= 1 and max_epochs >= 0")


@dataclass
class Dataset:
    tokens: np.ndarray  # (N, max_len) int
    labels: np.ndarray  # (N,) int

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.tokens.shape[0] != self.labels.shape[0]:
            raise ValueError("tokens and labels differ in length")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.tokens[idx], self.labels[idx])


class Adam:
    def __init__(self, params, cfg: TrainConfig):
        self.params = [(n, t) for n, t in params.items() if t.requires_grad]
        self.cfg = cfg
        self.m = {n: np.zeros_like(t.data) for n, t in self.params}
        self.v = {n: np.zeros_like(t.data) for n, t in self.params}
        self.t = 0

    def step(self):
        c = self.cfg
        self.t += 1
        b1t, b2t = 1 - c.beta1 ** self.t, 1 - c.beta2 ** self.t
        for n, p in self.params:
            if p.grad is None:
                continue
            self.m[n] = c.beta1 * self.m[n] + (1 - c.beta1) * p.grad
            self.v[n] = c.beta2 * self.v[n] + (1 - c.beta2) * p.grad ** 2
            p.data = p.data - c.lr * (self.m[n] / b1t) / (np.sqrt(self.v[n] / b2t) + c.adam_eps)


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most ``max_norm``; returns the pre-clip norm."""
    grads = [t.grad for _, t in params.items() if t.grad is not None]
    norm = float(np.sqrt(sum((g * g).sum() for g in grads)))
    if max_norm and norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


def split_validation(data: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded per-class holdout of ``fraction`` of the examples."""
    rng = np.random.default_rng(seed)
    val = []
    for c in np.unique(data.labels):
        idx = np.flatnonzero(data.labels == c)
        n_val = int(round(fraction * idx.size))
        if n_val and n_val < idx.size:
            val.append(rng.choice(idx, n_val, replace=False))
    val_idx = np.sort(np.concatenate(val)) if val else np.zeros(0, dtype=np.int64)
    train_mask = np.ones(len(data), dtype=bool)
    train_mask[val_idx] = False
    return data.subset(np.flatnonzero(train_mask)), data.subset(val_idx)


def evaluate(model: SequenceClassifier, data: Dataset) -> tuple[float, float]:
    """Mean cross-entropy and accuracy with dropout off."""
    if len(data) == 0:
        return float("nan"), float("nan")
    probs = model.predict_proba(data.tokens)
    picked = probs[np.arange(len(data)), data.labels]
    loss = float(-np.log(np.maximum(picked, 1e-12)).mean())
    acc = float((probs.argmax(axis=1) == data.labels).mean())
    return loss, acc


def train(spec: ModelSpec, config: TrainConfig, train_data: Dataset,
          val_data: Dataset | None = None, embedding: np.ndarray | None = None,
          vocab_hash: str = "", history_path: str | Path | None = None):
    """Train a classifier; returns ``(model, history)``.

    Without ``val_data`` a seeded ``val_fraction`` holdout is taken from the
    training set.  The returned model carries the parameters of the epoch with
    the best validation accuracy (earliest on ties).
    """
    if len(train_data) == 0:
        raise ValueError("empty training set")
    if train_data.labels.min() < 0 or train_data.labels.max() >= spec.n_classes:
        raise ValueError("training label outside the model's classes")
    if val_data is None and config.val_fraction > 0:
        train_data, val_data = split_validation(train_data, config.val_fraction, config.seed)
    model = SequenceClassifier(spec, seed=config.seed, embedding=embedding, vocab_hash=vocab_hash)
    opt = Adam(model.params, config)
    rng = np.random.default_rng(config.seed)
    history: list[dict] = []
    best_acc, best_state, best_epoch = -1.0, model.state(), 0
    stale = 0
    sink = open(history_path, "w") if history_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            order = rng.permutation(len(train_data))
            total, clipped = 0.0, 0
            for s in range(0, order.size, config.batch_size):
                idx = order[s:s + config.batch_size]
                model.params.zero_grad()
                logits = model.forward(train_data.tokens[idx], training=True, rng=rng,
                                       keep_prob=config.keep_prob)
                loss = ag.softmax_cross_entropy(logits, train_data.labels[idx])
                if config.l2:
                    loss = ag.add(loss, model.l2_penalty(config.l2))
                value = float(loss.data)
                if not np.isfinite(value):
                    raise TrainingDiverged(
                        f"non-finite loss {value} at epoch {epoch}, batch starting {s}"
                    )
                loss.backward()
                norm = clip_gradients(model.params, config.clip_norm or 0.0)
                if config.clip_norm and norm > config.clip_norm:
                    clipped += 1
                opt.step()
                total += value * idx.size
            train_loss, train_acc = evaluate(model, train_data)
            val_loss, val_acc = evaluate(model, val_data) if val_data is not None else (float("nan"),) * 2
            rec = {"epoch": epoch, "loss": total / len(train_data), "train_loss": train_loss,
                   "train_acc": train_acc, "val_loss": val_loss, "val_acc": val_acc,
                   "clipped_batches": clipped}
            history.append(rec)
            if sink:
                sink.write(json.dumps(rec) + "\n")
            if clipped:
                logger.info("epoch %d: gradient clipped in %d batches", epoch, clipped)
            score = val_acc if np.isfinite(val_acc) else train_acc
            if score > best_acc:
                best_acc, best_state, best_epoch, stale = score, model.state(), epoch, 0
            else:
                stale += 1
                if config.patience is not None and stale >= config.patience:
                    break
    finally:
        if sink:
            sink.close()
    model.load_state(best_state)
    model.best_epoch = best_epoch
    return model, history


def config_to_json(cfg: TrainConfig) -> dict:
    return asdict(cfg)

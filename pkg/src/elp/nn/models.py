"""Sequence classifiers over wave-token inputs: CNN, BiLSTM and BiLSTM + attention."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .layers import AttentionPool, LSTMStack, Params, apply_dense, dense, glorot

HEADS = ("cnn", "rnn", "rnn_attention")


class VocabularyMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ConvBlock:
    filters: int = 128
    kernel: int = 5
    pool_size: int = 5
    pool_stride: int = 5


# pool layouts used for the two task families
CNN_LONG = (ConvBlock(128, 5, 5, 5),) * 3
CNN_SHORT = (ConvBlock(128, 5, 3, 3), ConvBlock(128, 5, 2, 2))


@dataclass(frozen=True)
class ModelSpec:
    head: str
    n_classes: int
    vocab_size: int
    max_len: int
    embed_dim: int = 64
    conv_blocks: tuple[ConvBlock, ...] = CNN_SHORT
    dense_units: int = 64
    hidden: int = 128
    layers: int = 2
    bidirectional: bool = True
    attn_dim: int = 64
    freeze_embeddings: bool = False

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}; expected one of {HEADS}")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        blocks = tuple(b if isinstance(b, ConvBlock) else ConvBlock(**b) for b in self.conv_blocks)
        object.__setattr__(self, "conv_blocks", blocks)
        if self.head == "cnn":
            self.cnn_output_length()

    def cnn_output_length(self) -> int:
        t = self.max_len
        for i, b in enumerate(self.conv_blocks):
            if t < b.pool_size:
                raise ValueError(
                    f"max_len {self.max_len} too short: block {i} sees {t} steps, pool {b.pool_size}"
                )
            t = (t - b.pool_size) // b.pool_stride + 1
        return t

    def to_json(self) -> dict:
        d = asdict(self)
        d["conv_blocks"] = [asdict(b) for b in self.conv_blocks]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["conv_blocks"] = tuple(ConvBlock(**b) for b in d.get("conv_blocks", []))
        return cls(**d)


class SequenceClassifier:
    """Embedding -> head -> softmax classifier over padded token matrices."""

    def __init__(self, spec: ModelSpec, seed: int = 0, embedding: np.ndarray | None = None,
                 vocab_hash: str = ""):
        self.spec = spec
        self.vocab_hash = vocab_hash
        self.params = Params()
        rng = np.random.default_rng(seed)
        if embedding is None:
            table = rng.uniform(-0.05, 0.05, size=(spec.vocab_size, spec.embed_dim))
        else:
            table = np.array(embedding, dtype=np.float64, copy=True)
            if table.shape != (spec.vocab_size, spec.embed_dim):
                raise ValueError(f"embedding shape {table.shape} does not fit the model spec")
        table[0] = 0.0
        self.embedding = self.params.add("embedding", table, decay=False)
        self.embedding.requires_grad = not spec.freeze_embeddings

        if spec.head == "cnn":
            self.convs = []
            width = spec.embed_dim
            for i, b in enumerate(spec.conv_blocks):
                fan_in, fan_out = b.kernel * width, b.kernel * b.filters
                w = self.params.add(f"conv{i}.w", glorot(rng, (b.kernel, width, b.filters), fan_in, fan_out))
                bias = self.params.add(f"conv{i}.b", np.zeros(b.filters), decay=False)
                self.convs.append((w, bias, b))
                width = b.filters
            flat = spec.cnn_output_length() * width
            self.fc = dense(self.params, "fc", flat, spec.dense_units, rng)
            self.out = dense(self.params, "out", spec.dense_units, spec.n_classes, rng)
        else:
            self.rnn = LSTMStack(self.params, "lstm", spec.embed_dim, spec.hidden, spec.layers,
                                 spec.bidirectional, rng)
            if spec.head == "rnn":
                self.fc = dense(self.params, "fc", self.rnn.out_dim, spec.dense_units, rng)
                self.out = dense(self.params, "out", spec.dense_units, spec.n_classes, rng)
            else:
                self.attn = AttentionPool(self.params, "attn", self.rnn.out_dim, spec.attn_dim, rng)
                self.out = dense(self.params, "out", self.rnn.out_dim, spec.n_classes, rng)

    # -- forward ----------------------------------------------------------

    def forward(self, tokens: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None, keep_prob: float = 1.0,
                return_attention: bool = False):
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2 or tokens.shape[1] != self.spec.max_len:
            raise ValueError(f"expected (batch, {self.spec.max_len}) token matrix, got {tokens.shape}")
        if tokens.min() < 0 or tokens.max() >= self.spec.vocab_size:
            raise ValueError("token id outside the model vocabulary")
        x = ag.embedding(self.embedding, tokens)
        mask = tokens != 0
        attention = None
        if self.spec.head == "cnn":
            for w, b, blk in self.convs:
                x = ag.relu(ag.conv1d(x, w, b))
                x = ag.maxpool1d(x, blk.pool_size, blk.pool_stride)
            x = ag.reshape(x, (x.shape[0], -1))
            x = ag.dropout(x, keep_prob, rng, training)
            x = ag.relu(apply_dense(x, *self.fc))
        else:
            # a fully padded row would leave the recurrent summary undefined
            mask = mask.copy()
            mask[~mask.any(axis=1), 0] = True
            feats, finals = self.rnn(x, mask)
            if self.spec.head == "rnn":
                x = ag.dropout(finals, keep_prob, rng, training)
                x = ag.relu(apply_dense(x, *self.fc))
            else:
                ctx, attention = self.attn(feats, mask)
                x = ag.dropout(ctx, keep_prob, rng, training)
        logits = apply_dense(x, *self.out)
        if return_attention:
            return logits, attention
        return logits

    def predict_proba(self, tokens: np.ndarray, batch_size: int = 256) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        out = []
        for s in range(0, tokens.shape[0], batch_size):
            out.append(ag.softmax(self.forward(tokens[s:s + batch_size]).data))
        if not out:
            return np.zeros((0, self.spec.n_classes))
        return np.concatenate(out)

    def l2_penalty(self, coeff: float) -> Tensor:
        terms = [ag.square_sum(t) for n, t in self.params.items()
                 if self.params.decay[n] and t.requires_grad]
        total = terms[0]
        for t in terms[1:]:
            total = ag.add(total, t)
        return ag.scale(total, coeff)

    # -- persistence ------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for n, t in self.params.items():
            if state[n].shape != t.data.shape:
                raise ValueError(f"shape mismatch for {n}")
            t.data = np.array(state[n], dtype=np.float64, copy=True)

    def save(self, path: str | Path) -> None:
        """``<path>.json`` architecture manifest plus ``<path>.bin`` parameter blob."""
        path = Path(path)
        entries, blobs, offset = [], [], 0
        for name, t in self.params.items():
            raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
            entries.append({"name": name, "shape": list(t.data.shape), "offset": offset,
                            "nbytes": len(raw), "decay": self.params.decay[name]})
            blobs.append(raw)
            offset += len(raw)
        manifest = {"format": "elp-checkpoint/1", "spec": self.spec.to_json(),
                    "vocab_hash": self.vocab_hash, "tensors": entries}
        path.with_suffix(".bin").write_bytes(b"".join(blobs))
        path.with_suffix(".json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "SequenceClassifier":
        path = Path(path)
        manifest = json.loads(path.with_suffix(".json").read_text())
        blob = path.with_suffix(".bin").read_bytes()
        model = cls(ModelSpec.from_json(manifest["spec"]), vocab_hash=manifest["vocab_hash"])
        state = {}
        for e in manifest["tensors"]:
            raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
            state[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(np.float64)
        model.load_state(state)
        return model


def predict(model: SequenceClassifier, sequences: Sequence) -> np.ndarray:
    """Class probabilities for TokenSequences (or a raw token matrix).

    Raises VocabularyMismatch when a sequence was tokenised with another
    vocabulary than the one the model was trained on.
    """
    if isinstance(sequences, np.ndarray):
        return model.predict_proba(sequences)
    for s in sequences:
        if model.vocab_hash and s.vocab_hash and s.vocab_hash != model.vocab_hash:
            raise VocabularyMismatch(
                f"sequence {s.example_id!r} uses vocabulary {s.vocab_hash}, model expects {model.vocab_hash}"
            )
    if not sequences:
        return np.zeros((0, model.spec.n_classes))
    return model.predict_proba(np.stack([s.tokens for s in sequences]))

"""Wave vocabulary: k-means over canonical waves, and tokenisation against it.

Token ids: 0 is PAD, 1..k are waves (centroid ``i`` has id ``i + 1``), k+1 is
UNK.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dsp
from .segment import WaveSegment, is_degenerate
from .serial import (digest, matrix_from_json, matrix_to_json, read_matrix_sidecar,
                     write_matrix_sidecar)

logger = logging.getLogger(__name__)

PAD = 0


class KMeansError(ValueError):
    pass


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective: float
    n_iter: int
    history: list[float] = field(default_factory=list)


def _sq_dists(X: np.ndarray, C: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Exact squared Euclidean distances, (n, k); chunked to bound memory."""
    out = np.empty((X.shape[0], C.shape[0]))
    for s in range(0, X.shape[0], chunk):
        d = X[s:s + chunk, None, :] - C[None, :, :]
        out[s:s + chunk] = np.einsum("nkl,nkl->nk", d, d)
    return out


def kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centres = [X[rng.integers(n)]]
    d2 = ((X - centres[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # fewer distinct points than k; pick unused rows uniformly
            idx = rng.integers(n)
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centres.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centres, dtype=np.float64)


def lloyd(X: np.ndarray, init: np.ndarray, max_iter: int = 100,
          tol: float = 1e-6) -> KMeansResult:
    """Lloyd iterations from fixed initial centroids.

    Raises RuntimeError if the objective ever increases (beyond float noise).
    """
    C = np.array(init, dtype=np.float64, copy=True)
    k = C.shape[0]
    history: list[float] = []
    labels = np.zeros(X.shape[0], dtype=np.int64)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        D = _sq_dists(X, C)
        labels = D.argmin(axis=1)
        own = D[np.arange(X.shape[0]), labels]
        obj = float(own.sum())
        if history and obj > history[-1] * (1 + 1e-12) + 1e-12:
            raise RuntimeError(
                f"k-means objective increased at iteration {n_iter}: {history[-1]} -> {obj}"
            )
        history.append(obj)

        counts = np.bincount(labels, minlength=k)
        newC = np.zeros_like(C)
        np.add.at(newC, labels, X)
        filled = counts > 0
        newC[filled] /= counts[filled, None]
        newC[~filled] = C[~filled]
        for j in np.flatnonzero(~filled):
            # empty cluster: steal the point farthest from its centroid
            far = int(own.argmax())
            src = labels[far]
            newC[j] = X[far]
            labels[far] = j
            own[far] = 0.0
            counts[src] -= 1
            counts[j] = 1
            members = labels == src
            if members.any():
                newC[src] = X[members].mean(axis=0)
        shift = float(np.sqrt(((newC - C) ** 2).sum(axis=1)).max())
        C = newC
        if shift < tol:
            break

    D = _sq_dists(X, C)
    labels = D.argmin(axis=1)
    obj = float(D[np.arange(X.shape[0]), labels].sum())
    if history and obj > history[-1] * (1 + 1e-12) + 1e-12:
        raise RuntimeError("k-means objective increased on the final assignment")
    history.append(obj)
    return KMeansResult(C, labels, obj, n_iter, history)


def hartigan_pass(X: np.ndarray, labels: np.ndarray, k: int) -> bool:
    """Single-point moves that lower the objective (Hartigan-Wong criterion).

    Lloyd stops at partitions where a point is nearer its own centroid than any
    other, yet moving it can still pay off once the centroid shifts are
    counted.  Returns True if any point moved; ``labels`` is updated in place.
    """
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, labels, X)
    moved = False
    for i in range(X.shape[0]):
        a = labels[i]
        if counts[a] <= 1:
            continue
        means = sums / np.maximum(counts, 1)[:, None]
        d = ((means - X[i]) ** 2).sum(axis=1)
        remove_gain = counts[a] / (counts[a] - 1) * d[a]
        add_cost = np.where(counts > 0, counts / (counts + 1), 0.0) * d
        add_cost[a] = np.inf
        b = int(np.argmin(add_cost))
        if add_cost[b] < remove_gain * (1 - 1e-12) - 1e-15:
            labels[i] = b
            counts[a] -= 1
            counts[b] += 1
            sums[a] -= X[i]
            sums[b] += X[i]
            moved = True
    return moved


def kmeans(X: np.ndarray, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6,
           restarts: int = 5, polish_max_points: int = 20000) -> KMeansResult:
    """Best of ``restarts`` k-means++-seeded Lloyd runs.

    Each converged run is polished with Hartigan single-point moves followed
    by more Lloyd iterations, until neither changes the partition.  The polish
    is a per-point Python loop, so it is skipped above ``polish_max_points``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise KMeansError("expected a 2-D array of waves")
    if k < 2:
        raise KMeansError("k must be at least 2")
    if X.shape[0] < k:
        raise KMeansError(f"{X.shape[0]} points cannot form {k} clusters")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(restarts, 1)):
        res = lloyd(X, kmeans_pp_init(X, k, rng), max_iter, tol)
        for _ in range(max_iter if X.shape[0] <= polish_max_points else 0):
            labels = res.labels.copy()
            if np.bincount(labels, minlength=k).min() == 0 or not hartigan_pass(X, labels, k):
                break
            C = np.array([X[labels == j].mean(axis=0) for j in range(k)])
            before = res.history
            res = lloyd(X, C, max_iter, tol)
            if res.objective > before[-1] * (1 + 1e-12) + 1e-12:
                raise RuntimeError("k-means objective increased after a Hartigan pass")
            res.history = before + res.history
        if best is None or res.objective < best.objective:
            best = res
    return best


@dataclass(frozen=True)
class WaveVocabulary:
    centroids: np.ndarray
    length: int
    eps: float = dsp.ZNORM_EPS
    seed: int = 0
    training_hash: str = ""
    centroid_kinds: tuple[str, ...] | None = None

    def __post_init__(self):
        C = np.asarray(self.centroids, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] < 2:
            raise ValueError("a vocabulary needs at least 2 centroids")
        if C.shape[1] != self.length:
            raise ValueError("centroid width does not match canonical length")
        if not np.all(np.isfinite(C)):
            raise ValueError("centroids must be finite")
        C.setflags(write=False)
        object.__setattr__(self, "centroids", C)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def unk(self) -> int:
        return self.k + 1

    @property
    def size(self) -> int:
        """Number of token ids including PAD and UNK."""
        return self.k + 2

    @property
    def hash(self) -> str:
        return digest(self.centroids, self.length, self.eps, self.centroid_kinds)

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "L": self.length,
            "eps": self.eps,
            "seed": self.seed,
            "training_hash": self.training_hash,
            "hash": self.hash,
            "centroid_kinds": list(self.centroid_kinds) if self.centroid_kinds else None,
            "centroids": matrix_to_json(self.centroids),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "WaveVocabulary":
        kinds = obj.get("centroid_kinds")
        v = cls(matrix_from_json(obj["centroids"]), int(obj["L"]), float(obj["eps"]),
                int(obj["seed"]), obj.get("training_hash", ""),
                tuple(kinds) if kinds else None)
        if "hash" in obj and obj["hash"] != v.hash:
            raise ValueError("vocabulary hash does not match its centroids")
        return v

    def save(self, path: str | Path) -> None:
        """Write ``<path>.json`` (header) and ``<path>.bin`` (centroid matrix)."""
        header = self.to_json()
        del header["centroids"]
        write_matrix_sidecar(path, self.centroids, **header)

    @classmethod
    def load(cls, path: str | Path) -> "WaveVocabulary":
        C, meta = read_matrix_sidecar(path)
        kinds = meta.get("centroid_kinds")
        v = cls(C, int(meta["L"]), float(meta["eps"]), int(meta["seed"]),
                meta.get("training_hash", ""), tuple(kinds) if kinds else None)
        if meta.get("hash") not in (None, v.hash):
            raise ValueError("vocabulary hash does not match its centroids")
        return v


def kmeans_fit(waves: np.ndarray, k: int = 20, seed: int = 0, max_iter: int = 100,
               tol: float = 1e-6, restarts: int = 5, eps: float = dsp.ZNORM_EPS) -> WaveVocabulary:
    """Cluster canonical waves (rows) into a k-word vocabulary."""
    X = np.asarray(waves, dtype=np.float64)
    res = kmeans(X, k, seed, max_iter, tol, restarts)
    return WaveVocabulary(res.centroids, X.shape[1], eps, seed, digest(X, k, seed))


def kmeans_fit_per_kind(waves: np.ndarray, kinds: Sequence[str], k: int, seed: int = 0,
                        **kw) -> WaveVocabulary:
    """Separate clustering per wave kind; ids of each kind form a contiguous block.

    ``k`` clusters are fit per kind.
    """
    X = np.asarray(waves, dtype=np.float64)
    kinds = np.asarray(kinds)
    blocks, labels = [], []
    for j, kind in enumerate(sorted(set(kinds.tolist()))):
        res = kmeans(X[kinds == kind], k, seed + j, **kw)
        blocks.append(res.centroids)
        labels += [kind] * k
    return WaveVocabulary(np.vstack(blocks), X.shape[1], seed=seed,
                          training_hash=digest(X, k, seed, "per-kind"),
                          centroid_kinds=tuple(labels))


def assign_wave(vocab: WaveVocabulary, wave: np.ndarray | None, kind: str | None = None) -> int:
    """Token id of the nearest centroid; UNK for missing or flat waves."""
    if wave is None:
        return vocab.unk
    wave = np.asarray(wave, dtype=np.float64)
    if wave.shape != (vocab.length,):
        raise ValueError(f"wave length {wave.shape} does not match vocabulary length {vocab.length}")
    if is_degenerate(wave):
        return vocab.unk
    C = vocab.centroids
    candidates = np.arange(vocab.k)
    if vocab.centroid_kinds is not None and kind is not None:
        candidates = np.flatnonzero(np.asarray(vocab.centroid_kinds) == kind)
        if candidates.size == 0:
            return vocab.unk
    d = ((C[candidates] - wave) ** 2).sum(axis=1)
    return int(candidates[int(np.argmin(d))]) + 1


def assign_many(vocab: WaveVocabulary, waves: np.ndarray) -> np.ndarray:
    """Vectorised :func:`assign_wave` over rows (shared vocabulary only)."""
    W = np.asarray(waves, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] != vocab.length:
        raise ValueError("waves must be (n, L)")
    if W.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    ids = _sq_dists(W, vocab.centroids).argmin(axis=1) + 1
    ids[~W.any(axis=1)] = vocab.unk
    return ids.astype(np.int64)


@dataclass
class TokenSequence:
    example_id: str
    tokens: np.ndarray
    label: int | None = None
    length: int = 0
    vocab_hash: str = ""

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)


def pad_tokens(ids: Sequence[int], max_len: int, pad_policy: str = "post") -> np.ndarray:
    """Pad with PAD or truncate (tail dropped) to ``max_len``."""
    ids = np.asarray(ids, dtype=np.int64)[:max_len]
    out = np.full(max_len, PAD, dtype=np.int64)
    if pad_policy == "post":
        out[:ids.size] = ids
    elif pad_policy == "pre":
        out[max_len - ids.size:] = ids
    else:
        raise ValueError(f"unknown pad policy {pad_policy!r}")
    return out


def tokenize(beats: Sequence[Sequence[WaveSegment]], vocab: WaveVocabulary, max_len: int,
             pad_policy: str = "post", example_id: str = "", label: int | None = None) -> TokenSequence:
    """Integer-encode waves ordered by beat then P < QRS < T."""
    ids = [assign_wave(vocab, w.canonical, w.kind) for waves in beats for w in waves]
    return TokenSequence(example_id, pad_tokens(ids, max_len, pad_policy), label,
                         len(ids), vocab.hash)


# ---------------------------------------------------------------------------
# Model selection and visual inspection


def silhouette(X: np.ndarray, labels: np.ndarray) -> float:
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    D = np.sqrt(np.maximum(_sq_dists(X, X), 0.0))
    uniq = np.unique(labels)
    if uniq.size < 2:
        return 0.0
    s = np.zeros(X.shape[0])
    for i in range(X.shape[0]):
        own = labels == labels[i]
        if own.sum() <= 1:
            continue
        a = D[i, own].sum() / (own.sum() - 1)
        b = min(D[i, labels == c].mean() for c in uniq if c != labels[i])
        s[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(s.mean())


def silhouette_sweep(X: np.ndarray, ks: Sequence[int] = range(10, 61, 10), seed: int = 0,
                     max_points: int = 2000) -> dict[int, float]:
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if X.shape[0] > max_points:
        X = X[rng.choice(X.shape[0], max_points, replace=False)]
    return {k: silhouette(X, kmeans(X, k, seed).labels) for k in ks if k <= X.shape[0]}


def export_cluster_gallery(vocab: WaveVocabulary, samples: dict[int, np.ndarray] | None,
                           path: str | Path, max_samples: int = 10, seed: int = 0,
                           row_height: int = 60, width: int = 240) -> Path:
    """SVG with one row per cluster: up to ``max_samples`` member waves and the centroid.

    ``samples`` maps centroid index (0-based) to an (n, L) array of member waves.
    """
    rng = np.random.default_rng(seed)
    samples = samples or {}
    pad = 8
    label_w = 40
    total_w = label_w + width + 2 * pad
    total_h = vocab.k * row_height + 2 * pad

    def polyline(y, top, colour, stroke):
        y = np.asarray(y, dtype=np.float64)
        lim = max(float(np.abs(y).max()), 1e-12)
        xs = label_w + pad + np.linspace(0, width, y.size)
        ys = top + row_height / 2 - (y / lim) * (row_height / 2 - 4)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(xs, ys))
        return (f'<polyline fill="none" stroke="{colour}" stroke-width="{stroke}" '
                f'points="{pts}"/>')

    parts = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{total_w}" '
        f'height="{total_h}" viewBox="0 0 {total_w} {total_h}">',
        f'<rect x="0" y="0" width="{total_w}" height="{total_h}" fill="white"/>',
    ]
    for c in range(vocab.k):
        top = pad + c * row_height
        parts.append(f'<g id="cluster-{c + 1}">')
        parts.append(f'<text x="{pad}" y="{top + row_height / 2 + 4:.2f}" '
                     f'font-family="monospace" font-size="11">{c + 1}</text>')
        members = np.asarray(samples.get(c, np.zeros((0, vocab.length))), dtype=np.float64)
        if members.shape[0] > max_samples:
            members = members[np.sort(rng.choice(members.shape[0], max_samples, replace=False))]
        for m in members:
            parts.append(polyline(m, top, "#9aa0a6", 0.6))
        parts.append(polyline(vocab.centroids[c], top, "#d93025", 1.6))
        parts.append("</g>")
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return path

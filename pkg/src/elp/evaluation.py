"""Cross-validation splits, confusion matrices and per-class metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Sequence

import numpy as np


class StratificationError(ValueError):
    pass


def kfold_split(labels: Sequence[int], k: int, seed: int, stratified: bool = True,
                groups: Sequence | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """``k`` disjoint test folds covering every example, each with its training complement.

    Stratified splitting shuffles each class and deals it round-robin, so a
    class's count differs by at most one between folds.  With ``groups``
    (e.g. patient ids) whole groups are kept inside one fold instead.
    """
    labels = np.asarray(labels)
    n = labels.size
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise ValueError(f"{n} examples cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)

    if groups is not None:
        groups = np.asarray(groups)
        uniq = np.unique(groups)
        if uniq.size < k:
            raise ValueError(f"{uniq.size} groups cannot fill {k} folds")
        uniq = uniq[rng.permutation(uniq.size)]
        sizes = np.zeros(k, dtype=np.int64)
        order = sorted(uniq, key=lambda g: -int((groups == g).sum()))
        for g in order:
            f = int(np.argmin(sizes))
            members = groups == g
            fold_of[members] = f
            sizes[f] += members.sum()
    elif stratified:
        pos = 0
        for c in np.unique(labels):
            idx = np.flatnonzero(labels == c)
            if idx.size < k:
                raise StratificationError(
                    f"class {c.item()!r} has {idx.size} examples, fewer than {k} folds; "
                    "use fewer folds or stratified=False"
                )
            idx = idx[rng.permutation(idx.size)]
            fold_of[idx] = (pos + np.arange(idx.size)) % k
            pos += idx.size
    else:
        perm = rng.permutation(n)
        for f, part in enumerate(np.array_split(perm, k)):
            fold_of[part] = f

    everything = np.arange(n)
    return [(everything[fold_of != f], everything[fold_of == f]) for f in range(k)]


@dataclass
class ConfusionMatrix:
    """Rows are actual classes, columns predicted."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
            raise ValueError("confusion counts must be non-negative integers")
        self.counts = c.astype(np.int64)
        self.class_names = tuple(self.class_names)
        if len(self.class_names) != c.shape[0]:
            raise ValueError("one class name per row expected")

    @classmethod
    def from_predictions(cls, actual, predicted, class_names) -> "ConfusionMatrix":
        k = len(class_names)
        m = np.zeros((k, k), dtype=np.int64)
        np.add.at(m, (np.asarray(actual, dtype=np.int64), np.asarray(predicted, dtype=np.int64)), 1)
        return cls(m, tuple(class_names))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.class_names != self.class_names:
            raise ValueError("class names differ")
        return ConfusionMatrix(self.counts + other.counts, self.class_names)

    def to_json(self) -> dict:
        return {"class_names": list(self.class_names), "counts": self.counts.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "ConfusionMatrix":
        return cls(np.array(d["counts"]), tuple(d["class_names"]))


def _pct(num, den) -> float | None:
    return None if den == 0 else float(100.0 * num / den)


def per_class_metrics(cm: ConfusionMatrix, c: int) -> dict[str, float | None]:
    """One-vs-rest accuracy, PPV, sensitivity and specificity (percent).

    Undefined ratios (zero denominator) are None rather than 0.
    """
    M = cm.counts
    total = M.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    tp = M[c, c]
    fn = M[c, :].sum() - tp
    fp = M[:, c].sum() - tp
    tn = total - tp - fn - fp
    return {
        "acc": _pct(tp + tn, total),
        "ppv": _pct(tp, tp + fp),
        "sen": _pct(tp, tp + fn),
        "spec": _pct(tn, tn + fp),
    }


def f1_score(ppv: float | None, sen: float | None) -> float | None:
    if ppv is None or sen is None:
        return None
    if ppv + sen == 0:
        return None
    return 2.0 * ppv * sen / (ppv + sen)


def f1_and_mf1(per_class: Sequence[dict]) -> tuple[list[float | None], float | None]:
    """Per-class F1 and their unweighted mean over classes where F1 is defined."""
    f1s = [f1_score(m.get("ppv"), m.get("sen")) for m in per_class]
    defined = [f for f in f1s if f is not None]
    return f1s, (float(np.mean(defined)) if defined else None)


def macro_f1(f1s: Sequence[float]) -> float:
    return float(np.mean(list(f1s)))


def overall_accuracy(cm: ConfusionMatrix) -> float:
    return 100.0 * np.trace(cm.counts) / cm.total


def round_pct(x: float | None, places: int = 2) -> float | None:
    if x is None:
        return None
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_EVEN))


@dataclass
class EvalReport:
    class_names: tuple[str, ...]
    folds: list[ConfusionMatrix | None]
    config_fingerprint: str = ""
    failures: dict[int, str] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def pooled(self) -> ConfusionMatrix:
        k = len(self.class_names)
        total = ConfusionMatrix(np.zeros((k, k), dtype=np.int64), self.class_names)
        for f in self.folds:
            if f is not None:
                total = total + f
        return total

    @property
    def complete(self) -> bool:
        return not self.failures and all(f is not None for f in self.folds)

    def metrics(self) -> dict:
        cm = self.pooled
        per = [per_class_metrics(cm, c) for c in range(len(self.class_names))] if cm.total else []
        f1s, mf1 = f1_and_mf1(per)
        for m, f in zip(per, f1s):
            m["f1"] = f
        return {
            "per_class": {name: {k: round_pct(v) for k, v in m.items()}
                          for name, m in zip(self.class_names, per)},
            "overall_accuracy": round_pct(overall_accuracy(cm)) if cm.total else None,
            "mf1": round_pct(mf1),
            "total": cm.total,
        }

    def to_json(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "folds": [None if f is None else f.to_json() for f in self.folds],
            "pooled": self.pooled.to_json(),
            "metrics": self.metrics(),
            "config_fingerprint": self.config_fingerprint,
            "failures": {str(k): v for k, v in self.failures.items()},
            "status": "complete" if self.complete else "partial",
            "extra": self.extra,
        }

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        return cls(
            tuple(d["class_names"]),
            [None if f is None else ConfusionMatrix.from_json(f) for f in d["folds"]],
            d.get("config_fingerprint", ""),
            {int(k): v for k, v in d.get("failures", {}).items()},
            d.get("extra", {}),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def table(self) -> str:
        return format_table(self.pooled, self.metrics())


def format_table(cm: ConfusionMatrix, metrics: dict | None = None) -> str:
    """Aligned text: confusion counts then acc/ppv/sen/spec/F1 per actual class."""
    if metrics is None:
        metrics = EvalReport(cm.class_names, [cm]).metrics()
    names = cm.class_names
    cw = max(7, max(len(str(v)) for v in cm.counts.ravel()) + 1, max(len(n) for n in names) + 1)

    def fmt(v):
        return "   -  " if v is None else f"{v:6.2f}"

    head = "actual\\pred".ljust(12) + "".join(n.rjust(cw) for n in names)
    head += "  " + "  ".join(h.rjust(6) for h in ("acc", "ppv", "sen", "spec", "f1"))
    lines = [head, "-" * len(head)]
    for i, name in enumerate(names):
        m = metrics["per_class"].get(name, {})
        row = name.ljust(12) + "".join(str(v).rjust(cw) for v in cm.counts[i])
        row += "  " + "  ".join(fmt(m.get(k)) for k in ("acc", "ppv", "sen", "spec", "f1"))
        lines.append(row)
    lines.append("-" * len(head))
    lines.append(f"overall accuracy {fmt(metrics['overall_accuracy']).strip()}   "
                 f"MF1 {fmt(metrics['mf1']).strip()}   n={metrics['total']}")
    return "\n".join(lines)

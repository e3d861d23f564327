"""End-to-end experiment: records -> waves -> vocabulary -> tokens -> model -> report.

A :class:`Corpus` holds the per-record wave tables (detection and
segmentation are label-free and done once).  :func:`run_experiment` then fits
vocabulary, embeddings and classifier inside each cross-validation fold, on
training examples only.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import ingest
from .embed import SkipGramConfig, skipgram_train
from .evaluation import ConfusionMatrix, EvalReport, kfold_split
from .ingest import EcgRecord, SegmentLabelConfig
from .nn import CNN_LONG, CNN_SHORT, ConvBlock, Dataset, ModelSpec, TrainConfig, train
from .qrs import PanTompkinsConfig, pan_tompkins
from .segment import WaveConfig, extract_waves, nearest_annotation_labels
from .serial import digest
from .vocab import WaveVocabulary, assign_many, kmeans_fit, kmeans_fit_per_kind, pad_tokens

logger = logging.getLogger(__name__)

TASKS = ("mitbih", "afib5s", "challenge2017", "synth")

TASK_CLASSES = {
    "mitbih": ingest.AAMI_GROUPS,
    "afib5s": ("nonAFIB", "AFIB"),
    "challenge2017": ("N", "A", "O", "~"),
    "synth": ("upright", "inverted"),
}

# token budget per example: beat +- 1 neighbour (3 beats x 3 waves), 5 s, ~60 s
TASK_MAX_LEN = {"mitbih": 9, "afib5s": 45, "challenge2017": 330, "synth": 45}
TASK_FOLDS = {"mitbih": 10, "afib5s": 10, "challenge2017": 5, "synth": 5}


def task_conv_blocks(task: str) -> tuple[ConvBlock, ...]:
    return CNN_LONG if task == "challenge2017" else CNN_SHORT


@dataclass
class PipelineConfig:
    task: str = "synth"
    data_dir: str | None = None
    out_dir: str = "out"
    seed: int = 0
    folds: int | None = None
    stratified: bool = True
    inter_patient: bool = False
    detector: PanTompkinsConfig = field(default_factory=PanTompkinsConfig)
    waves: WaveConfig = field(default_factory=WaveConfig)
    k: int = 20
    per_kind_vocab: bool = False
    vocab_restarts: int = 5
    vocab_max_waves: int = 50000
    embedding: SkipGramConfig = field(default_factory=SkipGramConfig)
    pretrain_embeddings: bool = True
    model: str = "cnn"
    max_len: int | None = None
    dense_units: int = 64
    hidden: int = 128
    layers: int = 2
    attn_dim: int = 64
    freeze_embeddings: bool = False
    conv_blocks: tuple[ConvBlock, ...] | None = None
    training: TrainConfig = field(default_factory=TrainConfig)
    segments: SegmentLabelConfig = field(default_factory=SegmentLabelConfig)
    balance: bool = True
    synth_records: int = 400
    synth_duration: float = 8.0
    jobs: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.model not in ("cnn", "rnn", "rnn_attention"):
            raise ValueError(f"unknown model {self.model!r}")

    @property
    def n_folds(self) -> int:
        return self.folds or TASK_FOLDS[self.task]

    @property
    def sequence_length(self) -> int:
        return self.max_len or TASK_MAX_LEN[self.task]

    def to_json(self) -> dict:
        return _to_plain(self)

    @classmethod
    def from_json(cls, d: dict) -> "PipelineConfig":
        return _from_plain(cls, d)

    def fingerprint(self) -> str:
        d = self.to_json()
        for volatile in ("out_dir", "jobs"):
            d.pop(volatile, None)
        return digest(d)


def _to_plain(obj):
    if is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


_NESTED = {
    "detector": PanTompkinsConfig, "waves": WaveConfig, "embedding": SkipGramConfig,
    "training": TrainConfig, "segments": SegmentLabelConfig,
}


def _from_plain(cls, d: dict):
    kwargs = {}
    names = {f.name for f in fields(cls)}
    for key, val in d.items():
        if key not in names:
            raise KeyError(f"unknown configuration key {key!r}")
        if key in _NESTED and isinstance(val, dict):
            sub = _NESTED[key]
            base = asdict(sub())
            unknown = set(val) - set(base)
            if unknown:
                raise KeyError(f"unknown keys in {key}: {sorted(unknown)}")
            base.update(val)
            if key == "detector" and isinstance(base.get("band"), list):
                base["band"] = tuple(base["band"])
            val = sub(**base)
        elif key == "conv_blocks" and val is not None:
            val = tuple(ConvBlock(**b) if isinstance(b, dict) else ConvBlock(*b) for b in val)
        kwargs[key] = val
    return cls(**kwargs)


def merge_config(base: PipelineConfig, overrides: dict) -> PipelineConfig:
    """Apply overrides (dotted keys allowed, e.g. ``training.max_epochs``)."""
    plain = base.to_json()
    for key, val in overrides.items():
        if val is None:
            continue
        parts = key.split(".")
        tgt = plain
        for p in parts[:-1]:
            tgt = tgt[p]
        if parts[-1] not in tgt:
            raise KeyError(f"unknown configuration key {key!r}")
        tgt[parts[-1]] = val
    return PipelineConfig.from_json(plain)


# ---------------------------------------------------------------------------
# Corpus


@dataclass
class RecordWaves:
    record_id: str
    fs: float
    peaks: np.ndarray
    canonical: np.ndarray       # (n_beats * n_kinds, L); zero rows for missing waves
    present: np.ndarray         # (n_beats * n_kinds,) bool
    kinds: tuple[str, ...]

    @property
    def n_kinds(self) -> int:
        return len(self.kinds)

    @property
    def n_beats(self) -> int:
        return self.peaks.size

    def rows(self, lo: int, hi: int) -> slice:
        return slice(lo * self.n_kinds, hi * self.n_kinds)


@dataclass
class Example:
    record: int       # index into Corpus.records
    beat_lo: int
    beat_hi: int      # exclusive
    label: int
    group: str = ""


@dataclass
class Corpus:
    task: str
    class_names: tuple[str, ...]
    records: list[RecordWaves]
    examples: list[Example]
    stats: dict = field(default_factory=dict)

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.examples], dtype=np.int64)

    def save(self, path: str | Path) -> None:
        arrays = {}
        meta = []
        for i, r in enumerate(self.records):
            arrays[f"r{i}_peaks"] = r.peaks
            arrays[f"r{i}_canonical"] = r.canonical
            arrays[f"r{i}_present"] = r.present
            meta.append({"record_id": r.record_id, "fs": r.fs, "kinds": list(r.kinds)})
        ex = np.array([[e.record, e.beat_lo, e.beat_hi, e.label] for e in self.examples],
                      dtype=np.int64).reshape(-1, 4)
        arrays["examples"] = ex
        arrays["groups"] = np.array([e.group for e in self.examples], dtype=str)
        import json
        arrays["meta"] = np.array(json.dumps({
            "task": self.task, "class_names": list(self.class_names), "records": meta,
            "stats": self.stats,
        }))
        np.savez_compressed(path, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "Corpus":
        import json
        z = np.load(path, allow_pickle=False)
        meta = json.loads(str(z["meta"]))
        records = [
            RecordWaves(m["record_id"], m["fs"], z[f"r{i}_peaks"], z[f"r{i}_canonical"],
                        z[f"r{i}_present"], tuple(m["kinds"]))
            for i, m in enumerate(meta["records"])
        ]
        groups = z["groups"].tolist()
        examples = [Example(int(a), int(b), int(c), int(d), groups[j])
                    for j, (a, b, c, d) in enumerate(z["examples"])]
        return cls(meta["task"], tuple(meta["class_names"]), records, examples, meta["stats"])


def wave_table(record_id: str, signal: np.ndarray, fs: float, peaks: np.ndarray,
               cfg: WaveConfig) -> RecordWaves:
    beats = extract_waves(signal, peaks, fs, cfg)
    kinds = tuple(w.kind for w in beats[0])
    canon = np.zeros((len(beats) * len(kinds), cfg.length))
    present = np.zeros(len(beats) * len(kinds), dtype=bool)
    for b, waves in enumerate(beats):
        for j, w in enumerate(waves):
            if not w.missing:
                canon[b * len(kinds) + j] = w.canonical
                present[b * len(kinds) + j] = True
    return RecordWaves(record_id, fs, np.asarray(peaks, dtype=np.int64), canon, present, kinds)


def detect(record: EcgRecord, cfg: PipelineConfig, known: dict | None = None) -> np.ndarray:
    """R-peaks of lead 0; ``known`` maps record ids to peaks already detected."""
    if known is not None and record.record_id in known:
        return np.asarray(known[record.record_id], dtype=np.int64)
    return pan_tompkins(record.lead(0), record.fs, cfg.detector).indices


def corpus_from_labelled_records(items: Iterable[tuple[EcgRecord, int]], cfg: PipelineConfig,
                                 task: str | None = None, known_peaks: dict | None = None) -> Corpus:
    """One example per record (synthetic and 2017-challenge style tasks)."""
    task = task or cfg.task
    records, examples = [], []
    dropped = 0
    for rec, label in items:
        peaks = detect(rec, cfg, known_peaks)
        if peaks.size < 2:
            dropped += 1
            continue
        rw = wave_table(rec.record_id, rec.lead(0), rec.fs, peaks, cfg.waves)
        examples.append(Example(len(records), 0, rw.n_beats, int(label), rec.record_id))
        records.append(rw)
    if dropped:
        logger.info("%d records dropped: fewer than 2 R-peaks detected", dropped)
    return Corpus(task, TASK_CLASSES[task], records, examples,
                  {"records_dropped": dropped, "examples": len(examples)})


def corpus_from_beat_annotations(records: Iterable[EcgRecord], cfg: PipelineConfig,
                                 neighbours: int = 1, known_peaks: dict | None = None) -> Corpus:
    """AAMI beat classification: one example per detected, annotated beat."""
    names = TASK_CLASSES["mitbih"]
    group_id = {g: i for i, g in enumerate(names)}
    out_records, examples = [], []
    unmatched = 0
    for rec in records:
        peaks = detect(rec, cfg, known_peaks)
        if peaks.size < 2:
            continue
        beat_anns = [(a.sample, group_id[ingest.aami_group(a.symbol)])
                     for a in rec.annotations if ingest.aami_group(a.symbol) is not None]
        labels = nearest_annotation_labels(peaks, [s for s, _ in beat_anns],
                                           [g for _, g in beat_anns], rec.fs)
        rw = wave_table(rec.record_id, rec.lead(0), rec.fs, peaks, cfg.waves)
        ri = len(out_records)
        out_records.append(rw)
        for b, lab in enumerate(labels):
            if lab is None:
                unmatched += 1
                continue
            examples.append(Example(ri, max(0, b - neighbours), min(rw.n_beats, b + neighbours + 1),
                                    lab, rec.record_id))
    return Corpus("mitbih", names, out_records, examples,
                  {"unmatched_beats": unmatched, "examples": len(examples)})


def corpus_from_afib_records(records: Iterable[EcgRecord], cfg: PipelineConfig,
                             beat_source: dict[str, np.ndarray] | None = None,
                             known_peaks: dict | None = None) -> Corpus:
    """5-s AFIB segments labelled by the fraction of AFIB beats."""
    out_records, examples = [], []
    empty_total = 0
    for rec in records:
        peaks = detect(rec, cfg, known_peaks)
        if peaks.size < 2:
            continue
        beats = beat_source.get(rec.record_id) if beat_source else None
        segs, empty = ingest.cut_afib_segments(rec, rec.annotations, cfg.segments,
                                               beat_samples=peaks if beats is None else beats)
        empty_total += empty
        rw = wave_table(rec.record_id, rec.lead(0), rec.fs, peaks, cfg.waves)
        ri = len(out_records)
        out_records.append(rw)
        for seg in segs:
            lo, hi = np.searchsorted(peaks, [seg.start, seg.end])
            if hi > lo:
                examples.append(Example(ri, int(lo), int(hi), seg.label, rec.record_id))
    stats = {"segments_without_beats": empty_total, "segments": len(examples),
             "afib": int(sum(e.label for e in examples))}
    corpus = Corpus("afib5s", TASK_CLASSES["afib5s"], out_records, examples, stats)
    if cfg.balance and len({e.label for e in examples}) > 1:
        corpus.examples = ingest.balance_undersample(examples, cfg.seed,
                                                     labels=[e.label for e in examples])
        corpus.stats["balanced_per_class"] = len(corpus.examples) // 2
    return corpus


def load_task_records(cfg: PipelineConfig):
    """Read the dataset named by ``cfg.task`` from ``cfg.data_dir``."""
    if cfg.task == "synth":
        from .synth import two_class_dataset
        return two_class_dataset(cfg.synth_records, cfg.seed, cfg.synth_duration)
    if cfg.data_dir is None:
        raise ValueError(f"task {cfg.task} needs a data directory")
    root = Path(cfg.data_dir)
    if cfg.task == "challenge2017":
        ref = root / "REFERENCE.csv"
        if not ref.exists():
            raise FileNotFoundError(f"{ref} not found (record,label per line)")
        names = TASK_CLASSES["challenge2017"]
        items = []
        with open(ref, newline="") as fh:
            for row in csv.reader(fh):
                if len(row) < 2:
                    continue
                label = row[1].strip()
                if label not in names:
                    continue
                items.append((ingest.read_csv_record(root / f"{row[0].strip()}.csv",
                                                     fs=_sidecar_fs(root, row[0].strip(), 300.0)),
                              names.index(label)))
        return items
    heads = sorted(root.glob("*.hea"))
    if not heads:
        raise FileNotFoundError(f"no WFDB headers in {root}")
    return [ingest.read_wfdb_record(h.with_suffix(""), channels=[0]) for h in heads]


def _sidecar_fs(root: Path, name: str, default: float) -> float:
    side = root / f"{name}.json"
    if side.exists():
        import json
        return float(json.loads(side.read_text())["fs"])
    return default


def build_corpus(cfg: PipelineConfig, records=None, known_peaks: dict | None = None) -> Corpus:
    """Detect, segment and label; ``records`` defaults to :func:`load_task_records`."""
    records = load_task_records(cfg) if records is None else records
    if cfg.task in ("synth", "challenge2017"):
        return corpus_from_labelled_records(records, cfg, known_peaks=known_peaks)
    if cfg.task == "mitbih":
        return corpus_from_beat_annotations(records, cfg, known_peaks=known_peaks)
    return corpus_from_afib_records(records, cfg, known_peaks=known_peaks)


# ---------------------------------------------------------------------------
# Per-fold fitting


def fit_vocabulary(corpus: Corpus, example_idx: Sequence[int], cfg: PipelineConfig) -> WaveVocabulary:
    """Cluster the present waves of the given examples' beats."""
    seen: dict[int, set[int]] = {}
    for i in example_idx:
        e = corpus.examples[i]
        seen.setdefault(e.record, set()).update(range(e.beat_lo, e.beat_hi))
    rows, kinds = [], []
    for ri, beats in sorted(seen.items()):
        rw = corpus.records[ri]
        b = np.array(sorted(beats), dtype=np.int64)
        idx = (b[:, None] * rw.n_kinds + np.arange(rw.n_kinds)[None, :]).reshape(-1)
        idx = idx[rw.present[idx]]
        rows.append(rw.canonical[idx])
        kinds.extend(rw.kinds[j % rw.n_kinds] for j in idx)
    X = np.concatenate(rows) if rows else np.zeros((0, cfg.waves.length))
    kinds = np.asarray(kinds)
    if X.shape[0] > cfg.vocab_max_waves:
        pick = np.sort(np.random.default_rng(cfg.seed).choice(X.shape[0], cfg.vocab_max_waves,
                                                              replace=False))
        X, kinds = X[pick], kinds[pick]
    if cfg.per_kind_vocab:
        return kmeans_fit_per_kind(X, kinds, cfg.k, cfg.seed, restarts=cfg.vocab_restarts)
    return kmeans_fit(X, cfg.k, cfg.seed, restarts=cfg.vocab_restarts, eps=cfg.waves.eps)


def record_tokens(rw: RecordWaves, vocab: WaveVocabulary) -> np.ndarray:
    if vocab.centroid_kinds is None:
        ids = assign_many(vocab, rw.canonical)
    else:
        from .vocab import assign_wave
        ids = np.array([assign_wave(vocab, rw.canonical[j], rw.kinds[j % rw.n_kinds])
                        for j in range(rw.canonical.shape[0])], dtype=np.int64)
    ids[~rw.present] = vocab.unk
    return ids


def tokenize_corpus(corpus: Corpus, vocab: WaveVocabulary, max_len: int) -> np.ndarray:
    per_record = [record_tokens(rw, vocab) for rw in corpus.records]
    out = np.zeros((len(corpus.examples), max_len), dtype=np.int64)
    for i, e in enumerate(corpus.examples):
        rw = corpus.records[e.record]
        out[i] = pad_tokens(per_record[e.record][rw.rows(e.beat_lo, e.beat_hi)], max_len)
    return out


def model_spec(cfg: PipelineConfig, n_classes: int, vocab_size: int) -> ModelSpec:
    return ModelSpec(
        head=cfg.model, n_classes=n_classes, vocab_size=vocab_size,
        max_len=cfg.sequence_length, embed_dim=cfg.embedding.dim,
        conv_blocks=cfg.conv_blocks or task_conv_blocks(cfg.task),
        dense_units=cfg.dense_units, hidden=cfg.hidden, layers=cfg.layers,
        bidirectional=True, attn_dim=cfg.attn_dim, freeze_embeddings=cfg.freeze_embeddings,
    )


@dataclass
class FoldResult:
    fold: int
    matrix: ConfusionMatrix | None
    error: str | None = None
    vocab_hash: str = ""
    best_epoch: int = 0
    history: list = field(default_factory=list)


def run_fold(corpus: Corpus, cfg: PipelineConfig, fold: int, train_idx: np.ndarray,
             test_idx: np.ndarray) -> FoldResult:
    try:
        fold_cfg = replace(cfg, seed=cfg.seed + fold)
        vocab = fit_vocabulary(corpus, train_idx, fold_cfg)
        tokens = tokenize_corpus(corpus, vocab, cfg.sequence_length)
        labels = corpus.labels
        emb = None
        if cfg.pretrain_embeddings:
            sg = replace(cfg.embedding, seed=cfg.embedding.seed + fold)
            emb = skipgram_train(list(tokens[train_idx]), vocab.size, sg, vocab.hash).matrix
        spec = model_spec(cfg, len(corpus.class_names), vocab.size)
        tcfg = replace(cfg.training, seed=cfg.training.seed + fold)
        model, history = train(spec, tcfg, Dataset(tokens[train_idx], labels[train_idx]),
                               embedding=emb, vocab_hash=vocab.hash)
        pred = model.predict_proba(tokens[test_idx]).argmax(axis=1)
        cm = ConfusionMatrix.from_predictions(labels[test_idx], pred, corpus.class_names)
        return FoldResult(fold, cm, None, vocab.hash, getattr(model, "best_epoch", 0), history)
    except Exception as exc:  # a failed fold is reported, not fatal
        logger.exception("fold %d failed", fold)
        return FoldResult(fold, None, f"{type(exc).__name__}: {exc}")


def _run_fold_star(args):
    return run_fold(*args)


def run_experiment(corpus: Corpus, cfg: PipelineConfig) -> EvalReport:
    """Cross-validate the full pipeline; the pooled matrix sums the folds."""
    groups = [e.group for e in corpus.examples] if cfg.inter_patient else None
    splits = kfold_split(corpus.labels, cfg.n_folds, cfg.seed, stratified=cfg.stratified,
                         groups=groups)
    jobs = [(corpus, cfg, f, tr, te) for f, (tr, te) in enumerate(splits)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_fold_star, jobs))
    else:
        results = [run_fold(*j) for j in jobs]
    results.sort(key=lambda r: r.fold)
    report = EvalReport(
        corpus.class_names,
        [r.matrix for r in results],
        cfg.fingerprint(),
        {r.fold: r.error for r in results if r.error},
        {"task": corpus.task, "folds": cfg.n_folds, "corpus": corpus.stats,
         "vocab_hashes": [r.vocab_hash for r in results],
         "best_epochs": [r.best_epoch for r in results]},
    )
    return report

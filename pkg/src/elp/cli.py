"""``elp`` command line: one sub-command per pipeline stage.

Every stage writes ``<out>/<stage>/<hash>/`` and records it in
``<out>/manifest.json``.  The hash covers the stage's configuration and the
hashes of its inputs, so re-running a stage with nothing changed is a no-op.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import (ArtifactIntegrityError, ArtifactStore, StageOrderError, load_records,
                        save_records)
from .embed import EmbeddingMatrix, skipgram_train
from .evaluation import ConfusionMatrix, EvalReport, format_table
from .nn import Dataset, train
from .pipeline import (Corpus, PipelineConfig, build_corpus, fit_vocabulary, load_task_records,
                       merge_config, model_spec, run_experiment, tokenize_corpus)
from .qrs import pan_tompkins
from .serial import digest
from .vocab import WaveVocabulary, assign_many, export_cluster_gallery

log = logging.getLogger("elp")

MODEL_NAMES = {"cnn": "cnn", "rnn": "rnn", "rnn-attn": "rnn_attention"}


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python 3.10
            import tomli as tomllib
        return tomllib.loads(raw.decode("utf-8"))
    return json.loads(raw)


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults, then the config file, then command-line flags."""
    cfg = PipelineConfig()
    if args.config:
        cfg = merge_config(cfg, _flatten(load_config_file(args.config)))
    flags = {
        "task": args.task, "seed": args.seed, "folds": args.folds, "k": args.k,
        "max_len": args.max_len, "data_dir": getattr(args, "data", None),
        "model": MODEL_NAMES[args.model] if args.model else None,
        "embedding.dim": args.embed_dim,
        "training.max_epochs": args.epochs,
        "synth_records": getattr(args, "records", None),
        "synth_duration": getattr(args, "duration", None),
    }
    cfg = merge_config(cfg, flags)
    if cfg.data_dir is not None and not Path(cfg.data_dir).exists():
        raise FileNotFoundError(f"data directory {cfg.data_dir} does not exist")
    return replace(cfg, out_dir=str(args.out))


def _flatten(d: dict, prefix: str = "") -> dict:
    nested = {"detector", "waves", "embedding", "training", "segments"}
    out = {}
    for k, v in d.items():
        if isinstance(v, dict) and not prefix and k in nested:
            out.update(_flatten(v, f"{k}."))
        else:
            out[prefix + k] = v
    return out


# stage key = hash of the config slice the stage depends on + input hashes
def _slice(cfg: PipelineConfig, stage: str) -> dict:
    d = cfg.to_json()
    keys = {
        "ingest": ["task", "data_dir", "seed", "synth_records", "synth_duration"],
        "detect": ["detector"],
        "segment": ["task", "waves", "segments", "balance", "seed"],
        "build-vocab": ["k", "per_kind_vocab", "vocab_restarts", "vocab_max_waves", "seed"],
        "tokenize": [],
        "train": ["embedding", "pretrain_embeddings", "model", "dense_units", "hidden", "layers",
                  "attn_dim", "freeze_embeddings", "conv_blocks", "training"],
        "gallery": ["seed"],
    }[stage]
    out = {k: d[k] for k in keys}
    if stage == "tokenize":
        out["max_len"] = cfg.sequence_length
    return out


class Runner:
    def __init__(self, cfg: PipelineConfig, force: bool = False):
        self.cfg = cfg
        self.store = ArtifactStore(cfg.out_dir)
        self.force = force

    def key(self, stage: str, inputs: dict[str, str]) -> str:
        if stage == "evaluate":
            return digest(stage, self.cfg.fingerprint(), inputs)
        return digest(stage, _slice(self.cfg, stage), inputs)

    def run(self, stage: str, produce) -> tuple[str, Path, bool]:
        """Run ``produce(directory, inputs) -> info`` unless the artifact is current."""
        inputs = self.store.upstream(stage)
        key = self.key(stage, inputs)
        directory = self.store.directory(stage, key)
        if not self.force and self.store.is_current(stage, key):
            self.store.touch_latest(stage, key)
            log.info("%s: up to date (%s)", stage, key)
            return key, directory, False
        directory.mkdir(parents=True, exist_ok=True)
        info = produce(directory, inputs) or {}
        self.store.commit(stage, key, self.cfg.fingerprint(), inputs, info)
        log.info("%s: wrote %s", stage, directory)
        return key, directory, True

    def path(self, stage: str, key: str, name: str) -> Path:
        return self.store.directory(stage, key) / name


# ---------------------------------------------------------------------------
# stages


def stage_ingest(r: Runner) -> str:
    def produce(d: Path, _inputs):
        items = load_task_records(r.cfg)
        items = [it if isinstance(it, tuple) else (it, None) for it in items]
        save_records(d / "records.npz", items)
        return {"records": len(items)}
    return r.run("ingest", produce)[0]


def _records(r: Runner, key: str):
    return load_records(r.path("ingest", key, "records.npz"))


def stage_detect(r: Runner) -> str:
    def produce(d: Path, inputs):
        peaks = {}
        for rec, _ in _records(r, inputs["ingest"]):
            peaks[rec.record_id] = pan_tompkins(rec.lead(0), rec.fs, r.cfg.detector).indices.tolist()
        (d / "peaks.json").write_text(json.dumps(peaks), encoding="utf-8")
        return {"records": len(peaks), "peaks": sum(len(v) for v in peaks.values())}
    return r.run("detect", produce)[0]


def stage_segment(r: Runner) -> str:
    def produce(d: Path, inputs):
        items = _records(r, inputs["ingest"])
        peaks = json.loads(r.path("detect", inputs["detect"], "peaks.json").read_text())
        if r.cfg.task in ("synth", "challenge2017"):
            records = items
        else:
            records = [rec for rec, _ in items]
        corpus = build_corpus(r.cfg, records, known_peaks=peaks)
        with open(d / "corpus.npz", "wb") as fh:
            corpus.save(fh)
        return corpus.stats
    return r.run("segment", produce)[0]


def _corpus(r: Runner, key: str) -> Corpus:
    return Corpus.load(r.path("segment", key, "corpus.npz"))


def stage_build_vocab(r: Runner) -> str:
    def produce(d: Path, inputs):
        corpus = _corpus(r, inputs["segment"])
        vocab = fit_vocabulary(corpus, range(len(corpus.examples)), r.cfg)
        vocab.save(d / "vocab")
        return {"k": vocab.k, "vocab_hash": vocab.hash}
    return r.run("build-vocab", produce)[0]


def _vocab(r: Runner, key: str) -> WaveVocabulary:
    return WaveVocabulary.load(r.path("build-vocab", key, "vocab"))


def stage_tokenize(r: Runner) -> str:
    def produce(d: Path, inputs):
        corpus = _corpus(r, inputs["segment"])
        vocab = _vocab(r, inputs["build-vocab"])
        tokens = tokenize_corpus(corpus, vocab, r.cfg.sequence_length)
        with open(d / "tokens.npz", "wb") as fh:
            np.savez(fh, tokens=tokens, labels=corpus.labels,
                     vocab_hash=np.array(vocab.hash), vocab_size=np.array(vocab.size))
        return {"examples": int(tokens.shape[0]), "max_len": int(tokens.shape[1])}
    return r.run("tokenize", produce)[0]


def stage_train(r: Runner) -> str:
    def produce(d: Path, inputs):
        z = np.load(r.path("tokenize", inputs["tokenize"], "tokens.npz"))
        tokens, labels = z["tokens"], z["labels"]
        vocab_hash, vocab_size = str(z["vocab_hash"]), int(z["vocab_size"])
        emb = None
        if r.cfg.pretrain_embeddings:
            em = skipgram_train(list(tokens), vocab_size, r.cfg.embedding, vocab_hash)
            em.save(d / "embedding")
            emb = em.matrix
        from .pipeline import TASK_CLASSES
        spec = model_spec(r.cfg, len(TASK_CLASSES[r.cfg.task]), vocab_size)
        model, history = train(spec, r.cfg.training, Dataset(tokens, labels), embedding=emb,
                               vocab_hash=vocab_hash, history_path=d / "history.jsonl")
        model.save(d / "model")
        return {"best_epoch": model.best_epoch, "epochs": len(history)}
    return r.run("train", produce)[0]


def stage_evaluate(r: Runner) -> str:
    def produce(d: Path, inputs):
        corpus = _corpus(r, inputs["segment"])
        report = run_experiment(corpus, r.cfg)
        (d / "report.json").write_text(report.dumps(), encoding="utf-8")
        (d / "config.json").write_text(json.dumps(r.cfg.to_json(), indent=2), encoding="utf-8")
        return {"status": "complete" if report.complete else "partial",
                "overall_accuracy": report.metrics()["overall_accuracy"]}
    return r.run("evaluate", produce)[0]


def stage_gallery(r: Runner) -> str:
    def produce(d: Path, inputs):
        corpus = _corpus(r, inputs["segment"])
        vocab = _vocab(r, inputs["build-vocab"])
        rows = np.concatenate([rw.canonical[rw.present] for rw in corpus.records])
        ids = assign_many(vocab, rows) - 1
        samples = {c: rows[ids == c] for c in range(vocab.k)}
        export_cluster_gallery(vocab, samples, d / "gallery.svg", seed=r.cfg.seed)
        return {"clusters": vocab.k}
    return r.run("gallery", produce)[0]


CHAINS = {
    "ingest": [stage_ingest],
    "synth": [stage_ingest],
    "detect": [stage_detect],
    "segment": [stage_segment],
    "build-vocab": [stage_build_vocab],
    "tokenize": [stage_tokenize],
    "train": [stage_train],
    "evaluate": [stage_evaluate],
    "gallery": [stage_gallery],
}


# ---------------------------------------------------------------------------
# report


def load_report(path: str | Path, class_names: list[str] | None = None) -> EvalReport:
    """An EvalReport JSON, a ``{"class_names", "counts"}`` matrix or a bare count list."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(obj, dict) and "folds" in obj:
        return EvalReport.from_json(obj)
    if isinstance(obj, dict):
        names = obj.get("class_names") or class_names
        counts = obj["counts"]
    else:
        names, counts = class_names, obj
    if names is None:
        names = [str(i) for i in range(len(counts))]
    cm = ConfusionMatrix(np.array(counts), tuple(names))
    return EvalReport(cm.class_names, [cm])


def cmd_report(args, out: Path) -> int:
    if args.input:
        report = load_report(args.input, args.classes.split(",") if args.classes else None)
    else:
        store = ArtifactStore(out)
        key = store.load()["latest"].get("evaluate")
        if key is None:
            raise StageOrderError("stage 'report' needs the 'evaluate' stage; run `elp evaluate` first")
        store.verify("evaluate", key)
        report = load_report(store.directory("evaluate", key) / "report.json")
    if args.json:
        print(json.dumps(report.metrics(), indent=2, sort_keys=True))
    else:
        print(format_table(report.pooled, report.metrics()))
        if report.failures:
            print(f"partial report: folds {sorted(report.failures)} failed")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON configuration file")
    common.add_argument("--out", default=os.environ.get("ELP_OUT", "out"),
                        help="artifact directory (default: $ELP_OUT or ./out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--task", choices=["mitbih", "afib5s", "challenge2017", "synth"])
    common.add_argument("--folds", type=int)
    common.add_argument("--model", choices=sorted(MODEL_NAMES))
    common.add_argument("--k", type=int, help="vocabulary size (clusters)")
    common.add_argument("--embed-dim", type=int)
    common.add_argument("--max-len", type=int, help="tokens per example")
    common.add_argument("--epochs", type=int, help="maximum training epochs")
    common.add_argument("--force", action="store_true", help="re-run even if the artifact is current")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="elp", description="ECG wave-token pipeline")
    p.add_argument("--version", action="version", version=f"elp {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    ing = sub.add_parser("ingest", parents=[common], help="read a dataset into the artifact store")
    ing.add_argument("--data", help="dataset directory")
    syn = sub.add_parser("synth", parents=[common], help="generate the two-class synthetic dataset")
    syn.add_argument("--records", type=int)
    syn.add_argument("--duration", type=float)
    for name, text in [("detect", "R-peak detection"), ("segment", "wave segmentation and labels"),
                       ("build-vocab", "k-means wave vocabulary"), ("tokenize", "token sequences"),
                       ("train", "embeddings and classifier on all examples"),
                       ("evaluate", "cross-validated experiment"),
                       ("gallery", "SVG of cluster members")]:
        sub.add_parser(name, parents=[common], help=text)
    rep = sub.add_parser("report", parents=[common], help="print metrics of a confusion matrix")
    rep.add_argument("input", nargs="?", help="report or confusion-matrix JSON (default: latest evaluate)")
    rep.add_argument("--classes", help="comma-separated class names for a bare count matrix")
    rep.add_argument("--json", action="store_true", help="print metrics as JSON")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args, Path(args.out))
        if args.command == "synth":
            args.task = "synth"
        cfg = resolve_config(args)
        runner = Runner(cfg, force=args.force)
        for stage in CHAINS[args.command]:
            key = stage(runner)
            print(f"{args.command}: {runner.store.directory(_stage_name(args.command), key)}")
        if args.command == "evaluate":
            report = load_report(runner.path("evaluate", key, "report.json"))
            print(format_table(report.pooled, report.metrics()))
            if report.failures:
                print(f"partial report: folds {sorted(report.failures)} failed", file=sys.stderr)
                return 1
        return 0
    except (StageOrderError, ArtifactIntegrityError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"elp {args.command}: error: {exc}", file=sys.stderr)
        return 2


def _stage_name(command: str) -> str:
    return "ingest" if command == "synth" else command


if __name__ == "__main__":
    sys.exit(main())

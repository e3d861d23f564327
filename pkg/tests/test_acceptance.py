"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line.

Run directly (``python tests/test_acceptance.py``) for just the summary lines.
"""

from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import test_embed  # noqa: E402
import test_gradients as grads  # noqa: E402
from oracles import brute_force_kmeans  # noqa: E402

from elp.embed import EmbeddingMatrix, SkipGramConfig, skipgram_train  # noqa: E402
from elp.evaluation import ConfusionMatrix, macro_f1, per_class_metrics  # noqa: E402
from elp.ingest import decode_format212_adu, encode_format212, segment_is_positive  # noqa: E402
from elp.nn import ModelSpec, SequenceClassifier  # noqa: E402
from elp.pipeline import PipelineConfig, build_corpus, run_experiment  # noqa: E402
from elp.qrs import match_peaks, pan_tompkins  # noqa: E402
from elp.synth import SynthSpec, generate  # noqa: E402
from elp.vocab import WaveVocabulary, kmeans, kmeans_fit  # noqa: E402

# confusion matrices (rows actual, columns predicted) and printed per-class values
BEAT_CM = {
    "classes": ("N", "S", "V", "F", "Q"),
    "counts": [[89774, 203, 357, 37, 91], [757, 1945, 56, 1, 18], [632, 51, 6449, 44, 47],
               [175, 3, 95, 527, 2], [639, 11, 62, 1, 7314]],
    "printed": {"N": (97.35, 97.60, 99.24, 88.30), "S": (98.99, 87.89, 70.04, 99.75),
                "V": (98.77, 91.88, 89.28, 99.94), "F": (99.67, 86.39, 65.71, 99.92),
                "Q": (99.20, 97.89, 91.12, 99.84)},
}
RHYTHM_CM = {
    "classes": ("N", "A", "O", "~"),
    "counts": [[4221, 53, 738, 63], [70, 463, 207, 18], [839, 172, 1348, 53], [57, 13, 51, 157]],
    "printed": {"N": (78.65, 81.83, 83.17, 71.98), "A": (93.75, 66.05, 61.08, 96.93),
                "O": (75.83, 57.51, 55.89, 83.70), "~": (97.01, 53.95, 56.47, 98.37)},
}
CNN_F1 = (82.26, 63.47, 56.69, 55.18)


def _line(n: int, ok: bool | None, detail: str, capsys=None) -> str:
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
    text = f"criterion {n}: {status} - {detail}"
    if capsys is not None:
        with capsys.disabled():
            print("\n" + text)
    else:
        print(text)
    return text


# -- criterion bodies: return (ok, detail) ---------------------------------


def criterion_1():
    t0 = time.perf_counter()
    misses, total = [], 0
    for name, table in (("beat", BEAT_CM), ("rhythm", RHYTHM_CM)):
        cm = ConfusionMatrix(np.array(table["counts"]), table["classes"])
        for c, cls in enumerate(table["classes"]):
            got = per_class_metrics(cm, c)
            for key, want in zip(("acc", "ppv", "sen", "spec"), table["printed"][cls]):
                total += 1
                if abs(got[key] - want) > 0.01:
                    misses.append(f"{name} {cls} {key}: printed {want:.2f}, matrix gives {got[key]:.2f}")
    elapsed = time.perf_counter() - t0
    ok = not misses and elapsed < 1.0
    detail = f"{total - len(misses)}/{total} values within 0.01 pp in {elapsed:.3f}s"
    if misses:
        detail += "; " + "; ".join(misses)
    return ok, detail


def criterion_2():
    mf1 = macro_f1(CNN_F1)
    return abs(mf1 - 64.40) <= 0.005, f"MF1 {mf1:.4f} (target 64.40 +- 0.005)"


def criterion_3():
    t0 = time.perf_counter()
    cases = bad = 0
    for p in np.round(np.arange(0, 101) / 100, 2):
        for n in range(1, 11):
            for k in range(n + 1):
                cases += 1
                # brute force restatement: at least p of the n beats are AFIB
                brute = any(k >= m for m in range(n + 1) if m >= p * n - 1e-12)
                if segment_is_positive(n, k, float(p)) != brute:
                    bad += 1
    elapsed = time.perf_counter() - t0
    return bad == 0 and elapsed < 1.0, f"{cases - bad}/{cases} (n, k, p) cases agree in {elapsed:.3f}s"


def criterion_4():
    t0 = time.perf_counter()
    fs = 250.0
    parts, scale_ok = [], True
    ok = True
    for snr in (20.0, 10.0):
        tp = fp = fn = 0
        for seed in range(10):
            res = generate(SynthSpec(fs=fs, duration=60, seed=seed, snr_db=snr, rr_jitter=0.05))
            x = res.record.lead(0)
            det = pan_tompkins(x, fs)
            m = match_peaks(det.indices, res.peaks, 50, fs)
            tp, fp, fn = tp + m.tp, fp + m.fp, fn + m.fn
            if seed < 3:
                for a in (0.01, 7.5):
                    scale_ok &= np.array_equal(pan_tompkins(a * x, fs).indices, det.indices)
        sen, ppv = 100 * tp / (tp + fn), 100 * tp / (tp + fp)
        ok &= sen >= 99.0 and ppv >= 97.0
        parts.append(f"{snr:g} dB sen {sen:.2f}% ppv {ppv:.2f}%")
    elapsed = time.perf_counter() - t0
    ok = ok and scale_ok and elapsed < 30
    return ok, f"{'; '.join(parts)}; scale invariance {'exact' if scale_ok else 'BROKEN'}; {elapsed:.1f}s"


def criterion_5():
    t0 = time.perf_counter()
    worst, monotone = 0.0, True
    for inst in range(10):
        rng = np.random.default_rng(1000 + inst)
        n, k = int(rng.integers(4, 9)), int(rng.integers(2, 4))
        X = rng.normal(size=(n, 4))
        vocab = kmeans_fit(X, k, seed=inst, restarts=20)
        obj = float(((X[:, None, :] - vocab.centroids[None]) ** 2).sum(-1).min(1).sum())
        worst = max(worst, abs(obj - brute_force_kmeans(X, k)))
        res = kmeans(X, k, seed=inst, restarts=20)
        monotone &= all(b <= a + 1e-12 for a, b in zip(res.history, res.history[1:]))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and monotone and elapsed < 10
    return ok, f"worst gap to exhaustive optimum {worst:.2e}; monotone {monotone}; {elapsed:.1f}s"


def criterion_6():
    t0 = time.perf_counter()
    checks = {
        "dense": grads.test_dense, "conv1d": grads.test_conv1d,
        "lstm cell": grads.test_lstm_cell, "attention pool": grads.test_attention_pool,
        "softmax+ce": grads.test_softmax_cross_entropy,
        "skip-gram loss": test_embed.test_pair_loss_gradients,
    }
    failed = []
    for seed in range(10):
        for name, fn in checks.items():
            try:
                fn(seed)
            except AssertionError:
                failed.append(f"{name}@{seed}")
        for size, stride in ((3, 3), (2, 1)):
            try:
                grads.test_maxpool_routing(seed, size, stride)
            except AssertionError:
                failed.append(f"maxpool@{seed}")
    elapsed = time.perf_counter() - t0
    ok = not failed and elapsed < 60
    return ok, f"7 operations x 10 seeds, rel err < 1e-4; failures {failed or 'none'}; {elapsed:.1f}s"


def criterion_7():
    t0 = time.perf_counter()
    cfg = PipelineConfig(task="synth", k=8, folds=5, seed=0, model="cnn", synth_records=400)
    report = run_experiment(build_corpus(cfg), cfg)
    acc = report.metrics()["overall_accuracy"]
    elapsed = time.perf_counter() - t0
    ok = report.complete and acc is not None and acc >= 95.0 and elapsed < 300
    return ok, f"pooled 5-fold accuracy {acc}% over {report.pooled.total} records in {elapsed:.0f}s"


def criterion_8(tmp: Path):
    rng = np.random.default_rng(8)
    ok212 = True
    for _ in range(100):
        n_ch, n = int(rng.integers(1, 4)), int(rng.integers(1, 2000))
        adu = rng.integers(-2048, 2048, size=(n_ch, n))
        back = decode_format212_adu(encode_format212(adu), n_ch * n).reshape(n, n_ch).T
        ok212 &= np.array_equal(back, adu)

    X = rng.normal(size=(200, 64))
    vocab = kmeans_fit(X, k=5, seed=1)
    vocab.save(tmp / "vocab")
    v_back = WaveVocabulary.load(tmp / "vocab")
    v_json = WaveVocabulary.from_json(json.loads(json.dumps(vocab.to_json())))
    ok_vocab = (v_back.centroids.tobytes() == vocab.centroids.tobytes()
                and v_json.centroids.tobytes() == vocab.centroids.tobytes())

    emb = skipgram_train([rng.integers(1, 7, size=20).tolist() for _ in range(30)], 7,
                         SkipGramConfig(dim=6, epochs=1))
    emb.save(tmp / "emb")
    e_json = EmbeddingMatrix.from_json(json.loads(json.dumps(emb.to_json())))
    ok_emb = (EmbeddingMatrix.load(tmp / "emb").matrix.tobytes() == emb.matrix.tobytes()
              and e_json.matrix.tobytes() == emb.matrix.tobytes())

    ok_ckpt = True
    for head in ("cnn", "rnn", "rnn_attention"):
        m = SequenceClassifier(ModelSpec(head, 3, 7, 12, embed_dim=6, hidden=4, layers=1,
                                         dense_units=5, attn_dim=3), seed=2)
        m.save(tmp / head)
        back = SequenceClassifier.load(tmp / head)
        ok_ckpt &= all(a.data.tobytes() == b.data.tobytes()
                       for (_, a), (_, b) in zip(m.params.items(), back.params.items()))
    ok = ok212 and ok_vocab and ok_emb and ok_ckpt
    return ok, (f"format 212 x100 {ok212}; vocabulary {ok_vocab}; embedding {ok_emb}; "
                f"checkpoints {ok_ckpt}")


def criterion_9():
    """Soft full-corpus targets; only meaningful with the corpora on disk."""
    mitdb, afdb = os.environ.get("ELP_MITDB_DIR"), os.environ.get("ELP_AFDB_DIR")
    if not (mitdb and Path(mitdb).is_dir()) and not (afdb and Path(afdb).is_dir()):
        return None, "corpora absent (set ELP_MITDB_DIR / ELP_AFDB_DIR); soft targets not evaluated"
    parts, ok = [], True
    if mitdb and Path(mitdb).is_dir():
        cfg = PipelineConfig(task="mitbih", data_dir=mitdb, folds=10, jobs=os.cpu_count() or 1)
        acc = run_experiment(build_corpus(cfg), cfg).metrics()["overall_accuracy"]
        ok &= acc >= 90.0
        parts.append(f"MIT-BIH accuracy {acc}% (soft target 90; {acc - 97.00:+.2f} pp from 97.00)")
    if afdb and Path(afdb).is_dir():
        cfg = PipelineConfig(task="afib5s", data_dir=afdb, folds=10, balance=False,
                             jobs=os.cpu_count() or 1)
        corpus = build_corpus(cfg)
        n, n_af = corpus.stats["segments"], corpus.stats["afib"]
        count_ok = abs(n - 167422) <= 0.02 * 167422
        parts.append(f"segments {n} / AFIB {n_af} (167,422 / 66,939 within 2%: {count_ok})")
        cfg = PipelineConfig(task="afib5s", data_dir=afdb, folds=10, jobs=os.cpu_count() or 1)
        acc = run_experiment(build_corpus(cfg), cfg).metrics()["overall_accuracy"]
        ok &= acc >= 94.0 and count_ok
        parts.append(f"AFIB accuracy {acc}% (soft target 94; {acc - 98.17:+.2f} pp from 98.17)")
    return ok, "; ".join(parts)


# -- pytest wrappers ---------------------------------------------------------


def _assert(n, result, capsys, record):
    ok, detail = result
    record(_line(n, ok, detail, capsys))
    if ok is None:
        pytest.skip(detail)
    assert ok, detail


def test_criterion_1_metric_golden_values(capsys, record_acceptance):
    _assert(1, criterion_1(), capsys, record_acceptance)


def test_criterion_2_macro_f1(capsys, record_acceptance):
    _assert(2, criterion_2(), capsys, record_acceptance)


def test_criterion_3_segment_rule_exhaustive(capsys, record_acceptance):
    _assert(3, criterion_3(), capsys, record_acceptance)


def test_criterion_4_detector_on_synthetic_records(capsys, record_acceptance):
    _assert(4, criterion_4(), capsys, record_acceptance)


def test_criterion_5_kmeans_oracle(capsys, record_acceptance):
    _assert(5, criterion_5(), capsys, record_acceptance)


def test_criterion_6_gradient_suite(capsys, record_acceptance):
    _assert(6, criterion_6(), capsys, record_acceptance)


def test_criterion_7_end_to_end_synthetic(capsys, record_acceptance):
    _assert(7, criterion_7(), capsys, record_acceptance)


def test_criterion_8_round_trips(tmp_path, capsys, record_acceptance):
    _assert(8, criterion_8(tmp_path), capsys, record_acceptance)


def test_criterion_9_full_corpus_soft_targets(capsys, record_acceptance):
    _assert(9, criterion_9(), capsys, record_acceptance)


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        results = [criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(),
                   criterion_6(), criterion_7(), criterion_8(Path(d)), criterion_9()]
    for i, (ok, detail) in enumerate(results, start=1):
        _line(i, ok, detail)
    sys.exit(0 if all(ok is not False for ok, _ in results) else 1)

import json

import numpy as np
import pytest

from helpers import numeric_grad, rel_error
from elp.embed import (EmbeddingMatrix, SkipGramConfig, cosine, count_vectorize, embed_lookup,
                       pair_loss_and_grads, skipgram_pairs, skipgram_train)


def test_count_vectorize_ignores_pad():
    assert count_vectorize([0, 1, 1, 3, 0], 5).tolist() == [0, 2, 0, 1, 0]
    assert count_vectorize([1, 3], 5, normalize=True).tolist() == [0, 0.5, 0, 0.5, 0]
    with pytest.raises(ValueError):
        count_vectorize([7], 5)


def test_skipgram_pairs_window():
    pairs = skipgram_pairs([[1, 2, 3, 0, 0]], window=1)
    assert sorted(map(tuple, pairs.tolist())) == [(1, 2), (2, 1), (2, 3), (3, 2)]


@pytest.mark.parametrize("seed", range(10))
def test_pair_loss_gradients(seed):
    rng = np.random.default_rng(seed)
    v, u, neg = rng.normal(size=6), rng.normal(size=6), rng.normal(size=(4, 6))
    _, dv, du, dneg = pair_loss_and_grads(v, u, neg)
    f = lambda: pair_loss_and_grads(v, u, neg)[0]   # noqa: E731
    assert rel_error(dv, numeric_grad(f, v)) < 1e-4
    assert rel_error(du, numeric_grad(f, u)) < 1e-4
    assert rel_error(dneg, numeric_grad(f, neg)) < 1e-4


def _corpus(seed=0, n=300):
    # tokens 1-3 co-occur, tokens 4-6 co-occur
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        group = [1, 2, 3] if rng.random() < 0.5 else [4, 5, 6]
        out.append(rng.choice(group, size=12).tolist())
    return out


def test_skipgram_learns_cooccurrence():
    cfg = SkipGramConfig(dim=8, epochs=5, lr=0.2, seed=1)
    emb = skipgram_train(_corpus(), 7, cfg)
    M = emb.matrix
    assert emb.loss_history[-1] < emb.loss_history[0]
    within = np.mean([cosine(M[1], M[2]), cosine(M[4], M[5])])
    across = np.mean([cosine(M[1], M[4]), cosine(M[2], M[6])])
    assert within > across + 0.5
    assert not M[0].any()


def test_skipgram_deterministic_and_zero_epochs():
    cfg = SkipGramConfig(dim=4, epochs=2, seed=3)
    a = skipgram_train(_corpus(1, 50), 7, cfg).matrix
    b = skipgram_train(_corpus(1, 50), 7, cfg).matrix
    assert np.array_equal(a, b)
    init = skipgram_train(_corpus(1, 50), 7, SkipGramConfig(dim=4, epochs=0, seed=3)).matrix
    assert np.abs(init).max() <= 0.5 / 4


def test_skipgram_errors():
    with pytest.raises(ValueError, match="distinct"):
        skipgram_train([[1, 1, 1]], 3)
    with pytest.raises(ValueError, match="outside"):
        skipgram_train([[1, 9]], 3)


def test_embedding_roundtrip_bit_exact(tmp_path):
    emb = skipgram_train(_corpus(2, 40), 7, SkipGramConfig(dim=5, epochs=1), vocab_hash="abc")
    back = EmbeddingMatrix.from_json(json.loads(json.dumps(emb.to_json())))
    assert back.matrix.tobytes() == emb.matrix.tobytes() and back.vocab_hash == "abc"
    emb.save(tmp_path / "emb")
    loaded = EmbeddingMatrix.load(tmp_path / "emb")
    assert loaded.matrix.tobytes() == emb.matrix.tobytes()
    assert loaded.config == emb.config


def test_embed_lookup():
    M = np.arange(12.0).reshape(4, 3)
    out = embed_lookup(M, [2, 0, 3])
    assert out.tolist() == [[6, 7, 8], [0, 0, 0], [9, 10, 11]]
    with pytest.raises(ValueError, match="outside"):
        embed_lookup(M, [4])

"""Backprop against central finite differences (step 1e-3, float64)."""

import numpy as np
import pytest

from helpers import check_grads
from elp.nn import autograd as ag
from elp.nn.autograd import Tensor
from elp.nn.layers import LSTMLayer, Params, attention_pool
from elp.nn.models import ConvBlock, ModelSpec, SequenceClassifier

SEEDS = range(10)
TOL = 1e-4


def _t(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _project(out: Tensor, rng) -> Tensor:
    # random linear read-out so every output element matters
    r = Tensor(rng.normal(size=out.shape))
    return ag.sum_all(ag.mul(out, r))


@pytest.mark.parametrize("seed", SEEDS)
def test_dense(seed):
    rng = np.random.default_rng(seed)
    x, w, b = _t(rng, 4, 5), _t(rng, 5, 3), _t(rng, 3)
    r = rng.normal(size=(4, 3))
    assert check_grads(lambda: ag.sum_all(ag.mul(ag.tanh(ag.add(ag.matmul(x, w), b)), Tensor(r))),
                       [x, w, b]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_conv1d(seed):
    rng = np.random.default_rng(seed)
    x, w, b = _t(rng, 2, 7, 3), _t(rng, 3, 3, 4), _t(rng, 4)
    r = rng.normal(size=(2, 7, 4))
    assert check_grads(lambda: ag.sum_all(ag.mul(ag.conv1d(x, w, b), Tensor(r))), [x, w, b]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("size,stride", [(3, 3), (2, 1)])
def test_maxpool_routing(seed, size, stride):
    rng = np.random.default_rng(seed)
    # well separated values keep the arg-max stable under the finite-difference step
    x = Tensor(rng.permutation(2 * 9 * 2).reshape(2, 9, 2) * 0.1, requires_grad=True)
    r = rng.normal(size=ag.maxpool1d(x, size, stride).shape)
    assert check_grads(lambda: ag.sum_all(ag.mul(ag.maxpool1d(x, size, stride), Tensor(r))), [x]) < TOL


def test_maxpool_ties_route_to_first():
    x = Tensor(np.array([[[1.0], [1.0], [0.0]]]), requires_grad=True)
    ag.sum_all(ag.maxpool1d(x, 3, 3)).backward()
    assert x.grad[0, :, 0].tolist() == [1.0, 0.0, 0.0]


@pytest.mark.parametrize("seed", SEEDS)
def test_lstm_cell(seed):
    rng = np.random.default_rng(seed)
    p = Params()
    layer = LSTMLayer(p, "l", 3, 4, rng)
    layer.b.data = layer.b.data + rng.normal(0, 0.3, size=layer.b.shape)
    x, h, c = _t(rng, 2, 3), _t(rng, 2, 4), _t(rng, 2, 4)
    r1, r2 = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))

    def f():
        h2, c2 = layer.cell(x, h, c)
        return ag.add(ag.sum_all(ag.mul(h2, Tensor(r1))), ag.sum_all(ag.mul(c2, Tensor(r2))))

    assert check_grads(f, [x, h, c, layer.wx, layer.wh, layer.b]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_lstm_sequence_with_mask(seed):
    rng = np.random.default_rng(seed)
    layer = LSTMLayer(Params(), "l", 3, 2, rng)
    xs = _t(rng, 2, 5, 3)
    mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=bool)
    r = rng.normal(size=(2, 5, 2))

    def f():
        seq, last = layer.run(xs, mask, reverse=seed % 2 == 1)
        return ag.add(ag.sum_all(ag.mul(seq, Tensor(r))), ag.sum_all(last))

    assert check_grads(f, [xs, layer.wx, layer.wh, layer.b]) < TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_attention_pool(seed):
    rng = np.random.default_rng(seed)
    feats, w, b, v = _t(rng, 2, 5, 4), _t(rng, 4, 3), _t(rng, 3), _t(rng, 3, 1)
    mask = np.array([[1, 1, 1, 1, 1], [1, 1, 0, 0, 0]], dtype=bool)
    r = rng.normal(size=(2, 4))

    def f():
        ctx, _ = attention_pool(feats, mask, w, b, v)
        return ag.sum_all(ag.mul(ctx, Tensor(r)))

    assert check_grads(f, [feats, w, b, v]) < TOL
    _, weights = attention_pool(feats, mask, w, b, v)
    assert np.allclose(weights.data.sum(axis=1), 1.0) and not weights.data[1, 2:].any()


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    logits = _t(rng, 6, 4)
    labels = rng.integers(0, 4, size=6)
    assert check_grads(lambda: ag.softmax_cross_entropy(logits, labels), [logits]) < TOL


def test_cross_entropy_rejects_bad_label():
    with pytest.raises(ValueError):
        ag.softmax_cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


@pytest.mark.parametrize("head", ["cnn", "rnn", "rnn_attention"])
@pytest.mark.parametrize("seed", [0, 1])
def test_whole_model_gradients(head, seed):
    spec = ModelSpec(head, 3, 6, 9, embed_dim=3, conv_blocks=(ConvBlock(4, 3, 3, 3), ConvBlock(3, 3, 2, 2)),
                     dense_units=4, hidden=2, layers=2, attn_dim=3)
    m = SequenceClassifier(spec, seed=seed)
    rng = np.random.default_rng(seed + 10)
    for name, t in m.params.items():
        if name.endswith(".b"):   # nonzero biases keep ReLU inputs away from the kink
            t.data = t.data + rng.normal(0, 0.3, size=t.shape)
    tokens = rng.integers(1, 6, size=(3, 9))
    tokens[0, 6:] = 0
    labels = np.array([0, 1, 2])
    params = [t for _, t in m.params.items()]
    loss = lambda: ag.add(ag.softmax_cross_entropy(m.forward(tokens), labels),  # noqa: E731
                          m.l2_penalty(0.01))
    # the composed network has ReLU and pooling switch points, so use a
    # smaller step than the per-operation checks above
    assert check_grads(loss, params, h=1e-6) < TOL

import io
import math

import mpmath
import numpy as np
import pytest

from echeat.nn import checkpoint
from echeat.nn.gradcheck import NonFiniteGradient, grad_check, grad_check_report
from echeat.nn.layers import (
    LSTM,
    RNN,
    AvgPool1D,
    Conv1D,
    Dense,
    DenseBlock,
    Dropout,
    Flatten,
    ReLU,
    Sequential,
    ShapeMismatch,
    ToSequence,
    sigmoid,
)
from echeat.nn.losses import cross_entropy, cross_entropy_grad, one_hot, softmax
from echeat.nn.optim import AdamState, adam_step


def _conv_loop(x, W, b, stride):
    # direct cross-correlation with right zero padding
    B, L, C = x.shape
    k, _, F = W.shape
    out = -(-L // stride)
    y = np.zeros((B, out, F))
    for n in range(B):
        for t in range(out):
            for j in range(k):
                pos = t * stride + j
                if pos < L:
                    y[n, t] += x[n, pos] @ W[j]
    return y + b


def test_conv_hand_case():
    conv = Conv1D(1, 1, kernel=2, stride=2)
    conv.params["W"][:] = 1.0
    y = conv.forward(np.array([1.0, 2, 3, 4]).reshape(1, 4, 1))
    assert y.ravel().tolist() == [3.0, 7.0]


@pytest.mark.parametrize("L, k, s, out", [(23, 2, 2, 12), (12, 1, 1, 12), (12, 2, 1, 12), (7, 3, 2, 4)])
def test_conv_matches_loop(L, k, s, out):
    rng = np.random.default_rng(0)
    conv = Conv1D(3, 4, kernel=k, stride=s, rng=rng)
    conv.params["b"][:] = rng.normal(size=4)
    x = rng.normal(size=(2, L, 3))
    y = conv.forward(x)
    assert y.shape == (2, out, 4)
    np.testing.assert_allclose(y, _conv_loop(x, conv.params["W"], conv.params["b"], s), atol=1e-12)


def test_conv_rejects_wrong_channels():
    with pytest.raises(ShapeMismatch):
        Conv1D(2, 4, 2).forward(np.zeros((1, 5, 3)))


def test_avgpool_examples():
    pool = AvgPool1D(2)
    assert pool.forward(np.array([2.0, 4, 6, 8]).reshape(1, 4, 1)).ravel().tolist() == [3, 7]
    assert pool.forward(np.array([1.0, 2, 3]).reshape(1, 3, 1)).ravel().tolist() == [1.5, 3]
    assert pool.forward(np.zeros((1, 12, 5))).shape == (1, 6, 5)


def test_lstm_zero_weights_give_zero():
    lstm = LSTM(3, 5, forget_bias=0.0)
    for p in lstm.params.values():
        p[:] = 0
    assert not lstm.forward(np.random.default_rng(0).normal(size=(2, 4, 3))).any()


def test_lstm_one_step_closed_form():
    lstm = LSTM(1, 1, forget_bias=0.0)
    wx = np.array([0.3, -0.2, 0.5, 0.7])
    b = np.array([0.1, 0.2, -0.3, 0.05])
    lstm.params["Wx"][:] = wx
    lstm.params["Wh"][:] = 0.9  # unused on the first step: h0 = 0
    lstm.params["b"][:] = b
    x = 0.8
    sig = lambda z: 1 / (1 + math.exp(-z))
    i, f, o = (sig(wx[k] * x + b[k]) for k in range(3))
    g = math.tanh(wx[3] * x + b[3])
    c = f * 0.0 + i * g
    h = o * math.tanh(c)
    assert lstm.forward(np.array([[[x]]]))[0, 0, 0] == pytest.approx(h, abs=1e-15)


def test_lstm_output_shapes():
    assert LSTM(352, 512).forward(np.zeros((1, 6, 352))).shape == (1, 6, 512)
    assert LSTM(1, 8, return_sequences=False).forward(np.zeros((3, 23, 1))).shape == (3, 8)
    assert RNN(1, 8).forward(np.zeros((3, 23, 1))).shape == (3, 8)


def test_lstm_forget_bias_default():
    lstm = LSTM(2, 3)
    assert lstm.params["b"].tolist() == [0] * 3 + [1] * 3 + [0] * 6


def test_sigmoid_stable():
    assert sigmoid(np.array([-800.0, 0.0, 800.0])).tolist() == [0.0, 0.5, 1.0]


def test_dropout_inference_identity_and_training_expectation():
    x = np.ones((200, 100))
    d = Dropout(0.8, rng=np.random.default_rng(0))
    assert d.forward(x, train=False) is x
    y = d.forward(x, train=True)
    assert abs(y.mean() - 1.0) < 0.02
    assert set(np.unique(y)) <= {0.0, 1.25}
    assert np.array_equal(d.backward(np.ones_like(x)), y)


def test_softmax_examples():
    assert softmax(np.array([0.0, 0.0])).tolist() == [0.5, 0.5]
    assert softmax(np.array([1000.0, 1000.0])).tolist() == [0.5, 0.5]
    mpmath.mp.dps = 50
    den = sum(mpmath.exp(v) for v in (1, 2, 3))
    want = [float(mpmath.exp(v) / den) for v in (1, 2, 3)]
    np.testing.assert_allclose(softmax(np.array([1.0, 2.0, 3.0])), want, rtol=1e-15)


def test_cross_entropy_examples():
    assert cross_entropy(np.zeros((1, 2)), one_hot([0], 2)) == pytest.approx(math.log(2), abs=1e-15)
    assert cross_entropy(np.array([[50.0, 0.0]]), one_hot([0], 2)) < 1e-20
    Y = np.array([[0.3, -1.2], [2.0, 0.5]])
    L = one_hot([1, 0], 2)
    assert cross_entropy(Y, L) == pytest.approx(cross_entropy(Y[:1], L[:1]) + cross_entropy(Y[1:], L[1:]))
    assert cross_entropy(Y, L) >= 0
    with pytest.raises(ShapeMismatch):
        cross_entropy(Y, one_hot([1], 2))


def test_cross_entropy_grad_is_softmax_minus_labels():
    Y = np.array([[0.3, -1.2]])
    L = one_hot([1], 2)
    np.testing.assert_allclose(cross_entropy_grad(Y, L), softmax(Y) - L)


def test_adam_zero_gradient_no_decay():
    p = [np.array([1.0, -2.0])]
    adam_step(p, [np.zeros(2)], AdamState.for_params(p, weight_decay=0.0))
    assert p[0].tolist() == [1.0, -2.0]


def test_adam_single_step_oracle():
    lr, eps = 1e-3, 1e-8
    p = [np.array([1.0])]
    state = AdamState.for_params(p, learning_rate=lr, eps=eps, weight_decay=0.0)
    adam_step(p, [np.array([1.0])], state)
    # bias-corrected m = v = 1, so the step is lr / (1 + eps)
    assert p[0][0] == pytest.approx(1.0 - lr / (1.0 + eps), abs=1e-16)
    assert state.step == 1


def test_adam_weight_decay_shrinks():
    p = [np.array([1.0])]
    adam_step(p, [np.zeros(1)], AdamState.for_params(p, learning_rate=1e-3, weight_decay=1e-4))
    assert p[0][0] < 1.0


def test_adam_shape_mismatch():
    p = [np.zeros(2)]
    with pytest.raises(ShapeMismatch):
        adam_step(p, [np.zeros(3)], AdamState.for_params(p))


def _batch(n=4, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=(n, 23)).astype(np.float64), rng.integers(0, 2, size=n)


def _nets():
    r = lambda: np.random.default_rng(1)
    yield "Dense", Sequential([Dense(23, 2, rng=r())])
    yield "Conv1D", Sequential([ToSequence(), Conv1D(1, 4, 2, 2, rng=r()), Flatten(), Dense(48, 2, rng=r())])
    yield "LSTM", Sequential([ToSequence(), LSTM(1, 6, return_sequences=False, rng=r()), Dense(6, 2, rng=r())])
    yield "RNN", Sequential([ToSequence(), RNN(1, 6, rng=r()), Dense(6, 2, rng=r())])
    yield "AvgPool", Sequential(
        [ToSequence(), Conv1D(1, 3, 2, 1, rng=r()), AvgPool1D(2), Flatten(), Dense(36, 2, rng=r())]
    )
    inner = [
        Sequential([LSTM(2 + 3 * j, 3, rng=r()), Conv1D(3, 3, 2, 1, rng=r()), ReLU(), Dropout(0.8)])
        for j in range(2)
    ]
    yield "DenseBlock", Sequential(
        [ToSequence(), Conv1D(1, 2, 2, 2, rng=r()), DenseBlock(inner, 2, 3), Flatten(), Dense(96, 2, rng=r())]
    )


_NAMES = [n for n, _ in _nets()]


@pytest.mark.parametrize("name, net", list(_nets()), ids=_NAMES)
def test_layer_gradients(name, net):
    x, y = _batch()
    report = grad_check_report(net, x, y, per_kind=200, check_input=True, method="complex")
    assert report.checked > 0
    assert report.max_error < 1e-6, report.per_kind


@pytest.mark.parametrize("name", ["Dense", "Conv1D", "AvgPool"])
def test_central_differences_on_feedforward_layers(name):
    net = dict(_nets())[name]
    x, y = _batch()
    report = grad_check_report(net, x, y, epsilon=1e-6, per_kind=200, check_input=True)
    assert report.max_error < 1e-6, report.per_kind


def test_central_differences_hit_a_noise_floor_on_recurrences():
    # tiny gradients deep in a recurrence are below what central differences resolve;
    # complex step shows the analytic values are right
    net = dict(_nets())["LSTM"]
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(4, 8)), rng.integers(0, 2, 4)
    central = grad_check_report(net, x, y, epsilon=1e-6)
    complex_ = grad_check_report(net, x, y, method="complex")
    assert complex_.max_error < 1e-10
    assert central.max_error < 1e-3


def test_corrupted_conv_backward_is_caught(monkeypatch):
    original = Conv1D.backward

    def off_by_one(self, dout):
        dx = original(self, dout)
        # credit each tap's weight gradient to its neighbour
        self.grads["W"] = np.roll(self.grads["W"], 1, axis=0)
        return dx

    monkeypatch.setattr(Conv1D, "backward", off_by_one)
    net = list(_nets())[1][1]
    x, y = _batch()
    assert grad_check(net, x, y) > 1e-2


def test_non_finite_gradient_raises():
    net = Sequential([Dense(23, 2)])
    net.layers[0].params["W"][0, 0] = np.nan
    x, y = _batch()
    with pytest.raises(NonFiniteGradient):
        grad_check(net, x, y)


def test_grad_check_validates_arguments():
    x, y = _batch()
    with pytest.raises(ValueError):
        grad_check(Sequential([Dense(23, 2)]), x, y, epsilon=1e-2)
    with pytest.raises(ValueError):
        grad_check(Sequential([Dense(23, 2)]), x, y, method="forward")


def test_checkpoint_roundtrip():
    tensors = [("Dense.W", np.arange(6, dtype=np.float32).reshape(2, 3)), ("Dense.b", np.ones(3, np.float32))]
    data = checkpoint.dumps("dnn", {"n_classes": 2}, tensors)
    assert data[:4] == b"ECHK"
    arch, config, back = checkpoint.loads(data)
    assert arch == "dnn" and config == {"n_classes": 2}
    assert [(t, a.tolist()) for t, a in back] == [(t, a.tolist()) for t, a in tensors]
    buf = io.BytesIO()
    checkpoint.save(buf, "dnn", {}, tensors)
    buf.seek(0)
    assert checkpoint.load(buf)[0] == "dnn"


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: b"XXXX" + d[4:], "magic"),
        (lambda d: d[:4] + b"\x09\x00" + d[6:], "version"),
        (lambda d: d[:-3], "truncated"),
        (lambda d: d + b"\x00", "trailing"),
    ],
)
def test_checkpoint_rejects_damage(mutate, message):
    data = checkpoint.dumps("dnn", {}, [("Dense.b", np.ones(3, np.float32))])
    with pytest.raises(checkpoint.CheckpointError, match=message):
        checkpoint.loads(mutate(data))

"""Layers with hand-written backward passes.

Activations are batch-first: sequences are ``(batch, length, channels)``.
Every layer caches what its backward pass needs during ``forward`` and
writes parameter gradients into ``self.grads`` during ``backward``, which
returns the gradient with respect to the layer input.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np


class ShapeMismatch(ValueError):
    pass


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Layer:
    kind = "Layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sublayers(self) -> list["Layer"]:
        return []

    def walk(self) -> Iterator["Layer"]:
        yield self
        for sub in self.sublayers():
            yield from sub.walk()

    def __repr__(self):
        shapes = ", ".join(f"{k}={v.shape}" for k, v in self.params.items())
        return f"{type(self).__name__}({shapes})"


class Conv1D(Layer):
    """Strided 1-D cross-correlation with right-side "same" zero padding.

    Output length is ``ceil(length / stride)``.
    """

    kind = "Conv1D"

    def __init__(self, in_channels, filters, kernel, stride=1, rng=None, dtype=np.float64):
        super().__init__()
        if min(in_channels, filters, kernel, stride) < 1:
            raise ValueError("Conv1D dimensions and stride must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.filters = in_channels, filters
        self.kernel, self.stride = kernel, stride
        fan_in = kernel * in_channels
        self.params["W"] = _uniform(rng, (kernel, in_channels, filters), fan_in, dtype)
        self.params["b"] = np.zeros(filters, dtype=dtype)

    def out_length(self, length: int) -> int:
        return -(-length // self.stride)

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[2] != self.in_channels:
            raise ShapeMismatch(f"Conv1D expects (B, L, {self.in_channels}), got {x.shape}")
        B, L, C = x.shape
        k, s = self.kernel, self.stride
        out = self.out_length(L)
        pad = max((out - 1) * s + k - L, 0)
        xp = np.pad(x, ((0, 0), (0, pad), (0, 0))) if pad else x
        span = s * (out - 1) + 1
        cols = np.stack([xp[:, t : t + span : s, :] for t in range(k)], axis=2)
        cols = cols.reshape(B * out, k * C)
        y = cols @ self.params["W"].reshape(k * C, self.filters) + self.params["b"]
        self._cache = (cols, x.shape, xp.shape[1], out)
        return y.reshape(B, out, self.filters)

    def backward(self, dout):
        cols, (B, L, C), Lp, out = self._cache
        k, s, F = self.kernel, self.stride, self.filters
        d2 = dout.reshape(B * out, F)
        W = self.params["W"].reshape(k * C, F)
        self.grads["W"] = (cols.T @ d2).reshape(k, C, F)
        self.grads["b"] = d2.sum(axis=0)
        dcols = (d2 @ W.T).reshape(B, out, k, C)
        dxp = np.zeros((B, Lp, C), dtype=dout.dtype)
        span = s * (out - 1) + 1
        for t in range(k):
            dxp[:, t : t + span : s, :] += dcols[:, :, t, :]
        return dxp[:, :L, :]


class AvgPool1D(Layer):
    """Non-overlapping mean pooling; a ragged tail is averaged over its true width."""

    kind = "AvgPool"

    def __init__(self, stride=2):
        super().__init__()
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.stride = stride

    def _counts(self, L):
        out = -(-L // self.stride)
        counts = np.full(out, self.stride, dtype=np.float64)
        counts[-1] = L - (out - 1) * self.stride
        return out, counts

    def forward(self, x, train=False):
        B, L, C = x.shape
        out, counts = self._counts(L)
        pad = out * self.stride - L
        xp = np.pad(x, ((0, 0), (0, pad), (0, 0))) if pad else x
        self._cache = (L, counts)
        sums = xp.reshape(B, out, self.stride, C).sum(axis=2)
        return sums / counts[None, :, None].astype(x.dtype)

    def backward(self, dout):
        L, counts = self._cache
        d = dout / counts[None, :, None].astype(dout.dtype)
        return np.repeat(d, self.stride, axis=1)[:, :L, :]


class LSTM(Layer):
    """Single-layer LSTM over a whole sequence, zero initial state.

    Gate order in the packed weights is (input, forget, output, candidate).
    With ``return_sequences`` the hidden state of every step is emitted,
    otherwise only the last one.
    """

    kind = "LSTM"

    def __init__(
        self, input_size, hidden, return_sequences=True, rng=None, dtype=np.float64, forget_bias=1.0
    ):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_size, self.hidden = input_size, hidden
        self.return_sequences = return_sequences
        fan_in = input_size + hidden
        self.params["Wx"] = _uniform(rng, (input_size, 4 * hidden), fan_in, dtype)
        self.params["Wh"] = _uniform(rng, (hidden, 4 * hidden), fan_in, dtype)
        b = np.zeros(4 * hidden, dtype=dtype)
        b[hidden : 2 * hidden] = forget_bias
        self.params["b"] = b

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeMismatch(f"LSTM expects (B, T, {self.input_size}), got {x.shape}")
        B, T, D = x.shape
        H = self.hidden
        Wh = self.params["Wh"]
        xw = (x.reshape(B * T, D) @ self.params["Wx"] + self.params["b"]).reshape(B, T, 4 * H)
        hs = np.zeros((B, T + 1, H), dtype=x.dtype)
        cs = np.zeros((B, T + 1, H), dtype=x.dtype)
        gates = np.empty((B, T, 4 * H), dtype=x.dtype)
        tcs = np.empty((B, T, H), dtype=x.dtype)
        for t in range(T):
            a = xw[:, t] + hs[:, t] @ Wh
            g = gates[:, t]
            g[:, : 3 * H] = sigmoid(a[:, : 3 * H])
            g[:, 3 * H :] = np.tanh(a[:, 3 * H :])
            c = g[:, H : 2 * H] * cs[:, t] + g[:, :H] * g[:, 3 * H :]
            cs[:, t + 1] = c
            tcs[:, t] = np.tanh(c)
            hs[:, t + 1] = g[:, 2 * H : 3 * H] * tcs[:, t]
        self._cache = (x, hs, cs, gates, tcs)
        return hs[:, 1:] if self.return_sequences else hs[:, -1]

    def backward(self, dout):
        x, hs, cs, gates, tcs = self._cache
        B, T, D = x.shape
        H = self.hidden
        Wh = self.params["Wh"]
        if not self.return_sequences:
            dH = np.zeros((B, T, H), dtype=dout.dtype)
            dH[:, -1] = dout
        else:
            dH = dout
        da = np.empty((B, T, 4 * H), dtype=dout.dtype)
        dh_next = np.zeros((B, H), dtype=dout.dtype)
        dc_next = np.zeros((B, H), dtype=dout.dtype)
        dWh = np.zeros_like(Wh)
        for t in reversed(range(T)):
            g = gates[:, t]
            i, f, o, cand = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H :]
            tc = tcs[:, t]
            dh = dH[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            d = da[:, t]
            d[:, :H] = dc * cand * i * (1.0 - i)
            d[:, H : 2 * H] = dc * cs[:, t] * f * (1.0 - f)
            d[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
            d[:, 3 * H :] = dc * i * (1.0 - cand * cand)
            dc_next = dc * f
            dWh += hs[:, t].T @ d
            dh_next = d @ Wh.T
        da2 = da.reshape(B * T, 4 * H)
        self.grads["Wx"] = x.reshape(B * T, D).T @ da2
        self.grads["Wh"] = dWh
        self.grads["b"] = da2.sum(axis=0)
        return (da2 @ self.params["Wx"].T).reshape(B, T, D)


class RNN(Layer):
    """Vanilla tanh recurrence, zero initial state."""

    kind = "RNN"

    def __init__(self, input_size, hidden, return_sequences=False, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_size, self.hidden = input_size, hidden
        self.return_sequences = return_sequences
        fan_in = input_size + hidden
        self.params["Wx"] = _uniform(rng, (input_size, hidden), fan_in, dtype)
        self.params["Wh"] = _uniform(rng, (hidden, hidden), fan_in, dtype)
        self.params["b"] = np.zeros(hidden, dtype=dtype)

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeMismatch(f"RNN expects (B, T, {self.input_size}), got {x.shape}")
        B, T, D = x.shape
        xw = (x.reshape(B * T, D) @ self.params["Wx"] + self.params["b"]).reshape(B, T, self.hidden)
        hs = np.zeros((B, T + 1, self.hidden), dtype=x.dtype)
        for t in range(T):
            hs[:, t + 1] = np.tanh(xw[:, t] + hs[:, t] @ self.params["Wh"])
        self._cache = (x, hs)
        return hs[:, 1:] if self.return_sequences else hs[:, -1]

    def backward(self, dout):
        x, hs = self._cache
        B, T, D = x.shape
        H = self.hidden
        if self.return_sequences:
            dH = dout
        else:
            dH = np.zeros((B, T, H), dtype=dout.dtype)
            dH[:, -1] = dout
        Wh = self.params["Wh"]
        da = np.empty((B, T, H), dtype=dout.dtype)
        dh_next = np.zeros((B, H), dtype=dout.dtype)
        dWh = np.zeros_like(Wh)
        for t in reversed(range(T)):
            h = hs[:, t + 1]
            d = (dH[:, t] + dh_next) * (1.0 - h * h)
            da[:, t] = d
            dWh += hs[:, t].T @ d
            dh_next = d @ Wh.T
        da2 = da.reshape(B * T, H)
        self.grads["Wx"] = x.reshape(B * T, D).T @ da2
        self.grads["Wh"] = dWh
        self.grads["b"] = da2.sum(axis=0)
        return (da2 @ self.params["Wx"].T).reshape(B, T, D)


class Dense(Layer):
    kind = "Dense"

    def __init__(self, in_features, units, rng=None, dtype=np.float64):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features, self.units = in_features, units
        self.params["W"] = _uniform(rng, (in_features, units), in_features, dtype)
        self.params["b"] = np.zeros(units, dtype=dtype)

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(f"Dense expects (B, {self.in_features}), got {x.shape}")
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x, train=False):
        # .real keeps the layer usable under complex-step differentiation
        self._mask = x.real > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Dropout(Layer):
    """Inverted dropout: scaled by 1/keep_prob in training, identity at inference."""

    kind = "Dropout"

    def __init__(self, keep_prob=0.8, rng=None):
        super().__init__()
        if not 0 < keep_prob <= 1:
            raise ValueError("keep_prob must be in (0, 1]")
        self.keep_prob = keep_prob
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._mask = None

    def forward(self, x, train=False):
        if not train or self.keep_prob == 1.0:
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) < self.keep_prob).astype(x.dtype) / x.dtype.type(
            self.keep_prob
        )
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


class Flatten(Layer):
    kind = "Flatten"

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class ToSequence(Layer):
    """(B, N) feature rows -> (B, N, 1) sequences, one bit per step."""

    kind = "ToSequence"

    def forward(self, x, train=False):
        return x[:, :, None]

    def backward(self, dout):
        return dout[:, :, 0]


class Sequential(Layer):
    kind = "Sequential"

    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def sublayers(self):
        return self.layers

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


class DenseBlock(Layer):
    """Densely connected block: each inner layer reads the concatenation of the
    block input and all earlier inner outputs, and its own output is appended.

    Output channels are ``in_channels + len(inner) * growth``.
    """

    kind = "DenseBlock"

    def __init__(self, inner, in_channels, growth):
        super().__init__()
        self.inner = list(inner)
        self.in_channels = in_channels
        self.growth = growth

    @property
    def out_channels(self) -> int:
        return self.in_channels + len(self.inner) * self.growth

    def input_channels(self, j: int) -> int:
        """Channels fed to inner layer ``j`` (0-based)."""
        return self.in_channels + j * self.growth

    def sublayers(self):
        return self.inner

    def forward(self, x, train=False):
        feats = x
        for layer in self.inner:
            feats = np.concatenate([feats, layer.forward(feats, train)], axis=2)
        return feats

    def backward(self, dout):
        d = dout.copy()
        for j in reversed(range(len(self.inner))):
            c0 = self.input_channels(j)
            d_prev = self.inner[j].backward(d[:, :, c0 : c0 + self.growth])
            d = d[:, :, :c0] + d_prev
        return d

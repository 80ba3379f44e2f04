"""DenseLSTM behaviour detector and the DNN / LSTM / RNN baselines.

DenseLSTM layer chain for a 23-bit input and growth rate 32::

    input      23 x 1
    conv1      12 x 64     kernel 2, stride 2
    block1     12 x 192    4 x [LSTM(32) -> conv k2 -> ReLU -> dropout], densely concatenated
    transition  6 x 96     1x1 conv halving channels, avg-pool stride 2
    block2      6 x 352    8 x [same inner layer]
    lstm        6 x 512
    flatten    3072
    logits     C
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encoding import N_FEATURES, BehaviorLabel
from .nn import checkpoint
from .nn.layers import (
    LSTM,
    RNN,
    AvgPool1D,
    Conv1D,
    Dense,
    DenseBlock,
    Dropout,
    Flatten,
    Layer,
    ReLU,
    Sequential,
    ShapeMismatch,
    ToSequence,
)
from .nn.losses import softmax

ARCHITECTURES = ("denselstm", "dnn", "lstm", "rnn")
DISPLAY_NAMES = {"dnn": "DNN", "lstm": "LSTM", "rnn": "RNN", "denselstm": "DenseLSTM"}


class BadConfig(ValueError):
    pass


class Network(Sequential):
    """A named layer chain plus the metadata needed to rebuild it."""

    def __init__(self, arch: str, names: Sequence[str], layers: Sequence[Layer], config: dict, dtype):
        super().__init__(layers)
        self.arch = arch
        self.names = list(names)
        self.config = dict(config)
        self.n_classes = int(config["n_classes"])
        self.dtype = np.dtype(dtype)

    def forward(self, x, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != N_FEATURES:
            raise ShapeMismatch(f"expected (batch, {N_FEATURES}) input, got {x.shape}")
        return super().forward(x, train)

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{layer.kind}.{name}", p) for layer in self.walk() for name, p in layer.params.items()]

    def gradients(self) -> list[np.ndarray]:
        return [layer.grads[name] for layer in self.walk() for name in layer.params]

    def n_parameters(self) -> int:
        return sum(p.size for _, p in self.parameters())

    def shape_chain(self) -> list[tuple[str, tuple[int, ...]]]:
        """Per-sample output shape of every top-level stage, from a probe forward pass."""
        x = np.zeros((1, N_FEATURES), dtype=self.dtype)
        chain = [("input", (N_FEATURES,))]
        for name, layer in zip(self.names, self.layers):
            x = layer.forward(x, train=False)
            chain.append((name, x.shape[1:]))
        return chain

    def stage(self, name: str) -> Layer:
        return self.layers[self.names.index(name)]

    def to_bytes(self) -> bytes:
        return checkpoint.dumps(self.arch, self.config, self.parameters())

    @classmethod
    def from_bytes(cls, data: bytes, dtype=np.float32) -> "Network":
        arch, config, tensors = checkpoint.loads(data)
        net = build(arch, dtype=dtype, **config)
        params = net.parameters()
        if len(params) != len(tensors):
            raise checkpoint.CheckpointError(
                f"{arch} expects {len(params)} tensors, checkpoint has {len(tensors)}"
            )
        for (tag, p), (ctag, arr) in zip(params, tensors):
            if tag != ctag or p.shape != arr.shape:
                raise checkpoint.CheckpointError(f"tensor {ctag}{arr.shape} does not fit {tag}{p.shape}")
            p[...] = arr
        return net

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, dtype=np.float32) -> "Network":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), dtype=dtype)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _inner_layer(in_channels, growth, keep_prob, rng, drop_rng, dtype):
    return Sequential(
        [
            LSTM(in_channels, growth, return_sequences=True, rng=rng, dtype=dtype),
            Conv1D(growth, growth, kernel=2, stride=1, rng=rng, dtype=dtype),
            ReLU(),
            Dropout(keep_prob, rng=drop_rng),
        ]
    )


def _dense_block(n_layers, in_channels, growth, keep_prob, rng, drop_rng, dtype):
    block = DenseBlock(
        [
            _inner_layer(in_channels + j * growth, growth, keep_prob, rng, drop_rng, dtype)
            for j in range(n_layers)
        ],
        in_channels,
        growth,
    )
    for j, inner in enumerate(block.inner):
        if inner.layers[0].input_size != block.input_channels(j):
            raise BadConfig(f"inner layer {j} is wired to the wrong channel count")
    return block


def build_denselstm(
    n_classes: int = 2,
    growth: int = 32,
    keep_prob: float = 0.8,
    seed: int = 0,
    dtype=np.float64,
    conv_filters: int = 64,
    block_layers: Sequence[int] = (4, 8),
    compression: float = 0.5,
    final_hidden: int = 512,
) -> Network:
    if n_classes < 2:
        raise BadConfig("need at least two classes")
    if growth < 1 or conv_filters < 1 or final_hidden < 1:
        raise BadConfig("layer widths must be positive")
    if len(block_layers) != 2 or min(block_layers) < 1:
        raise BadConfig("need two dense blocks with at least one layer each")
    if not 0 < compression <= 1:
        raise BadConfig("compression must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    drop_rng = np.random.default_rng([seed, 1])

    conv1 = Conv1D(1, conv_filters, kernel=2, stride=2, rng=rng, dtype=dtype)
    block1 = _dense_block(block_layers[0], conv_filters, growth, keep_prob, rng, drop_rng, dtype)
    squeezed = max(1, int(block1.out_channels * compression))
    transition = Sequential(
        [Conv1D(block1.out_channels, squeezed, kernel=1, stride=1, rng=rng, dtype=dtype), AvgPool1D(2)]
    )
    block2 = _dense_block(block_layers[1], squeezed, growth, keep_prob, rng, drop_rng, dtype)
    lstm = LSTM(block2.out_channels, final_hidden, return_sequences=True, rng=rng, dtype=dtype)
    seq_len = _ceil_div(_ceil_div(N_FEATURES, conv1.stride), 2)
    head = Dense(seq_len * final_hidden, n_classes, rng=rng, dtype=dtype)

    config = dict(
        n_classes=n_classes,
        growth=growth,
        keep_prob=keep_prob,
        seed=seed,
        conv_filters=conv_filters,
        block_layers=list(block_layers),
        compression=compression,
        final_hidden=final_hidden,
    )
    return Network(
        "denselstm",
        ["to_sequence", "conv1", "block1", "transition", "block2", "lstm", "flatten", "logits"],
        [ToSequence(), conv1, block1, transition, block2, lstm, Flatten(), head],
        config,
        dtype,
    )


def build_baseline(
    kind: str, n_classes: int = 2, seed: int = 0, dtype=np.float64, hidden: int = 128,
    widths: Sequence[int] = (256, 128, 64),
) -> Network:
    kind = kind.lower()
    if n_classes < 2:
        raise BadConfig("need at least two classes")
    rng = np.random.default_rng(seed)
    config = dict(n_classes=n_classes, seed=seed)
    if kind == "dnn":
        names, layers, width = [], [], N_FEATURES
        for i, w in enumerate(widths):
            names += [f"dense{i + 1}", f"relu{i + 1}"]
            layers += [Dense(width, w, rng=rng, dtype=dtype), ReLU()]
            width = w
        names.append("logits")
        layers.append(Dense(width, n_classes, rng=rng, dtype=dtype))
        config["widths"] = list(widths)
    elif kind in ("lstm", "rnn"):
        cell = LSTM if kind == "lstm" else RNN
        names = ["to_sequence", kind, "logits"]
        layers = [
            ToSequence(),
            cell(1, hidden, return_sequences=False, rng=rng, dtype=dtype),
            Dense(hidden, n_classes, rng=rng, dtype=dtype),
        ]
        config["hidden"] = hidden
    else:
        raise BadConfig(f"unknown baseline {kind!r}; expected dnn, lstm or rnn")
    return Network(kind, names, layers, config, dtype)


def build(arch: str, dtype=np.float64, **kwargs) -> Network:
    arch = arch.lower()
    if arch == "denselstm":
        return build_denselstm(dtype=dtype, **kwargs)
    if arch in ("dnn", "lstm", "rnn"):
        return build_baseline(arch, dtype=dtype, **kwargs)
    raise BadConfig(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")


def forward(model: Network, x, mode: str = "infer") -> np.ndarray:
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    return model.forward(x, train=(mode == "train"))


def predict_proba(model: Network, X, batch_size: int = 256) -> np.ndarray:
    X = np.asarray(X)
    out = np.empty((len(X), model.n_classes), dtype=np.float64)
    for start in range(0, len(X), batch_size):
        logits = model.forward(X[start : start + batch_size], train=False)
        out[start : start + batch_size] = softmax(logits.astype(np.float64))
    return out


def classify_logits(logits) -> tuple[BehaviorLabel, float]:
    p = softmax(np.asarray(logits, dtype=np.float64).reshape(-1))
    # argmax returns the first maximum, so ties go to the lower class index
    k = int(np.argmax(p))
    return BehaviorLabel(k), float(p[k])


def classify(model: Network, x) -> tuple[BehaviorLabel, float]:
    x = np.asarray(x).reshape(1, -1)
    return classify_logits(model.forward(x, train=False)[0])

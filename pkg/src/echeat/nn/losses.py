"""Softmax and summed softmax cross-entropy."""

from __future__ import annotations

import numpy as np

from .layers import ShapeMismatch


def softmax(Y: np.ndarray) -> np.ndarray:
    Y = np.asarray(Y)
    z = Y - Y.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(Y: np.ndarray) -> np.ndarray:
    z = Y - Y.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def one_hot(labels, n_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    L = np.zeros((len(labels), n_classes), dtype=dtype)
    L[np.arange(len(labels)), labels] = 1
    return L


def cross_entropy(Y: np.ndarray, L: np.ndarray) -> float:
    """Summed loss ``-sum_i sum_j L_ij log softmax(Y)_ij`` over the batch."""
    if Y.shape != L.shape:
        raise ShapeMismatch(f"logits {Y.shape} and labels {L.shape} differ")
    return float(-(L * log_softmax(Y)).sum())


def cross_entropy_grad(Y: np.ndarray, L: np.ndarray) -> np.ndarray:
    if Y.shape != L.shape:
        raise ShapeMismatch(f"logits {Y.shape} and labels {L.shape} differ")
    return softmax(Y) - L

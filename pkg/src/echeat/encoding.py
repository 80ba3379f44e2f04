"""One-hot behaviour features and normal/abnormal labelling.

A record becomes a 23-bit vector: 20 correctness bits followed by a one-hot
speed category in (Fast, Normal, Slow) order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import IO, Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .records import QUESTION_COUNT, Difficulty, ExamRecord, ExamSpec

N_FEATURES = QUESTION_COUNT + 3
# ceil(0.9 * 20)
ABNORMAL_MIN_CORRECT = math.ceil(0.9 * QUESTION_COUNT)


class SpeedCategory(IntEnum):
    FAST = 0
    NORMAL = 1
    SLOW = 2


class BehaviorLabel(IntEnum):
    NORMAL = 0
    ABNORMAL = 1


@dataclass(frozen=True)
class SpeedModel:
    nominal_seconds: dict = field(
        default_factory=lambda: {
            Difficulty.EASY: 15.0,
            Difficulty.MODERATE: 35.0,
            Difficulty.HIGH: 90.0,
        }
    )
    fast_factor: float = 0.5
    slow_factor: float = 2.0

    def __post_init__(self):
        if not 0 < self.fast_factor < 1 < self.slow_factor:
            raise ValueError("need 0 < fast_factor < 1 < slow_factor")
        nominal = {Difficulty(k): float(v) for k, v in self.nominal_seconds.items()}
        if set(nominal) != set(Difficulty) or any(v <= 0 for v in nominal.values()):
            raise ValueError("nominal_seconds needs a positive value for every difficulty")
        object.__setattr__(self, "nominal_seconds", nominal)

    def to_dict(self) -> dict:
        return {
            "nominal_seconds": {k.value: v for k, v in self.nominal_seconds.items()},
            "fast_factor": self.fast_factor,
            "slow_factor": self.slow_factor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpeedModel":
        kwargs = dict(d)
        if "nominal_seconds" in kwargs:
            kwargs["nominal_seconds"] = dict(kwargs["nominal_seconds"])
        return cls(**kwargs)


def expected_duration(spec: ExamSpec, model: SpeedModel | None = None) -> float:
    """Expected completion time in seconds: the sum of per-question nominals."""
    model = model or SpeedModel()
    return sum(model.nominal_seconds[d] for d in spec.difficulties)


def speed_of(seconds: float, expected: float, model: SpeedModel) -> SpeedCategory:
    # both boundaries are exclusive
    if seconds < model.fast_factor * expected:
        return SpeedCategory.FAST
    if seconds > model.slow_factor * expected:
        return SpeedCategory.SLOW
    return SpeedCategory.NORMAL


def categorize_speed(
    record: ExamRecord, spec: ExamSpec, model: SpeedModel | None = None
) -> SpeedCategory:
    model = model or SpeedModel()
    return speed_of(record.duration_minutes * 60, expected_duration(spec, model), model)


def label_from(correct_count: int, speed: SpeedCategory) -> BehaviorLabel:
    if correct_count >= ABNORMAL_MIN_CORRECT and speed != SpeedCategory.NORMAL:
        return BehaviorLabel.ABNORMAL
    return BehaviorLabel.NORMAL


def label(record: ExamRecord, spec: ExamSpec, model: SpeedModel | None = None) -> BehaviorLabel:
    return label_from(record.correct_count, categorize_speed(record, spec, model))


def label_features(bits: Sequence[int]) -> BehaviorLabel:
    """Label an already-encoded vector; agrees with :func:`label` on encoded records."""
    bits = np.asarray(bits)
    return label_from(int(bits[:QUESTION_COUNT].sum()), SpeedCategory(int(np.argmax(bits[QUESTION_COUNT:]))))


def encode(record: ExamRecord, spec: ExamSpec, model: SpeedModel | None = None) -> np.ndarray:
    bits = np.zeros(N_FEATURES, dtype=np.int8)
    bits[:QUESTION_COUNT] = record.correctness
    bits[QUESTION_COUNT + categorize_speed(record, spec, model)] = 1
    return bits


def encode_dataset(
    records: Sequence[ExamRecord], spec: ExamSpec, model: SpeedModel | None = None
) -> tuple[np.ndarray, np.ndarray]:
    X = np.zeros((len(records), N_FEATURES), dtype=np.int8)
    y = np.zeros(len(records), dtype=np.int64)
    for i, r in enumerate(records):
        X[i] = encode(r, spec, model)
        y[i] = label(r, spec, model)
    return X, y


def check_features(X) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise ValueError(f"expected an (n, {N_FEATURES}) feature matrix, got shape {X.shape}")
    if not np.isin(X, (0, 1)).all():
        raise ValueError("feature vectors must be binary")
    if len(X) and not (X[:, QUESTION_COUNT:].sum(axis=1) == 1).all():
        raise ValueError("exactly one speed bit must be set per row")
    return X


def write_features(fh: IO[str], X, y) -> None:
    """One line per row: 23 space-separated bits, a tab, then the 0/1 label."""
    for bits, lab in zip(np.asarray(X), np.asarray(y)):
        fh.write(" ".join(str(int(b)) for b in bits) + "\t" + str(int(lab)) + "\n")


def read_features(fh: IO[str]) -> tuple[np.ndarray, np.ndarray]:
    rows, labels = [], []
    for lineno, line in enumerate(fh, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        try:
            bits, lab = line.split("\t")
            rows.append([int(b) for b in bits.split(" ")])
            labels.append(int(lab))
        except ValueError:
            raise ValueError(f"line {lineno}: malformed feature row {line!r}") from None
    X = np.array(rows, dtype=np.int8).reshape(-1, N_FEATURES)
    check_features(X)
    return X, np.array(labels, dtype=np.int64)


class FeatureEncoder(TransformerMixin, BaseEstimator):
    """Turn exam records into the 23-bit behaviour features.

    Stateless; ``fit`` only validates its parameters so the encoder can sit
    at the front of a :class:`sklearn.pipeline.Pipeline`.
    """

    def __init__(self, spec: ExamSpec | None = None, speed_model: SpeedModel | None = None):
        self.spec = spec
        self.speed_model = speed_model

    def fit(self, records: Iterable[ExamRecord], y=None):
        self.spec_ = self.spec or ExamSpec.default()
        self.speed_model_ = self.speed_model or SpeedModel()
        self.n_features_out_ = N_FEATURES
        return self

    def transform(self, records: Iterable[ExamRecord]) -> np.ndarray:
        check_is_fitted(self, "spec_")
        X, _ = encode_dataset(list(records), self.spec_, self.speed_model_)
        return X.astype(np.float64)

    def labels(self, records: Iterable[ExamRecord]) -> np.ndarray:
        check_is_fitted(self, "spec_")
        return np.array([label(r, self.spec_, self.speed_model_) for r in records], dtype=np.int64)

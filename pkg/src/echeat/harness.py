"""Training and benchmarking protocol: split, train, evaluate, compare."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from sklearn.metrics import auc as trapezoid_auc
from sklearn.metrics import roc_curve

from .encoding import BehaviorLabel, SpeedModel, encode_dataset
from .models import ARCHITECTURES, DISPLAY_NAMES, Network, build, predict_proba
from .nn.losses import cross_entropy, cross_entropy_grad, one_hot
from .nn.optim import AdamState, adam_step
from .records import ExamSpec
from .synth import CohortConfig, augment, generate

log = logging.getLogger(__name__)


class EmptyDataset(ValueError):
    pass


class NonFiniteLoss(ArithmeticError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged: non-finite loss in epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 32
    epochs: int = 250
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    split_ratio: float = 0.8
    seed: int = 0
    augment_count: int = 60
    loss_mean: bool = True

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must lie strictly between 0 and 1")
        if self.batch_size < 1 or self.epochs < 0 or self.augment_count < 0:
            raise ValueError("batch_size must be positive; epochs and augment_count non-negative")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        return cls(**d)


def split_indices(y, ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified, seeded partition with ``floor(n * ratio)`` training rows."""
    y = np.asarray(y)
    n = len(y)
    if n == 0:
        raise EmptyDataset("cannot split an empty dataset")
    classes = np.unique(y)
    if len(classes) < 2:
        warnings.warn("single-class dataset: both splits will hold one class", stacklevel=2)
    n_train = int(math.floor(n * ratio + 1e-9))
    members = [np.flatnonzero(y == c) for c in classes]
    exact = np.array([len(m) * n_train / n for m in members])
    quota = np.floor(exact).astype(int)
    # largest remainders take the leftover slots
    for k in np.argsort(-(exact - quota), kind="stable")[: n_train - quota.sum()]:
        quota[k] += 1
    rng = np.random.default_rng(seed)
    train, val = [], []
    for m, q in zip(members, quota):
        perm = rng.permutation(m)
        train.append(perm[:q])
        val.append(perm[q:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def split(X, y, ratio: float = 0.8, seed: int = 0):
    X, y = np.asarray(X), np.asarray(y)
    tr, va = split_indices(y, ratio, seed)
    return (X[tr], y[tr]), (X[va], y[va])


@dataclass
class TrainResult:
    model: Network
    loss_history: list[float]
    steps: int
    optimizer: AdamState


def train(
    model: Network,
    X,
    y,
    config: TrainConfig | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Mini-batch Adam on softmax cross-entropy; records mean loss per epoch."""
    config = config or TrainConfig()
    X = np.asarray(X, dtype=model.dtype)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise EmptyDataset("no training rows")
    if len(X) != len(y):
        raise ValueError("features and labels differ in length")
    rng = np.random.default_rng(config.seed)
    params = [p for _, p in model.parameters()]
    state = AdamState.for_params(
        params,
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        weight_decay=config.weight_decay,
    )
    Lall = one_hot(y, model.n_classes, dtype=model.dtype)
    history: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), config.batch_size):
            idx = order[start : start + config.batch_size]
            logits = model.forward(X[idx], train=True)
            L = Lall[idx]
            loss = cross_entropy(logits, L)
            if not math.isfinite(loss):
                raise NonFiniteLoss(epoch)
            total += loss
            grad = cross_entropy_grad(logits, L)
            if config.loss_mean:
                grad /= len(idx)
            model.backward(grad.astype(model.dtype, copy=False))
            adam_step(params, model.gradients(), state)
        history.append(total / len(X))
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return TrainResult(model, history, state.step, state)


@dataclass
class EvalReport:
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int
    roc_points: list[tuple[float, float]]
    thresholds: list[float]
    auc: float
    error_rate: float
    n: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds"] = [_json_float(t) for t in self.thresholds]
        d["roc_points"] = [list(p) for p in self.roc_points]
        d["auc"] = _json_float(self.auc)
        return d

    def write_roc_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "fpr", "tpr"])
            for t, (f, p) in zip(self.thresholds, self.roc_points):
                w.writerow([_json_float(t), repr(float(f)), repr(float(p))])


def _json_float(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return None
    return float(v)


def roc(scores, y_true) -> tuple[list[tuple[float, float]], list[float], float]:
    """ROC over every distinct score with +inf/-inf sentinels, AUC by trapezoid."""
    scores = np.asarray(scores, dtype=np.float64)
    y_true = np.asarray(y_true)
    if len(np.unique(y_true)) < 2:
        warnings.warn("ROC undefined with a single class present", stacklevel=2)
        return [(0.0, 0.0), (1.0, 1.0)], [math.inf, -math.inf], math.nan
    fpr, tpr, thr = roc_curve(y_true, scores, pos_label=1, drop_intermediate=False)
    fpr = np.append(fpr, 1.0)
    tpr = np.append(tpr, 1.0)
    thr = np.append(thr, -np.inf)
    return list(zip(fpr.tolist(), tpr.tolist())), thr.tolist(), float(trapezoid_auc(fpr, tpr))


def evaluate_scores(scores, y_true, y_pred=None) -> EvalReport:
    """Metrics for abnormal-class scores; ``y_pred`` defaults to score > 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.int64)
    if len(y_true) == 0:
        raise EmptyDataset("nothing to evaluate")
    y_pred = (scores > 0.5).astype(np.int64) if y_pred is None else np.asarray(y_pred, dtype=np.int64)
    tp = int(((y_pred == 1) & (y_true == 1)).sum())
    fp = int(((y_pred == 1) & (y_true == 0)).sum())
    tn = int(((y_pred == 0) & (y_true == 0)).sum())
    fn = int(((y_pred == 0) & (y_true == 1)).sum())
    accuracy = 100.0 * (tp + tn) / len(y_true)
    points, thresholds, area = roc(scores, y_true)
    return EvalReport(accuracy, tp, fp, tn, fn, points, thresholds, area, 100.0 - accuracy, len(y_true))


def evaluate(model, X, y) -> EvalReport:
    """Evaluate a :class:`Network` or any estimator exposing ``predict_proba``."""
    X = np.asarray(X)
    if len(X) == 0:
        raise EmptyDataset("nothing to evaluate")
    proba = predict_proba(model, X) if isinstance(model, Network) else np.asarray(model.predict_proba(X))
    # argmax takes the first maximum: ties go to Normal
    y_pred = np.argmax(proba, axis=1)
    return evaluate_scores(proba[:, BehaviorLabel.ABNORMAL], y, y_pred)


def _d(x) -> Decimal:
    return Decimal(str(x))


def overall(mid: float, final: float) -> float:
    """Unweighted mean of the two term accuracies, rounded half-up to 2 decimals."""
    return float(((_d(mid) + _d(final)) / 2).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def comparison_table(term_accuracy: Mapping[str, Mapping[str, float]]) -> list[dict]:
    """Rows of {network, midterm, finalterm, overall} in the given order."""
    rows = []
    for arch, terms in term_accuracy.items():
        mid, final = terms["midterm"], terms["finalterm"]
        rows.append(
            {
                "network": DISPLAY_NAMES.get(arch, arch),
                "midterm": float(_d(mid).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)),
                "finalterm": float(_d(final).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)),
                "overall": overall(mid, final),
            }
        )
    return rows


def format_table(rows: Sequence[dict]) -> str:
    lines = [f"{'Networks':<12}{'Mid-term (%)':>14}{'Final-term (%)':>16}{'Overall (%)':>13}"]
    for r in rows:
        lines.append(f"{r['network']:<12}{r['midterm']:>14.2f}{r['finalterm']:>16.2f}{r['overall']:>13.2f}")
    return "\n".join(lines)


@dataclass
class TermConfig:
    name: str
    seed: int
    cheater_fraction: float


@dataclass
class BenchmarkConfig:
    architectures: list[str] = field(default_factory=lambda: ["dnn", "lstm", "rnn", "denselstm"])
    train_seeds: list[int] = field(default_factory=lambda: [0])
    terms: list[TermConfig] = field(
        default_factory=lambda: [TermConfig("midterm", 42, 0.15), TermConfig("finalterm", 43, 0.20)]
    )
    train_students: int = 540
    test_students: int = 200
    test_seed_offset: int = 1000
    train: TrainConfig = field(default_factory=TrainConfig)
    collusion_pair_count: int = 1
    dtype: str = "float32"

    @classmethod
    def from_dict(cls, d: Mapping) -> "BenchmarkConfig":
        d = dict(d)
        if "terms" in d:
            d["terms"] = [TermConfig(**t) for t in d["terms"]]
        if "train" in d:
            d["train"] = TrainConfig.from_dict(d["train"])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_config(cls, cfg: Mapping) -> "BenchmarkConfig":
        """Build from a full config file: the ``benchmark`` section plus ``train``."""
        bc = cls.from_dict(cfg.get("benchmark", {}))
        if "train" in cfg:
            bc.train = TrainConfig.from_dict(cfg["train"])
        return bc


@dataclass
class TermData:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray


def term_data(
    term: TermConfig,
    config: BenchmarkConfig,
    spec: ExamSpec | None = None,
    speed_model: SpeedModel | None = None,
) -> TermData:
    """Training pool (cohort plus abnormal augmentation) and an independent test cohort."""
    spec = spec or ExamSpec.default()
    speed_model = speed_model or SpeedModel()

    def cohort(seed, n):
        records, _ = generate(
            CohortConfig(
                student_count=n,
                cheater_fraction=term.cheater_fraction,
                collusion_pair_count=config.collusion_pair_count,
                seed=seed,
                spec=spec,
                speed_model=speed_model,
            )
        )
        return encode_dataset(records, spec, speed_model)

    X, y = cohort(term.seed, config.train_students)
    X, y = augment(X, y, config.train.augment_count, seed=term.seed)
    Xte, yte = cohort(term.seed + config.test_seed_offset, config.test_students)
    return TermData(X, y, Xte, yte)


@dataclass
class RunResult:
    arch: str
    term: str
    train_seed: int
    test: EvalReport
    loss_history: list[float]
    seconds: float


@dataclass
class BenchmarkResult:
    config: BenchmarkConfig
    runs: list[RunResult]

    def accuracy(self, arch: str, term: str, seed: int | None = None) -> float:
        vals = [
            r.test.accuracy
            for r in self.runs
            if r.arch == arch and r.term == term and (seed is None or r.train_seed == seed)
        ]
        return float(np.mean(vals))

    def overall_accuracy(self, arch: str, seed: int | None = None) -> float:
        return float(np.mean([self.accuracy(arch, t.name, seed) for t in self.config.terms]))

    def table(self) -> list[dict]:
        return comparison_table(
            {a: {t.name: self.accuracy(a, t.name) for t in self.config.terms} for a in self.config.architectures}
        )

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "table": self.table(),
            "runs": [
                {
                    "arch": r.arch,
                    "term": r.term,
                    "train_seed": r.train_seed,
                    "seconds": r.seconds,
                    "loss_history": r.loss_history,
                    "test": r.test.to_dict(),
                }
                for r in self.runs
            ],
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2))
        for r in self.runs:
            r.test.write_roc_csv(out / f"roc_{r.arch}_{r.term}_seed{r.train_seed}.csv")


def benchmark(
    config: BenchmarkConfig | None = None,
    spec: ExamSpec | None = None,
    speed_model: SpeedModel | None = None,
    out_dir=None,
) -> BenchmarkResult:
    config = config or BenchmarkConfig()
    for arch in config.architectures:
        if arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {arch!r}")
    dtype = np.dtype(config.dtype)
    runs = []
    for term in config.terms:
        data = term_data(term, config, spec, speed_model)
        for arch in config.architectures:
            for seed in config.train_seeds:
                t0 = time.perf_counter()
                model = build(arch, dtype=dtype, seed=seed)
                tc = TrainConfig(**{**asdict(config.train), "seed": seed})
                result = train(model, data.X_train, data.y_train, tc)
                runs.append(
                    RunResult(
                        arch,
                        term.name,
                        seed,
                        evaluate(model, data.X_test, data.y_test),
                        result.loss_history,
                        time.perf_counter() - t0,
                    )
                )
                log.info(
                    "%s %s seed %d: test acc %.2f%% auc %.4f (%.1fs)",
                    arch, term.name, seed, runs[-1].test.accuracy, runs[-1].test.auc, runs[-1].seconds,
                )
    result = BenchmarkResult(config, runs)
    if out_dir is not None:
        result.write(out_dir)
    return result

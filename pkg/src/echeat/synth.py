"""Seeded synthetic exam cohorts with planted behaviours.

Honest students answer according to a per-student ability and take roughly
the expected time (log-normal noise).  Cheaters get at least 18 answers right
and finish far too fast or far too slow.  Colluding pairs share an IP and
near-identical answer choices.  The returned ground truth is always the
labelling rule applied to the generated record, so it is never ambiguous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .encoding import (
    ABNORMAL_MIN_CORRECT,
    N_FEATURES,
    BehaviorLabel,
    SpeedCategory,
    SpeedModel,
    categorize_speed,
    expected_duration,
    label,
)
from .records import N_OPTIONS, QUESTION_COUNT, Answer, Difficulty, ExamRecord, ExamSpec


class BadConfig(ValueError):
    pass


class NoAbnormalSeed(ValueError):
    pass


# shift applied to a student's ability per question difficulty
_DIFFICULTY_SHIFT = {Difficulty.EASY: 0.10, Difficulty.MODERATE: 0.0, Difficulty.HIGH: -0.15}


@dataclass(frozen=True)
class CohortConfig:
    student_count: int = 94
    ability_mean: float = 0.65
    ability_sd: float = 0.15
    cheater_fraction: float = 0.15
    collusion_pair_count: int = 0
    seed: int = 42
    spec: ExamSpec = field(default_factory=ExamSpec.default)
    speed_model: SpeedModel = field(default_factory=SpeedModel)
    duration_sigma: float = 0.25
    first_id: int = 2000001

    def __post_init__(self):
        if self.student_count < 1:
            raise BadConfig("student_count must be >= 1")
        if not 0 <= self.cheater_fraction <= 1:
            raise BadConfig("cheater_fraction must lie in [0, 1]")
        if self.collusion_pair_count < 0:
            raise BadConfig("collusion_pair_count must be >= 0")
        if self.ability_sd < 0 or self.duration_sigma < 0:
            raise BadConfig("spreads must be non-negative")
        if self.first_id + self.student_count - 1 > 9_999_999 or self.first_id < 1_000_000:
            raise BadConfig("ids must stay 7 digits")

    @property
    def cheater_count(self) -> int:
        return int(math.floor(self.cheater_fraction * self.student_count + 0.5))


def _random_ips(rng: np.random.Generator, n: int) -> list[str]:
    ips: list[str] = []
    seen = set()
    while len(ips) < n:
        first = int(rng.integers(1, 224))
        if first in (10, 127, 172, 192):
            continue
        rest = rng.integers(0, 256, size=3)
        ip = f"{first}.{rest[0]}.{rest[1]}.{rest[2]}"
        if ip not in seen:
            seen.add(ip)
            ips.append(ip)
    return ips


def _wrong_option(rng, key_option: int) -> int:
    others = [o for o in range(1, N_OPTIONS + 1) if o != key_option]
    return others[int(rng.integers(len(others)))]


def _answers(rng, correct: Sequence[bool], key, spec: ExamSpec) -> tuple[Answer, ...]:
    return tuple(
        Answer(int(key[q]), spec.max_score_per_question[q]) if c else Answer(_wrong_option(rng, key[q]), 0)
        for q, c in enumerate(correct)
    )


def _from_choices(choices: Sequence[int], key, spec: ExamSpec) -> tuple[Answer, ...]:
    return tuple(
        Answer(int(c), spec.max_score_per_question[q] if c == key[q] else 0) for q, c in enumerate(choices)
    )


def _minutes(seconds: float) -> int:
    return max(1, int(math.floor(seconds / 60.0 + 0.5)))


def generate(config: CohortConfig) -> tuple[list[ExamRecord], list[BehaviorLabel]]:
    rng = np.random.default_rng(config.seed)
    spec, model = config.spec, config.speed_model
    n = config.student_count
    expected = expected_duration(spec, model)
    key = rng.integers(1, N_OPTIONS + 1, size=QUESTION_COUNT)

    n_cheat = config.cheater_count
    is_cheater = np.zeros(n, dtype=bool)
    is_cheater[rng.permutation(n)[:n_cheat]] = True

    honest_idx = np.flatnonzero(~is_cheater)
    if 2 * config.collusion_pair_count > len(honest_idx):
        raise BadConfig("not enough honest students to form the requested colluding pairs")
    pair_members = rng.permutation(honest_idx)[: 2 * config.collusion_pair_count]
    copies = {int(pair_members[2 * i + 1]): int(pair_members[2 * i]) for i in range(config.collusion_pair_count)}

    ips = _random_ips(rng, n)
    shift = np.array([_DIFFICULTY_SHIFT[d] for d in spec.difficulties])

    answers: list[tuple[Answer, ...] | None] = [None] * n
    minutes = np.zeros(n, dtype=np.int64)
    for i in range(n):
        if is_cheater[i]:
            n_wrong = int(rng.integers(0, QUESTION_COUNT - ABNORMAL_MIN_CORRECT + 1))
            correct = np.ones(QUESTION_COUNT, dtype=bool)
            correct[rng.choice(QUESTION_COUNT, size=n_wrong, replace=False)] = False
            answers[i] = _answers(rng, correct, key, spec)
            fast = bool(rng.random() < 0.5)
            if fast:
                m = _minutes(expected * rng.uniform(0.15, 0.45))
                while m > 1 and m * 60 >= model.fast_factor * expected:
                    m -= 1
            else:
                m = _minutes(expected * rng.uniform(2.1, 3.0))
                while m * 60 <= model.slow_factor * expected:
                    m += 1
            minutes[i] = m
        else:
            ability = float(np.clip(rng.normal(config.ability_mean, config.ability_sd), 0.05, 0.98))
            p = np.clip(ability + shift, 0.02, 0.99)
            correct = rng.random(QUESTION_COUNT) < p
            answers[i] = _answers(rng, correct, key, spec)
            minutes[i] = _minutes(expected * math.exp(rng.normal(0.0, config.duration_sigma)))

    # colluders copy their partner's choices, differing in at most two questions
    for copier, source in copies.items():
        choices = [a.chosen_option for a in answers[source]]
        n_diff = int(rng.integers(0, 3))
        for q in rng.choice(QUESTION_COUNT, size=n_diff, replace=False):
            choices[q] = _wrong_option(rng, choices[q])
        answers[copier] = _from_choices(choices, key, spec)
        ips[copier] = ips[source]

    records = []
    for i in range(n):
        ans = answers[i]
        records.append(
            ExamRecord(
                id=str(config.first_id + i),
                answers=ans,
                grade=sum(a.score for a in ans),
                duration_minutes=int(minutes[i]),
                ip=ips[i],
            )
        )
    labels = [label(r, spec, model) for r in records]
    return records, labels


def augment(X, y, extra_abnormal: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Append ``extra_abnormal`` synthetic abnormal feature rows.

    Each new row resamples an existing abnormal row, flips up to two of its
    correctness bits (never dropping below the abnormal threshold) and draws a
    fresh Fast or Slow speed bit.
    """
    X = np.asarray(X)
    y = np.asarray(y)
    if extra_abnormal < 0:
        raise ValueError("extra_abnormal must be >= 0")
    if extra_abnormal == 0:
        return X.copy(), y.copy()
    pool = X[y == BehaviorLabel.ABNORMAL]
    if len(pool) == 0:
        raise NoAbnormalSeed("no abnormal rows to resample from")
    rng = np.random.default_rng(seed)
    new = np.empty((extra_abnormal, N_FEATURES), dtype=X.dtype)
    for k in range(extra_abnormal):
        row = pool[int(rng.integers(len(pool)))].copy()
        bits = row[:QUESTION_COUNT]
        for q in rng.choice(QUESTION_COUNT, size=int(rng.integers(0, 3)), replace=False):
            if bits[q] == 1 and bits.sum() - 1 < ABNORMAL_MIN_CORRECT:
                continue
            bits[q] = 1 - bits[q]
        row[QUESTION_COUNT:] = 0
        speed = SpeedCategory.FAST if rng.random() < 0.5 else SpeedCategory.SLOW
        row[QUESTION_COUNT + speed] = 1
        new[k] = row
    labels = np.full(extra_abnormal, int(BehaviorLabel.ABNORMAL), dtype=y.dtype if y.size else np.int64)
    return np.concatenate([X, new]), np.concatenate([y, labels])


def write_truth(fh: IO[str], records: Sequence[ExamRecord], labels: Sequence[BehaviorLabel]) -> None:
    for r, lab in zip(records, labels):
        fh.write(f"{r.id},{BehaviorLabel(lab).name.capitalize()}\n")


def read_truth(fh: IO[str]) -> dict[str, BehaviorLabel]:
    out = {}
    for line in fh:
        line = line.strip()
        if line:
            rid, name = line.split(",")
            out[rid] = BehaviorLabel[name.upper()]
    return out

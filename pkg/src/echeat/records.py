"""Exam records as exported by the LMS, and CSV ingestion for them.

The CSV layout is one row per examinee::

    ID,Q1 Ans.,Q1 Score,...,Q20 Ans.,Q20 Score,Grade,Time,IP

Time is the total completion time in whole minutes.
"""

from __future__ import annotations

import csv
import io
import ipaddress
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Sequence

QUESTION_COUNT = 20
N_OPTIONS = 5


class Difficulty(str, Enum):
    EASY = "Easy"
    MODERATE = "Moderate"
    HIGH = "High"


class RecordError(ValueError):
    """Base class for every ingestion failure."""


class MalformedHeader(RecordError):
    pass


class BadField(RecordError):
    def __init__(self, row: int, column: str, reason: str):
        super().__init__(f"row {row}, column {column!r}: {reason}")
        self.row = row
        self.column = column
        self.reason = reason


class GradeMismatch(RecordError):
    def __init__(self, row: int, grade: int, total: int):
        super().__init__(f"row {row}: grade {grade} != sum of question scores {total}")
        self.row = row
        self.grade = grade
        self.total = total


@dataclass(frozen=True)
class Answer:
    chosen_option: int
    score: int

    @property
    def correct(self) -> bool:
        return self.score > 0


@dataclass(frozen=True)
class ExamRecord:
    id: str
    answers: tuple[Answer, ...]
    grade: int
    duration_minutes: int
    ip: str

    def __post_init__(self):
        if len(self.answers) != QUESTION_COUNT:
            raise ValueError(f"expected {QUESTION_COUNT} answers, got {len(self.answers)}")
        total = sum(a.score for a in self.answers)
        if self.grade != total:
            raise ValueError(f"grade {self.grade} != sum of scores {total}")
        if self.duration_minutes < 1:
            raise ValueError("duration_minutes must be >= 1")
        _check_ip(self.ip)

    @property
    def correct_count(self) -> int:
        return sum(a.correct for a in self.answers)

    @property
    def correctness(self) -> list[int]:
        return [int(a.correct) for a in self.answers]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "answers": [[a.chosen_option, a.score] for a in self.answers],
            "grade": self.grade,
            "duration_minutes": self.duration_minutes,
            "ip": self.ip,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExamRecord":
        answers = tuple(Answer(int(o), int(s)) for o, s in d["answers"])
        return cls(str(d["id"]), answers, int(d["grade"]), int(d["duration_minutes"]), str(d["ip"]))


def _check_ip(ip: str) -> None:
    ipaddress.IPv4Address(ip)


@dataclass(frozen=True)
class ExamSpec:
    """Static description of one exam.

    ``max_score_per_question`` makes grade validation exact; ``set_pool`` lists
    the interchangeable question sets handed out by the IP agent.
    """

    difficulties: tuple[Difficulty, ...]
    max_score_per_question: tuple[int, ...]
    set_pool: tuple[str, ...] = ("A", "B", "C", "D")
    question_count: int = QUESTION_COUNT

    def __post_init__(self):
        if self.question_count != QUESTION_COUNT:
            raise ValueError(f"question_count is fixed at {QUESTION_COUNT}")
        if len(self.difficulties) != self.question_count:
            raise ValueError("difficulties must have one entry per question")
        if len(self.max_score_per_question) != self.question_count:
            raise ValueError("max_score_per_question must have one entry per question")
        if any(m <= 0 for m in self.max_score_per_question):
            raise ValueError("max scores must be positive")
        if not self.set_pool or len(set(self.set_pool)) != len(self.set_pool):
            raise ValueError("set_pool must be non-empty with unique identifiers")
        object.__setattr__(self, "difficulties", tuple(Difficulty(d) for d in self.difficulties))

    @classmethod
    def default(cls) -> "ExamSpec":
        # Q1-Q10 worth 2 points, Q11-Q20 worth 3 (max grade 50), which fits the sample grades.
        difficulties = (
            [Difficulty.EASY] * 6 + [Difficulty.MODERATE] * 8 + [Difficulty.HIGH] * 6
        )
        scores = [2] * 10 + [3] * 10
        return cls(tuple(difficulties), tuple(scores))

    @property
    def max_grade(self) -> int:
        return sum(self.max_score_per_question)

    def to_dict(self) -> dict:
        return {
            "difficulties": [d.value for d in self.difficulties],
            "max_score_per_question": list(self.max_score_per_question),
            "set_pool": list(self.set_pool),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExamSpec":
        return cls(
            tuple(d["difficulties"]),
            tuple(int(s) for s in d["max_score_per_question"]),
            tuple(d.get("set_pool", ("A", "B", "C", "D"))),
        )


def header(question_count: int = QUESTION_COUNT) -> list[str]:
    cols = ["ID"]
    for q in range(1, question_count + 1):
        cols += [f"Q{q} Ans.", f"Q{q} Score"]
    return cols + ["Grade", "Time", "IP"]


def _int_cell(value: str, row: int, column: str) -> int:
    try:
        return int(value.strip())
    except ValueError:
        raise BadField(row, column, f"not an integer: {value!r}") from None


def _parse_row(cells: list[str], row: int, spec: ExamSpec, cols: list[str]) -> ExamRecord:
    if len(cells) != len(cols):
        raise BadField(row, "*", f"expected {len(cols)} fields, got {len(cells)}")
    rid = cells[0].strip()
    if not (len(rid) == 7 and rid.isdigit()):
        raise BadField(row, "ID", f"expected a 7-digit id, got {rid!r}")

    answers = []
    for q in range(spec.question_count):
        ans_col, score_col = cols[1 + 2 * q], cols[2 + 2 * q]
        option = _int_cell(cells[1 + 2 * q], row, ans_col)
        if not 1 <= option <= N_OPTIONS:
            raise BadField(row, ans_col, f"option {option} outside 1..{N_OPTIONS}")
        score = _int_cell(cells[2 + 2 * q], row, score_col)
        if not 0 <= score <= spec.max_score_per_question[q]:
            raise BadField(
                row, score_col, f"score {score} outside 0..{spec.max_score_per_question[q]}"
            )
        answers.append(Answer(option, score))

    grade = _int_cell(cells[-3], row, "Grade")
    duration = _int_cell(cells[-2], row, "Time")
    if duration < 1:
        raise BadField(row, "Time", f"duration must be >= 1 minute, got {duration}")
    ip = cells[-1].strip()
    try:
        _check_ip(ip)
    except ValueError as exc:
        raise BadField(row, "IP", str(exc)) from None

    total = sum(a.score for a in answers)
    if grade != total:
        raise GradeMismatch(row, grade, total)
    return ExamRecord(rid, tuple(answers), grade, duration, ip)


def _as_text(stream: bytes | str | IO) -> IO[str]:
    if isinstance(stream, bytes):
        return io.StringIO(stream.decode("utf-8"))
    if isinstance(stream, str):
        return io.StringIO(stream)
    if isinstance(stream, io.TextIOBase):
        return stream
    return io.TextIOWrapper(stream, encoding="utf-8", newline="")


def parse_csv(stream: bytes | str | IO, spec: ExamSpec | None = None) -> list[ExamRecord]:
    """Parse an LMS export into records, preserving row order.

    Row numbers in errors are 1-based data rows (the header is row 0).
    """
    spec = spec or ExamSpec.default()
    cols = header(spec.question_count)
    reader = csv.reader(_as_text(stream))
    try:
        head = next(reader)
    except StopIteration:
        raise MalformedHeader("empty input: no header row") from None
    got = [c.strip().lower() for c in head]
    want = [c.lower() for c in cols]
    if got != want:
        raise MalformedHeader(f"header mismatch: expected {cols}, got {head}")

    records = []
    for row, cells in enumerate(reader, start=1):
        if not cells or all(not c.strip() for c in cells):
            continue
        records.append(_parse_row(cells, row, spec, cols))
    return records


def write_csv(records: Iterable[ExamRecord]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header())
    for r in records:
        cells: list[object] = [r.id]
        for a in r.answers:
            cells += [a.chosen_option, a.score]
        writer.writerow(cells + [r.grade, r.duration_minutes, r.ip])
    return buf.getvalue().encode("utf-8")


def read_csv_file(path, spec: ExamSpec | None = None) -> list[ExamRecord]:
    with open(path, "rb") as fh:
        return parse_csv(fh.read(), spec)


def make_record(
    rid: str,
    correct: Sequence[int],
    duration_minutes: int,
    ip: str,
    spec: ExamSpec | None = None,
    options: Sequence[int] | None = None,
) -> ExamRecord:
    """Build a record from correctness bits, awarding full marks per correct answer."""
    spec = spec or ExamSpec.default()
    if options is None:
        options = [1] * len(correct)
    answers = tuple(
        Answer(int(o), spec.max_score_per_question[q] if c else 0)
        for q, (c, o) in enumerate(zip(correct, options))
    )
    return ExamRecord(rid, answers, sum(a.score for a in answers), duration_minutes, ip)

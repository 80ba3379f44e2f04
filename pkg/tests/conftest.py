from pathlib import Path

import pytest

from echeat.records import ExamSpec, read_csv_file

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def spec():
    return ExamSpec.default()


@pytest.fixture
def roster_path():
    return FIXTURES / "roster.csv"


@pytest.fixture
def roster(spec, roster_path):
    return read_csv_file(roster_path, spec)

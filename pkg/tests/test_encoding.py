import io
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from echeat.encoding import (
    N_FEATURES,
    BehaviorLabel,
    FeatureEncoder,
    SpeedCategory,
    SpeedModel,
    categorize_speed,
    check_features,
    encode,
    encode_dataset,
    expected_duration,
    label,
    label_features,
    label_from,
    read_features,
    speed_of,
    write_features,
)
from echeat.records import Difficulty, ExamSpec, make_record
from echeat.synth import CohortConfig, generate

E, M, H = Difficulty.EASY, Difficulty.MODERATE, Difficulty.HIGH


def _spec(difficulties):
    return ExamSpec(tuple(difficulties), (1,) * 20)


@pytest.mark.parametrize(
    "difficulties, seconds",
    [([E] * 20, 300), ([E] * 10 + [H] * 10, 1050), ([M] * 20, 700)],
)
def test_expected_duration(difficulties, seconds):
    assert expected_duration(_spec(difficulties)) == seconds


def test_default_spec_expected_duration(spec):
    assert expected_duration(spec) == 6 * 15 + 8 * 35 + 6 * 90 == 910


def test_fifteen_minutes_on_1050s_is_normal():
    rec = make_record("1000001", [1] * 20, 15, "1.2.3.4", _spec([E] * 10 + [H] * 10))
    assert categorize_speed(rec, _spec([E] * 10 + [H] * 10)) is SpeedCategory.NORMAL


def test_one_minute_is_fast():
    spec = _spec([E] * 20)
    assert categorize_speed(make_record("1000001", [0] * 20, 1, "1.2.3.4", spec), spec) is SpeedCategory.FAST


def test_boundaries_are_exclusive():
    m = SpeedModel()
    assert speed_of(0.5 * 600, 600, m) is SpeedCategory.NORMAL
    assert speed_of(0.5 * 600 - 1e-9, 600, m) is SpeedCategory.FAST
    assert speed_of(2.0 * 600, 600, m) is SpeedCategory.NORMAL
    assert speed_of(2.0 * 600 + 1e-9, 600, m) is SpeedCategory.SLOW


def test_boundary_in_whole_minutes():
    # expected 1200 s: 10 min sits exactly on the fast boundary, 40 on the slow one
    spec = _spec([E] * 8 + [H] * 12)
    assert expected_duration(spec) == 1200
    cat = lambda minutes: categorize_speed(make_record("1000001", [1] * 20, minutes, "1.2.3.4", spec), spec)
    assert [cat(9), cat(10), cat(40), cat(41)] == [
        SpeedCategory.FAST, SpeedCategory.NORMAL, SpeedCategory.NORMAL, SpeedCategory.SLOW,
    ]


def test_speed_order_is_fast_normal_slow():
    assert [int(s) for s in (SpeedCategory.FAST, SpeedCategory.NORMAL, SpeedCategory.SLOW)] == [0, 1, 2]


def test_encode_pattern(spec):
    correct = [1, 1, 1, 1, 1, 0, 1] + [0] * 13
    rec = make_record("1000001", correct, 20, "1.2.3.4", spec)
    assert encode(rec, spec).tolist() == correct + [0, 1, 0]


def test_encode_all_wrong_slow(spec):
    rec = make_record("1000001", [0] * 20, 200, "1.2.3.4", spec)
    assert encode(rec, spec).tolist() == [0] * 20 + [0, 0, 1]


def test_roster_row_one(spec, roster):
    bits = encode(roster[0], spec)
    assert bits[0] == bits[1] == bits[19] == 1
    # 15 min = 900 s against 910 s expected: Normal
    assert bits[20:].tolist() == [0, 1, 0]
    assert bits[:20].sum() == 18
    assert label(roster[0], spec) is BehaviorLabel.NORMAL


def test_roster_all_normal(spec, roster):
    # every sample row sits between 455 s and 1820 s
    _, y = encode_dataset(roster, spec)
    assert y.tolist() == [0] * 10


@pytest.mark.parametrize(
    "correct, speed, expected",
    [
        (20, SpeedCategory.FAST, BehaviorLabel.ABNORMAL),
        (10, SpeedCategory.FAST, BehaviorLabel.NORMAL),
        (18, SpeedCategory.NORMAL, BehaviorLabel.NORMAL),
        (18, SpeedCategory.SLOW, BehaviorLabel.ABNORMAL),
        (17, SpeedCategory.SLOW, BehaviorLabel.NORMAL),
    ],
)
def test_label_examples(correct, speed, expected):
    assert label_from(correct, speed) is expected


def _rule(correct, speed):
    # restated from scratch: "at least 90% right" with exact rationals, and not Normal speed
    return int(Fraction(correct, 20) >= Fraction(9, 10) and speed != "Normal")


def test_label_grid_matches_restated_rule():
    names = {SpeedCategory.FAST: "Fast", SpeedCategory.NORMAL: "Normal", SpeedCategory.SLOW: "Slow"}
    for c in range(21):
        for s in SpeedCategory:
            assert int(label_from(c, s)) == _rule(c, names[s]), (c, s)


def test_encode_dataset_shapes(spec):
    records, truth = generate(CohortConfig(student_count=94, seed=42))
    X, y = encode_dataset(records, spec)
    assert X.shape == (94, N_FEATURES) and y.shape == (94,)
    assert y.tolist() == [int(t) for t in truth]
    check_features(X)


def test_encode_dataset_empty(spec):
    X, y = encode_dataset([], spec)
    assert X.shape == (0, N_FEATURES) and y.shape == (0,)


@given(st.lists(st.integers(0, 1), min_size=20, max_size=20), st.integers(1, 200))
def test_label_features_agrees_with_label(bits, minutes):
    spec = ExamSpec.default()
    rec = make_record("1000001", bits, minutes, "1.2.3.4", spec)
    assert label_features(encode(rec, spec)) is label(rec, spec)
    assert encode(rec, spec)[20:].sum() == 1


def test_features_text_roundtrip(spec):
    records, _ = generate(CohortConfig(student_count=30, seed=1))
    X, y = encode_dataset(records, spec)
    buf = io.StringIO()
    write_features(buf, X, y)
    buf.seek(0)
    X2, y2 = read_features(buf)
    assert np.array_equal(X, X2) and np.array_equal(y, y2)


def test_check_features_rejects_two_speed_bits():
    X = np.zeros((1, 23), dtype=np.int8)
    X[0, 20:22] = 1
    with pytest.raises(ValueError):
        check_features(X)


def test_speed_model_config(spec):
    m = SpeedModel.from_dict({"nominal_seconds": {"Easy": 10, "Moderate": 20, "High": 30}, "fast_factor": 0.4})
    assert expected_duration(spec, m) == 6 * 10 + 8 * 20 + 6 * 30
    assert SpeedModel.from_dict(m.to_dict()) == m


def test_feature_encoder_is_a_transformer(spec, roster):
    enc = FeatureEncoder(spec=spec)
    assert clone(enc).get_params() == enc.get_params()
    X = enc.fit_transform(roster)
    assert X.shape == (10, 23) and X.dtype == np.float64
    assert enc.labels(roster).tolist() == [0] * 10
    pipe = make_pipeline(FeatureEncoder())
    assert np.array_equal(pipe.fit_transform(roster), X)

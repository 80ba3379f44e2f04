import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from echeat.encoding import FeatureEncoder, encode_dataset
from echeat.estimator import BehaviorClassifier
from echeat.synth import CohortConfig, generate


@pytest.fixture(scope="module")
def cohort():
    records, _ = generate(CohortConfig(student_count=200, cheater_fraction=0.2, seed=21))
    return records


def test_params_roundtrip():
    clf = BehaviorClassifier(arch="rnn", epochs=3, random_state=4)
    assert clone(clf).get_params() == clf.get_params()
    assert clf.set_params(learning_rate=1e-3).learning_rate == 1e-3


def test_fit_predict(cohort, spec):
    X, y = encode_dataset(cohort, spec)
    clf = BehaviorClassifier(arch="dnn", epochs=40, learning_rate=1e-3).fit(X, y)
    assert clf.n_iter_ == 40 * 7
    proba = clf.predict_proba(X)
    assert proba.shape == (200, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1)
    assert set(clf.predict(X)) <= {0, 1}
    assert clf.score(X, y) > 0.9


def test_string_labels_map_back(cohort, spec):
    X, y = encode_dataset(cohort, spec)
    names = np.array(["Normal", "Abnormal"])[y]
    clf = BehaviorClassifier(arch="dnn", epochs=1).fit(X, names)
    assert set(clf.predict(X)) <= {"Normal", "Abnormal"}


def test_pipeline_from_records(cohort, spec):
    _, y = encode_dataset(cohort, spec)
    pipe = make_pipeline(FeatureEncoder(spec=spec), BehaviorClassifier(arch="dnn", epochs=1))
    pipe.fit(cohort, y)
    assert pipe.predict(cohort).shape == (200,)


def test_validation():
    with pytest.raises(NotFittedError):
        BehaviorClassifier().predict(np.zeros((1, 23)))
    with pytest.raises(ValueError):
        BehaviorClassifier(arch="dnn", epochs=1).fit(np.zeros((4, 22)), [0, 1, 0, 1])
    with pytest.raises(ValueError):
        BehaviorClassifier(arch="cnn", epochs=1).fit(np.zeros((4, 23)), [0, 1, 0, 1])
    clf = BehaviorClassifier(arch="dnn", epochs=1).fit(np.zeros((4, 23)), [0, 1, 0, 1])
    with pytest.raises(ValueError):
        clf.predict(np.zeros((2, 5)))


def test_save_load(tmp_path, cohort, spec):
    X, y = encode_dataset(cohort, spec)
    clf = BehaviorClassifier(arch="lstm", epochs=1).fit(X, y)
    clf.save(tmp_path / "clf.echk")
    back = BehaviorClassifier.load(tmp_path / "clf.echk")
    assert back.arch == "lstm"
    np.testing.assert_allclose(back.predict_proba(X), clf.predict_proba(X))

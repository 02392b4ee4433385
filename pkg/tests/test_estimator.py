import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mirnet import MIResNetClassifier, evaluation as E, model as M, ptb


@pytest.fixture(scope="module")
def data():
    X, y, _ = ptb.stack_segments(E.synth_dataset(6, seed=2))
    return X, y


def test_params_round_trip():
    est = MIResNetClassifier(epochs=3, learning_rate=0.01, random_state=7)
    params = est.get_params()
    assert params == {"epochs": 3, "batch_size": 32, "learning_rate": 0.01, "beta_1": 0.9,
                      "beta_2": 0.999, "epsilon": 1e-7, "random_state": 7, "verbose": False}
    copy = clone(est)
    assert copy.get_params() == params
    copy.set_params(epochs=5)
    assert copy.epochs == 5 and est.epochs == 3


def test_unfitted():
    with pytest.raises(NotFittedError):
        MIResNetClassifier().predict(np.zeros((1, 500, 12)))


def test_fit_predict(data, tmp_path):
    X, y = data
    est = MIResNetClassifier(epochs=3, batch_size=16, random_state=1).fit(X, y, X[:7], y[:7])
    proba = est.predict_proba(X)
    assert proba.shape == (42, 7)
    np.testing.assert_allclose(proba.sum(axis=1), 1, atol=1e-12)
    assert np.array_equal(est.predict(X), proba.argmax(axis=1))
    assert len(est.history_) == 3
    assert 0 <= est.score(X, y) <= 1
    est.save(tmp_path / "w.mirn")
    again = MIResNetClassifier.from_params(M.load_weights(tmp_path / "w.mirn"))
    assert np.array_equal(again.predict_proba(X), proba)


def test_fit_is_reproducible(data):
    X, y = data
    a = MIResNetClassifier(epochs=1, random_state=4).fit(X, y)
    b = MIResNetClassifier(epochs=1, random_state=4).fit(X, y)
    c = MIResNetClassifier(epochs=1, random_state=5).fit(X, y)
    assert np.array_equal(a.predict_proba(X), b.predict_proba(X))
    assert not np.array_equal(a.predict_proba(X), c.predict_proba(X))


@pytest.mark.parametrize("X,y", [
    (np.zeros((2, 499, 12)), [0, 1]),
    (np.zeros((2, 500, 12)), [0]),
    (np.zeros((2, 500, 12)), [0, 7]),
    (np.full((1, 500, 12), np.nan), [0]),
    (np.zeros((0, 500, 12)), []),
])
def test_input_validation(X, y):
    with pytest.raises(ValueError):
        MIResNetClassifier(epochs=1).fit(X, y)

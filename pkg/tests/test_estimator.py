import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from broadface.data import SyntheticSpec, generate_synthetic
from broadface.estimator import BroadFaceEmbedder


@pytest.fixture(scope="module")
def data():
    ds = generate_synthetic(SyntheticSpec(12, 10, 6, 0.3, 3.0, seed=0))
    names = np.array([f"id{i:02d}" for i in range(12)])
    return ds.features, names[ds.labels]


def _small(**kw):
    params = dict(hidden_sizes=(10,), embedding_dim=4, batch_size=16, queue_capacity=32, epochs=4, scale=16.0, lr=0.05)
    params.update(kw)
    return BroadFaceEmbedder(**params)


def test_get_params_and_clone():
    est = _small(queue_capacity=0)
    params = est.get_params()
    assert params["queue_capacity"] == 0 and params["hidden_sizes"] == (10,)
    assert clone(est).get_params() == params


def test_fit_transform_predict(data):
    X, y = data
    est = _small().fit(X, y)
    assert est.n_features_in_ == 6
    assert list(est.classes_) == sorted(set(y))
    U = est.transform(X)
    assert U.shape == (len(X), 4)
    np.testing.assert_allclose(np.linalg.norm(U, axis=1), 1.0)
    pred = est.predict(X)
    assert set(pred) <= set(y)
    assert np.mean(pred == y) > 1 / 12
    assert 0.0 <= est.score(X, y) <= 1.0
    assert any(r[0] == "encoder_loss" for r in est.history_)


def test_fit_is_deterministic(data):
    X, y = data
    a = _small(random_state=3).fit(X, y).transform(X)
    b = _small(random_state=3).fit(X, y).transform(X)
    np.testing.assert_array_equal(a, b)


def test_eval_set_records_recall(data):
    X, y = data
    est = _small(epochs=2).fit(X, y, eval_set=(X, y))
    assert [r[1] for r in est.history_ if r[0] == "recall@1"] == [0, 1, 2]


def test_unfitted_and_bad_input(data):
    X, y = data
    with pytest.raises(NotFittedError):
        _small().transform(X)
    est = _small(epochs=1).fit(X, y)
    with pytest.raises(ValueError, match="features"):
        est.transform(X[:, :3])
    with pytest.raises(ValueError):
        _small().fit(X, y[:-1])
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        _small().fit(bad, y)
    with pytest.raises(ValueError):
        _small().fit(X, np.zeros(len(X)))

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lamo import OnlineMultiObjectivePredictor, data
from lamo.engine import RunConfig, run_episode
from lamo.objectives import ProblemSpec


def sample(T=80, seed=0, groups=2):
    rng = np.random.default_rng(seed)
    return rng.uniform(size=(T, groups)), rng.uniform(size=T), rng.uniform(size=T)


def test_params_roundtrip_through_clone():
    est = OnlineMultiObjectivePredictor(tau=30, eta=0.2)
    c = clone(est)
    assert c.get_params() == est.get_params()
    assert c.set_params(tau=5).tau == 5


def test_fit_predict_matches_engine():
    X, y, base = sample()
    est = OnlineMultiObjectivePredictor(eta=0.3, tau=20, horizon=80)
    online = est.fit_predict(X, y, baseline=base)
    stream = data.SampleStream(y=y, fvals=X, group_ids=("f0", "f1"), baseline=base)
    tr = run_episode(RunConfig(problem=ProblemSpec(kind="ma_pred"), eta=0.3, tau=20), stream)
    np.testing.assert_allclose(online, tr.predictions, atol=1e-14)
    np.testing.assert_allclose(est.weights_.sum(), 1.0)


def test_partial_fit_in_chunks_equals_one_fit():
    X, y, base = sample()
    a = OnlineMultiObjectivePredictor(eta=0.3, tau=20, horizon=80).fit(X, y, baseline=base)
    b = OnlineMultiObjectivePredictor(eta=0.3, tau=20, horizon=80)
    for lo in range(0, 80, 25):
        b.partial_fit(X[lo:lo + 25], y[lo:lo + 25], baseline=base[lo:lo + 25])
    np.testing.assert_array_equal(a.weights_, b.weights_)
    assert b.n_steps_ == 80


def test_predict_uses_frozen_weights():
    X, y, base = sample()
    est = OnlineMultiObjectivePredictor(eta=0.3, tau=20).fit(X, y, baseline=base)
    q = est.weights_
    p = est.predict(X[:10], baseline=base[:10])
    assert np.all((0 <= p) & (p <= 1))
    np.testing.assert_array_equal(est.weights_, q)


def test_ma_only_needs_no_baseline():
    X, y, _ = sample()
    est = OnlineMultiObjectivePredictor(problem="ma", learner="hedge", eta="optimal")
    p = est.fit_predict(X, y)
    assert set(np.unique(p)) <= {0.0, 1.0}


def test_input_checks():
    X, y, base = sample()
    with pytest.raises(NotFittedError):
        OnlineMultiObjectivePredictor().predict(X)
    with pytest.raises(ValueError):
        OnlineMultiObjectivePredictor().fit(X, y)
    with pytest.raises(ValueError):
        OnlineMultiObjectivePredictor().fit(X * 3, y, baseline=base)
    with pytest.raises(ValueError):
        OnlineMultiObjectivePredictor().fit(X, y + 2, baseline=base)
    est = OnlineMultiObjectivePredictor().fit(X, y, baseline=base)
    with pytest.raises(ValueError):
        est.predict(X[:, :1], baseline=base)

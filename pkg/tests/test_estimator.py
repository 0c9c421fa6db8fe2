import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mfmcps import PolicySearch
from mfmcps.bench import SincEnv, generate_grid_dataset
from mfmcps.core import make_rng
from mfmcps.harness import ExperimentConfig
from mfmcps.mfmc import MFMCEstimator
from mfmcps.optim import run_optimizer


@pytest.fixture(scope="module")
def data():
    return generate_grid_dataset(SincEnv(), 200, make_rng(0, 1000))


def test_params_roundtrip():
    est = PolicySearch(algorithm="mcpn-sf", iterations=20, delta=0.05)
    params = est.get_params()
    assert params["algorithm"] == "mcpn-sf" and params["delta"] == 0.05
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(iterations=7)
    assert twin.iterations == 7


@pytest.mark.parametrize(
    "algorithm", ["mcpg-spsa", "mcpg-sf", "mcpn-spsa", "mcpn-sf", "mcpn-woodbury", "risk-mcpg", "risk-mcpn"]
)
def test_fit_predict_score(data, algorithm):
    est = PolicySearch(algorithm=algorithm, iterations=30).fit(data)
    assert 0.0 <= est.theta_bar_[0] <= 1.0
    X = np.array([[-1.0], [0.5]])
    np.testing.assert_allclose(est.predict(X), est.theta_bar_[0] * X)
    assert est.score() == -est.evaluator_(est.theta_bar_)
    assert len(est.trace_) == 30


def test_array_input_matches_dataset(data):
    a = PolicySearch(iterations=15).fit(data)
    b = PolicySearch(iterations=15).fit(data.to_array())
    assert a.trace_.theta.tobytes() == b.trace_.theta.tobytes()
    assert a.n_features_in_ == 4


def test_matches_harness_run(data):
    cfg = ExperimentConfig(iterations=25)
    ev = MFMCEstimator(gamma=0.95, x0=-1.0).fit(data)
    tr = run_optimizer(cfg.optimizer_config("mcpg-sf"), ev, 25, seed=3)
    est = PolicySearch(algorithm="mcpg-sf", iterations=25, random_state=3).fit(data)
    assert est.trace_.theta.tobytes() == tr.theta.tobytes()


def test_score_on_other_data(data):
    est = PolicySearch(iterations=10).fit(data)
    other = generate_grid_dataset(SincEnv(), 200, make_rng(0, 1001))
    assert np.isfinite(est.score(other))


def test_not_fitted():
    with pytest.raises(NotFittedError):
        PolicySearch().predict([[0.0]])

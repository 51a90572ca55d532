import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.utils.estimator_checks import (check_estimators_unfitted, check_get_params_invariance,
                                            check_set_params)

from fedkernel import FedAvgRegressor, FedProxRegressor, MinNormLeastSquares
from fedkernel.data import FederatedDataset
from fedkernel.datagen import ScenarioSpec, chebyshev_u5, generate
from fedkernel.engine import AlgorithmConfig, run_training
from fedkernel.kernels import KernelSpec

ESTIMATORS = [FedAvgRegressor(), FedAvgRegressor(local_steps=5), FedProxRegressor(), MinNormLeastSquares()]


def pooled(spec):
    ds = generate(spec)
    return ds, ds.x, ds.y, ds.client_index


@pytest.mark.parametrize("est", ESTIMATORS, ids=lambda e: type(e).__name__)
def test_sklearn_conventions(est):
    name = type(est).__name__
    check_get_params_invariance(name, est)
    check_set_params(name, est)
    check_estimators_unfitted(name, est)
    c = clone(est)
    assert c.get_params() == est.get_params() and c is not est


@pytest.mark.parametrize("cls", [FedAvgRegressor, FedProxRegressor])
def test_predict_before_fit(cls):
    with pytest.raises(NotFittedError):
        cls().predict(np.zeros((1, 2)))


@pytest.mark.parametrize("key, est", [("fedavg:3", FedAvgRegressor(local_steps=3, max_rounds=40)),
                                      ("fedprox", FedProxRegressor(max_rounds=40))])
def test_matches_engine(key, est):
    ds, X, y, groups = pooled(ScenarioSpec("linear-model-heterogeneous", M=4, sizes=(5, 8, 5, 8), d=3,
                                           gamma=1.0))
    est.fit(X, y, groups=groups)
    ref = run_training(ds, AlgorithmConfig.parse(key, eta=0.1, max_rounds=40))
    np.testing.assert_allclose(est.coef_, ref.final_state.theta, atol=1e-12)
    np.testing.assert_allclose(est.predict(X), X @ ref.final_state.theta, atol=1e-12)
    assert est.n_rounds_ == 40 and est.n_features_in_ == 3


def test_group_labels_define_clients():
    ds, X, y, groups = pooled(ScenarioSpec(M=3, sizes=(2, 4, 6), d=2))
    est = FedAvgRegressor(max_rounds=1).fit(X, y, groups=np.array(["c", "a", "b"])[groups])
    assert isinstance(est.dataset_, FederatedDataset)
    assert sorted(est.dataset_.sizes.tolist()) == [2, 4, 6]


def test_single_client_s1_is_gradient_descent():
    rng = np.random.default_rng(0)
    X, y = rng.standard_normal((10, 3)), rng.standard_normal(10)
    est = FedAvgRegressor(eta=0.2, max_rounds=5).fit(X, y)
    th = np.zeros(3)
    for _ in range(5):
        th = th - 0.2 / 10 * X.T @ (X @ th - y)
    np.testing.assert_allclose(est.coef_, th, atol=1e-14)


def test_monomial_fit_recovers_polynomial():
    ds, X, y, groups = pooled(ScenarioSpec("chebyshev", M=4, sizes=50, d=6, sigma=0.0))
    short = FedAvgRegressor(kernel="monomial", degree=5, max_rounds=200).fit(X, y, groups)
    est = FedAvgRegressor(kernel="monomial", degree=5, max_rounds=5000).fit(X, y, groups)
    mnls = MinNormLeastSquares(kernel="monomial", degree=5).fit(X, y)
    grid = np.linspace(-0.9, 0.9, 11).reshape(-1, 1)
    np.testing.assert_allclose(mnls.predict(grid), chebyshev_u5(grid[:, 0]), atol=1e-8)
    assert est.predict(grid).shape == (11,)
    assert est.score(X, y) > short.score(X, y) > 0.0


def test_callable_kernel_uses_dual_form():
    rng = np.random.default_rng(1)
    X, y = rng.standard_normal((8, 2)), rng.standard_normal(8)
    lin = KernelSpec.from_callable(lambda a, b: float(a @ b), 2)
    dual = FedAvgRegressor(kernel=lin, max_rounds=10).fit(X, y, groups=np.arange(8) % 2)
    primal = FedAvgRegressor(max_rounds=10).fit(X, y, groups=np.arange(8) % 2)
    assert hasattr(dual, "dual_coef_") and not hasattr(dual, "coef_")
    Z = rng.standard_normal((4, 2))
    np.testing.assert_allclose(dual.predict(Z), primal.predict(Z), atol=1e-10)


def test_minibatch_random_state():
    ds, X, y, groups = pooled(ScenarioSpec(M=2, sizes=8, d=2))
    a = FedAvgRegressor(batch_size=2, max_rounds=5, random_state=3).fit(X, y, groups).coef_
    b = FedAvgRegressor(batch_size=2, max_rounds=5, random_state=3).fit(X, y, groups).coef_
    np.testing.assert_array_equal(a, b)


def test_min_norm_interpolates():
    X = np.array([[1.0, 0.0, 0.0]])
    est = MinNormLeastSquares().fit(X, [2.0])
    np.testing.assert_allclose(est.coef_, [2.0, 0.0, 0.0], atol=1e-15)

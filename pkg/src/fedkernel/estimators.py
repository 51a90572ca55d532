"""scikit-learn style wrappers around the federated engine.

Clients are identified by a ``groups`` array passed to ``fit``, the same way
grouped cross-validation splitters receive them::

    est = FedAvgRegressor(local_steps=5, max_rounds=500).fit(X, y, groups=client_ids)
    est.predict(X_new)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import FederatedDataset
from .engine import AlgorithmConfig, predict, run_training
from .kernels import feature_matrix, resolve_kernel
from .metrics import min_norm_least_squares

__all__ = ["FedAvgRegressor", "FedProxRegressor", "MinNormLeastSquares"]


class _FederatedRegressor(RegressorMixin, BaseEstimator):
    _algorithm = "fedavg"

    def _config(self) -> AlgorithmConfig:
        return AlgorithmConfig(self._algorithm, local_steps=getattr(self, "local_steps", 1), eta=self.eta,
                               batch_size=self.batch_size, max_rounds=self.max_rounds,
                               early_stop=self.early_stop)

    def fit(self, X, y, groups=None):
        """Train on pooled ``(X, y)`` split into clients by ``groups``.

        Without ``groups`` all rows belong to a single client.
        """
        X, y = check_X_y(X, y, y_numeric=True)
        groups = np.zeros(X.shape[0], dtype=int) if groups is None else np.asarray(groups)
        self.kernel_ = resolve_kernel(self.kernel, self.degree, X.shape[1])
        self.n_features_in_ = X.shape[1]
        ds = FederatedDataset.from_arrays(X, y, groups, kernel=self.kernel_, sigma=self.sigma)
        config = self._config()
        rep = "primal" if self.kernel_.has_feature_map else "dual"
        self.trace_ = run_training(ds, config, seed=self.random_state or 0, representation=rep,
                                   snapshot_every=max(1, config.max_rounds))
        self.state_ = self.trace_.final_state
        self.n_rounds_ = self.state_.round
        self.dataset_ = ds
        if rep == "primal":
            self.coef_ = self.state_.theta
        else:
            self.dual_coef_ = self.state_.alpha
        return self

    def predict(self, X):
        check_is_fitted(self, "state_")
        X = check_array(X)
        return predict(self.state_, self.dataset_, X)


class FedAvgRegressor(_FederatedRegressor):
    """Kernel regression trained with FedAvg.

    Parameters
    ----------
    local_steps : int, default=1
        Local gradient steps per round.
    eta : float, default=0.1
    max_rounds : int, default=100
    batch_size : int, optional
        Minibatch size per client; ``None`` uses full local batches.
    early_stop : bool, default=False
        Stop at the spectral early-stopping time (needs ``sigma > 0``).
    sigma : float, default=0.0
        Noise level used by the early-stopping rule.
    kernel : {"linear", "monomial"} or KernelSpec, default="linear"
    degree : int, default=5
        Degree for the monomial kernel.
    random_state : int, optional
        Seeds the minibatch order.

    Attributes
    ----------
    coef_ : ndarray of shape (d,)
        Global coefficients (finite-rank kernels).
    dual_coef_ : ndarray of shape (N,)
        Dual weights (kernels without a feature map).
    trace_ : RoundTrace
    """

    _algorithm = "fedavg"

    def __init__(self, local_steps=1, eta=0.1, max_rounds=100, batch_size=None, early_stop=False,
                 sigma=0.0, kernel="linear", degree=5, random_state=None):
        self.local_steps = local_steps
        self.eta = eta
        self.max_rounds = max_rounds
        self.batch_size = batch_size
        self.early_stop = early_stop
        self.sigma = sigma
        self.kernel = kernel
        self.degree = degree
        self.random_state = random_state


class FedProxRegressor(_FederatedRegressor):
    """Kernel regression trained with FedProx (exact proximal solves).

    Parameters are those of :class:`FedAvgRegressor` without ``local_steps``;
    ``eta`` is the proximal weight.
    """

    _algorithm = "fedprox"

    def __init__(self, eta=0.1, max_rounds=100, batch_size=None, early_stop=False, sigma=0.0,
                 kernel="linear", degree=5, random_state=None):
        self.eta = eta
        self.max_rounds = max_rounds
        self.batch_size = batch_size
        self.early_stop = early_stop
        self.sigma = sigma
        self.kernel = kernel
        self.degree = degree
        self.random_state = random_state


class MinNormLeastSquares(RegressorMixin, BaseEstimator):
    """Minimum-norm least squares in feature space; the local baseline.

    Parameters
    ----------
    kernel : {"linear", "monomial"} or KernelSpec, default="linear"
    degree : int, default=5
    rcond : float, default=1e-10
        Relative cut-off below which singular values are treated as zero.
    """

    def __init__(self, kernel="linear", degree=5, rcond=1e-10):
        self.kernel = kernel
        self.degree = degree
        self.rcond = rcond

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.kernel_ = resolve_kernel(self.kernel, self.degree, X.shape[1])
        self.n_features_in_ = X.shape[1]
        self.coef_ = min_norm_least_squares(feature_matrix(self.kernel_, X), y, self.rcond)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return feature_matrix(self.kernel_, X) @ self.coef_

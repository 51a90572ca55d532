"""Measured quantities: gradients, errors, baselines, federation gain, exceedance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import FederatedDataset
from .datagen import ScenarioSpec, generate, resample_responses, trial_seed
from .engine import AlgorithmConfig, affine_round_map, evolve_affine, final_theta
from .exceptions import ConfigurationError, DegenerateRunError, InputShapeError
from .kernels import KernelSpec, feature_matrix
from .spectral import gamma, heterogeneity_residual, kappa

__all__ = [
    "MetricTrace",
    "global_gradient_norm",
    "estimation_error",
    "empirical_prediction_error",
    "min_norm_least_squares",
    "federation_gain",
    "federation_errors",
    "federation_gain_empirical",
    "mse_monte_carlo",
    "mse_gram",
    "exceedance_threshold",
    "empirical_exceedance",
    "prediction_errors_under_noise",
    "crossing_point",
]

MC_SAMPLES = 100_000
# offset added to the run seed for Monte-Carlo integration points
MC_SEED_STRIDE = 7919


@dataclass
class MetricTrace:
    """Per-round values of one scalar metric."""

    name: str
    rounds: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rounds = np.asarray(self.rounds)
        self.values = np.asarray(self.values, dtype=float)
        if self.rounds.shape != self.values.shape:
            raise InputShapeError(f"{self.rounds.shape[0]} rounds but {self.values.shape[0]} values")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def final(self) -> float:
        return float(self.values[-1])


def global_gradient_norm(theta, dataset: FederatedDataset) -> float:
    """``||(2/N) sum_i Phi_i^T (Phi_i theta - y_i)||`` for ``l = (1/N) sum_i ||y_i - Phi_i theta||^2``."""
    theta = np.asarray(theta, dtype=float)
    Phi = dataset.feature_stack
    grad = (2.0 / dataset.N) * (Phi.T @ (Phi @ theta - dataset.y))
    norms = np.linalg.norm(grad, axis=0)
    # a (d, k) batch of coefficient vectors gives k norms
    return float(norms) if norms.ndim == 0 else norms


def estimation_error(theta, theta_ref) -> float:
    """Euclidean distance ``||theta - theta_ref||``."""
    theta = np.asarray(theta, dtype=float)
    ref = np.asarray(theta_ref, dtype=float)
    if theta.shape[-1] != ref.shape[-1]:
        raise InputShapeError(f"dimensions differ: {theta.shape[-1]} vs {ref.shape[-1]}")
    out = np.linalg.norm(theta - ref, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def empirical_prediction_error(predictions, reference, N: Optional[int] = None) -> float:
    """``(1/N) ||f_t(x) - f(x)||^2``; ``N`` defaults to the vector length."""
    p = np.asarray(predictions, dtype=float).reshape(-1)
    r = np.asarray(reference, dtype=float).reshape(-1)
    if p.shape != r.shape:
        raise InputShapeError(f"lengths differ: {p.shape[0]} vs {r.shape[0]}")
    N = p.shape[0] if N is None else N
    return float(np.sum((p - r) ** 2)) / N


def min_norm_least_squares(X, y, rcond: float = 1e-10) -> np.ndarray:
    """Minimum-norm least squares ``(X^T X)^+ X^T y``.

    Solved by SVD; singular values below ``rcond * s_max`` count as zero.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise InputShapeError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    theta, *_ = np.linalg.lstsq(X, y, rcond=rcond)
    return theta


def federation_gain(local_errors, federated_errors, squared: bool = True) -> float:
    """Ratio of mean local error to mean federated error.

    Inputs are per-trial distances ``||theta - theta_j*||``.  With
    ``squared=True`` the means are taken over squared distances (a risk ratio);
    otherwise over the distances themselves.
    """
    loc = np.asarray(local_errors, dtype=float)
    fed = np.asarray(federated_errors, dtype=float)
    if squared:
        loc, fed = loc ** 2, fed ** 2
    den = float(np.mean(fed))
    if den == 0.0 or not math.isfinite(den):
        raise DegenerateRunError(f"federated error mean is {den}; the gain is undefined")
    return float(np.mean(loc)) / den


def federation_errors(spec: ScenarioSpec, config: AlgorithmConfig, clients: Sequence[int],
                      trials: int, stop_time=None, first_trial: int = 0):
    """Per-trial local and federated distances to ``theta_j*``.

    Returns two arrays of shape ``(trials, len(clients))``.  Every trial draws a
    fresh dataset from ``trial_seed(spec.seed, trial)``.
    """
    if trials < 1:
        raise ConfigurationError("need at least one trial")
    loc = np.empty((trials, len(clients)))
    fed = np.empty((trials, len(clients)))
    for k in range(trials):
        seed = trial_seed(spec.seed, first_trial + k)
        ds = generate(spec.with_(seed=seed))
        theta = final_theta(ds, config, seed=seed, stop_time=stop_time)
        for c, j in enumerate(clients):
            ref = ds.true_theta(j)
            local = min_norm_least_squares(ds.features[j], ds.clients[j].y)
            loc[k, c] = np.linalg.norm(local - ref)
            fed[k, c] = np.linalg.norm(theta - ref)
    return loc, fed


def federation_gain_empirical(spec: ScenarioSpec, config: AlgorithmConfig, client: int, trials: int,
                              stop_time=None, squared: bool = True) -> float:
    """Empirical federation gain of ``client`` over ``trials`` fresh datasets.

    The local estimator is minimum-norm least squares on the client's own data;
    the federated model is the global model at the stop round.
    """
    loc, fed = federation_errors(spec, config, [client], trials, stop_time)
    return federation_gain(loc[:, 0], fed[:, 0], squared=squared)


def _as_function(f, kernel: Optional[KernelSpec]) -> Callable:
    if callable(f):
        return f
    coef = np.asarray(f, dtype=float)
    kernel = kernel or KernelSpec.monomial(coef.shape[0] - 1)
    return lambda x: feature_matrix(kernel, x) @ coef


def mse_monte_carlo(f_hat, f_true, domain=(-1.0, 1.0), samples: int = MC_SAMPLES, seed: int = 0,
                    kernel: Optional[KernelSpec] = None) -> float:
    """Monte-Carlo estimate of ``int_a^b (f_hat - f_true)^2 dx``.

    ``f_hat`` and ``f_true`` are callables or coefficient vectors (monomial
    basis unless ``kernel`` says otherwise).  The sample average is multiplied
    by the interval length.
    """
    if samples < 1:
        raise ConfigurationError("need at least one Monte-Carlo sample")
    a, b = map(float, domain)
    rng = np.random.default_rng(seed + MC_SEED_STRIDE)
    x = rng.uniform(a, b, samples)
    diff = _as_function(f_hat, kernel)(x) - _as_function(f_true, kernel)(x)
    return float(np.mean(diff ** 2)) * (b - a)


def mse_gram(kernel: KernelSpec, domain=(-1.0, 1.0), samples: int = MC_SAMPLES, seed: int = 0) -> np.ndarray:
    """Matrix ``G`` with ``e^T G e`` equal to :func:`mse_monte_carlo` of a coefficient error ``e``.

    Uses the same sample points, so batches of fits share one integration rule.
    """
    a, b = map(float, domain)
    rng = np.random.default_rng(seed + MC_SEED_STRIDE)
    Phi = feature_matrix(kernel, rng.uniform(a, b, samples))
    return (b - a) * (Phi.T @ Phi) / samples


def exceedance_threshold(dataset: FederatedDataset, config: AlgorithmConfig, f, t: int, f0=None) -> float:
    """High-probability level ``(3k / (2e eta t s)) (||f0 - f||^2 + 3) + (3k / N) ||Delta_f||^2``."""
    k = kappa(gamma(dataset, config.eta), config)
    f = np.asarray(f, dtype=float)
    f0 = np.zeros_like(f) if f0 is None else np.asarray(f0, dtype=float)
    _, dnorm = heterogeneity_residual(dataset, f)
    dist2 = float(np.sum((f0 - f) ** 2))
    return (3.0 * k / (2.0 * math.e * config.eta * t * config.s) * (dist2 + 3.0)
            + 3.0 * k * dnorm ** 2 / dataset.N)


def prediction_errors_under_noise(dataset: FederatedDataset, config: AlgorithmConfig, f, t: int,
                                  draws: int, seed: int = 0, f0=None, noise: str = "gaussian",
                                  df: float = 5.0) -> np.ndarray:
    """``||f_t - f||_N^2`` for ``draws`` noise redraws on fixed covariates and true models."""
    rng = np.random.default_rng(seed)
    Y = resample_responses(dataset, rng, draws, noise=noise, df=df).T
    A, b = affine_round_map(dataset, config, responses=Y)
    theta0 = np.zeros(dataset.d) if f0 is None else np.asarray(f0, dtype=float)
    thetas = evolve_affine(A, b, theta0, t)
    Phi = dataset.feature_stack
    return np.mean((Phi @ thetas - (Phi @ np.asarray(f, dtype=float))[:, None]) ** 2, axis=0)


def empirical_exceedance(dataset: FederatedDataset, config: AlgorithmConfig, f, t: int, draws: int = 500,
                         seed: int = 0, f0=None, threshold: Optional[float] = None,
                         noise: str = "gaussian", df: float = 5.0) -> float:
    """Fraction of noise redraws with ``||f_t - f||_N^2`` above the threshold.

    The threshold defaults to :func:`exceedance_threshold`.
    """
    if draws < 100:
        raise ConfigurationError(f"need at least 100 noise draws, got {draws}")
    if t < 1:
        raise ConfigurationError("the threshold is defined for t >= 1")
    thr = exceedance_threshold(dataset, config, f, t, f0) if threshold is None else float(threshold)
    err = prediction_errors_under_noise(dataset, config, f, t, draws, seed, f0, noise, df)
    return float(np.mean(err > thr))


def crossing_point(x, y, level: float = 1.0, log: bool = True) -> float:
    """First ``x`` at which ``y`` crosses ``level``, interpolated between samples.

    Interpolation is linear in ``log y`` (and ``log x`` when all ``x > 0``) if
    ``log`` is set.  Returns ``nan`` when no crossing occurs.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    side = np.sign(y - level)
    for k in range(len(y) - 1):
        if side[k] == 0:
            return float(x[k])
        if side[k] * side[k + 1] < 0:
            if log and y[k] > 0 and y[k + 1] > 0:
                fy = np.log([y[k], y[k + 1]])
                lv = math.log(level)
            else:
                fy = np.array([y[k], y[k + 1]])
                lv = level
            use_logx = log and x[k] > 0 and x[k + 1] > 0
            fx = np.log([x[k], x[k + 1]]) if use_logx else x[k:k + 2]
            frac = (lv - fy[0]) / (fy[1] - fy[0])
            v = fx[0] + frac * (fx[1] - fx[0])
            return float(math.exp(v)) if use_logx else float(v)
    if len(y) and side[-1] == 0:
        return float(x[-1])
    return float("nan")

"""Computable quantities behind the convergence theory.

The prediction recursion is governed by the eigenvalues ``Lambda_i`` of
``K_x P``.  They are computed from the symmetric similar matrix
``P^{1/2} K_x P^{1/2}``, where ``P^{1/2}`` is assembled block by block from the
eigendecompositions of the local Gram matrices (each ``P_ii`` is a polynomial or
an inverse of the symmetric ``K_{x_i}``).  No global dense square root is taken.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Union

import numpy as np
from scipy import linalg

from .data import FederatedDataset
from .engine import AlgorithmConfig, affine_round_map
from .exceptions import ConfigurationError, DegeneracyError, NumericError, StabilityError
from .kernels import feature_matrix, gram

__all__ = [
    "kernel_eigenvalues",
    "gamma",
    "kappa",
    "SpectralReport",
    "spectral_report",
    "DeltaValue",
    "delta1",
    "delta2",
    "rademacher",
    "EarlyStop",
    "early_stopping_T",
    "heterogeneity_residual",
    "TheoryBound",
    "theory_bound",
    "LimitModel",
    "limit_model",
    "FGPrediction",
    "fg_lower_bound",
    "fg_predictor",
]

RANK_TOL = 1e-10
EARLY_STOP_CAP = 10 ** 6
SINGULAR_COND = 1e12


def _client_gram_spectrum(dataset: FederatedDataset, i: int):
    """Eigen-pairs of the local Gram ``K_{x_i}`` (normalized by ``n_i``)."""
    K = gram(dataset.kernel, dataset.clients[i].x).entries
    mu, V = np.linalg.eigh(K)
    return mu, V


def _client_gram_norm(dataset: FederatedDataset, i: int) -> float:
    c = dataset.clients[i]
    if dataset.kernel.has_feature_map:
        Phi = dataset.features[i]
        if Phi.shape[1] < c.n:
            # the nonzero spectrum of Phi Phi^T / n equals that of Phi^T Phi / n
            return float(np.linalg.eigvalsh(Phi.T @ Phi / c.n)[-1])
    return float(np.linalg.eigvalsh(gram(dataset.kernel, c.x).entries)[-1])


def kernel_eigenvalues(dataset: FederatedDataset) -> np.ndarray:
    """Eigenvalues ``lambda_1 >= ... >= lambda_N`` of the global Gram ``K_x``."""
    N = dataset.N
    if dataset.kernel.has_feature_map and dataset.d < N:
        Phi = dataset.feature_stack
        nz = np.linalg.eigvalsh(Phi.T @ Phi / N)[::-1]
        return np.concatenate([nz, np.zeros(N - nz.shape[0])])
    return np.linalg.eigvalsh(gram(dataset.kernel, dataset.x).entries)[::-1]


def gamma(dataset: FederatedDataset, eta: float) -> float:
    """``eta * max_i ||K_{x_i}||``; FedAvg is stable when this is below one."""
    if eta == 0:
        return 0.0
    return float(eta) * max(_client_gram_norm(dataset, i) for i in range(dataset.M))


def kappa(gamma_value: float, config: AlgorithmConfig) -> float:
    """Upper bound on the condition number of ``P``."""
    g = float(gamma_value)
    if config.is_prox:
        return 1.0 + g
    if g >= 1.0:
        raise StabilityError(f"FedAvg needs gamma < 1, got {g:.6g}")
    s = config.local_steps
    if s == 1 or g == 0.0:
        return 1.0
    if g < 1e-8:
        # series of g s / (1 - (1 - g)^s) around g = 0
        return 1.0 + 0.5 * (s - 1) * g + (s * s - 1) / 12.0 * g * g
    return g * s / -math.expm1(s * math.log1p(-g))


@dataclass(frozen=True)
class SpectralReport:
    """Spectral summary of one (dataset, algorithm) pair."""

    algorithm: str
    eta: float
    s: int
    N: int
    gamma: float
    kappa: float
    lam: np.ndarray
    Lam: np.ndarray
    rank: int
    cond_P: float

    @property
    def lam_rank(self) -> float:
        """Smallest numerically nonzero eigenvalue of ``K_x``."""
        return float(self.lam[self.rank - 1]) if self.rank else 0.0

    def to_rows(self) -> list:
        """``(name, index, value)`` rows for CSV output."""
        rows = [("gamma", 0, self.gamma), ("kappa", 0, self.kappa),
                ("rank", 0, float(self.rank)), ("cond_P", 0, self.cond_P)]
        rows += [("lambda", i + 1, float(v)) for i, v in enumerate(self.lam)]
        rows += [("Lambda", i + 1, float(v)) for i, v in enumerate(self.Lam)]
        return rows


def _p_spectrum(mu: np.ndarray, config: AlgorithmConfig) -> np.ndarray:
    eta = config.eta
    if config.is_prox:
        return 1.0 / (1.0 + eta * mu)
    z = 1.0 - eta * mu
    out = np.zeros_like(mu)
    term = np.ones_like(mu)
    for _ in range(config.local_steps):
        out += term
        term = term * z
    return out


def spectral_report(dataset: FederatedDataset, config: AlgorithmConfig) -> SpectralReport:
    """Eigen-structure of ``K_x`` and ``K_x P`` together with gamma and kappa."""
    g = gamma(dataset, config.eta)
    k = kappa(g, config)
    try:
        halves = []
        p_vals = []
        for i in range(dataset.M):
            mu, V = _client_gram_spectrum(dataset, i)
            pv = _p_spectrum(mu, config)
            if np.any(pv <= 0):
                raise StabilityError(f"P block of client {i} is not positive definite")
            p_vals.append(pv)
            halves.append((V * np.sqrt(pv)) @ V.T)
        Phalf = linalg.block_diag(*halves)
        K_x = gram(dataset.kernel, dataset.x).entries
        S = Phalf @ K_x @ Phalf
        Lam = np.linalg.eigvalsh(0.5 * (S + S.T))[::-1]
        lam = np.linalg.eigvalsh(K_x)[::-1]
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"eigensolve failed ({exc}); cond(K_x) ~ {np.linalg.cond(gram(dataset.kernel, dataset.x).entries):.3g}"
        ) from exc
    pv = np.concatenate(p_vals)
    rank = int(np.sum(lam > RANK_TOL * lam[0])) if lam[0] > 0 else 0
    return SpectralReport(config.algorithm, config.eta, config.s, dataset.N, g, k, lam, Lam, rank,
                          float(pv.max() / pv.min()))


class DeltaValue(NamedTuple):
    value: float
    bound: float


def delta1(report: SpectralReport, eta: float, s: int, t: int) -> DeltaValue:
    """Bias factor ``(1/s) max_i (1 - eta Lambda_i)^{2t} Lambda_i`` and its bound ``1/(2e eta t s)``."""
    Lam = np.clip(report.Lam, 0.0, None)
    val = float(np.max((1.0 - eta * Lam) ** (2 * t) * Lam)) / s
    return DeltaValue(val, 1.0 / (2.0 * math.e * eta * t * s))


def delta2(report: SpectralReport, eta: float, t: int) -> DeltaValue:
    """Variance factor ``(1/N) sum_i (1 - (1 - eta Lambda_i)^t)^2`` and its bound."""
    Lam = np.clip(report.Lam, 0.0, None)
    N = report.N
    val = float(np.sum((1.0 - (1.0 - eta * Lam) ** t) ** 2)) / N
    bound = float(np.sum(np.minimum(1.0, eta * t * Lam))) / N
    return DeltaValue(val, bound)


def rademacher(lam, N: int, epsilon: float) -> float:
    """Empirical Rademacher complexity ``sqrt((1/N) sum_i min(lambda_i, eps^2))``."""
    lam = np.clip(np.asarray(lam, dtype=float), 0.0, None)
    return math.sqrt(float(np.sum(np.minimum(lam, epsilon * epsilon))) / N)


class EarlyStop(NamedTuple):
    T: int
    saturated: bool


def early_stopping_T(lam, N: int, eta: float, s: int, sigma: float,
                     cap: int = EARLY_STOP_CAP) -> EarlyStop:
    """Largest ``t`` with ``R(1/sqrt(eta t s)) <= 1 / (sqrt(2e) sigma eta t s)``.

    Scans ``t = 1, 2, ...`` and stops at the first violation; returns ``T = 0``
    when ``t = 1`` already fails and ``(cap, saturated=True)`` when no violation
    occurs up to ``cap``.
    """
    lam = np.sort(np.clip(np.asarray(lam, dtype=float), 0.0, None))
    if sigma <= 0 or lam.size == 0 or lam[-1] == 0:
        return EarlyStop(cap, True)
    prefix = np.concatenate([[0.0], np.cumsum(lam)])
    chunk = 1 << 16
    start = 1
    while start <= cap:
        t = np.arange(start, min(cap, start + chunk - 1) + 1, dtype=float)
        c = 1.0 / (eta * t * s)
        k = np.searchsorted(lam, c, side="right")
        r2 = (prefix[k] + c * (lam.size - k)) / N
        ok = np.sqrt(r2) <= c / (math.sqrt(2.0 * math.e) * sigma)
        bad = np.flatnonzero(~ok)
        if bad.size:
            return EarlyStop(int(t[bad[0]]) - 1, False)
        start = int(t[-1]) + 1
    return EarlyStop(cap, True)


def _evaluate(dataset: FederatedDataset, f) -> np.ndarray:
    if callable(f):
        return np.asarray(f(dataset.x), dtype=float).reshape(-1)
    return dataset.feature_stack @ np.asarray(f, dtype=float)


def heterogeneity_residual(dataset: FederatedDataset, f):
    """Stacked ``f_i*(x_i) - f(x_i)``; returns ``(vector, norm)``.

    ``f`` is a coefficient vector or a callable on the stacked covariates.
    """
    if not dataset.has_true_models:
        raise ConfigurationError("heterogeneity residual needs the true local models")
    delta = dataset.true_values() - _evaluate(dataset, f)
    return delta, float(np.linalg.norm(delta))


@dataclass(frozen=True)
class TheoryBound:
    """Three-term expected prediction-error bound at round ``t``."""

    t: int
    bias: float
    variance: float
    heterogeneity: float
    finite_rank: Optional[float] = None

    @property
    def total(self) -> float:
        return self.bias + self.variance + self.heterogeneity


def theory_bound(report: SpectralReport, dataset: FederatedDataset, f, f0, sigma: float, t: int,
                 config: AlgorithmConfig) -> TheoryBound:
    """Bias, variance and heterogeneity terms of the prediction-error bound.

    ``f`` and ``f0`` are coefficient vectors (the RKHS norm is their Euclidean
    distance).  When the Gram matrix is rank deficient the exponential
    finite-rank form is returned as ``finite_rank``.
    """
    if t < 1:
        raise ConfigurationError("the bound is stated for t >= 1")
    k = report.kappa
    s = config.s
    eta = config.eta
    dist2 = float(np.sum((np.asarray(f0, dtype=float) - np.asarray(f, dtype=float)) ** 2))
    _, dnorm = heterogeneity_residual(dataset, f)
    N = dataset.N
    bias = 3.0 * k * delta1(report, eta, s, t).value * dist2
    var = 3.0 * k * delta2(report, eta, t).value * sigma ** 2
    het = 3.0 * k * dnorm ** 2 / N
    fr = None
    if report.rank < N:
        dr = report.rank
        fr = (3.0 * k / (eta * s) * dist2 * math.exp(-2.0 * eta * s / k * report.lam_rank * t)
              + 3.0 * k * sigma ** 2 * dr / N + het)
    return TheoryBound(t, bias, var, het, fr)


@dataclass(frozen=True)
class LimitModel:
    """Noise-free fixed point ``theta_bar`` and its distance bounds."""

    theta_bar: np.ndarray
    rho_N: float
    kappa: float
    client_bounds: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def contraction(self, s: int, eta: float) -> float:
        return 1.0 - s * eta * self.rho_N / self.kappa


def limit_model(dataset: FederatedDataset, config: AlgorithmConfig) -> LimitModel:
    """Fixed point of the noise-free coefficient recursion ``theta -> A theta + b``.

    ``b`` is the image of the true responses ``(f_1*(x_1), ..., f_M*(x_M))``.
    Also returns ``rho_N = lambda_min(Phi^T Phi) / N`` and, for each client ``j``,
    ``sqrt(kappa / (N rho_N)) * ||Delta_{f_j*}||``.
    """
    if not dataset.kernel.has_feature_map:
        raise ConfigurationError("the limit model needs a finite-rank feature map")
    truth = dataset.true_values()
    A, b = affine_round_map(dataset, config, responses=truth)
    d = A.shape[0]
    IA = np.eye(d) - A
    cond = np.linalg.cond(IA)
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise DegeneracyError(
            f"I - A is numerically singular (condition {cond:.3g}); some feature direction is unobserved")
    theta_bar = linalg.solve(IA, b)
    Phi = dataset.feature_stack
    N = dataset.N
    rho = float(np.linalg.eigvalsh(Phi.T @ Phi)[0]) / N
    k = kappa(gamma(dataset, config.eta), config)
    bounds = []
    for j in range(dataset.M):
        delta = truth - _evaluate(dataset, _client_model(dataset, j))
        bounds.append(math.sqrt(k / (N * rho)) * float(np.linalg.norm(delta)) if rho > 0 else math.inf)
    return LimitModel(theta_bar, rho, k, np.array(bounds), A, b)


def _client_model(dataset: FederatedDataset, j: int) -> Union[np.ndarray, Callable]:
    c = dataset.clients[j]
    return c.theta_star if c.theta_star is not None else c.f_star


@dataclass(frozen=True)
class FGPrediction:
    """Order-level federation-gain lower bound (unnamed constants set to 1)."""

    value: float
    data_scarce_threshold: float
    data_rich_threshold: float
    subspace_value: Optional[float] = None
    order_level: bool = True


def fg_lower_bound(kappa_value: float, sigma: float, d: int, n_j: int, N: int, B: float,
                   Gamma: float, r_j: Optional[int] = None) -> FGPrediction:
    """Federation-gain predictor for client ``j`` from the problem sizes alone."""
    if Gamma < 0 or B <= 0:
        raise ConfigurationError("need Gamma >= 0 and B > 0")
    local = min(sigma ** 2 * d / n_j, B ** 2)
    fed = sigma ** 2 * d / N
    value = (local + max(1.0 - n_j / d, 0.0) * B ** 2) / (fed + Gamma ** 2) / kappa_value
    sub = None
    if r_j is not None:
        sub = (local + (1.0 - r_j / d) * B ** 2) / fed / kappa_value if fed > 0 else math.inf
    scarce = B * math.sqrt(max(1.0 - n_j / d, 0.0))
    rich = min(sigma * math.sqrt(d / n_j), B)
    return FGPrediction(value, scarce, rich, sub)


def fg_predictor(dataset: FederatedDataset, config: AlgorithmConfig, sigma: float, B_ball: float,
                 Gamma: float, client: int, subspace_rank: Optional[int] = None) -> FGPrediction:
    """:func:`fg_lower_bound` with sizes and kappa taken from ``dataset``."""
    k = kappa(gamma(dataset, config.eta), config)
    return fg_lower_bound(k, sigma, dataset.d, int(dataset.sizes[client]), dataset.N, B_ball, Gamma,
                          subspace_rank)

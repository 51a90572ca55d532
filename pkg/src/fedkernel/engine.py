"""FedAvg and FedProx on kernel regression.

Two independent execution paths are provided:

* the *primal* path simulates every client literally in coefficient space
  (``theta``), which needs a finite-rank feature map;
* the *dual* path tracks weights ``alpha`` over all ``N`` training covariates and
  applies the closed-form prediction recursion through the block-diagonal
  matrix ``P``.  Predictions are ``f(z) = f0(z) + sum_j alpha_j k(z, x_j)``, so
  at the training points ``f(x) = f0(x) + N K_x alpha``.

The dual state update is ``alpha <- alpha + (eta / N) P^T (y - f(x))``.  It
follows from writing one round as ``f_t = f_{t-1} + (y - f_{t-1}(x)) . Psi``
with ``Psi = (eta / N) P k_x``, and it keeps the model evaluable anywhere,
not only at the training covariates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np
from scipy import linalg

from .data import FederatedDataset
from .exceptions import ConfigurationError, InputShapeError, StabilityError
from .kernels import as_points, feature_matrix, gram, kernel_matrix

__all__ = [
    "AlgorithmConfig",
    "ModelState",
    "RoundTrace",
    "local_gd_step",
    "fedavg_local_update",
    "fedprox_local_update",
    "aggregate",
    "run_round_primal",
    "build_dual_operator",
    "run_round_dual",
    "run_training",
    "predict",
    "affine_round_map",
    "evolve_affine",
    "affine_trajectory",
    "PrimalSimulator",
    "final_theta",
]

WEIGHT_TOL = 1e-8


@dataclass(frozen=True)
class AlgorithmConfig:
    """Algorithm choice and hyper-parameters.

    ``eta`` is the stepsize for FedAvg and the proximal weight for FedProx.
    ``batch_size=None`` means full batch.  ``local_steps`` is ignored by FedProx.
    """

    algorithm: str = "fedavg"
    local_steps: int = 1
    eta: float = 0.1
    batch_size: Optional[int] = None
    max_rounds: int = 100
    early_stop: bool = False
    theta0: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        algo = str(self.algorithm).lower()
        if algo not in ("fedavg", "fedprox"):
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        object.__setattr__(self, "algorithm", algo)
        if int(self.local_steps) != self.local_steps or self.local_steps < 1:
            raise ConfigurationError(f"local_steps must be an integer >= 1, got {self.local_steps}")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ConfigurationError(f"eta must be positive, got {self.eta}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_rounds < 0:
            raise ConfigurationError("max_rounds must be >= 0")
        if self.theta0 is not None:
            object.__setattr__(self, "theta0", np.asarray(self.theta0, dtype=float).reshape(-1))

    @property
    def is_prox(self) -> bool:
        return self.algorithm == "fedprox"

    @property
    def s(self) -> int:
        """Local-step count entering the theory (1 for FedProx)."""
        return 1 if self.is_prox else int(self.local_steps)

    @property
    def label(self) -> str:
        return "FedProx" if self.is_prox else f"FedAvg s={self.local_steps}"

    @property
    def key(self) -> str:
        return "fedprox" if self.is_prox else f"fedavg:{self.local_steps}"

    @classmethod
    def parse(cls, text: str, **kwargs) -> "AlgorithmConfig":
        """Build from ``"fedavg:5"``, ``"fedavg"`` or ``"fedprox"``."""
        name, _, steps = str(text).strip().lower().partition(":")
        if name == "fedprox":
            if steps:
                raise ConfigurationError("fedprox takes no local-step count")
            return cls("fedprox", **kwargs)
        return cls(name, local_steps=int(steps) if steps else 1, **kwargs)

    def with_(self, **kwargs) -> "AlgorithmConfig":
        return replace(self, **kwargs)

    def check_dataset(self, ds: FederatedDataset) -> None:
        if self.batch_size is not None and self.batch_size > ds.sizes.min():
            raise ConfigurationError(
                f"batch size {self.batch_size} exceeds the smallest client size {ds.sizes.min()}")

    def full_batch(self, ds: FederatedDataset) -> bool:
        return self.batch_size is None or all(self.batch_size == n for n in ds.sizes)


@dataclass(frozen=True)
class ModelState:
    """Global model after ``round`` rounds, as primal ``theta`` or dual ``alpha``.

    ``f0`` is the initial model for the dual form: ``None`` (zero), a coefficient
    vector, or a callable on an ``(n, p)`` point array.
    """

    round: int = 0
    theta: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None
    f0: Union[None, np.ndarray, Callable] = field(default=None, compare=False)

    @property
    def representation(self) -> str:
        return "primal" if self.theta is not None else "dual"


@dataclass
class RoundTrace:
    """Snapshots of a training run, including round 0."""

    rounds: np.ndarray
    thetas: Optional[np.ndarray] = None
    alphas: Optional[np.ndarray] = None
    predictions: Optional[np.ndarray] = None
    config: Optional[AlgorithmConfig] = None
    seed: Optional[int] = None
    f0: Union[None, np.ndarray, Callable] = None

    def __len__(self) -> int:
        return len(self.rounds)

    @property
    def completed_rounds(self) -> int:
        return int(self.rounds[-1])

    @property
    def final_state(self) -> ModelState:
        t = int(self.rounds[-1])
        if self.thetas is not None:
            return ModelState(t, theta=self.thetas[-1])
        return ModelState(t, alpha=self.alphas[-1], f0=self.f0)


# ---------------------------------------------------------------------------
# literal per-client operations
# ---------------------------------------------------------------------------

def _client_arrays(theta, Phi, y):
    theta = np.asarray(theta, dtype=float).reshape(-1)
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if Phi.shape[0] != y.shape[0]:
        raise InputShapeError(f"Phi has {Phi.shape[0]} rows but y has {y.shape[0]} entries")
    if Phi.shape[1] != theta.shape[0]:
        raise InputShapeError(f"Phi has {Phi.shape[1]} columns but theta has length {theta.shape[0]}")
    return theta, Phi, y


def local_gd_step(theta, Phi, y, eta: float) -> np.ndarray:
    """One local gradient step on ``(1 / 2n) ||Phi theta - y||^2``."""
    theta, Phi, y = _client_arrays(theta, Phi, y)
    n = y.shape[0]
    return theta - (eta / n) * (Phi.T @ (Phi @ theta - y))


def _batches(n: int, batch_size: int, rng) -> list:
    perm = rng.permutation(n)
    return [perm[k:k + batch_size] for k in range(0, n, batch_size)]


def fedavg_local_update(theta, Phi, y, eta: float, s: int = 1, batch_size: Optional[int] = None,
                        rng=None) -> np.ndarray:
    """``s`` local passes; with minibatches each pass visits every batch once.

    Batches come from a random permutation drawn from ``rng`` once per call
    (that is, once per round).  When ``batch_size`` does not divide ``n`` the
    last batch is smaller.
    """
    theta, Phi, y = _client_arrays(theta, Phi, y)
    n = y.shape[0]
    if batch_size is not None and batch_size > n:
        raise ConfigurationError(f"batch size {batch_size} exceeds client size {n}")
    if batch_size is None or batch_size == n:
        for _ in range(s):
            theta = local_gd_step(theta, Phi, y, eta)
        return theta
    rng = np.random.default_rng(rng)
    batches = _batches(n, batch_size, rng)
    for _ in range(s):
        for b in batches:
            theta = local_gd_step(theta, Phi[b], y[b], eta)
    return theta


def _prox_solve(theta_prev, Phi, y, eta: float) -> np.ndarray:
    n, d = Phi.shape
    c = eta / n
    if n < d:
        # Woodbury form: solve the n x n system instead of the d x d one
        gram_ = np.eye(n) + c * (Phi @ Phi.T)
        u = linalg.solve(gram_, y - Phi @ theta_prev, assume_a="pos")
        return theta_prev + c * (Phi.T @ u)
    lhs = np.eye(d) + c * (Phi.T @ Phi)
    return linalg.solve(lhs, theta_prev + c * (Phi.T @ y), assume_a="pos")


def fedprox_local_update(theta_prev, Phi, y, eta: float, batch_size: Optional[int] = None,
                         rng=None) -> np.ndarray:
    """Exact minimizer of ``l_i(theta) + ||theta - theta_prev||^2 / (2 eta)``.

    With minibatches the proximal problem is solved once per batch, each time
    anchored at the current local iterate.
    """
    theta, Phi, y = _client_arrays(theta_prev, Phi, y)
    n = y.shape[0]
    if batch_size is not None and batch_size > n:
        raise ConfigurationError(f"batch size {batch_size} exceeds client size {n}")
    if batch_size is None or batch_size == n:
        return _prox_solve(theta, Phi, y, eta)
    rng = np.random.default_rng(rng)
    for b in _batches(n, batch_size, rng):
        theta = _prox_solve(theta, Phi[b], y[b], eta)
    return theta


def aggregate(updates, weights) -> np.ndarray:
    """Weighted average ``sum_i w_i theta_i`` in fixed client order."""
    weights = np.asarray(weights, dtype=float).reshape(-1)
    updates = [np.asarray(u, dtype=float) for u in updates]
    if len(updates) != weights.shape[0]:
        raise InputShapeError(f"{len(updates)} updates but {weights.shape[0]} weights")
    if abs(weights.sum() - 1.0) > WEIGHT_TOL:
        raise ConfigurationError(f"aggregation weights sum to {weights.sum()!r}, not 1")
    shape = updates[0].shape
    if any(u.shape != shape for u in updates):
        raise InputShapeError("all client updates must have the same dimension")
    out = np.zeros(shape)
    for w, u in zip(weights, updates):
        out = out + w * u
    return out


# ---------------------------------------------------------------------------
# vectorized primal simulator
# ---------------------------------------------------------------------------

class PrimalSimulator:
    """Coefficient-space simulation of full rounds, cached per dataset.

    Full-batch updates use the client second moments ``H_i = Phi_i^T Phi_i / n_i``
    and ``g_i = Phi_i^T y_i / n_i``; this is the same map as
    :func:`local_gd_step` but costs ``O(d^2)`` instead of ``O(n_i d)``.
    Clients are processed together when their sizes agree.
    """

    def __init__(self, dataset: FederatedDataset, config: AlgorithmConfig):
        config.check_dataset(dataset)
        self.ds = dataset
        self.config = config
        self.M = dataset.M
        self.d = dataset.d
        self.w = dataset.weights
        Phis = dataset.features
        self.H = np.stack([P.T @ P / P.shape[0] for P in Phis])
        self.g = np.stack([P.T @ c.y / c.n for P, c in zip(Phis, dataset.clients)])
        self.full_batch = config.full_batch(dataset)
        self.equal_sizes = bool(np.all(dataset.sizes == dataset.sizes[0]))
        if self.equal_sizes:
            self.Phi_stack = np.stack(Phis)
            self.y_stack = np.stack([c.y for c in dataset.clients])
        self._chol = None
        if config.is_prox and self.full_batch:
            eye = np.eye(self.d)
            self._chol = [linalg.cho_factor(eye + config.eta * H) for H in self.H]

    def local_updates(self, theta: np.ndarray, rng=None) -> np.ndarray:
        """Return the ``(M, d)`` array of local models for global model ``theta``."""
        cfg = self.config
        eta = cfg.eta
        Theta = np.tile(theta, (self.M, 1))
        if self.full_batch:
            if cfg.is_prox:
                for i in range(self.M):
                    Theta[i] = linalg.cho_solve(self._chol[i], theta + eta * self.g[i])
                return Theta
            for _ in range(cfg.local_steps):
                Theta = Theta - eta * (np.matmul(self.H, Theta[:, :, None])[:, :, 0] - self.g)
            return Theta
        if rng is None:
            raise ConfigurationError("minibatch rounds need a random generator")
        if self.equal_sizes:
            return self._minibatch_stacked(Theta, rng)
        for i, (P, c) in enumerate(zip(self.ds.features, self.ds.clients)):
            if cfg.is_prox:
                Theta[i] = fedprox_local_update(theta, P, c.y, eta, cfg.batch_size, rng)
            else:
                Theta[i] = fedavg_local_update(theta, P, c.y, eta, cfg.local_steps, cfg.batch_size, rng)
        return Theta

    def _minibatch_stacked(self, Theta, rng):
        cfg = self.config
        n = self.Phi_stack.shape[1]
        B = cfg.batch_size
        # one permutation per client, drawn in client order like the loop path
        perms = np.stack([rng.permutation(n) for _ in range(self.M)])
        rows = np.arange(self.M)[:, None]
        batches = [perms[:, k:k + B] for k in range(0, n, B)]
        Xb = [self.Phi_stack[rows, idx] for idx in batches]
        yb = [self.y_stack[rows, idx] for idx in batches]
        eta = cfg.eta
        if cfg.is_prox:
            for X, y in zip(Xb, yb):
                Theta = _prox_solve_stacked(Theta, X, y, eta)
            return Theta
        for _ in range(cfg.local_steps):
            for X, y in zip(Xb, yb):
                resid = np.matmul(X, Theta[:, :, None])[:, :, 0] - y
                Theta = Theta - (eta / X.shape[1]) * np.matmul(X.transpose(0, 2, 1), resid[:, :, None])[:, :, 0]
        return Theta

    def step(self, theta: np.ndarray, rng=None) -> np.ndarray:
        Theta = self.local_updates(theta, rng)
        return self.w @ Theta

    def global_gradient(self, theta: np.ndarray) -> np.ndarray:
        """Gradient of ``(1/N) sum_i ||y_i - Phi_i theta||^2``."""
        return 2.0 * (self.w @ (np.matmul(self.H, theta) - self.g))


def _prox_solve_stacked(Theta, X, y, eta):
    M, B, d = X.shape
    c = eta / B
    resid = y - np.matmul(X, Theta[:, :, None])[:, :, 0]
    if B < d:
        lhs = np.eye(B)[None] + c * np.matmul(X, X.transpose(0, 2, 1))
        u = np.linalg.solve(lhs, resid[:, :, None])
        return Theta + c * np.matmul(X.transpose(0, 2, 1), u)[:, :, 0]
    lhs = np.eye(d)[None] + c * np.matmul(X.transpose(0, 2, 1), X)
    rhs = Theta + c * np.matmul(X.transpose(0, 2, 1), y[:, :, None])[:, :, 0]
    return np.linalg.solve(lhs, rhs[:, :, None])[:, :, 0]


def run_round_primal(state: ModelState, dataset: FederatedDataset, config: AlgorithmConfig,
                     rng=None) -> ModelState:
    """One communication round by literal per-client updates and aggregation."""
    if state.theta is None:
        raise ConfigurationError("run_round_primal needs a primal model state")
    config.check_dataset(dataset)
    updates = []
    for P, c in zip(dataset.features, dataset.clients):
        if config.is_prox:
            updates.append(fedprox_local_update(state.theta, P, c.y, config.eta, config.batch_size, rng))
        else:
            updates.append(fedavg_local_update(state.theta, P, c.y, config.eta, config.local_steps,
                                               config.batch_size, rng))
    return ModelState(state.round + 1, theta=aggregate(updates, dataset.weights))


# ---------------------------------------------------------------------------
# dual recursion
# ---------------------------------------------------------------------------

def local_grams(dataset: FederatedDataset) -> list:
    """Local Gram matrices ``K_{x_i}``, each normalized by its own ``n_i``."""
    return [gram(dataset.kernel, c.x).entries for c in dataset.clients]


def p_blocks(dataset: FederatedDataset, config: AlgorithmConfig, grams=None) -> list:
    """Diagonal blocks ``P_ii`` of the local-update matrix."""
    grams = local_grams(dataset) if grams is None else grams
    eta = config.eta
    blocks = []
    for i, K in enumerate(grams):
        n = K.shape[0]
        eye = np.eye(n)
        if config.is_prox:
            Pi = linalg.solve(eye + eta * K, eye, assume_a="pos")
            blocks.append(0.5 * (Pi + Pi.T))
            continue
        gamma_i = eta * float(np.linalg.eigvalsh(K)[-1])
        if gamma_i >= 1.0:
            raise StabilityError(
                f"FedAvg is unstable on client {i}: eta * ||K_x{i}|| = {gamma_i:.6g} >= 1")
        L = eye - eta * K
        acc = eye.copy()
        power = eye
        for _ in range(config.local_steps - 1):
            power = power @ L
            acc = acc + power
        blocks.append(acc)
    return blocks


def build_dual_operator(dataset: FederatedDataset, config: AlgorithmConfig):
    """Return ``(P, K_x)``: the block-diagonal ``P`` and the ``1/N``-normalized global Gram."""
    P = linalg.block_diag(*p_blocks(dataset, config))
    K_x = gram(dataset.kernel, dataset.x).entries
    return P, K_x


def _f0_values(f0, dataset: FederatedDataset, points=None) -> np.ndarray:
    pts = dataset.x if points is None else as_points(dataset.kernel, points)
    if f0 is None:
        return np.zeros(pts.shape[0])
    if callable(f0):
        return np.asarray(f0(pts), dtype=float).reshape(-1)
    return feature_matrix(dataset.kernel, pts) @ np.asarray(f0, dtype=float)


def run_round_dual(alpha, dataset: FederatedDataset, P, K_x, eta: float, f0=None,
                   f0_values=None) -> np.ndarray:
    """One round of the dual recursion; returns the new weights ``alpha``."""
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    N = dataset.N
    if alpha.shape[0] != N or P.shape != (N, N) or K_x.shape != (N, N):
        raise InputShapeError(
            f"dual state of length {alpha.shape[0]} with P {P.shape} and K_x {K_x.shape}; expected N={N}")
    base = _f0_values(f0, dataset) if f0_values is None else f0_values
    f_x = base + N * (K_x @ alpha)
    return alpha + (eta / N) * (P.T @ (dataset.y - f_x))


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def predict(state: ModelState, dataset: FederatedDataset, points=None) -> np.ndarray:
    """Evaluate a model state at ``points`` (defaults to the training covariates)."""
    if state.theta is not None:
        if points is None:
            return dataset.feature_stack @ state.theta
        return feature_matrix(dataset.kernel, points) @ state.theta
    base = _f0_values(state.f0, dataset, points)
    if points is None:
        Kx = gram(dataset.kernel, dataset.x).entries
        return base + dataset.N * (Kx @ state.alpha)
    return base + kernel_matrix(dataset.kernel, points, dataset.x) @ state.alpha


def _stop_round(dataset, config, stop_time):
    if stop_time is not None:
        return int(stop_time)
    if config.early_stop:
        from .spectral import early_stopping_T, kernel_eigenvalues

        lam = kernel_eigenvalues(dataset)
        es = early_stopping_T(lam, dataset.N, config.eta, config.s, dataset.sigma)
        return min(config.max_rounds, es.T)
    return config.max_rounds


def run_training(dataset: FederatedDataset, config: AlgorithmConfig, seed=0, stop_time=None,
                 representation: str = "primal", snapshot_every: int = 1,
                 record_predictions: bool = False, f0=None) -> RoundTrace:
    """Run rounds ``1..T`` and return the trace (round 0 included).

    ``T`` is ``stop_time`` if given, else the early-stopping time when
    ``config.early_stop`` is set (capped by ``max_rounds``), else ``max_rounds``.
    The only randomness is the minibatch order, drawn from ``seed``.
    """
    T = _stop_round(dataset, config, stop_time)
    if T < 0:
        raise ConfigurationError("stop time must be >= 0")
    rng = np.random.default_rng(seed)
    keep = [0] + [t for t in range(1, T + 1) if t % snapshot_every == 0 or t == T]

    if representation == "primal":
        d = dataset.d
        theta = np.zeros(d) if config.theta0 is None else config.theta0.copy()
        if theta.shape[0] != d:
            raise InputShapeError(f"theta0 has length {theta.shape[0]}, feature dimension is {d}")
        sim = PrimalSimulator(dataset, config)
        thetas = [theta]
        for t in range(1, T + 1):
            theta = sim.step(theta, rng)
            if t % snapshot_every == 0 or t == T:
                thetas.append(theta)
        thetas = np.array(thetas)
        preds = thetas @ dataset.feature_stack.T if record_predictions else None
        return RoundTrace(np.array(keep), thetas=thetas, predictions=preds, config=config, seed=seed)

    if representation != "dual":
        raise ConfigurationError(f"unknown representation {representation!r}")
    if not config.full_batch(dataset):
        raise ConfigurationError("the dual recursion covers full-batch rounds only")
    if f0 is None and config.theta0 is not None:
        f0 = config.theta0
    P, K_x = build_dual_operator(dataset, config)
    base = _f0_values(f0, dataset)
    N = dataset.N
    alpha = np.zeros(N)
    alphas = [alpha]
    preds = [base.copy()]
    for t in range(1, T + 1):
        alpha = run_round_dual(alpha, dataset, P, K_x, config.eta, f0_values=base)
        if t % snapshot_every == 0 or t == T:
            alphas.append(alpha)
            if record_predictions:
                preds.append(base + N * (K_x @ alpha))
    return RoundTrace(np.array(keep), alphas=np.array(alphas),
                      predictions=np.array(preds) if record_predictions else None,
                      config=config, seed=seed, f0=f0)


# ---------------------------------------------------------------------------
# closed-form evolution of full-batch rounds
# ---------------------------------------------------------------------------

def affine_round_map(dataset: FederatedDataset, config: AlgorithmConfig, responses=None):
    """Return ``(A, b)`` with one full-batch round equal to ``theta -> A theta + b``.

    ``A`` is the coefficient-space matrix of the aggregated local operator:
    ``sum_i w_i (I - eta H_i)^s`` for FedAvg and ``sum_i w_i (I + eta H_i)^{-1}``
    for FedProx.  ``responses`` replaces the dataset's stacked ``y``; it may be
    an ``(N, k)`` matrix, giving ``b`` of shape ``(d, k)``.
    """
    if not config.full_batch(dataset):
        raise ConfigurationError("minibatch rounds are not time-invariant")
    Y = dataset.y if responses is None else np.asarray(responses, dtype=float)
    if Y.shape[0] != dataset.N:
        raise InputShapeError(f"responses have {Y.shape[0]} rows, expected N={dataset.N}")
    d = dataset.d
    eye = np.eye(d)
    eta = config.eta
    A = np.zeros((d, d))
    b = np.zeros((d,) + Y.shape[1:])
    for i, (Phi, w) in enumerate(zip(dataset.features, dataset.weights)):
        n = Phi.shape[0]
        H = Phi.T @ Phi / n
        g = Phi.T @ Y[dataset.block(i)] / n
        if config.is_prox:
            Ai = linalg.solve(eye + eta * H, eye, assume_a="pos")
            Ai = 0.5 * (Ai + Ai.T)
            Si = Ai
        else:
            L = eye - eta * H
            Si = eye.copy()
            Ai = eye
            for _ in range(config.local_steps - 1):
                Ai = Ai @ L
                Si = Si + Ai
            Ai = Ai @ L
        A += w * Ai
        b += w * eta * (Si @ g)
    return 0.5 * (A + A.T), b


def _spectral_evolution(D, V, b, theta0):
    b = np.asarray(b, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.ndim == 1 and b.ndim == 2:
        theta0 = theta0[:, None]
    theta0 = np.broadcast_to(theta0, b.shape)
    return V.T @ theta0, V.T @ b, b.ndim > 1


def _power_and_sum(D, t):
    """``D**t`` and ``sum_{k<t} D**k`` elementwise, with ``t = inf`` allowed."""
    gap = 1.0 - D
    if math.isinf(t):
        return np.zeros_like(D), 1.0 / gap
    t = int(t)
    power = D ** t
    pos = (D > 0) & (gap > 0)
    # -expm1(t log1p(-gap)) keeps 1 - D**t accurate when D is close to 1
    with np.errstate(divide="ignore", invalid="ignore"):
        geo_pos = -np.expm1(t * np.log1p(-np.where(pos, gap, 0.5))) / np.where(pos, gap, 1.0)
        geo_gen = (1.0 - power) / np.where(gap != 0, gap, 1.0)
    return power, np.where(pos, geo_pos, np.where(gap != 0, geo_gen, float(t)))


def evolve_affine(A, b, theta0, t) -> np.ndarray:
    """``t`` iterations of ``theta -> A theta + b`` for symmetric ``A``.

    ``t`` may be ``math.inf`` for the fixed point ``(I - A)^{-1} b``.  ``b`` and
    ``theta0`` may carry a trailing batch axis.
    """
    return affine_trajectory(A, b, theta0, [t])[0]


def affine_trajectory(A, b, theta0, ts) -> np.ndarray:
    """:func:`evolve_affine` at every round in ``ts`` from one eigendecomposition."""
    D, V = np.linalg.eigh(A)
    c0, cb, batched = _spectral_evolution(D, V, b, theta0)
    out = []
    for t in ts:
        power, geo = _power_and_sum(D, t)
        if batched:
            power, geo = power[:, None], geo[:, None]
        out.append(V @ (power * c0 + geo * cb))
    return np.array(out)


def final_theta(dataset: FederatedDataset, config: AlgorithmConfig, seed=0, stop_time=None) -> np.ndarray:
    """Global coefficients after the stop round.

    Full-batch rounds are time invariant, so they are evolved in closed form
    (:func:`evolve_affine`); minibatch runs are simulated round by round.
    """
    T = _stop_round(dataset, config, stop_time)
    theta0 = np.zeros(dataset.d) if config.theta0 is None else config.theta0
    if config.full_batch(dataset):
        A, b = affine_round_map(dataset, config)
        return evolve_affine(A, b, theta0, T)
    sim = PrimalSimulator(dataset, config)
    rng = np.random.default_rng(seed)
    theta = theta0.copy()
    for _ in range(T):
        theta = sim.step(theta, rng)
    return theta

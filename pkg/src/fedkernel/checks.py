"""Numerical checks of the recursions, operator identities and bounds.

Each check draws its own randomized instances from a seed and returns a
:class:`CheckResult` holding the worst observed margin, so the same code backs
the test-suite and the ``check`` command of the CLI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .data import ClientData, FederatedDataset
from .datagen import ScenarioSpec, gen_linear_homogeneous, resample_responses
from .engine import (AlgorithmConfig, ModelState, affine_round_map, affine_trajectory,
                     build_dual_operator, evolve_affine, run_round_dual, run_round_primal)
from .exceptions import DegeneracyError
from .kernels import KernelSpec
from .metrics import empirical_exceedance, prediction_errors_under_noise
from .spectral import (delta1, delta2, early_stopping_T, gamma, limit_model, rademacher,
                       spectral_report, theory_bound)

__all__ = [
    "CheckResult",
    "random_instance",
    "eta_for_gamma",
    "ALGORITHMS",
    "check_primal_dual",
    "check_operator_identities",
    "check_spectral_lemmas",
    "check_delta_bounds",
    "bound_instance",
    "check_bound_domination",
    "check_limit_model",
    "check_noise_plateau",
    "check_exceedance_decay",
    "exceedance_pair",
    "run_theory_suite",
]

ALGORITHMS = ("fedavg:1", "fedavg:2", "fedavg:5", "fedprox")


@dataclass
class CheckResult:
    """Outcome of one check: ``worst`` is compared against ``limit`` (smaller is better)."""

    name: str
    passed: bool
    worst: float
    limit: float
    detail: str = ""
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: worst={self.worst:.3g} limit={self.limit:.3g} {self.detail}".rstrip()


def random_instance(rng, heterogeneous: bool = True, sigma: float = 0.5, max_clients: int = 4,
                    max_n: int = 6, max_d: int = 5, min_n: int = 1, min_d: int = 1) -> FederatedDataset:
    """Small linear-kernel dataset with random sizes, dimension and client models."""
    M = int(rng.integers(1, max_clients + 1))
    d = int(rng.integers(min_d, max_d + 1))
    sizes = rng.integers(min_n, max_n + 1, size=M)
    theta = rng.standard_normal(d)
    clients = []
    for n in sizes:
        th = theta + (0.5 * rng.standard_normal(d) if heterogeneous else 0.0)
        x = rng.standard_normal((int(n), d))
        y = x @ th + sigma * rng.standard_normal(int(n))
        clients.append(ClientData(x, y, th))
    return FederatedDataset(tuple(clients), kernel=KernelSpec.linear(d), sigma=sigma, theta_star=theta)


def eta_for_gamma(dataset: FederatedDataset, target: float) -> float:
    """Stepsize giving ``gamma = target``."""
    return target / gamma(dataset, 1.0)


def _config(key: str, eta: float) -> AlgorithmConfig:
    return AlgorithmConfig.parse(key, eta=eta)


def _worst(name, values, limit, detail="") -> CheckResult:
    worst = float(np.max(values)) if len(values) else 0.0
    return CheckResult(name, bool(worst <= limit), worst, limit, detail)


# ---------------------------------------------------------------------------
# recursions and identities
# ---------------------------------------------------------------------------

def check_primal_dual(instances: int = 50, rounds: int = 20, seed: int = 0,
                      algorithms=ALGORITHMS, tol: float = 1e-8) -> CheckResult:
    """Literal client simulation against the ``P`` recursion, in-sample predictions."""
    rng = np.random.default_rng(seed)
    gaps = []
    for _ in range(instances):
        ds = random_instance(rng)
        eta = eta_for_gamma(ds, rng.uniform(0.05, 0.95))
        for key in algorithms:
            cfg = _config(key, eta)
            P, K_x = build_dual_operator(ds, cfg)
            state = ModelState(0, theta=np.zeros(ds.d))
            alpha = np.zeros(ds.N)
            for _ in range(rounds):
                state = run_round_primal(state, ds, cfg)
                alpha = run_round_dual(alpha, ds, P, K_x, eta)
                primal = ds.feature_stack @ state.theta
                dual = ds.N * (K_x @ alpha)
                gaps.append(float(np.max(np.abs(primal - dual))))
    return _worst("primal/dual equivalence", gaps, tol, f"({instances} instances, {rounds} rounds)")


def _coefficient_operators(ds: FederatedDataset, cfg: AlgorithmConfig):
    """``Psi`` (``d x N``) and ``L`` (``d x d``) assembled client by client."""
    d = ds.d
    eye = np.eye(d)
    eta = cfg.eta
    blocks = []
    L = np.zeros((d, d))
    for Phi, w in zip(ds.features, ds.weights):
        n = Phi.shape[0]
        H = Phi.T @ Phi / n
        if cfg.is_prox:
            inv = np.linalg.inv(eye + eta * H)
            blocks.append(w * (eta / n) * inv @ Phi.T)
            L += w * inv
        else:
            Li = eye - eta * H
            acc = sum(np.linalg.matrix_power(Li, tau) for tau in range(cfg.local_steps))
            blocks.append(w * (eta / n) * acc @ Phi.T)
            L += w * np.linalg.matrix_power(Li, cfg.local_steps)
    return np.hstack(blocks), L


def check_operator_identities(instances: int = 20, seed: int = 1, functions: int = 10, probes: int = 20,
                              algorithms=ALGORITHMS) -> List[CheckResult]:
    """``Psi(x) = eta K_x P`` and ``f(x) . Psi = f - L f`` on random probes."""
    rng = np.random.default_rng(seed)
    rel = []
    ident = []
    for _ in range(instances):
        ds = random_instance(rng)
        eta = eta_for_gamma(ds, rng.uniform(0.05, 0.95))
        for key in algorithms:
            cfg = _config(key, eta)
            Psi, L = _coefficient_operators(ds, cfg)
            P, K_x = build_dual_operator(ds, cfg)
            ref = eta * K_x @ P
            Psi_x = ds.feature_stack @ Psi
            rel.append(np.linalg.norm(Psi_x - ref) / max(np.linalg.norm(ref), 1e-300))
            Z = rng.standard_normal((probes, ds.d))
            for _ in range(functions):
                theta_f = rng.standard_normal(ds.d)
                lhs = Z @ (Psi @ (ds.feature_stack @ theta_f))
                rhs = Z @ (theta_f - L @ theta_f)
                ident.append(float(np.max(np.abs(lhs - rhs))))
    return [_worst("Psi(x) = eta K_x P (relative Frobenius)", rel, 1e-10),
            _worst("f(x).Psi = f - Lf at probes", ident, 1e-8)]


def check_spectral_lemmas(instances: int = 50, seed: int = 2, steps=(1, 2, 5, 10),
                          tol: float = 1e-8) -> List[CheckResult]:
    """Eigenvalue range of ``I - eta K_x P`` and ``L``, ``cond(P) <= kappa``, eigenvalue brackets."""
    rng = np.random.default_rng(seed)
    rng_viol, cond_viol, bracket_viol = [], [], []
    for _ in range(instances):
        ds = random_instance(rng)
        eta = eta_for_gamma(ds, rng.uniform(0.05, 0.95))
        configs = [AlgorithmConfig("fedavg", local_steps=s, eta=eta) for s in steps]
        configs.append(AlgorithmConfig("fedprox", eta=eta))
        for cfg in configs:
            rep = spectral_report(ds, cfg)
            ev = 1.0 - eta * rep.Lam
            A, _ = affine_round_map(ds, cfg)
            ev = np.concatenate([ev, np.linalg.eigvalsh(A)])
            rng_viol.append(max(float(np.max(ev - 1.0)), float(np.max(-ev)), 0.0))
            cond_viol.append(max(rep.cond_P - rep.kappa, 0.0))
            hi = rep.lam * cfg.s
            lo = hi / rep.kappa
            bracket_viol.append(max(float(np.max(lo - rep.Lam)), float(np.max(rep.Lam - hi)), 0.0))
    return [_worst("eigenvalues of I - eta K_x P and L in [0, 1]", rng_viol, tol),
            _worst("cond(P) <= kappa", cond_viol, tol),
            _worst("Lambda_i within [lambda_i s / kappa, lambda_i s]", bracket_viol, tol)]


def check_delta_bounds(instances: int = 20, seed: int = 3, t_max: int = 100) -> List[CheckResult]:
    """``delta_1 <= 1/(2e eta t s)`` and ``delta_2 <= eta t s R(1/sqrt(eta t s))^2`` pointwise."""
    rng = np.random.default_rng(seed)
    v1, v2 = [], []
    for _ in range(instances):
        ds = random_instance(rng, max_clients=5, max_n=10)
        eta = eta_for_gamma(ds, rng.uniform(0.05, 0.95))
        for key in ALGORITHMS:
            cfg = _config(key, eta)
            rep = spectral_report(ds, cfg)
            s = cfg.s
            for t in range(1, t_max + 1):
                d1 = delta1(rep, eta, s, t)
                d2 = delta2(rep, eta, t)
                r = rademacher(rep.lam, rep.N, 1.0 / math.sqrt(eta * t * s))
                v1.append(d1.value - d1.bound)
                v2.append(max(d2.value - d2.bound, d2.bound - eta * t * s * r * r))
    return [_worst("delta_1 <= 1/(2e eta t s)", v1, 1e-12),
            _worst("delta_2 <= eta t s R^2", v2, 1e-12)]


# ---------------------------------------------------------------------------
# bounds under noise
# ---------------------------------------------------------------------------

def bound_instance(seed: int = 4, M: int = 3, d: int = 5, n: int = 10, sigma: float = 0.5,
                   spread: float = 0.5) -> FederatedDataset:
    """Fixed small heterogeneous instance for Monte-Carlo bound checks."""
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(d)
    clients = []
    for _ in range(M):
        th = theta + spread * rng.standard_normal(d)
        x = rng.standard_normal((n, d))
        clients.append(ClientData(x, x @ th + sigma * rng.standard_normal(n), th))
    return FederatedDataset(tuple(clients), kernel=KernelSpec.linear(d), sigma=sigma, theta_star=theta)


def check_bound_domination(draws: int = 200, seed: int = 5, eta: float = 0.1, t_cap: int = 2000,
                           algorithms=("fedavg:1", "fedavg:5", "fedavg:10", "fedprox"),
                           dataset: Optional[FederatedDataset] = None) -> List[CheckResult]:
    """Monte-Carlo mean of ``||f_t - f||_N^2`` against the three-term and finite-rank bounds.

    ``f`` is the common centre model ``theta*`` and ``f0 = 0``; rounds run over
    ``1..min(T, t_cap)`` with ``T`` the early-stopping time.
    """
    ds = bound_instance() if dataset is None else dataset
    f = ds.theta_star
    f0 = np.zeros(ds.d)
    rng = np.random.default_rng(seed)
    Y = resample_responses(ds, rng, draws).T
    slack = 1.0 + 3.0 / math.sqrt(draws)
    ratio_gen, ratio_fr = [], []
    details = {}
    Phi = ds.feature_stack
    target = Phi @ f
    for key in algorithms:
        cfg = _config(key, eta)
        rep = spectral_report(ds, cfg)
        es = early_stopping_T(rep.lam, ds.N, eta, cfg.s, ds.sigma)
        T = min(es.T, t_cap)
        ts = np.arange(1, T + 1)
        A, b = affine_round_map(ds, cfg, responses=Y)
        thetas = affine_trajectory(A, b, f0, ts)
        mc = np.mean((np.einsum("nd,tdk->tnk", Phi, thetas) - target[None, :, None]) ** 2, axis=(1, 2))
        gen = np.array([theory_bound(rep, ds, f, f0, ds.sigma, int(t), cfg).total for t in ts])
        fr = np.array([theory_bound(rep, ds, f, f0, ds.sigma, int(t), cfg).finite_rank for t in ts])
        ratio_gen.append(float(np.max(mc / (gen * slack))))
        ratio_fr.append(float(np.max(mc / (fr * slack))))
        details[key] = {"T": T, "saturated": es.saturated}
    res = [_worst("Monte-Carlo error <= three-term bound (ratio)", ratio_gen, 1.0, f"(draws={draws})"),
           _worst("Monte-Carlo error <= finite-rank bound (ratio)", ratio_fr, 1.0, f"(draws={draws})")]
    for r in res:
        r.values = details
    return res


def _limit_instance(rng):
    # enough rows that Phi^T Phi is well conditioned
    while True:
        ds = random_instance(rng, max_clients=4, max_n=8, min_n=3, max_d=4, sigma=0.0)
        Phi = ds.feature_stack
        if np.linalg.eigvalsh(Phi.T @ Phi)[0] / ds.N > 1e-3:
            return ds.with_responses(ds.true_values())


def check_limit_model(instances: int = 50, seed: int = 6, rounds: int = 100,
                      algorithms=ALGORITHMS) -> List[CheckResult]:
    """Fixed point, contraction rate and distance bound of the limiting model."""
    rng = np.random.default_rng(seed)
    fixed, contraction, distance = [], [], []
    for _ in range(instances):
        ds = _limit_instance(rng)
        eta = eta_for_gamma(ds, rng.uniform(0.05, 0.95))
        for key in algorithms:
            cfg = _config(key, eta)
            try:
                lm = limit_model(ds, cfg)
            except DegeneracyError:
                continue
            one = run_round_primal(ModelState(0, theta=lm.theta_bar), ds, cfg).theta
            fixed.append(float(np.linalg.norm(one - lm.theta_bar)))
            c = lm.contraction(cfg.s, eta)
            theta = np.zeros(ds.d)
            e0 = np.linalg.norm(theta - lm.theta_bar)
            for t in range(1, rounds + 1):
                theta = run_round_primal(ModelState(0, theta=theta), ds, cfg).theta
                err = np.linalg.norm(theta - lm.theta_bar)
                # absolute floor for round-off once the error reaches machine precision
                contraction.append(err - (c ** t * e0 * (1 + 1e-6) + 1e-12))
            for j in range(ds.M):
                dist = np.linalg.norm(lm.theta_bar - ds.true_theta(j))
                distance.append(dist - lm.client_bounds[j])
    return [_worst("theta_bar is a fixed point of the noise-free round", fixed, 1e-8),
            _worst("||theta_t - theta_bar|| <= (1 - s eta rho_N / kappa)^t ||theta_0 - theta_bar||",
                   contraction, 0.0),
            _worst("||theta_bar - theta_j*|| <= sqrt(kappa / (N rho_N)) ||Delta||", distance, 1e-8)]


def check_noise_plateau(draws: int = 500, seed: int = 7, M: int = 10, d: int = 5, n: int = 20,
                        sigma: float = 0.5, eta: float = 0.1, algorithms=ALGORITHMS) -> CheckResult:
    """Limit mean-squared error ``E||theta_inf - theta_bar||^2`` against ``2 kappa d sigma^2 / (N alpha)``.

    ``alpha`` is the smallest eigenvalue of the measured per-row second moment
    ``Phi^T Phi / N``.
    """
    ds = bound_instance(seed, M=M, d=d, n=n, sigma=sigma, spread=0.3)
    rng = np.random.default_rng(seed)
    Y = resample_responses(ds, rng, draws).T
    Phi = ds.feature_stack
    alpha = float(np.linalg.eigvalsh(Phi.T @ Phi / ds.N)[0])
    ratios = {}
    for key in algorithms:
        cfg = _config(key, eta)
        lm = limit_model(ds, cfg)
        A, b = affine_round_map(ds, cfg, responses=Y)
        th = evolve_affine(A, b, np.zeros(d), math.inf)
        mse = float(np.mean(np.sum((th - lm.theta_bar[:, None]) ** 2, axis=0)))
        ratios[key] = mse / (2.0 * lm.kappa * d * sigma ** 2 / (ds.N * alpha))
    res = _worst("plateau MSE <= 2 kappa d sigma^2 / (N alpha) (ratio)", list(ratios.values()), 1.0)
    res.values = ratios
    return res


def exceedance_pair(seed: int = 8, M: int = 5, d: int = 5, small: int = 10, large: int = 40,
                    sigma: float = 1.0):
    """Matched instances: same ``theta*`` and layout, per-client sizes ``small`` and ``large``."""
    base = ScenarioSpec("linear-homogeneous", M=M, sizes=small, d=d, sigma=sigma, seed=seed)
    return gen_linear_homogeneous(base), gen_linear_homogeneous(base.with_(sizes=large))


def check_exceedance_decay(draws: int = 500, seed: int = 9, t: Optional[int] = None, eta: float = 0.1,
                           algorithms=ALGORITHMS, quantile: float = 0.8) -> List[CheckResult]:
    """Exceedance frequency at ``N = M * large`` must not exceed the one at ``N = M * small``.

    Both instances use the same round ``t``; by default the early-stopping time
    of the smaller instance.  The high-probability threshold is loose enough
    that both frequencies are usually zero, so a second comparison uses a fixed
    level equal to the ``quantile`` of the small-instance errors.
    """
    ds_small, ds_large = exceedance_pair()
    diffs, diffs_q = [], []
    vals = {}
    for key in algorithms:
        cfg = _config(key, eta)
        rep = spectral_report(ds_small, cfg)
        tt = t or max(1, early_stopping_T(rep.lam, ds_small.N, eta, cfg.s, ds_small.sigma).T)
        e_small = empirical_exceedance(ds_small, cfg, ds_small.theta_star, tt, draws, seed)
        e_large = empirical_exceedance(ds_large, cfg, ds_large.theta_star, tt, draws, seed)
        err_small = prediction_errors_under_noise(ds_small, cfg, ds_small.theta_star, tt, draws, seed)
        err_large = prediction_errors_under_noise(ds_large, cfg, ds_large.theta_star, tt, draws, seed + 1)
        level = float(np.quantile(err_small, quantile))
        q_small = float(np.mean(err_small > level))
        q_large = float(np.mean(err_large > level))
        vals[key] = {"t": tt, "N_small": ds_small.N, "N_large": ds_large.N, "small": e_small,
                     "large": e_large, "level": level, "small_at_level": q_small,
                     "large_at_level": q_large}
        diffs.append(e_large - e_small)
        diffs_q.append(q_large - q_small)
    res = [_worst("exceedance of the high-probability threshold: N large <= N small", diffs, 0.0),
           _worst(f"exceedance of the small-N {quantile:.0%} error quantile: N large <= N small",
                  diffs_q, 0.0)]
    for r in res:
        r.values = vals
    return res


def run_theory_suite(seed: int = 0, quick: bool = False,
                     progress: Optional[Callable[[CheckResult], None]] = None) -> List[CheckResult]:
    """All checks with seeds offset from ``seed``; ``quick`` shrinks instance counts."""
    k = 10 if quick else 50
    draws = 200
    out = []
    steps = [
        lambda: [check_primal_dual(k, seed=seed)],
        lambda: check_operator_identities(max(k // 5, 4), seed=seed + 1),
        lambda: check_spectral_lemmas(k, seed=seed + 2),
        lambda: check_delta_bounds(max(k // 5, 4), seed=seed + 3),
        lambda: check_bound_domination(draws, seed=seed + 5),
        lambda: check_limit_model(k, seed=seed + 6),
        lambda: [check_noise_plateau(seed=seed + 7)],
        lambda: check_exceedance_decay(500 if not quick else 200, seed=seed + 9),
    ]
    for step in steps:
        for res in step():
            out.append(res)
            if progress is not None:
                progress(res)
    return out

"""Seeded synthetic scenarios for the four experiment families.

Every generator is a pure function of its :class:`ScenarioSpec`: the same spec
(seed included) produces bit-identical datasets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .data import ClientData, FederatedDataset
from .exceptions import ConfigurationError
from .kernels import KernelSpec, feature_matrix

__all__ = [
    "ScenarioSpec",
    "chebyshev_u5",
    "U5_COEFFICIENTS",
    "gen_linear_homogeneous",
    "gen_model_heterogeneous",
    "gen_subspace",
    "gen_chebyshev",
    "generate",
    "resample_responses",
    "scarce_rich_sizes",
    "trial_seed",
]

FAMILIES = ("linear-homogeneous", "linear-model-heterogeneous", "subspace", "chebyshev")
SPREADS = ("probe-shifted", "alternating")

# U5(x) = 32 x^5 - 32 x^3 + 6 x in the monomial basis [1, x, ..., x^5]
U5_COEFFICIENTS = np.array([0.0, 6.0, 0.0, -32.0, 0.0, 32.0])


def chebyshev_u5(x) -> np.ndarray:
    """Chebyshev polynomial of the second kind of degree 5."""
    x = np.asarray(x, dtype=float)
    return np.polynomial.polynomial.polyval(x, U5_COEFFICIENTS)


def scarce_rich_sizes(M: int, scarce: int = 50, rich: int = 500) -> tuple:
    """First half of the clients data-scarce, second half data-rich."""
    h = M // 2
    return (scarce,) * h + (rich,) * (M - h)


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of one synthetic scenario.

    Parameters
    ----------
    family : str
        One of ``linear-homogeneous``, ``linear-model-heterogeneous``,
        ``subspace`` or ``chebyshev``.
    M : int
        Number of clients.
    sizes : int or sequence of int
        Client sample sizes; an integer means every client has that many.
    d : int
        Feature dimension (fixed to 6 for ``chebyshev``).
    sigma : float
        Noise standard deviation.
    seed : int
    gamma : float
        Model heterogeneity ``max_{i,j} ||theta_i* - theta_j*||``.
    r : int, optional
        Subspace dimension for the ``subspace`` family.
    noise : {"gaussian", "student-t"}
        Student-t noise is rescaled to variance ``sigma**2``.
    df : float
        Degrees of freedom for Student-t noise (at least 5).
    spread : {"probe-shifted", "alternating"}
        How the heterogeneous models are placed along the shift direction.
    """

    family: str = "linear-homogeneous"
    M: int = 25
    sizes: object = 500
    d: int = 100
    sigma: float = 0.5
    seed: int = 0
    gamma: float = 0.0
    r: Optional[int] = None
    noise: str = "gaussian"
    df: float = 5.0
    spread: str = "probe-shifted"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown scenario family {self.family!r}")
        if self.M < 1:
            raise ConfigurationError("need at least one client")
        sizes = self.sizes
        if np.ndim(sizes) == 0:
            sizes = (int(sizes),) * self.M
        sizes = tuple(int(n) for n in sizes)
        if len(sizes) != self.M:
            raise ConfigurationError(f"{len(sizes)} sizes given for {self.M} clients")
        if min(sizes) < 1:
            raise ConfigurationError("every client needs at least one sample")
        object.__setattr__(self, "sizes", sizes)
        if self.gamma < 0:
            raise ConfigurationError(f"Gamma must be >= 0, got {self.gamma}")
        if self.sigma < 0:
            raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}")
        if self.r is not None and not 1 <= self.r <= self.d:
            raise ConfigurationError(f"subspace dimension r={self.r} outside [1, {self.d}]")
        if self.noise not in ("gaussian", "student-t"):
            raise ConfigurationError(f"unknown noise model {self.noise!r}")
        if self.noise == "student-t" and self.df < 5:
            raise ConfigurationError("Student-t noise needs df >= 5 for a bounded fourth moment")
        if self.spread not in SPREADS:
            raise ConfigurationError(f"unknown spread {self.spread!r}")

    @property
    def N(self) -> int:
        return sum(self.sizes)

    def with_(self, **kwargs) -> "ScenarioSpec":
        return replace(self, **kwargs)


def _noise(spec: ScenarioSpec, rng, n: int) -> np.ndarray:
    if spec.sigma == 0:
        return np.zeros(n)
    if spec.noise == "gaussian":
        return spec.sigma * rng.standard_normal(n)
    scale = math.sqrt((spec.df - 2.0) / spec.df)
    return spec.sigma * scale * rng.standard_t(spec.df, size=n)


def _assemble(spec, xs, thetas, kernel, theta_star=None, meta=None, rng=None):
    clients = []
    for x, th in zip(xs, thetas):
        y = feature_matrix(kernel, x) @ th + _noise(spec, rng, x.shape[0])
        clients.append(ClientData(x, y, th))
    meta = dict(meta or {})
    meta.setdefault("family", spec.family)
    return FederatedDataset(tuple(clients), kernel=kernel, sigma=spec.sigma, seed=spec.seed,
                            theta_star=theta_star, meta=meta)


def gen_linear_homogeneous(spec: ScenarioSpec) -> FederatedDataset:
    """Standard normal covariates and one shared ``theta* ~ N(0, I_d)``."""
    rng = np.random.default_rng(spec.seed)
    theta = rng.standard_normal(spec.d)
    xs = [rng.standard_normal((n, spec.d)) for n in spec.sizes]
    return _assemble(spec, xs, [theta] * spec.M, KernelSpec.linear(spec.d), theta, rng=rng)


def gen_model_heterogeneous(spec: ScenarioSpec, Gamma: Optional[float] = None) -> FederatedDataset:
    """Client models ``theta_i* = theta* + (Gamma / 2) e_i u`` with ``e_i = +-1``.

    ``u`` is a random unit vector, so the largest pairwise distance is exactly
    ``Gamma`` once both signs occur.  With ``spread="probe-shifted"`` the two
    probe clients (the first data-scarce client ``0`` and the first data-rich
    client ``M // 2``) take ``+1`` and everyone else ``-1``; with
    ``spread="alternating"`` the signs alternate with the client index.
    """
    Gamma = spec.gamma if Gamma is None else float(Gamma)
    if Gamma < 0:
        raise ConfigurationError(f"Gamma must be >= 0, got {Gamma}")
    if spec.M < 2:
        raise ConfigurationError("model heterogeneity needs at least two clients")
    rng = np.random.default_rng(spec.seed)
    theta = rng.standard_normal(spec.d)
    u = rng.standard_normal(spec.d)
    u /= np.linalg.norm(u)
    probes = (0, spec.M // 2)
    if spec.spread == "alternating" or spec.M == 2:
        # with two clients both are probes, so the shifted placement would be degenerate
        signs = np.where(np.arange(spec.M) % 2 == 0, 1.0, -1.0)
    else:
        signs = -np.ones(spec.M)
        signs[list(probes)] = 1.0
    thetas = [theta + 0.5 * Gamma * e * u for e in signs]
    xs = [rng.standard_normal((n, spec.d)) for n in spec.sizes]
    meta = {"gamma": Gamma, "probes": list(probes), "spread": spec.spread}
    return _assemble(spec, xs, thetas, KernelSpec.linear(spec.d), theta, meta, rng=rng)


def gen_subspace(spec: ScenarioSpec, r: Optional[int] = None) -> FederatedDataset:
    """Each client observes its own random ``r``-subset ``E_i`` of the coordinates.

    Rows are ``N(0, (d / r) I_{E_i})`` so the expected squared row norm is ``d``.
    With ``r = d`` the dataset equals :func:`gen_linear_homogeneous` for the same spec.
    The recommended stepsize ``0.1 r / d`` is stored in ``meta``.
    """
    r = spec.r if r is None else int(r)
    if r is None or not 1 <= r <= spec.d:
        raise ConfigurationError(f"subspace dimension r={r} outside [1, {spec.d}]")
    rng = np.random.default_rng(spec.seed)
    theta = rng.standard_normal(spec.d)
    scale = math.sqrt(spec.d / r)
    xs = []
    sets = []
    for n in spec.sizes:
        # r = d draws no index set, so the stream matches gen_linear_homogeneous
        E = np.arange(spec.d) if r == spec.d else np.sort(rng.choice(spec.d, size=r, replace=False))
        x = np.zeros((n, spec.d))
        x[:, E] = scale * rng.standard_normal((n, r))
        xs.append(x)
        sets.append(E.tolist())
    meta = {"r": r, "eta_recommended": 0.1 * r / spec.d, "index_sets": sets}
    return _assemble(spec, xs, [theta] * spec.M, KernelSpec.linear(spec.d), theta, meta, rng=rng)


def gen_chebyshev(spec: ScenarioSpec) -> FederatedDataset:
    """Client ``i`` probes ``U5`` on its own slice of ``[-1, 1)``.

    Client ``i`` (0-based) owns ``[-1 + 2i/M, -1 + 2(i+1)/M)`` and samples it at
    the ``n_i`` midpoints ``a + (j + 1/2) (b - a) / n_i``.  Features are
    monomials up to degree 5.
    """
    rng = np.random.default_rng(spec.seed)
    xs = []
    for i, n in enumerate(spec.sizes):
        a = -1.0 + 2.0 * i / spec.M
        b = -1.0 + 2.0 * (i + 1) / spec.M
        xs.append((a + (b - a) * (np.arange(n) + 0.5) / n).reshape(-1, 1))
    kernel = KernelSpec.monomial(5)
    theta = U5_COEFFICIENTS.copy()
    return _assemble(spec, xs, [theta] * spec.M, kernel, theta, {"target": "U5"}, rng=rng)


def generate(spec: ScenarioSpec) -> FederatedDataset:
    """Dispatch on ``spec.family``."""
    if spec.family == "linear-homogeneous":
        return gen_linear_homogeneous(spec)
    if spec.family == "linear-model-heterogeneous":
        return gen_model_heterogeneous(spec)
    if spec.family == "subspace":
        return gen_subspace(spec)
    return gen_chebyshev(spec)


def resample_responses(dataset: FederatedDataset, rng, draws: Optional[int] = None,
                       noise: str = "gaussian", df: float = 5.0) -> np.ndarray:
    """Fresh noisy responses on fixed covariates: ``(N,)`` or ``(draws, N)``."""
    spec = ScenarioSpec(M=1, sizes=1, sigma=dataset.sigma, noise=noise, df=df)
    truth = dataset.true_values()
    k = 1 if draws is None else int(draws)
    out = np.stack([truth + _noise(spec, rng, truth.shape[0]) for _ in range(k)])
    return out[0] if draws is None else out


def trial_seed(seed: int, trial: int) -> int:
    """Independent per-trial seed split from ``(seed, trial)``."""
    return int(np.random.SeedSequence([int(seed), int(trial)]).generate_state(1)[0])

"""Registered experiments: orchestration over trials and sweep points.

Every experiment is a pure function of its :class:`ExperimentConfig`.  Trial
``k`` draws its dataset from ``trial_seed(seed, k)``; minibatch orders and
noise redraws use streams keyed on ``(seed, trial, ...)``, so results do not
depend on the worker count or on execution order.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from .. import __version__
from ..checks import run_theory_suite
from ..datagen import generate, resample_responses, trial_seed
from ..engine import PrimalSimulator, affine_round_map, affine_trajectory, evolve_affine, final_theta
from ..exceptions import ConfigurationError, DegenerateRunError
from ..metrics import federation_gain, min_norm_least_squares, mse_gram
from .config import EXPERIMENTS, ExperimentConfig
from .plotting import PlotSpec, write_plots
from .results import ResultTable

__all__ = ["run_experiment", "write_outputs", "plot_specs", "REGISTRY", "trace_rounds"]

log = logging.getLogger("fedkernel.run")

TRACE_METRICS = {
    "fig-grad-vs-rounds": ("grad_norm",),
    "fig-err-vs-rounds": ("est_error",),
    "minibatch-sweep": ("grad_norm", "est_error"),
}


def _map(fn, items, workers: int) -> list:
    """Ordered map over ``items``, optionally on a process pool."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def trace_rounds(T: int, every: int) -> list:
    """Recorded rounds: 0, every multiple of ``every`` and the last round."""
    return [0] + [t for t in range(1, T + 1) if t % every == 0 or t == T]


def _stream(*keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


# ---------------------------------------------------------------------------
# trace experiments (gradient norm / estimation error per round)
# ---------------------------------------------------------------------------

def _trace_variants(cfg: ExperimentConfig) -> list:
    """``(label, AlgorithmConfig, batch tag)`` for every curve of a trace experiment."""
    out = []
    if cfg.experiment != "minibatch-sweep":
        return [(key, cfg.algorithm(key), 0) for key in cfg.algorithms]
    sizes = list(cfg.batch_sizes) + ([None] if cfg.full_batch else [])
    for B in sizes:
        for key in cfg.algorithms:
            tag = "full" if B is None else f"B{B}"
            out.append((f"{key}/{tag}", cfg.algorithm(key, batch_size=B), B or 0))
    return out


def _trace_trial(cfg: ExperimentConfig, trial: int) -> list:
    ds = generate(cfg.scenario.with_(seed=trial_seed(cfg.seed, trial)))
    Phi = ds.feature_stack
    H = Phi.T @ Phi / ds.N
    g = Phi.T @ ds.y / ds.N
    theta_star = ds.theta_star
    metrics = TRACE_METRICS[cfg.experiment]
    rows = []
    for v_index, (label, alg, B) in enumerate(_trace_variants(cfg)):
        rounds = trace_rounds(alg.max_rounds, cfg.snapshot_every)
        theta0 = np.zeros(ds.d)
        if alg.full_batch(ds):
            A, b = affine_round_map(ds, alg)
            thetas = affine_trajectory(A, b, theta0, rounds)
        else:
            sim = PrimalSimulator(ds, alg)
            rng = _stream(cfg.seed, trial, v_index, B)
            keep = set(rounds)
            theta = theta0
            thetas = [theta0]
            for t in range(1, alg.max_rounds + 1):
                theta = sim.step(theta, rng)
                if t in keep:
                    thetas.append(theta)
            thetas = np.array(thetas)
        values = {}
        if "grad_norm" in metrics:
            values["grad_norm"] = np.linalg.norm(2.0 * (thetas @ H - g), axis=1)
        if "est_error" in metrics:
            values["est_error"] = np.linalg.norm(thetas - theta_star, axis=1)
        for metric in metrics:
            for t, v in zip(rounds, values[metric]):
                rows.append((cfg.experiment, label, alg.s, t, metric, trial, float(v)))
    return rows


# ---------------------------------------------------------------------------
# federation gain sweeps
# ---------------------------------------------------------------------------

def _fg_trial(cfg: ExperimentConfig, trial: int) -> list:
    seed = trial_seed(cfg.seed, trial)
    clients = cfg.probe_clients()
    rows = []
    for v in cfg.sweep:
        if cfg.experiment == "fg-vs-gamma":
            spec = cfg.scenario.with_(seed=seed, gamma=float(v))
            eta_scale = 1.0
        else:
            spec = cfg.scenario.with_(seed=seed, r=int(v))
            eta_scale = int(v) / spec.d
        ds = generate(spec)
        local = {j: np.linalg.norm(min_norm_least_squares(ds.features[j], ds.clients[j].y) - ds.true_theta(j))
                 for j in clients}
        for a_index, key in enumerate(cfg.algorithms):
            alg = cfg.algorithm(key, eta=cfg.eta * eta_scale)
            theta = final_theta(ds, alg, seed=int(_stream(seed, a_index).integers(2 ** 31)))
            for j in clients:
                fed = np.linalg.norm(theta - ds.true_theta(j))
                rows.append((cfg.experiment, key, alg.s, v, f"local_err:c{j}", trial, float(local[j])))
                rows.append((cfg.experiment, key, alg.s, v, f"fed_err:c{j}", trial, float(fed)))
    return rows


def _derive_gain(table: ResultTable, cfg: ExperimentConfig):
    cells = table.cells()
    for j in cfg.probe_clients():
        for (alg, s, x, metric), fed in cells.items():
            if metric != f"fed_err:c{j}":
                continue
            loc = cells[(alg, s, x, f"local_err:c{j}")]
            try:
                value = federation_gain(loc, fed, squared=cfg.gain == "squared")
            except DegenerateRunError:
                log.warning("federated error is zero for %s at %s; gain recorded as inf", alg, x)
                value = float("inf")
            table.derive(alg, s, x, f"gain:c{j}", len(fed), value)


# ---------------------------------------------------------------------------
# Chebyshev rate
# ---------------------------------------------------------------------------

def _chebyshev_point(cfg: ExperimentConfig, n: int) -> list:
    spec = cfg.scenario.with_(sizes=int(n), seed=cfg.seed)
    ds = generate(spec)
    rng = _stream(cfg.seed, n)
    Y = resample_responses(ds, rng, cfg.trials, noise=spec.noise, df=spec.df).T
    G = mse_gram(ds.kernel, seed=cfg.seed)
    rows = []
    for key in cfg.algorithms:
        alg = cfg.algorithm(key)
        A, B = affine_round_map(ds, alg, responses=Y)
        Theta = evolve_affine(A, B, np.zeros(ds.d), alg.max_rounds)
        E = Theta - ds.theta_star[:, None]
        mse = np.einsum("it,ij,jt->t", E, G, E)
        for k in range(cfg.trials):
            rows.append((cfg.experiment, key, alg.s, ds.N, "mse", k, float(mse[k])))
    return rows


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

def _run_trace(cfg, table):
    for rows in _map(partial(_trace_trial, cfg), range(cfg.trials), cfg.workers):
        table.extend(rows)


def _run_fg(cfg, table):
    for rows in _map(partial(_fg_trial, cfg), range(cfg.trials), cfg.workers):
        table.extend(rows)
    # reorder so each cell's trials are contiguous and sweep values ascend
    order = {v: k for k, v in enumerate(cfg.sweep)}
    algs = {a: k for k, a in enumerate(cfg.algorithms)}
    table.rows.sort(key=lambda r: (order[r[3]], algs[r[1]], r[4], r[5]))
    _derive_gain(table, cfg)
    spec = cfg.scenario
    table.meta["clients"] = {f"c{j}": ("scarce" if spec.sizes[j] < spec.d else "rich") for j in cfg.probe_clients()}


def _run_chebyshev(cfg, table):
    per_n = _map(partial(_chebyshev_point, cfg), cfg.sweep, cfg.workers)
    rows = [r for chunk in per_n for r in chunk]
    algs = {a: k for k, a in enumerate(cfg.algorithms)}
    rows.sort(key=lambda r: (algs[r[1]], r[3], r[5]))
    table.extend(rows)
    table.derive_from_means("inv_mse", ["mse"], lambda m: 1.0 / m)


def _run_theory(cfg, table):
    results = run_theory_suite(seed=cfg.seed, progress=lambda r: log.info(r.line()))
    for k, res in enumerate(results):
        table.add("-", 0, k, res.name, 0, res.worst)
        table.add("-", 0, k, f"{res.name} [pass]", 0, float(res.passed))
    table.meta["checks"] = [r.line() for r in results]
    table.meta["all_passed"] = all(r.passed for r in results)


REGISTRY: Dict[str, Callable] = {
    "fig-grad-vs-rounds": _run_trace,
    "fig-err-vs-rounds": _run_trace,
    "minibatch-sweep": _run_trace,
    "fg-vs-gamma": _run_fg,
    "fg-vs-subspace-r": _run_fg,
    "chebyshev-rate": _run_chebyshev,
    "theory-check-suite": _run_theory,
}
assert tuple(REGISTRY) == EXPERIMENTS


def run_experiment(config: ExperimentConfig, out_dir=None) -> ResultTable:
    """Run ``config`` and return its table; also write outputs when ``out_dir`` is given."""
    if config.experiment not in REGISTRY:
        raise ConfigurationError(f"unknown experiment {config.experiment!r}")
    if config.experiment in ("fg-vs-gamma", "fg-vs-subspace-r", "chebyshev-rate") and not config.sweep:
        raise ConfigurationError(f"{config.experiment} needs a non-empty sweep")
    table = ResultTable(config.experiment)
    log.info("experiment %s: trials=%d seed=%d", config.experiment, config.trials, config.seed)
    REGISTRY[config.experiment](config, table)
    if config.experiment != "theory-check-suite":
        table.check_complete(config.trials)
    log.info("experiment %s: %d rows", config.experiment, len(table))
    if out_dir is not None:
        write_outputs(table, config, out_dir)
    return table


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------

def plot_specs(config: ExperimentConfig, table: Optional[ResultTable] = None) -> List[PlotSpec]:
    exp = config.experiment
    if exp == "fig-grad-vs-rounds":
        return [PlotSpec("grad_norm", "Global gradient norm", ylabel="gradient norm", log_y=True)]
    if exp == "fig-err-vs-rounds":
        return [PlotSpec("est_error", "Estimation error", ylabel="||theta_t - theta*||", log_y=True)]
    if exp == "minibatch-sweep":
        specs = []
        tags = [f"B{B}" for B in config.batch_sizes] + (["full"] if config.full_batch else [])
        for tag in tags:
            only = tuple(f"{a}/{tag}" for a in config.algorithms)
            specs.append(PlotSpec("grad_norm", f"Gradient norm, batch {tag}", ylabel="gradient norm",
                                  log_y=True, only=only, filename=f"plot-grad_norm-{tag}.svg"))
            specs.append(PlotSpec("est_error", f"Estimation error, batch {tag}", ylabel="||theta_t - theta*||",
                                  log_y=True, only=only, filename=f"plot-est_error-{tag}.svg"))
        return specs
    if exp in ("fg-vs-gamma", "fg-vs-subspace-r"):
        roles = (table.meta.get("clients", {}) if table is not None else {})
        xlabel = "Gamma" if exp == "fg-vs-gamma" else "subspace dimension r"
        specs = []
        for j in config.probe_clients():
            role = roles.get(f"c{j}", "")
            log_y = role != "rich" or exp == "fg-vs-subspace-r"
            specs.append(PlotSpec(f"gain:c{j}", f"Federation gain, client {j} {role}".rstrip(), xlabel=xlabel,
                                  ylabel="federation gain", log_y=log_y, hline=1.0,
                                  filename=f"plot-gain-c{j}.svg"))
        return specs
    if exp == "chebyshev-rate":
        return [PlotSpec("inv_mse", "Reciprocal MSE", xlabel="N", ylabel="1 / MSE"),
                PlotSpec("mse", "MSE", xlabel="N", ylabel="MSE", log_y=True)]
    return []


def _version() -> str:
    return __version__


def write_outputs(table: ResultTable, config: ExperimentConfig, out_dir) -> list:
    """Write ``results.csv``, ``summary.csv``, plots and ``run-manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "results.csv")
    summary = table.summary()
    table.summary_to_csv(out / "summary.csv")
    files = ["results.csv", "summary.csv"]
    files += write_plots(table, plot_specs(config, table), out, summary)
    echo = config.to_dict()
    echo.pop("out", None)
    manifest = {
        "experiment": config.experiment,
        "seed": config.seed,
        "trials": config.trials,
        "artifact_version": _version(),
        "config": echo,
        "rows": len(table),
        "files": files + ["run-manifest.json"],
        "meta": table.meta,
    }
    (out / "run-manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json) + "\n")
    return files + ["run-manifest.json"]


def _json(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)

"""Experiment configuration.

A config file is a flat TOML document (``key = value`` lines, no tables) or a
JSON object with the same keys.  Every key is optional except ``experiment``;
missing keys take the experiment's defaults.

=================  ===============================  ==========================================
key                type                             meaning
=================  ===============================  ==========================================
experiment         string                           registered experiment id
trials             integer >= 1                     independent repetitions
seed               integer                          base seed; trial k uses (seed, k)
out                string                           output directory
algorithms         list of strings                  ``"fedavg:<s>"`` or ``"fedprox"``
eta                float > 0                        stepsize / proximal weight
max_rounds         integer >= 0                     communication rounds
early_stop         bool                             stop at the spectral early-stopping time
snapshot_every     integer >= 1                     record every k-th round
batch_sizes        list of integers                 minibatch sizes (``minibatch-sweep``)
full_batch         bool                             also run full batch in ``minibatch-sweep``
sweep              list of numbers                  Gamma, r or n_i values of a sweep
gain               ``"norm"`` or ``"squared"``      federation-gain ratio of distances or squares
clients            list of integers                 probe clients for federation gain
workers            integer >= 1                     process-pool size for trials
M, d, sizes,       scenario fields                  see :class:`fedkernel.datagen.ScenarioSpec`
sigma, noise,
df, spread
=================  ===============================  ==========================================

Example::

    experiment = "fig-err-vs-rounds"
    trials = 5
    seed = 7
    algorithms = ["fedavg:1", "fedavg:5", "fedprox"]
    max_rounds = 500
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

from ..datagen import ScenarioSpec, scarce_rich_sizes
from ..engine import AlgorithmConfig
from ..exceptions import ConfigurationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["ExperimentConfig", "EXPERIMENTS", "default_config", "load_config", "config_from_dict"]

EXPERIMENTS = (
    "fig-grad-vs-rounds",
    "fig-err-vs-rounds",
    "minibatch-sweep",
    "fg-vs-gamma",
    "fg-vs-subspace-r",
    "chebyshev-rate",
    "theory-check-suite",
)

DEFAULT_ALGORITHMS = ("fedavg:1", "fedavg:5", "fedavg:10", "fedprox")
GAMMA_SWEEP = (0.0, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 15.0)
R_SWEEP = (1, 4, 8, 12, 16, 20, 23, 26, 30, 40, 50, 60, 70, 80, 90, 100)

_SCENARIO_KEYS = ("M", "d", "sizes", "sigma", "noise", "df", "spread")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment run."""

    experiment: str
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    algorithms: tuple = DEFAULT_ALGORITHMS
    eta: float = 0.1
    max_rounds: int = 1000
    trials: int = 20
    seed: int = 0
    out: Optional[str] = None
    early_stop: bool = False
    snapshot_every: int = 1
    batch_sizes: tuple = ()
    full_batch: bool = True
    sweep: tuple = ()
    gain: str = "squared"
    clients: tuple = ()
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(
                f"unknown experiment {self.experiment!r}; registered: {', '.join(EXPERIMENTS)}")
        if int(self.trials) < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.snapshot_every < 1:
            raise ConfigurationError("snapshot_every must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.gain not in ("norm", "squared"):
            raise ConfigurationError(f"gain must be 'norm' or 'squared', got {self.gain!r}")
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        object.__setattr__(self, "batch_sizes", tuple(int(b) for b in self.batch_sizes))
        object.__setattr__(self, "sweep", tuple(self.sweep))
        object.__setattr__(self, "clients", tuple(int(c) for c in self.clients))
        for key in self.algorithms:
            self.algorithm(key)

    def algorithm(self, key: str, **kwargs) -> AlgorithmConfig:
        opts = dict(eta=self.eta, max_rounds=self.max_rounds, early_stop=self.early_stop)
        opts.update(kwargs)
        return AlgorithmConfig.parse(key, **opts)

    def with_(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)

    def probe_clients(self) -> tuple:
        return self.clients or (0, self.scenario.M // 2)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["scenario"] = asdict(self.scenario)
        return out


def default_config(experiment: str) -> ExperimentConfig:
    """Full-scale defaults for ``experiment``."""
    if experiment in ("fig-grad-vs-rounds", "fig-err-vs-rounds"):
        return ExperimentConfig(experiment, ScenarioSpec("linear-homogeneous", M=25, sizes=500, d=100,
                                                         sigma=0.5))
    if experiment == "minibatch-sweep":
        return ExperimentConfig(experiment, ScenarioSpec("linear-homogeneous", M=25, sizes=500, d=100,
                                                         sigma=0.5),
                                batch_sizes=(20, 50, 100), snapshot_every=5)
    if experiment == "fg-vs-gamma":
        return ExperimentConfig(experiment, ScenarioSpec("linear-model-heterogeneous", M=20,
                                                         sizes=scarce_rich_sizes(20), d=100, sigma=0.5),
                                max_rounds=2000, sweep=GAMMA_SWEEP, gain="squared")
    if experiment == "fg-vs-subspace-r":
        return ExperimentConfig(experiment, ScenarioSpec("subspace", M=20, sizes=scarce_rich_sizes(20),
                                                         d=100, sigma=0.5, r=100),
                                max_rounds=2000, sweep=R_SWEEP, gain="norm")
    if experiment == "chebyshev-rate":
        return ExperimentConfig(experiment, ScenarioSpec("chebyshev", M=20, sizes=1, d=6, sigma=0.5),
                                max_rounds=100_000, trials=500, sweep=tuple(range(1, 11)))
    if experiment == "theory-check-suite":
        return ExperimentConfig(experiment, trials=1)
    raise ConfigurationError(f"unknown experiment {experiment!r}; registered: {', '.join(EXPERIMENTS)}")


def config_from_dict(data: dict) -> ExperimentConfig:
    """Overlay a flat key-value mapping on the experiment defaults."""
    data = dict(data)
    if "experiment" not in data:
        raise ConfigurationError("config needs an 'experiment' key")
    base = default_config(str(data.pop("experiment")))
    scen = {k: data.pop(k) for k in _SCENARIO_KEYS if k in data}
    if "M" in scen and "sizes" not in scen and base.scenario.family in ("linear-model-heterogeneous",
                                                                        "subspace"):
        scen["sizes"] = scarce_rich_sizes(int(scen["M"]))
    elif "M" in scen and "sizes" not in scen:
        scen["sizes"] = base.scenario.sizes[0]
    if "d" in scen and base.scenario.family == "subspace":
        # the default r is the full dimension; the sweep sets r per point
        scen["r"] = int(scen["d"])
    known = set(ExperimentConfig.__dataclass_fields__) - {"experiment", "scenario"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    scenario = base.scenario.with_(**scen) if scen else base.scenario
    return base.with_(scenario=scenario, **data)


def load_config(path) -> ExperimentConfig:
    """Read a TOML (default) or JSON (``.json`` suffix) config file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigurationError(f"{path}: config must be flat, found tables {nested}")
    return config_from_dict(data)

"""Federated datasets and their on-disk format.

On disk a dataset is three files sharing a stem:

``<stem>-covariates.csv``
    ``client_id,row_index,x1,...,xp``
``<stem>-responses.csv``
    ``client_id,row_index,y``
``<stem>.json``
    sidecar with ``kernel``, ``sigma``, ``seed``, ``theta_star`` (common model or
    ``null``), ``theta_i_star`` (one list per client or ``null``) and free-form ``meta``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import ConfigurationError, EmptyInputError, InputShapeError
from .kernels import KernelSpec, as_points, feature_matrix

__all__ = ["ClientData", "FederatedDataset", "save_dataset", "load_dataset"]


@dataclass(frozen=True)
class ClientData:
    """Local data of one client plus (optionally) its true model."""

    x: np.ndarray
    y: np.ndarray
    theta_star: Optional[np.ndarray] = None
    f_star: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class FederatedDataset:
    """Per-client covariates and responses, with weights ``w_i = n_i / N``."""

    clients: tuple
    kernel: KernelSpec = field(default_factory=KernelSpec.linear)
    sigma: float = 0.0
    seed: Optional[int] = None
    theta_star: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        clients = tuple(self.clients)
        if not clients:
            raise EmptyInputError("a federated dataset needs at least one client")
        fixed = []
        for i, c in enumerate(clients):
            x = as_points(self.kernel, c.x)
            y = np.asarray(c.y, dtype=float).reshape(-1)
            if y.shape[0] < 1:
                raise EmptyInputError(f"client {i} has no data")
            if x.shape[0] != y.shape[0]:
                raise InputShapeError(
                    f"client {i}: {x.shape[0]} covariate rows but {y.shape[0]} responses")
            ts = None if c.theta_star is None else np.asarray(c.theta_star, dtype=float).reshape(-1)
            fixed.append(ClientData(x, y, ts, c.f_star))
        object.__setattr__(self, "clients", tuple(fixed))
        if self.theta_star is not None:
            object.__setattr__(self, "theta_star", np.asarray(self.theta_star, dtype=float).reshape(-1))

    # sizes and weights -------------------------------------------------
    @property
    def M(self) -> int:
        return len(self.clients)

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([c.n for c in self.clients], dtype=int)

    @property
    def N(self) -> int:
        return int(self.sizes.sum())

    @cached_property
    def weights(self) -> np.ndarray:
        return self.sizes / self.N

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    def block(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    # stacked views ----------------------------------------------------
    @cached_property
    def x(self) -> np.ndarray:
        return np.vstack([c.x for c in self.clients])

    @cached_property
    def y(self) -> np.ndarray:
        return np.concatenate([c.y for c in self.clients])

    @cached_property
    def client_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.M), self.sizes)

    @cached_property
    def features(self) -> tuple:
        """Per-client feature matrices ``Phi_i`` (``n_i x d``)."""
        return tuple(feature_matrix(self.kernel, c.x) for c in self.clients)

    @cached_property
    def feature_stack(self) -> np.ndarray:
        return np.vstack(self.features)

    @property
    def d(self) -> int:
        return self.features[0].shape[1]

    @property
    def has_true_models(self) -> bool:
        return all(c.theta_star is not None or c.f_star is not None for c in self.clients)

    def true_values(self, i: Optional[int] = None) -> np.ndarray:
        """Noise-free responses ``f_i*(x_i)``; stacked over clients when ``i`` is None."""
        if i is None:
            return np.concatenate([self.true_values(k) for k in range(self.M)])
        c = self.clients[i]
        if c.theta_star is not None:
            return self.features[i] @ c.theta_star
        if c.f_star is not None:
            return np.asarray(c.f_star(c.x), dtype=float).reshape(-1)
        raise ConfigurationError(f"client {i} has no true model")

    def true_theta(self, i: int) -> np.ndarray:
        c = self.clients[i]
        if c.theta_star is None:
            raise ConfigurationError(f"client {i} has no true coefficient vector")
        return c.theta_star

    def with_responses(self, y) -> "FederatedDataset":
        """Same covariates and true models, new stacked response vector."""
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != self.N:
            raise InputShapeError(f"expected {self.N} responses, got {y.shape[0]}")
        clients = tuple(replace(c, y=y[self.block(i)]) for i, c in enumerate(self.clients))
        new = replace(self, clients=clients)
        # feature matrices depend only on covariates
        if "features" in self.__dict__:
            new.__dict__["features"] = self.features
        return new

    @classmethod
    def from_arrays(cls, X, y, groups: Sequence, kernel: Optional[KernelSpec] = None,
                    **kwargs) -> "FederatedDataset":
        """Split pooled arrays into clients by ``groups`` (sorted unique labels)."""
        groups = np.asarray(groups)
        y = np.asarray(y, dtype=float).reshape(-1)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.shape[0] != y.shape[0] or groups.shape[0] != y.shape[0]:
            raise InputShapeError("X, y and groups must have the same number of rows")
        kernel = kernel or KernelSpec.linear(X.shape[1])
        labels = np.unique(groups)
        clients = tuple(ClientData(X[groups == g], y[groups == g]) for g in labels)
        ds = cls(clients, kernel=kernel, **kwargs)
        ds.meta.setdefault("client_labels", labels.tolist())
        return ds


def save_dataset(ds: FederatedDataset, directory, stem: str = "dataset") -> list:
    """Write the CSV pair and JSON sidecar; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cov = directory / f"{stem}-covariates.csv"
    resp = directory / f"{stem}-responses.csv"
    side = directory / f"{stem}.json"
    p = ds.x.shape[1]
    with cov.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["client_id", "row_index"] + [f"x{k + 1}" for k in range(p)])
        for i, c in enumerate(ds.clients):
            for j, row in enumerate(c.x):
                w.writerow([i, j] + [format(v, ".17g") for v in row])
    with resp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["client_id", "row_index", "y"])
        for i, c in enumerate(ds.clients):
            for j, v in enumerate(c.y):
                w.writerow([i, j, format(v, ".17g")])
    thetas = None
    if all(c.theta_star is not None for c in ds.clients):
        thetas = [c.theta_star.tolist() for c in ds.clients]
    sidecar = {
        "kernel": ds.kernel.to_dict(),
        "sigma": ds.sigma,
        "seed": ds.seed,
        "theta_star": None if ds.theta_star is None else ds.theta_star.tolist(),
        "theta_i_star": thetas,
        "meta": _jsonable(ds.meta),
    }
    side.write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return [cov, resp, side]


def load_dataset(directory, stem: str = "dataset") -> FederatedDataset:
    """Inverse of :func:`save_dataset` for linear and monomial kernels."""
    directory = Path(directory)
    sidecar = json.loads((directory / f"{stem}.json").read_text())
    kernel = KernelSpec.from_dict(sidecar["kernel"])
    rows: dict = {}
    with (directory / f"{stem}-covariates.csv").open() as fh:
        for rec in csv.DictReader(fh):
            cid = int(rec.pop("client_id"))
            j = int(rec.pop("row_index"))
            rows.setdefault(cid, {})[j] = [float(v) for v in rec.values()]
    ys: dict = {}
    with (directory / f"{stem}-responses.csv").open() as fh:
        for rec in csv.DictReader(fh):
            ys.setdefault(int(rec["client_id"]), {})[int(rec["row_index"])] = float(rec["y"])
    thetas = sidecar.get("theta_i_star")
    clients = []
    for cid in sorted(rows):
        x = np.array([rows[cid][j] for j in sorted(rows[cid])])
        y = np.array([ys[cid][j] for j in sorted(ys[cid])])
        ts = None if thetas is None else np.array(thetas[cid])
        clients.append(ClientData(x, y, ts))
    ts = sidecar.get("theta_star")
    return FederatedDataset(tuple(clients), kernel=kernel, sigma=sidecar["sigma"],
                            seed=sidecar["seed"], theta_star=None if ts is None else np.array(ts),
                            meta=sidecar.get("meta") or {})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj

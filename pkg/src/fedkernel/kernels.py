"""Kernels, finite-rank feature maps and normalized Gram matrices.

Every Gram matrix in this package carries its normalization constant.  Local
blocks are normalized by the client size ``n_i`` while the global matrix is
normalized by ``N``; :class:`GramMatrix` records which one was used so the two
are never mixed by accident.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import EmptyInputError, InputShapeError, UnsupportedRepresentationError

__all__ = [
    "KernelSpec",
    "GramMatrix",
    "as_points",
    "eval_kernel",
    "kernel_matrix",
    "gram",
    "feature_matrix",
    "rkhs_norm",
    "KernelFeatures",
]

_FAMILIES = ("linear", "monomial", "explicit", "callable")


@dataclass(frozen=True)
class KernelSpec:
    """Description of a positive semidefinite kernel.

    Use the constructors rather than the raw fields:

    * ``KernelSpec.linear(dim)`` -- ``k(x, z) = x . z`` on ``dim``-dimensional inputs.
    * ``KernelSpec.monomial(p)`` -- ``phi(x) = [1, x, ..., x**p]`` on scalar inputs.
    * ``KernelSpec.explicit(fn, d, input_dim)`` -- any user feature map of dimension ``d``.
    * ``KernelSpec.from_callable(k, input_dim)`` -- a kernel without a feature map;
      only the dual representation can train with it.
    """

    family: str
    degree: Optional[int] = None
    input_dim: Optional[int] = None
    feature_dim: Optional[int] = None
    feature_fn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    kernel_fn: Optional[Callable[[np.ndarray, np.ndarray], float]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "monomial" and (self.degree is None or self.degree < 0):
            raise ValueError("monomial kernel needs a degree >= 0")
        if self.family == "explicit" and self.feature_fn is None:
            raise ValueError("explicit kernel needs a feature_fn")
        if self.family == "callable" and self.kernel_fn is None:
            raise ValueError("callable kernel needs a kernel_fn")

    @classmethod
    def linear(cls, dim: Optional[int] = None) -> "KernelSpec":
        return cls("linear", input_dim=dim, feature_dim=dim)

    @classmethod
    def monomial(cls, degree: int) -> "KernelSpec":
        return cls("monomial", degree=int(degree), input_dim=1, feature_dim=int(degree) + 1)

    @classmethod
    def explicit(cls, feature_fn, feature_dim: int, input_dim: Optional[int] = None) -> "KernelSpec":
        return cls("explicit", input_dim=input_dim, feature_dim=int(feature_dim), feature_fn=feature_fn)

    @classmethod
    def from_callable(cls, kernel_fn, input_dim: Optional[int] = None) -> "KernelSpec":
        return cls("callable", input_dim=input_dim, kernel_fn=kernel_fn)

    @property
    def has_feature_map(self) -> bool:
        return self.family != "callable"

    def to_dict(self) -> dict:
        """JSON-friendly description; user callables are recorded by name only."""
        out = {"family": self.family, "degree": self.degree,
               "input_dim": self.input_dim, "feature_dim": self.feature_dim}
        fn = self.feature_fn or self.kernel_fn
        if fn is not None:
            out["callable"] = getattr(fn, "__qualname__", repr(fn))
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        family = data["family"]
        if family == "linear":
            return cls.linear(data.get("input_dim"))
        if family == "monomial":
            return cls.monomial(data["degree"])
        raise UnsupportedRepresentationError(
            f"kernel family {family!r} wraps a user callable and cannot be rebuilt from JSON")


@dataclass(frozen=True)
class GramMatrix:
    """Normalized Gram matrix ``K[j, l] = k(x_j, x_l) / normalization``."""

    entries: np.ndarray
    normalization: int
    raw: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def unnormalized(self) -> np.ndarray:
        return self.raw

    def spectral_norm(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[-1])


def as_points(spec: KernelSpec, points) -> np.ndarray:
    """Return ``points`` as a 2-D float array ``(n, input_dim)`` checked against ``spec``."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # a bare vector is a batch of scalars for scalar-input kernels, one point otherwise
        if spec.input_dim == 1:
            arr = arr.reshape(-1, 1)
        else:
            arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise InputShapeError(f"points must be at most 2-D, got shape {arr.shape}")
    if spec.input_dim is not None and arr.shape[1] != spec.input_dim:
        raise InputShapeError(
            f"{spec.family} kernel expects input dimension {spec.input_dim}, got {arr.shape[1]}")
    return arr


def _point(spec: KernelSpec, x) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise InputShapeError(f"a single input point must be 1-D, got shape {arr.shape}")
    if spec.input_dim is not None and arr.shape[0] != spec.input_dim:
        raise InputShapeError(
            f"{spec.family} kernel expects input dimension {spec.input_dim}, got {arr.shape[0]}")
    return arr


def eval_kernel(spec: KernelSpec, x, z) -> float:
    """Evaluate ``k(x, z)`` for two single input points."""
    x = _point(spec, x)
    z = _point(spec, z)
    if x.shape != z.shape:
        raise InputShapeError(f"points have different dimensions: {x.shape[0]} vs {z.shape[0]}")
    if spec.family == "linear":
        return float(x @ z)
    if spec.family == "monomial":
        xz = float(x[0] * z[0])
        return float(sum(xz ** i for i in range(spec.degree + 1)))
    if spec.family == "explicit":
        return float(_features(spec, x[None, :])[0] @ _features(spec, z[None, :])[0])
    return float(spec.kernel_fn(x, z))


def _features(spec: KernelSpec, pts: np.ndarray) -> np.ndarray:
    if spec.family == "linear":
        return pts
    if spec.family == "monomial":
        return np.vander(pts[:, 0], spec.degree + 1, increasing=True)
    if spec.family == "explicit":
        phi = np.asarray(spec.feature_fn(pts), dtype=float)
        if phi.ndim != 2 or phi.shape != (pts.shape[0], spec.feature_dim):
            raise InputShapeError(
                f"feature_fn returned shape {phi.shape}, expected ({pts.shape[0]}, {spec.feature_dim})")
        return phi
    raise UnsupportedRepresentationError(
        "kernel built from a callable has no explicit feature map; use the dual representation")


def feature_matrix(spec: KernelSpec, points) -> np.ndarray:
    """Stack ``phi(x_j)`` as rows of an ``n x d`` matrix."""
    if not spec.has_feature_map:
        raise UnsupportedRepresentationError(
            "kernel built from a callable has no explicit feature map; use the dual representation")
    return _features(spec, as_points(spec, points))


def kernel_matrix(spec: KernelSpec, points, other=None) -> np.ndarray:
    """Unnormalized kernel matrix ``k(x_j, z_l)``; ``other`` defaults to ``points``."""
    pts = as_points(spec, points)
    oth = pts if other is None else as_points(spec, other)
    if spec.has_feature_map:
        out = _features(spec, pts) @ _features(spec, oth).T
    else:
        out = np.array([[spec.kernel_fn(a, b) for b in oth] for a in pts], dtype=float).reshape(
            pts.shape[0], oth.shape[0])
    if other is None:
        out = 0.5 * (out + out.T)
    return out


def gram(spec: KernelSpec, points) -> GramMatrix:
    """Gram matrix of ``points`` normalized by the number of points."""
    pts = as_points(spec, points)
    n = pts.shape[0]
    if n == 0:
        raise EmptyInputError("cannot build a Gram matrix of an empty point set")
    raw = kernel_matrix(spec, pts)
    return GramMatrix(entries=raw / n, normalization=n, raw=raw)


def rkhs_norm(theta) -> float:
    """RKHS norm of a finite-rank function: the Euclidean norm of its coefficients."""
    return float(np.linalg.norm(np.asarray(theta, dtype=float)))


class KernelFeatures(TransformerMixin, BaseEstimator):
    """Map raw covariates to kernel features, e.g. monomials for polynomial fits.

    Parameters
    ----------
    kernel : {"linear", "monomial"} or KernelSpec
    degree : int
        Degree used when ``kernel="monomial"``.
    """

    def __init__(self, kernel="monomial", degree=5):
        self.kernel = kernel
        self.degree = degree

    def _spec(self, n_features: int) -> KernelSpec:
        return resolve_kernel(self.kernel, self.degree, n_features)

    def fit(self, X, y=None):
        X = check_array(X, ensure_2d=False)
        n_features = 1 if X.ndim == 1 else X.shape[1]
        self.kernel_ = self._spec(n_features)
        self.n_features_in_ = n_features
        return self

    def transform(self, X):
        check_is_fitted(self, "kernel_")
        X = check_array(X, ensure_2d=False)
        return feature_matrix(self.kernel_, X)


def resolve_kernel(kernel, degree, n_features: int) -> KernelSpec:
    """Turn an estimator-style kernel argument into a :class:`KernelSpec`."""
    if isinstance(kernel, KernelSpec):
        return kernel
    if kernel == "linear":
        return KernelSpec.linear(n_features)
    if kernel == "monomial":
        if n_features != 1:
            raise InputShapeError("monomial features need scalar covariates")
        return KernelSpec.monomial(degree)
    raise ValueError(f"unknown kernel {kernel!r}")

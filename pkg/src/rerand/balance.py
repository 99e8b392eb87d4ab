"""Covariate balance kernel: mean differences, covariance and Mahalanobis distance."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class CovariateMatrix:
    """Fixed n x k matrix of unit covariates."""

    data: np.ndarray
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise DimensionError("covariates must be a 2-d array")
        n, k = data.shape
        if n < 2 or k < 1:
            raise DimensionError(f"need n >= 2 units and k >= 1 covariates, got {n}x{k}")
        if not np.all(np.isfinite(data)):
            raise ValueError("covariates contain non-finite entries")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        names = tuple(self.column_names) or tuple(f"x{j + 1}" for j in range(k))
        if len(names) != k:
            raise DimensionError(f"{len(names)} column names for {k} columns")
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def k(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Assignment:
    """Binary treatment vector; 1 = treated."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w)
        if w.ndim != 1:
            raise DimensionError("assignment must be a 1-d vector")
        if not np.all((w == 0) | (w == 1)):
            raise ValueError("assignment entries must be 0 or 1")
        w = w.astype(np.int8)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def n_t(self) -> int:
        return int(self.w.sum())

    @property
    def n_c(self) -> int:
        return self.n - self.n_t

    @property
    def p_w(self) -> float:
        return self.n_t / self.n

    def mirror(self) -> "Assignment":
        return Assignment(1 - self.w)

    def tolist(self) -> list[int]:
        return [int(v) for v in self.w]

    def __eq__(self, other):
        if not isinstance(other, Assignment):
            return NotImplemented
        return np.array_equal(self.w, other.w)

    def __hash__(self):
        return hash(self.w.tobytes())


def _as_matrix(x) -> np.ndarray:
    return x.data if isinstance(x, CovariateMatrix) else CovariateMatrix(x).data


def _as_w(w) -> np.ndarray:
    return w.w if isinstance(w, Assignment) else np.asarray(w)


def diff_in_means(x, w) -> np.ndarray:
    """Treated minus control column means."""
    data = _as_matrix(x)
    wv = _as_w(w).astype(bool)
    if wv.shape != (data.shape[0],):
        raise DimensionError(f"assignment length {wv.shape[0]} does not match n={data.shape[0]}")
    n_t = int(wv.sum())
    if n_t == 0 or n_t == wv.size:
        raise ValueError("both treatment groups must be nonempty")
    # shift by the first row so constant columns give an exact zero
    data = data - data[0]
    return data[wv].mean(axis=0) - data[~wv].mean(axis=0)


def diff_in_means_identity(x, w) -> np.ndarray:
    """Same quantity via x'(W - p_w 1) / (n p_w (1 - p_w))."""
    data = _as_matrix(x)
    wv = _as_w(w).astype(np.float64)
    n = wv.size
    p_w = wv.sum() / n
    if p_w in (0.0, 1.0):
        raise ValueError("both treatment groups must be nonempty")
    return data.T @ (wv - p_w) / (n * p_w * (1.0 - p_w))


def sample_covariance(x) -> np.ndarray:
    """Unbiased (divisor n - 1) sample covariance, always k x k."""
    data = _as_matrix(x)
    centered = data - data.mean(axis=0)
    cov = centered.T @ centered / (data.shape[0] - 1)
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class BalanceContext:
    """Per-design precomputation shared by every Mahalanobis evaluation.

    ``inv_factor`` is a k x r matrix L with L L' = pinv(cov_x); covariates
    whitened by it make M a squared norm, so each proposal costs O(n r).
    """

    x: CovariateMatrix
    n_t: int
    cov_x: np.ndarray
    inv_factor: np.ndarray
    rank: int
    whitened: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.x.n

    @property
    def k(self) -> int:
        return self.x.k

    @property
    def n_c(self) -> int:
        return self.n - self.n_t

    @property
    def p_w(self) -> float:
        return self.n_t / self.n

    @property
    def scale(self) -> float:
        """n p_w (1 - p_w)."""
        return self.n_t * self.n_c / self.n

    def check(self, w) -> np.ndarray:
        wv = _as_w(w)
        if wv.shape[-1] != self.n:
            raise DimensionError(f"assignment length {wv.shape[-1]} does not match n={self.n}")
        return wv

    def diffs(self, W: np.ndarray) -> np.ndarray:
        """Mean differences for a batch of assignments with this context's group sizes (B x k)."""
        W = np.atleast_2d(self.check(W)).astype(np.float64)
        centered = self.x.data - self.x.data.mean(axis=0)
        return (W @ centered) * (self.n / (self.n_t * self.n_c))

    def mahalanobis_batch(self, W: np.ndarray) -> np.ndarray:
        W = np.atleast_2d(self.check(W)).astype(np.float64)
        # whitened columns are centred, so the control sum is minus the treated sum
        z = (W @ self.whitened) * (self.n / (self.n_t * self.n_c))
        return self.scale * np.einsum("ij,ij->i", z, z)


def build_context(x, n_t: int) -> BalanceContext:
    cm = x if isinstance(x, CovariateMatrix) else CovariateMatrix(x)
    if not 1 <= n_t <= cm.n - 1:
        raise ValueError(f"n_t must lie in [1, n-1], got {n_t} with n={cm.n}")
    cov = sample_covariance(cm)
    evals, evecs = np.linalg.eigh(cov)
    top = float(evals.max()) if evals.size else 0.0
    if top <= 0.0:
        raise ValueError("no balance information: every covariate is constant")
    cutoff = top * cm.k * np.finfo(np.float64).eps * 64
    keep = evals > cutoff
    factor = evecs[:, keep] / np.sqrt(evals[keep])
    whitened = (cm.data - cm.data.mean(axis=0)) @ factor
    factor.setflags(write=False)
    whitened.setflags(write=False)
    cov.setflags(write=False)
    return BalanceContext(x=cm, n_t=int(n_t), cov_x=cov, inv_factor=factor,
                          rank=int(keep.sum()), whitened=whitened)


def mahalanobis(ctx: BalanceContext, w) -> float:
    """M = n p_w (1 - p_w) d' cov(x)^+ d for one assignment."""
    wv = ctx.check(w)
    if int(np.sum(wv)) != ctx.n_t:
        raise DimensionError(f"assignment has {int(np.sum(wv))} treated units, context expects {ctx.n_t}")
    return float(ctx.mahalanobis_batch(wv[None, :])[0])


def mahalanobis_direct(x, w, cov: np.ndarray | None = None) -> float:
    """Reference evaluation from group means and an explicit pseudo-inverse."""
    data = _as_matrix(x)
    wv = _as_w(w)
    d = diff_in_means(data, wv)
    cov = sample_covariance(data) if cov is None else cov
    n = wv.size
    p_w = wv.sum() / n
    return float(n * p_w * (1 - p_w) * d @ np.linalg.pinv(cov, hermitian=True) @ d)


def with_interactions(x: CovariateMatrix, squares: bool = False, interactions: bool = False) -> CovariateMatrix:
    """Append squared columns and/or pairwise products."""
    cols = [x.data]
    names = list(x.column_names)
    if squares:
        cols.append(x.data ** 2)
        names += [f"{c}^2" for c in x.column_names]
    if interactions:
        for i in range(x.k):
            for j in range(i + 1, x.k):
                cols.append(x.data[:, [i]] * x.data[:, [j]])
                names.append(f"{x.column_names[i]}*{x.column_names[j]}")
    return CovariateMatrix(np.hstack(cols), tuple(names))


def as_assignment(w: Sequence[int] | np.ndarray | Assignment) -> Assignment:
    return w if isinstance(w, Assignment) else Assignment(np.asarray(w))

"""Acceptance criteria for rerandomization and threshold calibration."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import theory
from .balance import BalanceContext, DimensionError


class Criterion:
    """Deterministic indicator of whether an assignment is acceptable."""

    affinely_invariant: bool = False

    def accepts(self, ctx: BalanceContext, W: np.ndarray) -> np.ndarray:
        """Vectorised decision for a batch of assignments (B x n) -> bool (B,)."""
        raise NotImplementedError

    def evaluate(self, ctx: BalanceContext, w) -> bool:
        wv = ctx.check(getattr(w, "w", w))
        return bool(self.accepts(ctx, np.asarray(wv)[None, :])[0])

    def to_dict(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def __and__(self, other: "Criterion") -> "Conjunction":
        return Conjunction((self, other))


def _encode_threshold(a: float):
    return "inf" if math.isinf(a) else a


@dataclass(frozen=True)
class MahalanobisThreshold(Criterion):
    """Accept when M <= a. ``a = inf`` is unrestricted randomization."""

    a: float
    affinely_invariant = True

    def __post_init__(self):
        a = float(self.a)
        if math.isnan(a) or a < 0:
            raise ValueError(f"threshold must be nonnegative, got {self.a}")
        if a == 0:
            warnings.warn("threshold a = 0 accepts only exact mean balance", stacklevel=3)
        object.__setattr__(self, "a", a)

    def accepts(self, ctx, W):
        if math.isinf(self.a):
            return np.ones(np.atleast_2d(W).shape[0], dtype=bool)
        return ctx.mahalanobis_batch(W) <= self.a

    def to_dict(self):
        return {"type": "mahalanobis", "a": _encode_threshold(self.a)}


@dataclass(frozen=True)
class Caliper(Criterion):
    """Accept when every |treated mean - control mean| is within its bound."""

    bounds: tuple[float, ...]

    def __post_init__(self):
        bounds = tuple(float(b) for b in self.bounds)
        if not bounds or any(not b > 0 for b in bounds):
            raise ValueError("caliper bounds must be positive")
        object.__setattr__(self, "bounds", bounds)

    def accepts(self, ctx, W):
        if len(self.bounds) != ctx.k:
            raise DimensionError(f"{len(self.bounds)} caliper bounds for k={ctx.k} covariates")
        return np.all(np.abs(ctx.diffs(W)) <= np.asarray(self.bounds), axis=1)

    def to_dict(self):
        return {"type": "caliper", "bounds": list(self.bounds)}


@dataclass(frozen=True)
class Conjunction(Criterion):
    children: tuple[Criterion, ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise ValueError("conjunction needs at least one criterion")

    @property
    def affinely_invariant(self):
        return all(c.affinely_invariant for c in self.children)

    def accepts(self, ctx, W):
        W = np.atleast_2d(W)
        out = np.ones(W.shape[0], dtype=bool)
        for child in self.children:
            if not out.any():
                break
            out[out] = child.accepts(ctx, W[out])
        return out

    def to_dict(self):
        return {"type": "all", "criteria": [c.to_dict() for c in self.children]}


@dataclass(frozen=True)
class UserPredicate(Criterion):
    """Wraps ``predicate(x, w) -> bool``. The predicate must be deterministic."""

    predicate: Callable[[np.ndarray, np.ndarray], bool]
    name: str = "user"
    declared_affinely_invariant: bool = False

    @property
    def affinely_invariant(self):
        return self.declared_affinely_invariant

    def accepts(self, ctx, W):
        W = np.atleast_2d(W)
        return np.array([bool(self.predicate(ctx.x.data, row)) for row in W], dtype=bool)

    def to_dict(self):
        return {"type": "user", "name": self.name, "affinely_invariant": self.declared_affinely_invariant}


ALWAYS = MahalanobisThreshold(math.inf)


def evaluate(c: Criterion, ctx: BalanceContext, w) -> bool:
    return c.evaluate(ctx, w)


def from_dict(spec: dict, predicates: dict[str, Callable] | None = None) -> Criterion:
    kind = spec.get("type")
    if kind == "mahalanobis":
        a = spec["a"]
        return MahalanobisThreshold(math.inf if a in ("inf", "Infinity", None) else float(a))
    if kind == "caliper":
        return Caliper(tuple(spec["bounds"]))
    if kind == "all":
        return Conjunction(tuple(from_dict(s, predicates) for s in spec["criteria"]))
    if kind == "one-sided":
        return OneSidedBound(int(spec["column"]), float(spec["bound"]))
    if kind == "user":
        name = spec.get("name", "user")
        if not predicates or name not in predicates:
            raise ValueError(f"user predicate {name!r} is not registered")
        return UserPredicate(predicates[name], name, bool(spec.get("affinely_invariant", False)))
    raise ValueError(f"unknown criterion type {kind!r}")


def from_json(text: str, predicates=None) -> Criterion:
    return from_dict(json.loads(text), predicates)


@dataclass(frozen=True)
class CalibrationResult:
    a: float
    p_a_target: float
    p_a_achieved: float
    method: str
    draws_used: int = 0

    def criterion(self) -> MahalanobisThreshold:
        return MahalanobisThreshold(self.a)

    def to_dict(self):
        return {"a": _encode_threshold(self.a), "p_a_target": self.p_a_target,
                "p_a_achieved": self.p_a_achieved, "method": self.method, "draws_used": self.draws_used}


def _check_p_a(p_a: float) -> None:
    if not 0.0 < p_a <= 1.0:
        raise ValueError(f"acceptance probability must lie in (0, 1], got {p_a}")


def calibrate_threshold_asymptotic(k: int, p_a: float) -> CalibrationResult:
    """Threshold from the chi-square(k) approximation to M."""
    _check_p_a(p_a)
    a = theory.chi2_quantile(k, p_a)
    return CalibrationResult(a, p_a, p_a, "chi-square-asymptotic", 0)


def quantile_from_sample(m_values: np.ndarray, p_a: float) -> tuple[float, float]:
    """Lower empirical quantile: the ceil(p_a * N)-th smallest value, and achieved rate."""
    m = np.sort(np.asarray(m_values, dtype=np.float64))
    if m[0] == m[-1]:
        raise ValueError("degenerate Mahalanobis distribution: every draw has the same M")
    rank = max(1, math.ceil(p_a * m.size - 1e-9))
    a = float(m[rank - 1])
    return a, float(np.count_nonzero(m <= a) / m.size)


def calibrate_threshold_empirical(ctx: BalanceContext, p_a: float, draws: int = 100_000, rng=None,
                                  min_draws: int = 1000, exact: bool = False) -> CalibrationResult:
    """Threshold from simulated (or, with ``exact``, fully enumerated) M values.

    ``p_a = 1`` returns the largest simulated M rather than the infinite sentinel.
    """
    from .sampler import as_generator, assignment_matrix, draw_assignments

    _check_p_a(p_a)
    if exact:
        W = assignment_matrix(ctx.n, ctx.n_t)
        method = "enumeration"
    else:
        if draws < min_draws:
            raise ValueError(f"need at least {min_draws} draws, got {draws}")
        gen = as_generator(rng)
        W = None
        method = "empirical"
    if W is not None:
        m = ctx.mahalanobis_batch(W)
    else:
        chunks = []
        remaining = draws
        while remaining > 0:
            size = min(remaining, 50_000)
            chunks.append(ctx.mahalanobis_batch(draw_assignments(ctx.n, ctx.n_t, size, gen)))
            remaining -= size
        m = np.concatenate(chunks)
    a, achieved = quantile_from_sample(m, p_a)
    return CalibrationResult(a, p_a, achieved, method, int(m.size))


def is_mirror_symmetric(c: Criterion, ctx: BalanceContext, probe_draws: int = 10_000, rng=None,
                        enumerate_limit: int = 100_000) -> bool:
    """Check phi(w) == phi(1 - w) on probes; exhaustive when C(n, n_t) is small."""
    from .sampler import as_generator, assignment_matrix, draw_assignments

    if ctx.n_t != ctx.n_c:
        raise ValueError("mirror symmetry needs equal group sizes")
    if math.comb(ctx.n, ctx.n_t) <= max(enumerate_limit, probe_draws):
        W = assignment_matrix(ctx.n, ctx.n_t)
    else:
        W = draw_assignments(ctx.n, ctx.n_t, probe_draws, as_generator(rng))
    return bool(np.array_equal(c.accepts(ctx, W), c.accepts(ctx, 1 - W)))


@dataclass(frozen=True)
class OneSidedBound(Criterion):
    """Accept when the mean difference of one covariate is at most ``bound``.

    Not mirror symmetric; kept as the standard witness for biased rerandomization.
    """

    column: int
    bound: float
    name: str = field(default="one-sided")

    def accepts(self, ctx, W):
        return ctx.diffs(W)[:, self.column] <= self.bound

    def to_dict(self):
        return {"type": "one-sided", "column": self.column, "bound": self.bound}

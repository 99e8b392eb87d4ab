"""Randomization tests and test-inversion intervals that condition on the criterion."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .balance import Assignment, BalanceContext, as_assignment
from .criteria import Criterion
from .sampler import DEFAULT_MAX_PROPOSALS, RngSpec, as_generator, assignment_matrix, draw_acceptable

TAILS = ("two-sided", "lower", "upper")

Statistic = Callable[[np.ndarray, np.ndarray], np.ndarray]


class NotAcceptableError(ValueError):
    """The observed assignment fails the criterion it is analysed under."""


class BracketError(RuntimeError):
    pass


def _outcomes(y, n: int | None = None) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError("outcomes must be a 1-d vector")
    if not np.all(np.isfinite(y)):
        raise ValueError("outcomes contain non-finite values")
    if n is not None and y.size != n:
        raise ValueError(f"{y.size} outcomes for {n} units")
    return y


def estimate_tau(y, w) -> float:
    """Difference in observed treated and control means."""
    wv = as_assignment(w)
    y = _outcomes(y, wv.n)
    if wv.n_t == 0 or wv.n_c == 0:
        raise ValueError("both treatment groups must be nonempty")
    t = wv.w.astype(bool)
    return float(y[t].mean() - y[~t].mean())


def tau_batch(W: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Difference in means for each row of W (rows share one group size)."""
    W = np.atleast_2d(W).astype(np.float64)
    n_t = W[0].sum()
    n_c = W.shape[1] - n_t
    treated = W @ y
    return treated / n_t - (y.sum() - treated) / n_c


def classical_se(y, w) -> float:
    """Neyman standard error sqrt(s_T^2/n_t + s_C^2/n_c)."""
    wv = as_assignment(w)
    y = _outcomes(y, wv.n)
    if wv.n_t < 2 or wv.n_c < 2:
        raise ValueError("each group needs at least two units for a within-group variance")
    t = wv.w.astype(bool)
    return math.sqrt(y[t].var(ddof=1) / wv.n_t + y[~t].var(ddof=1) / wv.n_c)


@dataclass(frozen=True)
class TestReport:
    __test__ = False

    estimate: float
    p_value: float
    draws_requested: int
    draws_accepted: int
    proposals: int
    tail: str
    exact: bool
    criterion: dict
    seed: dict | None = None

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


@dataclass(frozen=True)
class IntervalReport:
    lower: float
    upper: float
    level: float
    estimate: float
    draws: int
    exact: bool
    criterion: dict
    seed: dict | None = None
    trace: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


@dataclass
class ReferenceSet:
    """Acceptable assignments forming the null randomization distribution.

    With ``exact`` the rows are the complete acceptable set (the observed
    assignment included); otherwise they are independent acceptable draws and
    the observed assignment is added once in the p-value.
    """

    W: np.ndarray
    exact: bool
    proposals: int

    def p_value(self, stats: np.ndarray, observed: float, tail: str = "two-sided") -> float:
        tol = 1e-10 * max(1.0, abs(observed), float(np.max(np.abs(stats), initial=0.0)))
        if tail == "two-sided":
            hits = np.count_nonzero(np.abs(stats) >= abs(observed) - tol)
        elif tail == "upper":
            hits = np.count_nonzero(stats >= observed - tol)
        elif tail == "lower":
            hits = np.count_nonzero(stats <= observed + tol)
        else:
            raise ValueError(f"tail must be one of {TAILS}, got {tail!r}")
        if self.exact:
            return hits / stats.size
        return (1 + hits) / (1 + stats.size)


def reference_set(ctx: BalanceContext, c: Criterion, n_sim: int, rng=None, exact: bool = False,
                  max_proposals: int | None = None) -> ReferenceSet:
    if exact:
        W = assignment_matrix(ctx.n, ctx.n_t)
        return ReferenceSet(W[c.accepts(ctx, W)], True, W.shape[0])
    if n_sim < 1:
        raise ValueError("n_sim must be positive")
    budget = max_proposals or max(DEFAULT_MAX_PROPOSALS, 1000 * n_sim)
    W, where = draw_acceptable(ctx, c, n_sim, as_generator(rng), budget)
    return ReferenceSet(W, False, int(where[-1]))


def _check_observed(ctx, c, w_obs, y):
    w = as_assignment(w_obs)
    ctx.check(w.w)
    if w.n_t != ctx.n_t:
        raise ValueError(f"observed assignment has {w.n_t} treated units, design has {ctx.n_t}")
    if not c.evaluate(ctx, w):
        raise NotAcceptableError(f"observed assignment fails the criterion {c.to_json()}")
    return w, _outcomes(y, ctx.n)


def randomization_test(ctx: BalanceContext, c: Criterion, w_obs, y, n_sim: int = 10_000, rng=None,
                       tail: str = "two-sided", exact: bool = False, statistic: Statistic = tau_batch,
                       max_proposals: int | None = None, reference: ReferenceSet | None = None) -> TestReport:
    """Sharp-null randomization test over assignments acceptable under ``c``.

    ``statistic(W, y)`` maps a batch of assignments to statistic values; the
    default is the difference in means.
    """
    if tail not in TAILS:
        raise ValueError(f"tail must be one of {TAILS}, got {tail!r}")
    w, y = _check_observed(ctx, c, w_obs, y)
    seed = rng.to_dict() if isinstance(rng, RngSpec) else None
    ref = reference or reference_set(ctx, c, n_sim, rng, exact, max_proposals)
    observed = float(statistic(w.w[None, :], y)[0])
    p = ref.p_value(statistic(ref.W, y), observed, tail)
    return TestReport(observed, p, n_sim if not ref.exact else ref.W.shape[0], ref.W.shape[0],
                      ref.proposals, tail, ref.exact, c.to_dict(), seed)


def shifted_p_value(ref: ReferenceSet, w: Assignment, y: np.ndarray, tau0: float,
                    statistic: Statistic = tau_batch) -> float:
    """Two-sided p-value for the additive-effect null tau = tau0."""
    y0 = y - tau0 * w.w
    observed = float(statistic(w.w[None, :], y0)[0])
    return ref.p_value(statistic(ref.W, y0), observed, "two-sided")


def _bracket_scale(y, w, estimate) -> float:
    try:
        se = classical_se(y, w)
    except ValueError:
        se = 0.0
    if se > 0:
        return se
    spread = float(np.std(y))
    return spread if spread > 0 else max(1.0, abs(estimate))


def confidence_interval(ctx: BalanceContext, c: Criterion, w_obs, y, level: float = 0.95,
                        n_sim: int = 10_000, rng=None, exact: bool = False, tol: float = 1e-6,
                        statistic: Statistic = tau_batch, max_proposals: int | None = None,
                        reference: ReferenceSet | None = None) -> IntervalReport:
    """Invert additive-effect randomization tests by bisection on each endpoint.

    One reference set of acceptable assignments is reused for every tau0
    (common random numbers), which keeps p(tau0) a deterministic step function.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    w, y = _check_observed(ctx, c, w_obs, y)
    seed = rng.to_dict() if isinstance(rng, RngSpec) else None
    ref = reference or reference_set(ctx, c, n_sim, rng, exact, max_proposals)
    alpha = 1.0 - level
    estimate = float(statistic(w.w[None, :], y)[0])
    scale = _bracket_scale(y, w, estimate)
    trace = []

    def p_at(tau0):
        p = shifted_p_value(ref, w, y, tau0, statistic)
        trace.append((tau0, p))
        return p

    def endpoint(direction):
        far = estimate + direction * 6.0 * scale
        if p_at(far) > alpha:
            far = estimate + direction * 24.0 * scale
            if p_at(far) > alpha:
                raise BracketError(f"p-value stays above {alpha} at {far}; "
                                   "increase n_sim or check the reference distribution")
        inside, outside = estimate, far
        while abs(outside - inside) > tol:
            mid = 0.5 * (inside + outside)
            if p_at(mid) > alpha:
                inside = mid
            else:
                outside = mid
        return 0.5 * (inside + outside)

    lower, upper = endpoint(-1.0), endpoint(1.0)
    return IntervalReport(lower, upper, level, estimate, int(ref.W.shape[0]), ref.exact,
                          c.to_dict(), seed, trace)

"""Uniform assignment generation and the rejection loop."""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .balance import Assignment, BalanceContext
from .criteria import Criterion

ENUMERATION_CEILING = 10 ** 7
DEFAULT_MAX_PROPOSALS = 10 ** 6
MIN_ACCEPTABLE = 1000


class ProposalBudgetExceeded(RuntimeError):
    """Raised when the rejection loop runs out of proposals."""

    def __init__(self, proposals: int, accepted: int):
        self.proposals = proposals
        self.accepted = accepted
        self.acceptance_estimate = accepted / proposals if proposals else 0.0
        super().__init__(
            f"proposal budget exhausted after {proposals} proposals with {accepted} accepted "
            f"(observed acceptance {self.acceptance_estimate:.3g}); the criterion is too strict or infeasible"
        )


@dataclass(frozen=True)
class RngSpec:
    """Seed plus sub-stream index for a Philox (counter-based) generator."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(ss))

    def spawn(self, stream: int) -> "RngSpec":
        return RngSpec(self.seed, stream)

    def to_dict(self):
        return {"seed": self.seed, "stream": self.stream, "bit_generator": "Philox"}


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSpec):
        return rng.generator()
    if rng is None or isinstance(rng, (int, np.integer)):
        return RngSpec(0 if rng is None else int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


def _check_sizes(n: int, n_t: int) -> None:
    if not 1 <= n_t <= n - 1:
        raise ValueError(f"n_t must lie in [1, n-1], got n={n}, n_t={n_t}")


def draw_assignment(n: int, n_t: int, rng) -> Assignment:
    """One uniform assignment by a partial Fisher-Yates shuffle."""
    _check_sizes(n, n_t)
    gen = as_generator(rng)
    idx = np.arange(n)
    for i in range(n_t):
        j = int(gen.integers(i, n))
        idx[i], idx[j] = idx[j], idx[i]
    w = np.zeros(n, dtype=np.int8)
    w[idx[:n_t]] = 1
    return Assignment(w)


def draw_assignments(n: int, n_t: int, size: int, rng) -> np.ndarray:
    """``size`` independent uniform assignments as an int8 (size x n) array.

    Each row treats the n_t units with the smallest uniform keys.
    """
    _check_sizes(n, n_t)
    gen = as_generator(rng)
    keys = gen.random((size, n))
    kth = np.partition(keys, n_t - 1, axis=1)[:, n_t - 1:n_t]
    W = (keys <= kth).astype(np.int8)
    tied = np.flatnonzero(W.sum(axis=1) != n_t)
    for i in tied:
        W[i] = 0
        W[i, np.argsort(keys[i], kind="stable")[:n_t]] = 1
    return W


def support_size(n: int, n_t: int) -> int:
    return math.comb(n, n_t)


def enumerate_assignments(n: int, n_t: int, ceiling: int = ENUMERATION_CEILING) -> Iterator[Assignment]:
    """Every assignment with n_t treated units, in lexicographic order of treated indices."""
    _check_sizes(n, n_t)
    if math.comb(n, n_t) > ceiling:
        raise ValueError(f"C({n}, {n_t}) = {math.comb(n, n_t)} exceeds the enumeration ceiling {ceiling}")
    for treated in itertools.combinations(range(n), n_t):
        w = np.zeros(n, dtype=np.int8)
        w[list(treated)] = 1
        yield Assignment(w)


def assignment_matrix(n: int, n_t: int, ceiling: int = ENUMERATION_CEILING) -> np.ndarray:
    """All C(n, n_t) assignments stacked as rows, same order as enumerate_assignments."""
    _check_sizes(n, n_t)
    total = math.comb(n, n_t)
    if total > ceiling:
        raise ValueError(f"C({n}, {n_t}) = {total} exceeds the enumeration ceiling {ceiling}")
    idx = np.fromiter(itertools.chain.from_iterable(itertools.combinations(range(n), n_t)),
                      dtype=np.int64, count=total * n_t).reshape(total, n_t)
    W = np.zeros((total, n), dtype=np.int8)
    np.put_along_axis(W, idx, 1, axis=1)
    return W


@dataclass(frozen=True)
class DesignResult:
    assignment: Assignment
    proposals: int
    accepted_m: float | None
    criterion: dict
    seed: dict | None = None

    def to_dict(self) -> dict:
        return {
            "assignment": self.assignment.tolist(),
            "n": self.assignment.n,
            "n_t": self.assignment.n_t,
            "proposals": self.proposals,
            "accepted_m": self.accepted_m,
            "criterion": self.criterion,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "DesignResult":
        return cls(Assignment(np.array(d["assignment"])), int(d["proposals"]), d.get("accepted_m"),
                   d["criterion"], d.get("seed"))


def _batches(first: int = 16, largest: int = 1 << 15) -> Iterator[int]:
    size = first
    while True:
        yield size
        size = min(2 * size, largest)


def draw_acceptable(ctx: BalanceContext, c: Criterion, count: int, rng,
                    max_proposals: int = DEFAULT_MAX_PROPOSALS) -> tuple[np.ndarray, np.ndarray]:
    """First ``count`` accepted proposals of a uniform proposal stream.

    Returns the accepted rows and, for each, the index (1-based) of the proposal
    at which it was accepted.
    """
    gen = as_generator(rng)
    found, where = [], []
    got = proposed = 0
    for size in _batches(first=max(16, min(count * 4, 1 << 15))):
        size = min(size, max_proposals - proposed)
        if size <= 0:
            raise ProposalBudgetExceeded(proposed, got)
        W = draw_assignments(ctx.n, ctx.n_t, size, gen)
        ok = np.flatnonzero(c.accepts(ctx, W))[: count - got]
        found.append(W[ok])
        where.append(ok + proposed + 1)
        got += ok.size
        proposed += size
        if got >= count:
            return np.concatenate(found), np.concatenate(where)
    raise AssertionError("unreachable")


def rerandomize(ctx: BalanceContext, c: Criterion, rng=None,
                max_proposals: int = DEFAULT_MAX_PROPOSALS) -> DesignResult:
    """Draw uniform assignments until one satisfies ``c``.

    Proposals are generated in deterministic, growing batches; the returned
    assignment is the first acceptable one in stream order, so the result is
    uniform over the acceptable set and reproducible from the seed.
    """
    if max_proposals < 1:
        raise ValueError("max_proposals must be at least 1")
    seed = rng.to_dict() if isinstance(rng, RngSpec) else None
    gen = as_generator(rng)
    proposed = 0
    for size in _batches():
        size = min(size, max_proposals - proposed)
        if size <= 0:
            raise ProposalBudgetExceeded(proposed, 0)
        W = draw_assignments(ctx.n, ctx.n_t, size, gen)
        ok = np.flatnonzero(c.accepts(ctx, W))
        if ok.size:
            first = int(ok[0])
            w = W[first]
            return DesignResult(Assignment(w), proposed + first + 1,
                                float(ctx.mahalanobis_batch(w[None, :])[0]), c.to_dict(), seed)
        proposed += size
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class AcceptanceEstimate:
    p_hat: float
    se: float
    draws: int

    def __iter__(self):
        return iter((self.p_hat, self.se))


def estimate_acceptance(ctx: BalanceContext, c: Criterion, draws: int = 100_000, rng=None) -> AcceptanceEstimate:
    if draws < 1:
        raise ValueError("draws must be positive")
    gen = as_generator(rng)
    hits = 0
    remaining = draws
    while remaining:
        size = min(remaining, 50_000)
        hits += int(np.count_nonzero(c.accepts(ctx, draw_assignments(ctx.n, ctx.n_t, size, gen))))
        remaining -= size
    p = hits / draws
    if hits == 0:
        warnings.warn(f"no proposal out of {draws} satisfied the criterion", RuntimeWarning, stacklevel=2)
    return AcceptanceEstimate(p, math.sqrt(p * (1 - p) / draws), draws)


def count_acceptable(ctx: BalanceContext, c: Criterion, ceiling: int = ENUMERATION_CEILING) -> int:
    """Exact size of the acceptable set by enumeration."""
    return int(np.count_nonzero(c.accepts(ctx, assignment_matrix(ctx.n, ctx.n_t, ceiling))))

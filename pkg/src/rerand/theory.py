"""Closed-form variance-reduction results for Mahalanobis rerandomization.

Special functions are computed here (power series plus a Lentz continued
fraction) so that results do not depend on which scipy build is installed.
"""
from __future__ import annotations

import math
import sys
import warnings
from typing import Iterable, Sequence

INF = math.inf

_EPS = sys.float_info.epsilon
_TINY = 1e-300
_MAX_ITER = 10_000


def _check_gamma_args(b: float, c: float) -> None:
    if not b > 0:
        raise ValueError(f"shape parameter must be positive, got {b}")
    if not c >= 0:
        raise ValueError(f"argument must be nonnegative, got {c}")


def _log_series(b: float, c: float) -> float:
    """log of sum_{n>=0} c^n / (b (b+1) ... (b+n)), valid for c < b + 1."""
    term = 1.0 / b
    total = term
    ap = b
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= c / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return math.log(total)
    raise ArithmeticError(f"incomplete gamma series did not converge (b={b}, c={c})")


def _log_continued_fraction(b: float, c: float) -> float:
    """log of the Legendre continued fraction for Gamma(b, c) e^c c^-b, c >= b + 1."""
    f_b = c + 1.0 - b
    cc = 1.0 / _TINY
    d = 1.0 / f_b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - b)
        f_b += 2.0
        d = an * d + f_b
        if abs(d) < _TINY:
            d = _TINY
        cc = f_b + an / cc
        if abs(cc) < _TINY:
            cc = _TINY
        d = 1.0 / d
        delta = d * cc
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return math.log(h)
    raise ArithmeticError(f"incomplete gamma continued fraction did not converge (b={b}, c={c})")


def lower_incomplete_gamma_regularized(b: float, c: float) -> float:
    """P(b, c) = gamma(b, c) / Gamma(b), the regularized lower incomplete gamma."""
    _check_gamma_args(b, c)
    if c == 0:
        return 0.0
    if math.isinf(c):
        return 1.0
    log_prefactor = b * math.log(c) - c - math.lgamma(b)
    if c < b + 1.0:
        return min(1.0, math.exp(log_prefactor + _log_series(b, c)))
    upper = math.exp(log_prefactor + _log_continued_fraction(b, c))
    return max(0.0, 1.0 - upper)


def log_lower_incomplete_gamma(b: float, c: float) -> float:
    """log gamma(b, c) for the unregularized lower incomplete gamma function."""
    _check_gamma_args(b, c)
    if c == 0:
        return -INF
    if math.isinf(c):
        return math.lgamma(b)
    log_prefactor = b * math.log(c) - c
    if c < b + 1.0:
        return log_prefactor + _log_series(b, c)
    upper = math.exp(log_prefactor + _log_continued_fraction(b, c) - math.lgamma(b))
    return math.lgamma(b) + math.log1p(-upper)


def chi2_cdf(k: float, x: float) -> float:
    if k <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {k}")
    if x <= 0:
        return 0.0
    return lower_incomplete_gamma_regularized(k / 2.0, x / 2.0)


def chi2_quantile(k: float, p: float) -> float:
    """Inverse of chi2_cdf by bracketed bisection; p = 1 maps to infinity."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return INF
    lo, hi = 0.0, max(1.0, float(k))
    while chi2_cdf(k, hi) < p:
        lo, hi = hi, 2.0 * hi
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(k, mid) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4.0 * _EPS * hi:
            break
    return 0.5 * (lo + hi)


def v_a_gamma_ratio(k: int, a: float) -> float:
    """(2/k) gamma(k/2+1, a/2) / gamma(k/2, a/2) from unregularized gammas."""
    if math.isinf(a):
        return 1.0
    b, c = k / 2.0, a / 2.0
    return (2.0 / k) * math.exp(log_lower_incomplete_gamma(b + 1.0, c) - log_lower_incomplete_gamma(b, c))


def v_a_cdf_ratio(k: int, a: float) -> float:
    """P(chi2_{k+2} <= a) / P(chi2_k <= a)."""
    if math.isinf(a):
        return 1.0
    return chi2_cdf(k + 2, a) / chi2_cdf(k, a)


def v_a(k: int, a: float) -> float:
    """Variance shrinkage factor of the covariate mean differences under M <= a.

    Both closed forms are evaluated and must agree to 1e-10. ``a = 0`` returns
    the limiting value 0 and emits a RuntimeWarning.
    """
    if k < 1:
        raise ValueError(f"need at least one covariate, got k={k}")
    if a < 0:
        raise ValueError(f"threshold must be nonnegative, got {a}")
    if a == 0:
        warnings.warn("threshold a = 0: returning the limit v_a -> 0", RuntimeWarning, stacklevel=2)
        return 0.0
    gamma_form = v_a_gamma_ratio(k, a)
    cdf_form = v_a_cdf_ratio(k, a)
    if abs(gamma_form - cdf_form) > 1e-10:
        raise ArithmeticError(f"v_a forms disagree at k={k}, a={a}: {gamma_form} vs {cdf_form}")
    return min(1.0, max(0.0, cdf_form))


def threshold_for(k: int, p_a: float) -> float:
    """Asymptotic Mahalanobis threshold with P(chi2_k <= a) = p_a."""
    if not 0.0 < p_a <= 1.0:
        raise ValueError(f"acceptance probability must lie in (0, 1], got {p_a}")
    return chi2_quantile(k, p_a)


def priv_covariate(k: int, a: float) -> float:
    """Percent reduction in variance of each covariate mean difference."""
    return 100.0 * (1.0 - v_a(k, a))


def priv_tau(k: int, a: float, r_squared: float) -> float:
    """Percent reduction in variance of the difference-in-means estimator."""
    if not 0.0 <= r_squared <= 1.0:
        raise ValueError(f"R^2 must lie in [0, 1], got {r_squared}")
    return priv_covariate(k, a) * r_squared


def priv_regression(m_observed: float, n: int, r_squared: float) -> float:
    """Percent reduction in variance from covariance adjustment after pure randomization."""
    if n <= 0:
        raise ValueError("n must be positive")
    if m_observed < 0:
        raise ValueError("Mahalanobis distance must be nonnegative")
    if not 0.0 <= r_squared <= 1.0:
        raise ValueError(f"R^2 must lie in [0, 1], got {r_squared}")
    ratio = m_observed / n
    return 100.0 * ((1.0 + ratio) * r_squared - ratio)


def expected_m_truncated(k: int, a: float) -> float:
    """E(M | M <= a) for M ~ chi2_k."""
    if math.isinf(a):
        return float(k)
    if not a > 0:
        raise ValueError(f"threshold must be positive, got {a}")
    direct = 2.0 * math.exp(log_lower_incomplete_gamma(k / 2.0 + 1.0, a / 2.0)
                            - log_lower_incomplete_gamma(k / 2.0, a / 2.0))
    via_v = k * v_a(k, a)
    if abs(direct - via_v) > 1e-9 * max(1.0, direct):
        raise ArithmeticError(f"E(M | M <= a) identity failed: {direct} vs {via_v}")
    return via_v


def covariate_grid(ks: Iterable[int], p_as: Sequence[float]) -> list[dict]:
    """Rows of (k, p_a, a, v_a, priv_covariate) for a percent-reduction surface."""
    rows = []
    for k in ks:
        for p_a in p_as:
            a = threshold_for(k, p_a)
            va = v_a(k, a)
            rows.append({"k": k, "p_a": p_a, "a": a, "v_a": va, "priv_covariate": 100.0 * (1.0 - va)})
    return rows


def tau_grid(ks: Iterable[int], p_as: Sequence[float], r_squareds: Sequence[float]) -> list[dict]:
    """Rows of (k, p_a, R^2, priv_tau) for the outcome-level surface."""
    rows = []
    for base in covariate_grid(ks, p_as):
        for r2 in r_squareds:
            rows.append({"k": base["k"], "p_a": base["p_a"], "r_squared": r2, "a": base["a"],
                         "v_a": base["v_a"], "priv_tau": base["priv_covariate"] * r2})
    return rows

"""Rerandomization: balance-constrained treatment assignment and matching inference."""

__version__ = "0.1.0"

from .balance import (Assignment, BalanceContext, CovariateMatrix, build_context, diff_in_means,
                      mahalanobis, sample_covariance)
from .criteria import (ALWAYS, CalibrationResult, Caliper, Conjunction, Criterion, MahalanobisThreshold,
                       UserPredicate, calibrate_threshold_asymptotic, calibrate_threshold_empirical, evaluate,
                       is_mirror_symmetric)
from .inference import (IntervalReport, TestReport, classical_se, confidence_interval, estimate_tau,
                        randomization_test)
from .sampler import (DesignResult, RngSpec, draw_assignment, draw_assignments, enumerate_assignments,
                      estimate_acceptance, rerandomize)
from .theory import chi2_cdf, chi2_quantile, priv_covariate, priv_regression, priv_tau, v_a

__all__ = [
    "ALWAYS", "Assignment", "BalanceContext", "CalibrationResult", "Caliper", "Conjunction", "CovariateMatrix",
    "Criterion", "DesignResult", "IntervalReport", "MahalanobisThreshold", "RngSpec", "TestReport",
    "UserPredicate", "build_context", "calibrate_threshold_asymptotic", "calibrate_threshold_empirical",
    "chi2_cdf", "chi2_quantile", "classical_se", "confidence_interval", "diff_in_means", "draw_assignment",
    "draw_assignments", "enumerate_assignments", "estimate_acceptance", "estimate_tau", "evaluate",
    "is_mirror_symmetric", "mahalanobis", "priv_covariate", "priv_regression", "priv_tau", "randomization_test",
    "rerandomize", "sample_covariance", "v_a",
]

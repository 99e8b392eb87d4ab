import json
import math
from fractions import Fraction

import numpy as np
import pytest

from rerand import theory
from rerand.harness import (EXPERIMENTS, ExperimentReport, LinearOutcomeModel, _row, generate_covariates,
                            h1_covariance_shrinkage, h2_priv_per_covariate, h3_priv_tau, h4_unbiasedness,
                            h5_counterexample, h6_affine_invariance, h7_inference_validity, ks_distance,
                            sample_r_squared)


def test_counterexample_is_exact():
    rep = h5_counterexample()
    assert rep.passed
    assert rep.row("tau from the potential-outcome table").measured == Fraction(1, 3)
    assert rep.row("case (i) acceptable set size").measured == 2
    assert rep.row("case (i) tau-hat at W=(1, 0, 1)").measured == Fraction(1, 2)
    assert rep.row("case (i) tau-hat at W=(0, 1, 0)").measured == Fraction(1, 2)
    assert rep.row("case (ii) rerandomize returns (1,0,1)").passed
    json.loads(rep.to_json())


def test_unbiasedness_by_enumeration():
    rep = h4_unbiasedness()
    assert rep.passed, rep.table()
    assert any("bias witness" in r.name for r in rep.rows)


def test_experiments_are_deterministic():
    a = h2_priv_per_covariate(draws=20_000, rng=9).to_dict()
    b = h2_priv_per_covariate(draws=20_000, rng=9).to_dict()
    a.pop("seconds"), b.pop("seconds")
    assert a == b
    assert h4_unbiasedness().to_dict()["rows"] == h4_unbiasedness().to_dict()["rows"]


def test_no_restriction_gives_no_shrinkage():
    rep = h1_covariance_shrinkage(p_a=1.0, draws=20_000)
    assert rep.row("shrink factor (trace ratio)").measured == pytest.approx(1.0, abs=0.03)
    rep = h2_priv_per_covariate(p_a=1.0, draws=20_000)
    for j in (1, 2):
        assert abs(rep.row(f"PRIV covariate {j}").measured) <= 3.0


def test_shrinkage_small_run():
    rep = h1_covariance_shrinkage(draws=100_000, rng=11)
    assert rep.row("shrink factor (trace ratio)").measured == pytest.approx(theory.v_a(2, theory.threshold_for(2, 0.1)),
                                                                          rel=0.15)


def test_zero_r_squared_gives_zero_priv():
    rep = h3_priv_tau(r_squared=0.0, replications=1000, rng=13)
    assert abs(rep.row("PRIV of tau-hat").measured) <= 3.0


def test_independent_covariates_stay_uncorrelated():
    rep = h6_affine_invariance(rho=0.0, draws=100_000, rng=17)
    assert abs(rep.row("Mahalanobis: cor(d1, d2) | accepted").measured) < 0.05


def test_inference_validity_smoke():
    rep = h7_inference_validity(n=40, replications=40, n_sim=39, null_replications=40, power_replications=20)
    names = [r.name for r in rep.rows]
    assert "randomization CI coverage" in names and "power gain in SE units" in names
    assert 0.0 <= rep.row("null p-values KS distance from uniform").measured <= 1.0


def test_covariate_generator():
    x = generate_covariates(200_000, 2, 5, dist="t5", rho=0.3)
    np.testing.assert_allclose(x.var(axis=0), 1.0, atol=0.03)
    assert np.corrcoef(x.T)[0, 1] == pytest.approx(0.3, abs=0.02)
    kurt = ((x[:, 0] - x[:, 0].mean()) ** 4).mean() / x[:, 0].var() ** 2
    assert kurt > 4.5
    exact = generate_covariates(50, 3, 1, rho=0.5, exact_moments=True)
    np.testing.assert_allclose(np.cov(exact, rowvar=False), np.full((3, 3), 0.5) + 0.5 * np.eye(3), atol=1e-12)
    with pytest.raises(ValueError):
        generate_covariates(5, 2, 1, dist="cauchy")


def test_outcome_model_hits_r_squared():
    x = generate_covariates(1000, 2, 21)
    model = LinearOutcomeModel.for_r_squared(x, 0.5, tau=2.0)
    y0, y1 = model.potential_outcomes(x, 22)
    assert sample_r_squared(x, y0) == pytest.approx(0.5, abs=0.05)
    np.testing.assert_allclose(y1 - y0, 2.0)
    assert LinearOutcomeModel.for_r_squared(x, 0.0).beta == (0.0, 0.0)
    with pytest.raises(ValueError):
        LinearOutcomeModel.for_r_squared(x, 1.5)


def test_row_modes():
    assert _row("a", 1.04, 1.0, 0.05, "rel").passed
    assert not _row("a", 1.06, 1.0, 0.05, "rel").passed
    assert _row("b", 0.5, None, 1.0, "below").passed
    assert _row("c", Fraction(1, 2), Fraction(1, 2), None, "exact").passed
    assert _row("d", 123.0, None, None, "info").passed
    with pytest.raises(ValueError):
        _row("e", 1.0, 1.0, 1.0, "sideways")


def test_report_table_and_lookup():
    rep = ExperimentReport("HX", {"n": 1}, [_row("x", 1.0, 1.0, 0.1, "abs")])
    assert "PASS" in rep.table() and rep.passed
    with pytest.raises(KeyError):
        rep.row("missing")


def test_ks_distance_against_uniform():
    u = np.linspace(0.0005, 0.9995, 1000)
    assert ks_distance(u, lambda v: v) < 0.002


def test_registry_complete():
    assert sorted(EXPERIMENTS) == [f"h{i}" for i in range(1, 8)]

import math
import warnings

import numpy as np
import pytest

from rerand import theory
from rerand.balance import DimensionError, build_context
from rerand.criteria import (ALWAYS, Caliper, Conjunction, MahalanobisThreshold, OneSidedBound, UserPredicate,
                             calibrate_threshold_asymptotic, calibrate_threshold_empirical, evaluate, from_dict,
                             from_json, is_mirror_symmetric, quantile_from_sample)
from rerand.sampler import RngSpec, assignment_matrix, draw_assignments, enumerate_assignments, estimate_acceptance


def exact_balance():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return MahalanobisThreshold(0.0)


def test_always_true(x12):
    ctx = build_context(x12, 6)
    W = assignment_matrix(12, 6)
    assert ALWAYS.accepts(ctx, W).all()


def test_zero_difference_criterion_two_vs_one():
    ctx = build_context([0.0, 1.0, 2.0], 2)
    c = exact_balance()
    accepted = [w.tolist() for w in enumerate_assignments(3, 2) if evaluate(c, ctx, w)]
    assert accepted == [[1, 0, 1]]


def test_zero_threshold_warns():
    with pytest.warns(UserWarning):
        MahalanobisThreshold(0.0)
    with pytest.raises(ValueError):
        MahalanobisThreshold(-1.0)


def test_caliper_example():
    x = np.array([[0.05, 0.2], [0.0, 0.0], [0.05, 0.2], [0.0, 0.0]])
    ctx = build_context(x, 2)
    w = [1, 0, 1, 0]
    np.testing.assert_allclose(ctx.diffs(np.array([w]))[0], [0.05, 0.2])
    assert not Caliper((0.1, 0.1)).evaluate(ctx, w)
    assert Caliper((0.1, 0.3)).evaluate(ctx, w)


def test_caliper_bounds_length():
    ctx = build_context(np.arange(8.0).reshape(4, 2) ** 1.5, 2)
    with pytest.raises(DimensionError):
        Caliper((0.1,)).evaluate(ctx, [1, 0, 1, 0])
    with pytest.raises(ValueError):
        Caliper((0.1, 0.0))


def test_asymptotic_calibration():
    cal = calibrate_threshold_asymptotic(2, 0.1)
    assert cal.a == pytest.approx(-2.0 * math.log(0.9), abs=1e-9)
    assert cal.a == pytest.approx(0.21072, abs=1e-5)
    assert math.isinf(calibrate_threshold_asymptotic(4, 1.0).a)
    p = theory.chi2_cdf(1, 1.0)
    assert calibrate_threshold_asymptotic(1, p).a == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        calibrate_threshold_asymptotic(2, 0.0)
    with pytest.raises(ValueError):
        calibrate_threshold_asymptotic(2, 1.5)


def test_empirical_calibration_p_one(x12):
    ctx = build_context(x12, 6)
    cal = calibrate_threshold_empirical(ctx, 1.0, 2000, RngSpec(1))
    W = draw_assignments(12, 6, 2000, RngSpec(1).generator())
    assert cal.a == pytest.approx(ctx.mahalanobis_batch(W).max())
    assert cal.p_a_achieved == 1.0


def test_empirical_calibration_matches_asymptotic(gen):
    ctx = build_context(gen.standard_normal((100, 2)), 50)
    cal = calibrate_threshold_empirical(ctx, 0.1, 100_000, RngSpec(3))
    assert cal.a == pytest.approx(0.21072, rel=0.05)
    assert cal.method == "empirical" and cal.draws_used == 100_000


def test_empirical_calibration_exact_enumeration(x12):
    ctx = build_context(x12, 6)
    cal = calibrate_threshold_empirical(ctx, 0.25, exact=True)
    from rerand.balance import mahalanobis_direct
    m = sorted(mahalanobis_direct(x12, w) for w in assignment_matrix(12, 6))
    assert cal.a == pytest.approx(m[math.ceil(0.25 * 924) - 1], rel=1e-10)
    assert cal.p_a_achieved >= 0.25
    assert cal.p_a_achieved - 0.25 <= 2 / 924 + 1e-12


def test_empirical_calibration_errors(x12):
    ctx = build_context(x12, 6)
    with pytest.raises(ValueError):
        calibrate_threshold_empirical(ctx, 0.1, draws=10)
    with pytest.raises(ValueError, match="degenerate"):
        quantile_from_sample(np.ones(2000), 0.5)


def test_lower_quantile_convention():
    a, achieved = quantile_from_sample(np.arange(1.0, 11.0), 0.25)
    assert a == 3.0 and achieved == 0.3


@pytest.mark.parametrize("p_a", [0.01, 0.1, 0.5])
def test_asymptotic_acceptance_rate(p_a, gen):
    ctx = build_context(gen.standard_normal((100, 2)), 50)
    c = calibrate_threshold_asymptotic(2, p_a).criterion()
    est = estimate_acceptance(ctx, c, 100_000, RngSpec(7))
    assert est.p_hat == pytest.approx(p_a, rel=0.15)


def test_mirror_symmetry(x12):
    ctx = build_context(x12, 6)
    a = calibrate_threshold_empirical(ctx, 0.3, exact=True).a
    assert is_mirror_symmetric(MahalanobisThreshold(a), ctx)
    assert is_mirror_symmetric(Caliper((0.3, 0.4)), ctx)
    assert not is_mirror_symmetric(OneSidedBound(0, 0.1), ctx)
    with pytest.raises(ValueError):
        is_mirror_symmetric(ALWAYS, build_context(x12, 5))


def test_mirror_symmetry_by_probes(gen):
    ctx = build_context(gen.standard_normal((60, 2)), 30)
    assert is_mirror_symmetric(MahalanobisThreshold(1.0), ctx, probe_draws=5000, rng=RngSpec(2))
    assert not is_mirror_symmetric(OneSidedBound(0, 0.0), ctx, probe_draws=5000, rng=RngSpec(2))


def test_mahalanobis_decision_affinely_invariant(gen):
    n, k = 30, 3
    x = gen.standard_normal((n, k))
    c = MahalanobisThreshold(2.0)
    assert c.affinely_invariant and not Caliper((1.0,) * k).affinely_invariant
    for _ in range(100):
        B = gen.standard_normal((k, k)) + 2 * np.eye(k)
        w = draw_assignments(n, 15, 1, gen)[0]
        assert c.evaluate(build_context(x, 15), w) == c.evaluate(build_context(gen.standard_normal(k) + x @ B, 15), w)


def test_caliper_not_affinely_invariant_witness(gen):
    x = gen.standard_normal((10, 2))
    c = Caliper((0.3, 0.3))
    W = assignment_matrix(10, 5)
    base = c.accepts(build_context(x, 5), W)
    B = np.array([[1.0, 0.9], [0.0, 1.0]])
    assert np.any(base != c.accepts(build_context(x @ B, 5), W))


def test_conjunction_with_always_is_equivalent(x12):
    ctx = build_context(x12, 6)
    W = assignment_matrix(12, 6)
    cal = Caliper((0.4, 0.5))
    np.testing.assert_array_equal(Conjunction((ALWAYS, cal)).accepts(ctx, W), cal.accepts(ctx, W))
    both = MahalanobisThreshold(1.0) & cal
    np.testing.assert_array_equal(both.accepts(ctx, W),
                                  MahalanobisThreshold(1.0).accepts(ctx, W) & cal.accepts(ctx, W))
    assert not both.affinely_invariant


def test_user_predicate_deterministic(x12):
    ctx = build_context(x12, 6)
    pred = UserPredicate(lambda x, w: x[w == 1, 0].sum() > x[w == 0, 0].sum(), "sum")
    W = assignment_matrix(12, 6)[:200]
    np.testing.assert_array_equal(pred.accepts(ctx, W), pred.accepts(ctx, W))
    np.testing.assert_array_equal(pred.accepts(ctx, W), OneSidedBound(0, 0.0).accepts(ctx, W) == 0)


def test_json_round_trip():
    c = Conjunction((MahalanobisThreshold(1.5), Caliper((0.1, 0.2)), MahalanobisThreshold(math.inf)))
    text = c.to_json()
    assert from_json(text) == c
    assert from_json(text).to_json() == text
    assert '"inf"' in text
    assert from_dict({"type": "one-sided", "column": 1, "bound": 0.5}) == OneSidedBound(1, 0.5)
    with pytest.raises(ValueError):
        from_dict({"type": "user", "name": "f"})
    f = lambda x, w: True  # noqa: E731
    assert from_dict({"type": "user", "name": "f"}, {"f": f}).predicate is f
    with pytest.raises(ValueError):
        from_dict({"type": "bogus"})

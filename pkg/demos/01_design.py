"""Design an experiment by calibrating a Mahalanobis threshold and rerandomizing until it is met."""
import numpy as np

from rerand import (RngSpec, build_context, calibrate_threshold_asymptotic, calibrate_threshold_empirical,
                    estimate_acceptance, mahalanobis, rerandomize)
from rerand.sampler import draw_assignment

gen = RngSpec(2024).generator()

# 100 units, four covariates, a couple of them correlated
n, k = 100, 4
x = gen.standard_normal((n, k))
x[:, 1] += 0.6 * x[:, 0]
ctx = build_context(x, n // 2)
print(f"n={n} k={k} rank={ctx.rank}")

# threshold from the chi-square approximation, and from simulation
asym = calibrate_threshold_asymptotic(k, 0.05)
emp = calibrate_threshold_empirical(ctx, 0.05, 100_000, RngSpec(2024, 1))
print(f"a (chi-square) = {asym.a:.4f}   a (simulated) = {emp.a:.4f}")

crit = asym.criterion()
est = estimate_acceptance(ctx, crit, 50_000, RngSpec(2024, 2))
print(f"acceptance rate {est.p_hat:.4f} +- {est.se:.4f}")

# one pure randomization next to one rerandomization
pure = draw_assignment(n, n // 2, RngSpec(7))
design = rerandomize(ctx, crit, RngSpec(7))
print(f"pure randomization: M = {mahalanobis(ctx, pure):.3f}")
print(f"rerandomized:       M = {design.accepted_m:.3f} after {design.proposals} proposals")
d_pure = ctx.diffs(pure.w[None, :])[0]
d_rr = ctx.diffs(design.assignment.w[None, :])[0]
print("mean differences (pure):        ", np.round(d_pure, 3))
print("mean differences (rerandomized):", np.round(d_rr, 3))

# the design record is what the analysis step needs later
print(design.to_json())

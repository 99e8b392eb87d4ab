"""Three units: balance on x can force a biased estimate when group sizes are not equal."""
from rerand.harness import h4_unbiasedness, h5_counterexample

report = h5_counterexample()
print(report.table())

# equal group sizes and a mirror-symmetric criterion restore unbiasedness,
# which enumeration confirms exactly; a one-sided criterion breaks it again
print()
print(h4_unbiasedness().table())

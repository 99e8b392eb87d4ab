"""Write the small CSV fixtures used in the README's command-line walkthrough."""
import csv
import os

import numpy as np

from rerand import RngSpec

here = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
gen = RngSpec(5).generator()
n = 40
age = np.round(gen.normal(45, 12, n), 1)
score = np.round(0.03 * age + gen.normal(0, 1, n), 3)
y = np.round(2.0 + 0.05 * age + 0.8 * score + gen.normal(0, 0.5, n), 3)
ids = [f"u{i:02d}" for i in range(n)]

with open(os.path.join(here, "covariates.csv"), "w", newline="") as fh:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["id", "age", "score"])
    w.writerows(zip(ids, age, score))
with open(os.path.join(here, "outcomes.csv"), "w", newline="") as fh:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["id", "y"])
    w.writerows(zip(ids, y))
print(f"wrote {n} rows to {here}")

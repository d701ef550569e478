"""
How many green tokens are enough
================================

Three ways to turn a target false-positive rate into a threshold on the
green-token ratio: the small-deviation form sqrt(ln(1/p) / 2m), the KL
bound inverted exactly, and the exact binomial tail.
"""

import math

from dipmark.detector import minimal_green_count, p_value_exact, p_value_kl, threshold_for_fpr

for m in (50, 100, 200, 400):
    row = [threshold_for_fpr(m, 0.5, 0.01, mode) * math.sqrt(m) for mode in ("approx", "kl", "exact")]
    print(f"m={m:4d}  z*sqrt(m): approx {row[0]:.3f}  kl {row[1]:.3f}  exact {row[2]:.3f}")

##############################################################################
# At m = 200 the KL bound first drops below 1% at 122 green tokens, while
# the exact tail already does at 117.
for mode in ("kl", "exact"):
    k = minimal_green_count(200, 0.5, 0.01, mode)
    print(f"{mode:5s} minimal green count {k}: exact tail {p_value_exact(200, k, 0.5):.4f}, "
          f"KL bound {p_value_kl(200, k, 0.5):.4f}")

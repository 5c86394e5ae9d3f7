"""
How far can one sample move the trained weights?
================================================

Weight perturbation is private because removing any single training
sample moves the learned weight matrix by at most (C/n) sqrt(2) ||x||.
This script measures the actual movement on random leave-one-out pairs
and shows how much slack the bound leaves in practice.
"""

import numpy as np

from pmsvm.harness import verify_sensitivity

# 120 random tasks: sizes up to n=40, d=5, three classes, solved exactly,
# then re-solved with the last sample removed. The checker reports the
# worst ratio of observed movement to the theoretical bound.
out = verify_sensitivity(n=40, d=5, c=3, trials=120, C_over_n=0.01)
print(f"trials:      {out['trials']}")
print(f"violations:  {out['violations']}")
print(f"worst ratio: {out['worst_ratio']:.4f}")

# The same bound at a 10x larger slack weight C/n: the movement scales
# with C/n, so the ratio distribution barely shifts.
big = verify_sensitivity(n=40, d=5, c=3, trials=60, C_over_n=0.1, base_seed=1)
print(f"\nat C/n = 0.1: worst ratio {big['worst_ratio']:.4f} "
      f"({big['violations']} violations in {big['trials']})")

# Ratios well under 1 mean the bound is loose for typical data; it is
# tight only in adversarial geometry. The noise calibrated from it is
# therefore conservative but never insufficient.
if out["worst_ratio"] < 1.0 and out["violations"] == 0:
    print("\nbound held everywhere, with margin.")

"""
Joint private training versus one-vs-rest on synthetic blobs
============================================================

Trains every private method at a few privacy levels on the same small
Gaussian-blob task and prints the accuracy grid. The joint multi-class
methods touch each sample once per pass and pay for one release; the
one-vs-rest baselines split the budget across c classifiers, which costs
them dearly at small eps.
"""

import numpy as np

from pmsvm.data import stratified_split, synth_blobs
from pmsvm.model import LossParams, accuracy
from pmsvm.numerics import RandomSource
from pmsvm.privacy import PrivacyBudget
from pmsvm.trainers import (
    GpConfig,
    WpConfig,
    linear_ce_gp,
    ovr_gp,
    ovr_wp,
    pmsvm_agp,
    pmsvm_gp,
    pmsvm_wp,
    solve_allinone,
)
from pmsvm.harness import _warm_start

root = RandomSource(33)
full = synth_blobs(4, 150, 10, 7.0, root.split("dataset"))
train, test = stratified_split(full, 0.25, root.split("split"))
print(f"task: {train.num_classes} classes, {train.n} train / {test.n} test, "
      f"d = {train.d}")

wp_cfg = WpConfig(C_over_n=0.01)
gp_cfg = GpConfig(
    loss=LossParams(C=1.0, mu=1e-4, varsigma=0.5),
    R=1.0, T=120, q=0.2, base_lr=1.0, trace_every=120, with_bias=False,
)

# The non-private solution is the ceiling every private run is judged
# against; it is also reused as the warm start for weight perturbation.
clean = solve_allinone(train, "cs_hinge", LossParams(C=wp_cfg.C_over_n * train.n))
print(f"non-private accuracy: {accuracy(clean, test):.3f}\n")
warm_ovr = _warm_start("ovr_wp", wp_cfg, train)

methods = {
    "pmsvm_wp": lambda b, r: pmsvm_wp(train, b, wp_cfg, r, test, warm_model=clean),
    "ovr_wp": lambda b, r: ovr_wp(train, b, wp_cfg, r, test, warm_columns=warm_ovr),
    "pmsvm_gp": lambda b, r: pmsvm_gp(train, b, gp_cfg, r, test),
    "pmsvm_agp": lambda b, r: pmsvm_agp(train, b, gp_cfg, r, test),
    "ovr_gp": lambda b, r: ovr_gp(train, b, gp_cfg, r, test),
    "linear_ce_gp": lambda b, r: linear_ce_gp(train, b, gp_cfg, r, test),
}

epsilons = (0.5, 1.0, 2.0, 4.0)
seeds = 5
print("method        " + "".join(f"{'eps=%g' % e:>16}" for e in epsilons))
for name, run in methods.items():
    cells = []
    for eps in epsilons:
        budget = PrivacyBudget(eps, 1e-5)
        accs = [run(budget, RandomSource(100 + s)).final_test_acc()
                for s in range(seeds)]
        cells.append(f"{np.mean(accs):.3f} +- {np.std(accs):.3f}")
    print(f"{name:<14}" + "".join(f"{c:>16}" for c in cells))

print(f"\n({seeds} seeds per cell; +- is the seed standard deviation)")

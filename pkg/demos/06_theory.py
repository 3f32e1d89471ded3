"""
Linear-regression checks of the trigger analysis
================================================
"""

import numpy as np

from dpotsim import theory as th

rng = np.random.default_rng(0)
inst = th.random_instance(rng, n=8, m=3)
mask = th.random_mask(rng, 8, 4)

values, loss = th.optimal_values(inst, mask)
print("mask:", mask.astype(int))
print("untouched backdoor loss:", round(th.backdoor_loss(inst, th.DiagTrigger(mask, inst.x)), 5))
print("optimal-value loss:     ", round(loss, 5))

best = th.brute_force_best_subset(inst, 2)
print("best 2-pixel subset:", np.flatnonzero(best.mask), "loss", round(best.loss, 5))
print("corner 2-pixel trigger loss:", round(th.backdoor_loss(inst, th.fixed_corner_trigger(8, 2)), 5))

print()
print(th.run_theory_checks(200, seed=0).format())

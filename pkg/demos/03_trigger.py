"""
Optimising a trigger against the current global model
======================================================

Placements are the pixels with the largest summed input gradient towards
the target label; values then follow a few steps of projected descent.
"""

import numpy as np

from dpotsim import attack as atk
from dpotsim.data import generate_synthetic
from dpotsim.engine import local_train
from dpotsim.nn import flatten_params, init_model, predict_labels, unflatten_params

data = generate_synthetic(10, 60, (16, 16), noise_sigma=1.7, seed=1)
model = init_model("mlp-256-64-10", seed=0)
model = unflatten_params(model, flatten_params(model) + local_train(model, data, 3, 0.05, 32, seed=0).delta)

D = atk.build_trigger_training_set([data.subset(range(200))], target_label=0)
trigger, trace = atk.optimize_trigger(model, D, target_label=0, tri_size=16)
print("placements:", trigger.placements)
print("loss trace:", np.round(trace.losses, 4))
print("step sizes:", trace.gammas)

fixed = atk.make_fixed_trigger((16, 16), target_label=0, tri_size=16)
others = data.images[data.labels != 0]
for name, t in (("optimised", trigger), ("fixed patch", fixed)):
    hit = np.mean(predict_labels(model, atk.apply_trigger(others, t)) == 0)
    print(f"{name:>11}: {hit:.3f} of non-target images already classified as 0")

print(atk.format_trigger(trigger).splitlines()[:4])

"""
Exact gradients of a small dense network
========================================

Backprop returns gradients for every weight and for the input pixels.
Here we compare a handful of them against central differences.
"""

import numpy as np

from dpotsim.nn import backward, flatten_params, init_model, loss_value, one_hot, unflatten_params

rng = np.random.default_rng(0)
model = init_model("mlp-16-8-4", seed=0)
x = rng.uniform(size=(3, 16))
t = one_hot([0, 3, 1], 4)

loss, grads = backward(model, x, t, "cross_entropy")
print("cross-entropy loss:", round(loss, 6))

# perturb a few parameters one at a time
flat = flatten_params(model)
analytic = np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in grads.param_grads])
h = 1e-5
for i in rng.choice(flat.size, 5, replace=False):
    e = np.zeros_like(flat)
    e[i] = h
    num = (loss_value(unflatten_params(model, flat + e), x, t)
           - loss_value(unflatten_params(model, flat - e), x, t)) / (2 * h)
    print(f"param {i:4d}  backprop {analytic[i]: .8f}  finite diff {num: .8f}")

# input gradients drive the trigger placement search
print("largest |input gradient| pixels:", np.argsort(-np.abs(grads.input_grads.sum(0)))[:4])

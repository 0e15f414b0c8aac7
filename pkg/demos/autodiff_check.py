#!/usr/bin/env python3
"""Reverse-mode tape in ~60 seconds.

Builds a tiny two-layer network on the package's Tensor type, trains it on
a toy regression task with the built-in AdamW, and cross-checks one analytic
gradient against central finite differences.
"""

import numpy as np

from codebrain import nn
from codebrain.numerics import Tensor, backward, finite_diff_check
from codebrain.pretrain import AdamW

rng = np.random.default_rng(7)

# toy task: y = sin(3x) on [-1, 1]
x = np.linspace(-1, 1, 64, dtype=np.float32).reshape(-1, 1)
y = np.sin(3 * x)

lin1 = nn.Linear(1, 32, rng)
lin2 = nn.Linear(32, 1, rng)
params = nn.prefix_params("l1", lin1.named_params())
params.update(nn.prefix_params("l2", lin2.named_params()))
opt = AdamW(params)

for step in range(400):
    pred = lin2(lin1(Tensor(x)).tanh())
    loss = ((pred - Tensor(y)) ** 2).mean()
    backward(loss)
    opt.step(lr=1e-2)
    opt.zero_grad()
    if step % 100 == 0:
        print(f"step {step:3d}  mse {float(loss.data):.5f}")

print(f"final mse {float(loss.data):.5f}")

# spot-check the analytic gradient of the loss w.r.t. lin1's weights
probe = lin1.w.data.copy()


def fn(w):
    h = (Tensor(x) @ w + lin1.b).tanh()
    out = lin2(h)
    return ((out - Tensor(y)) ** 2).mean()


err = finite_diff_check(fn, probe, eps=1e-5, scale_relative=True)
print(f"finite-difference relative error on dL/dW1: {err:.2e}")
assert err < 1e-3

"""Tour of the tensor core: taped ops, reverse-mode gradients, Adam.

Builds a tiny computation, checks its gradient against central finite
differences, and takes a few optimizer steps on a least-squares toy.
"""

import numpy as np

from fedlgt import tensor as tc

rng = np.random.default_rng(0)

# --- record a computation on a tape and differentiate it --------------------

w0 = rng.uniform(-1, 1, size=(3, 3))
x = tc.Tensor(rng.uniform(-1, 1, size=(3, 2)))

with tc.Tape() as tape:
    w = tape.watch("w", tc.Tensor(w0))
    loss = tc.sum(tc.sigmoid(tc.matmul(w, x)))

grads = tc.gradients(tape, loss)
print("loss:", loss.item())
print("dL/dw[0]:", grads["w"].data[0])

# --- the same gradient, numerically -----------------------------------------


def scalar(v):
    return float((1.0 / (1.0 + np.exp(-(v @ x.data)))).sum())


numeric = tc.finite_difference(scalar, w0)
print("max relative error vs central differences:",
      tc.relative_error(grads["w"].data, numeric))

# --- a few Adam steps on ||w x - y||^2 ---------------------------------------

target = rng.uniform(-1, 1, size=(3, 2))
params = tc.ParameterSet({"w": tc.Tensor(w0)})
state = None
for step in range(25):
    with tc.Tape() as tape:
        w = tape.watch("w", params["w"])
        err = tc.sub(tc.matmul(w, x), tc.Tensor(target))
        loss = tc.sum(tc.mul(err, err))
    g = tc.gradients(tape, loss)
    params, state = tc.adam_step(params, g, state, lr=0.05)
    if step % 6 == 0:
        print(f"step {step:2d}  residual {loss.item():.6f}")
print("final residual:", loss.item())

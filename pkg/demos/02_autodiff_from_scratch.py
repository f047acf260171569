"""
The tape-based autodiff core
============================

Everything in the package differentiates through one small reverse-mode
engine on numpy arrays. This walks the essentials: record on a tape,
backprop a scalar, check gradients numerically, and fit a toy problem
with the bundled Adam.
"""

import numpy as np

import prcnn.nncore as nn

# --- forward + backward -----------------------------------------------
x = nn.Tensor(np.array([[1.0, -2.0], [3.0, 0.5]], np.float32), requires_grad=True)
w = nn.Tensor(np.array([[0.1], [0.7]], np.float32), requires_grad=True)

with nn.Tape() as tape:
    y = nn.relu(nn.affine(x, w))   # (2, 1)
    loss = nn.sum_all(nn.mul(y, y))
    tape.backward(loss)

print("loss:", float(loss.data))
print("dloss/dw:\n", w.grad)

# --- trust, but verify -------------------------------------------------
# central finite differences against the tape, in one call
def f(xx, ww):
    return nn.sum_all(nn.mul(nn.relu(nn.affine(xx, ww)), 1.0))

err = nn.finite_difference_check(
    f,
    [nn.Tensor(np.random.default_rng(0).standard_normal((4, 3)), requires_grad=True),
     nn.Tensor(np.random.default_rng(1).standard_normal((3, 2)), requires_grad=True)],
    n_directions=10)
print(f"max relative gradient error: {err:.2e}")

# --- a 20-line regression ----------------------------------------------
rng = np.random.default_rng(42)
inputs = rng.standard_normal((64, 2)).astype(np.float32)
target = (inputs @ np.array([[2.0], [-1.0]]) + 0.3).astype(np.float32)

params = {
    "w": nn.Tensor(np.zeros((2, 1), np.float32), requires_grad=True),
    "b": nn.Tensor(np.zeros(1, np.float32), requires_grad=True),
}
opt = nn.Adam(params, lr=0.05)
for step in range(200):
    opt.zero_grad()
    with nn.Tape() as tape:
        pred = nn.affine(inputs, params["w"], params["b"])
        loss = nn.mse(pred, target)
        tape.backward(loss)
    opt.step()
    if step % 50 == 0:
        print(f"step {step:3d}  mse {float(loss.data):.5f}")

print("recovered w:", params["w"].data.ravel(), " b:", params["b"].data)

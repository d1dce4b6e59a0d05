"""
The autodiff core
=================

The whole model trains on a small reverse-mode tape over numpy arrays:
Tensors record the operations applied to them, backward() replays the
tape, and a finite-difference checker keeps everything honest.
"""
import numpy as np

from yotor import nn
from yotor.nn import Tensor
from yotor.nn.gradcheck import gradcheck
from yotor.train import SGD

# gradients through a small expression
a = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True, dtype=np.float64)
b = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True, dtype=np.float64)
loss = (nn.silu(a * b) ** 2).mean()
loss.backward()
print("d loss / d a =", a.grad)
print("d loss / d b =", b.grad)

# every recorded gradient can be compared against central differences
r = gradcheck(lambda a, b: (nn.silu(a * b) ** 2).mean(), [a, b])
print(f"finite differences agree to {r.max_rel_err:.2e} "
      f"over {r.checked} components")

# the same machinery trains a tiny regression end to end
rng = np.random.default_rng(3)
xs = rng.normal(size=(64, 2))
ys = (xs[:, :1] * 1.5 - xs[:, 1:] * 0.5 + 0.2)

w1 = Tensor(rng.normal(size=(8, 2)) * 0.5, requires_grad=True, dtype=np.float64)
w2 = Tensor(rng.normal(size=(1, 8)) * 0.5, requires_grad=True, dtype=np.float64)
opt = SGD([w1, w2], lr=0.05, momentum=0.9)

x_t = Tensor(xs, dtype=np.float64)
for step in range(200):
    pred = nn.functional.linear(nn.tanh(nn.functional.linear(x_t, w1)), w2)
    err = ((pred - Tensor(ys)) ** 2).mean()
    opt.zero_grad()
    err.backward()
    opt.step()
    if step % 50 == 0:
        print(f"step {step:>3}: mse {err.item():.5f}")
print(f"final mse {err.item():.6f}")

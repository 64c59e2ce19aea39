"""
Reverse-mode autodiff in a few lines
====================================

Everything trainable in ``pat`` sits on the small ``Tensor`` class. This
script builds a tiny graph by hand, backpropagates, and cross-checks the
result with central finite differences.
"""

import numpy as np

from pat import tensor as T
from pat.gradcheck import check_gradients
from pat.tensor import Tensor

# d/dw sum(w*w) = 2w
w = Tensor([3.0, -1.0], requires_grad=True)
(w * w).sum().backward()
print("grad of sum(w^2) at", w.data, "->", w.grad)

# softmax stays finite for large logits
print("softmax([1000, 0]) =", T.softmax(Tensor([1000.0, 0.0])).data)

# a two-layer network, gradients checked numerically in float64
with T.default_dtype(np.float64):
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(4, 3)))
    params = {
        "w1": Tensor(rng.normal(size=(3, 5)), requires_grad=True),
        "b1": Tensor(np.zeros(5), requires_grad=True),
        "w2": Tensor(rng.normal(size=(5, 1)), requires_grad=True),
    }

    def loss():
        h = T.gelu(T.linear(x, params["w1"], params["b1"]))
        return T.matmul(h, params["w2"]).mean()

    worst, per_param = check_gradients(loss, params)

for name, err in per_param.items():
    print(f"{name}: relative error {err:.2e}")
print("worst:", f"{worst:.2e}")

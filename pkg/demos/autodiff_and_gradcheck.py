"""
A tiny reverse-mode autodiff engine
===================================

Every layer in the package is built from a handful of numpy ops that record
their parents and a backward closure. This walk-through builds a small graph
by hand, runs backward, and checks the result against central differences.
"""

import numpy as np

from terrafuse import tensor as T
from terrafuse.gradcheck import check_gradients
from terrafuse.tensor import Tensor

rng = np.random.default_rng(0)

# %%
# A 3x3 convolution followed by ReLU and a global average pool.
x = Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
w = Tensor(rng.standard_normal((4, 2, 3, 3)), requires_grad=True)
y = T.global_avg_pool(T.relu(T.conv2d(x, w, padding=1))).sum()
y.backward()
print("output", float(y.data))
print("dL/dw shape", w.grad.shape, "dL/dx shape", x.grad.shape)

# %%
# Dilation widens the receptive field without changing the output size
# (padding = dilation keeps "same" geometry for a 3x3 kernel).
for d in (1, 2, 4):
    out = T.conv2d(Tensor(rng.standard_normal((1, 2, 16, 16))), w, padding=d, dilation=d)
    print(f"dilation {d}: output {out.shape}")

# %%
# Central finite differences, run in float64. The error reported is
# max|analytic - numeric| / max gradient magnitude.
cases = {
    "conv2d (dilation 2)": (lambda a, b: T.conv2d(a, b, padding=2, dilation=2),
                            [rng.standard_normal((1, 2, 7, 7)), rng.standard_normal((2, 2, 3, 3))]),
    "conv_transpose2d": (lambda a, b: T.conv_transpose2d(a, b, stride=2),
                         [rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((2, 3, 2, 2))]),
    "maxpool": (lambda a: T.maxpool2d(a, 2), [rng.standard_normal((1, 2, 6, 6))]),
    "bilinear upsample": (lambda a: T.bilinear_upsample(a, 8, 8), [rng.standard_normal((1, 2, 4, 4))]),
    "softmax": (T.softmax_channels, [rng.standard_normal((2, 3, 3, 3))]),
}
for name, (fn, inputs) in cases.items():
    print(f"{name:20s} max rel error {max(check_gradients(fn, inputs)):.1e}")

"""Parameter containers and the handful of layers the two networks use."""

from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Registers child modules, parameters and buffers by attribute name.

    Names are dotted paths (``enc1.conv1.weight``) and are what checkpoints
    store. Buffers are plain arrays that are saved but never trained.
    """

    def __init__(self):
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        self.training = True

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def _walk(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._children.items():
            yield from child._walk(f"{prefix}{name}.")

    def named_parameters(self) -> Dict[str, Tensor]:
        out = {}
        for prefix, mod in self._walk():
            for name, p in mod._params.items():
                out[prefix + name] = p
        return dict(sorted(out.items()))

    def named_buffers(self) -> Dict[str, np.ndarray]:
        out = {}
        for prefix, mod in self._walk():
            for name, b in mod._buffers.items():
                out[prefix + name] = b
        return dict(sorted(out.items()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {k: p.data for k, p in self.named_parameters().items()}
        state.update(self.named_buffers())
        return dict(sorted(state.items()))

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        buffers = self.named_buffers()
        expected = set(params) | set(buffers)
        missing = expected - set(state)
        extra = set(state) - expected
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)
        for k, b in buffers.items():
            if state[k].shape != b.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {b.shape}")
            b[...] = state[k]

    def to(self, dtype) -> "Module":
        """Cast parameters and buffers in place (float64 for gradient checks)."""
        for p in self.named_parameters().values():
            p.data = p.data.astype(dtype)
        for _, mod in self._walk():
            for name, b in list(mod._buffers.items()):
                mod.register_buffer(name, b.astype(dtype))
        return self

    def train(self, mode: bool = True) -> "Module":
        for _, mod in self._walk():
            object.__setattr__(mod, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.named_parameters().values())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32), requires_grad=True)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, k, padding=0, dilation=1, stride=1, bias=True):
        super().__init__()
        self.stride, self.padding, self.dilation = stride, padding, dilation
        self.weight = he_uniform(rng, (cout, cin, k, k), cin * k * k)
        if bias:
            self.bias = Tensor(np.zeros(cout, np.float32), requires_grad=True)
        else:
            self.bias = None

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class ConvTranspose2d(Module):
    def __init__(self, rng, cin, cout, k, stride):
        super().__init__()
        self.stride = stride
        self.weight = he_uniform(rng, (cin, cout, k, k), cin * k * k)
        self.bias = Tensor(np.zeros(cout, np.float32), requires_grad=True)

    def forward(self, x):
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride)


class BatchNorm2d(Module):
    def __init__(self, c, momentum=0.9, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = Tensor(np.ones(c, np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(c, np.float32), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(c, np.float32))
        self.register_buffer("running_var", np.ones(c, np.float32))

    def forward(self, x):
        return T.batchnorm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             self.training, self.momentum, self.eps)


class ConvBNReLU(Module):
    def __init__(self, rng, cin, cout, k=3, dilation=1):
        super().__init__()
        pad = dilation * (k - 1) // 2
        self.conv = Conv2d(rng, cin, cout, k, padding=pad, dilation=dilation, bias=False)
        self.bn = BatchNorm2d(cout)

    def forward(self, x):
        return T.relu(self.bn(self.conv(x)))


class DoubleConv(Module):
    """Two 3x3 conv-BN-ReLU layers; one encoder or decoder block."""

    def __init__(self, rng, cin, cout, dilation=1):
        super().__init__()
        self.conv1 = ConvBNReLU(rng, cin, cout, dilation=dilation)
        self.conv2 = ConvBNReLU(rng, cout, cout, dilation=dilation)

    def forward(self, x):
        return self.conv2(self.conv1(x))

"""Central finite-difference checks for ops built on ``Tensor``."""

from __future__ import annotations

from typing import Callable, List, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        grad.flat[i] = (fp - fm) / (2 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the largest gradient magnitude of either."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], seed: int = 0,
                    h: float = 1e-6, wrt: Sequence[int] = None) -> List[float]:
    """Relative error of the analytic gradient of ``sum(fn(*inputs) * R)`` per input.

    ``R`` is a fixed random projection so every output element contributes.
    Runs in float64.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    wrt = range(len(arrays)) if wrt is None else wrt
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*tensors)
    proj = np.random.default_rng(seed).standard_normal(out.shape)
    (out * Tensor(proj)).sum().backward()

    errors = []
    for i in wrt:
        def f():
            return float((fn(*[Tensor(a) for a in arrays]).data * proj).sum())
        numeric = numerical_grad(f, arrays[i], h)
        analytic = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(arrays[i])
        errors.append(max_rel_error(analytic, numeric))
    return errors

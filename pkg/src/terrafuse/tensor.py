"""Minimal reverse-mode autodiff over numpy arrays.

Every op builds a node holding its parents and a closure mapping the output
gradient to one gradient per parent. ``Tensor.backward`` walks the graph in
reverse topological order, visiting each node once.

Training runs in float32; gradient checks run the same code in float64. Ops
never change dtype.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "div",
    "relu",
    "concat",
    "global_avg_pool",
    "conv2d",
    "conv_transpose2d",
    "conv_output_size",
    "maxpool2d",
    "bilinear_upsample",
    "bilinear_matrix",
    "batchnorm2d",
    "softmax_channels",
]

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction on the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[BackwardFn] = None
        self.op = "leaf"

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        needs = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

    # -- backward ---------------------------------------------------------------

    def _topo_order(self) -> list:
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(self._topo_order()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators --------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._from_op(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        old = self.shape
        return Tensor._from_op(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def log(self) -> "Tensor":
        x = self.data
        return Tensor._from_op(np.log(x), (self,), lambda g: (g / x,), "log")

    def flip(self, axis) -> "Tensor":
        return Tensor._from_op(np.flip(self.data, axis).copy(), (self,), lambda g: (np.flip(g, axis).copy(),), "flip")


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = _wrap(a, getattr(b, "dtype", None))
    b = _wrap(b, a.dtype)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add"
    )


def sub(a, b) -> Tensor:
    a = _wrap(a, getattr(b, "dtype", None))
    b = _wrap(b, a.dtype)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub"
    )


def mul(a, b) -> Tensor:
    a = _wrap(a, getattr(b, "dtype", None))
    b = _wrap(b, a.dtype)
    x, y = a.data, b.data

    def backward(g):
        return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)

    return Tensor._from_op(x * y, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a = _wrap(a, getattr(b, "dtype", None))
    b = _wrap(b, a.dtype)
    x, y = a.data, b.data

    def backward(g):
        return _unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)

    return Tensor._from_op(x / y, (a, b), backward, "div")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channels by default, for skip connections)."""
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        idx = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return out

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def global_avg_pool(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,C,1,1) spatial mean."""
    n, c, h, w = x.shape

    def backward(g):
        return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    return Tensor._from_op(x.data.mean(axis=(2, 3), keepdims=True), (x,), backward, "gap")


# -- convolution ----------------------------------------------------------------


def conv_output_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _tap_slices(k_h, k_w, ho, wo, stride, dilation):
    for i in range(k_h):
        for j in range(k_w):
            yield (
                slice(i * dilation, i * dilation + stride * (ho - 1) + 1, stride),
                slice(j * dilation, j * dilation + stride * (wo - 1) + 1, stride),
            )


def _im2col(xp: np.ndarray, kh, kw, ho, wo, stride, dilation) -> np.ndarray:
    """Padded (N,C,Hp,Wp) -> columns (C*kh*kw, N*ho*wo)."""
    n, c = xp.shape[:2]
    cols = np.empty((c, kh * kw, n, ho, wo), dtype=xp.dtype)
    for t, (sh, sw) in enumerate(_tap_slices(kh, kw, ho, wo, stride, dilation)):
        cols[:, t] = xp[:, :, sh, sw].transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * ho * wo)


def _col2im(cols: np.ndarray, padded_shape, kh, kw, ho, wo, stride, dilation) -> np.ndarray:
    n, c = padded_shape[:2]
    cols = cols.reshape(c, kh * kw, n, ho, wo)
    xp = np.zeros(padded_shape, dtype=cols.dtype)
    for t, (sh, sw) in enumerate(_tap_slices(kh, kw, ho, wo, stride, dilation)):
        xp[:, :, sh, sw] += cols[:, t].transpose(1, 0, 2, 3)
    return xp


def _unpad(xp: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return xp
    return xp[:, :, padding:-padding, padding:-padding]


def _check_conv_args(x_shape, w_shape, stride, padding, dilation, cin_axis, name):
    if len(x_shape) != 4:
        raise ValueError(f"{name}: input must be 4-D (N,C,H,W), got shape {x_shape}")
    if len(w_shape) != 4:
        raise ValueError(f"{name}: weight must be 4-D, got shape {w_shape}")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError(f"{name}: need stride>=1, dilation>=1, padding>=0 (got {stride}, {dilation}, {padding})")
    if x_shape[1] != w_shape[cin_axis]:
        raise ValueError(
            f"{name}: channel axis mismatch, input has C={x_shape[1]} but weight axis {cin_axis} "
            f"expects {w_shape[cin_axis]}"
        )


def _conv_fwd(x, w, stride, padding, dilation):
    n, _, h, wd = x.shape
    cout, cin, kh, kw = w.shape
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(wd, kw, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel larger than padded input along H or W (input {h}x{wd})")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = _im2col(xp, kh, kw, ho, wo, stride, dilation)
    out = w.reshape(cout, -1) @ cols
    return out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3), cols, xp.shape


def _conv_grad_input(g, w, padded_shape, stride, padding, dilation):
    cout, cin, kh, kw = w.shape
    n, _, ho, wo = g.shape
    g2 = g.transpose(1, 0, 2, 3).reshape(cout, -1)
    cols = w.reshape(cout, -1).T @ g2
    return _unpad(_col2im(cols, padded_shape, kh, kw, ho, wo, stride, dilation), padding)


def _conv_grad_weight(g, cols, w_shape):
    cout = w_shape[0]
    g2 = g.transpose(1, 0, 2, 3).reshape(cout, -1)
    return (g2 @ cols.T).reshape(w_shape)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0, dilation: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding; ``dilation`` > 1 gives atrous convolution."""
    _check_conv_args(x.shape, weight.shape, stride, padding, dilation, 1, "conv2d")
    out, cols, padded_shape = _conv_fwd(x.data, weight.data, stride, padding, dilation)
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"conv2d: bias shape {bias.shape} does not match Cout={weight.shape[0]}")
        out = out + bias.data.reshape(1, -1, 1, 1)
        parents.append(bias)
    w = weight.data

    def backward(g):
        gx = _conv_grad_input(g, w, padded_shape, stride, padding, dilation) if x.requires_grad else None
        gw = _conv_grad_weight(g, cols, w.shape) if weight.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return Tensor._from_op(np.ascontiguousarray(out), parents, backward, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
                     padding: int = 0) -> Tensor:
    """Transposed convolution; weight is (Cin, Cout, kh, kw).

    Implemented as the exact adjoint of ``conv2d`` with the same weight.
    """
    _check_conv_args(x.shape, weight.shape, stride, padding, 1, 0, "conv_transpose2d")
    n, cin, h, wd = x.shape
    _, cout, kh, kw = weight.shape
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (wd - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1:
        raise ValueError(f"conv_transpose2d: non-positive output size {ho}x{wo}")
    padded_shape = (n, cout, ho + 2 * padding, wo + 2 * padding)
    w = weight.data
    out = _conv_grad_input(x.data, w, padded_shape, stride, padding, 1)
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (cout,):
            raise ValueError(f"conv_transpose2d: bias shape {bias.shape} does not match Cout={cout}")
        out = out + bias.data.reshape(1, -1, 1, 1)
        parents.append(bias)
    xd = x.data

    def backward(g):
        gx = gw = None
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else g
        cols = _im2col(gp, kh, kw, h, wd, stride, 1)
        if x.requires_grad:
            gx = (w.reshape(cin, -1) @ cols).reshape(cin, n, h, wd).transpose(1, 0, 2, 3)
        if weight.requires_grad:
            gw = _conv_grad_weight(xd, cols, w.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return Tensor._from_op(np.ascontiguousarray(out), parents, backward, "conv_transpose2d")


# -- pooling / resampling -------------------------------------------------------


def maxpool2d(x: Tensor, k: int, stride: Optional[int] = None) -> Tensor:
    """Max pooling with floor semantics; ties route the gradient to the first element."""
    stride = k if stride is None else stride
    n, c, h, w = x.shape
    if k < 1 or stride < 1:
        raise ValueError(f"maxpool2d: need k>=1 and stride>=1, got k={k}, stride={stride}")
    if k > h or k > w:
        raise ValueError(f"maxpool2d: window {k} larger than input {h}x{w}")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    taps = list(_tap_slices(k, k, ho, wo, stride, 1))
    stack = np.stack([x.data[:, :, sh, sw] for sh, sw in taps])
    arg = stack.argmax(axis=0)
    out = np.take_along_axis(stack, arg[None], axis=0)[0]

    def backward(g):
        gx = np.zeros_like(x.data)
        for t, (sh, sw) in enumerate(taps):
            gx[:, :, sh, sw] += np.where(arg == t, g, 0)
        return (gx,)

    return Tensor._from_op(out, (x,), backward, "maxpool2d")


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """(n_out, n_in) 1-D linear interpolation matrix, half-pixel (align_corners=False) convention."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[o, i0] += 1.0 - lam
        m[o, i1] += lam
    return m


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_upsample: output size must be positive, got {out_h}x{out_w}")
    n, c, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return Tensor._from_op(x.data.copy(), (x,), lambda g: (g,), "upsample")
    mh = bilinear_matrix(h, out_h, x.dtype)
    mw = bilinear_matrix(w, out_w, x.dtype)
    out = np.matmul(np.matmul(mh, x.data), mw.T)

    def backward(g):
        return (np.matmul(np.matmul(mh.T, g), mw),)

    return Tensor._from_op(out, (x,), backward, "upsample")


# -- normalization / output -----------------------------------------------------


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization.

    In training mode, normalizes with biased batch statistics and updates the
    running buffers in place: ``running = momentum * running + (1 - momentum) * batch``.
    """
    c = x.shape[1]
    for name, arr in (("gamma", gamma.shape), ("beta", beta.shape),
                      ("running_mean", running_mean.shape), ("running_var", running_var.shape)):
        if arr != (c,):
            raise ValueError(f"batchnorm2d: {name} has shape {arr}, expected ({c},) for C={c}")
    axes = (0, 2, 3)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
    g_ = gamma.data.reshape(1, -1, 1, 1)
    out = xhat * g_ + beta.data.reshape(1, -1, 1, 1)
    m = x.data.size // c

    def backward(g):
        gbeta = g.sum(axis=axes)
        ggamma = (g * xhat).sum(axis=axes)
        gxhat = g * g_
        if training:
            gx = (inv.reshape(1, -1, 1, 1) / m) * (
                m * gxhat
                - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv.reshape(1, -1, 1, 1)
        return gx, ggamma, gbeta

    return Tensor._from_op(out, (x, gamma, beta), backward, "batchnorm2d")


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over axis 1, stabilized by max subtraction."""
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return Tensor._from_op(p, (x,), backward, "softmax")

"""Reverse-mode differentiation over NumPy arrays.

Forward values keep the dtype they were created with (float32 for training,
float64 for gradient checks). Gradients are always accumulated in float64.
"""
from __future__ import annotations

import contextlib

import numpy as np
from scipy.special import expit

from . import kernels

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        data = np.asarray(data)
        if data.dtype.kind != "f":
            data = data.astype(np.float32)
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones(self.shape, dtype=np.float64)
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
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        _accumulate(self, np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # interior gradients are not needed once propagated
                    node.grad = None

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_sum(self) * (1.0 / self.data.size)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _make(data, parents, backward):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward)
    return Tensor(data)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise ----------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def neg(a):
    def backward(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def tensor_sum(a):
    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(np.asarray(a.data.sum(dtype=np.float64)), (a,), backward)


def relu(x):
    out = np.maximum(x.data, 0)

    def backward(g):
        _accumulate(x, g * (x.data > 0))

    return _make(out, (x,), backward)


def sigmoid(x):
    out = expit(x.data).astype(x.dtype, copy=False)

    def backward(g):
        s = out.astype(np.float64)
        _accumulate(x, g * s * (1.0 - s))

    return _make(out, (x,), backward)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, sizes, axis=axis)):
            _accumulate(t, part)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# volumetric layers ------------------------------------------------------------


def _triple(v):
    return (v, v, v) if np.isscalar(v) else tuple(int(x) for x in v)


def conv3d(x, weight, bias=None, padding=0, stride=1):
    """Cross-correlation of (N, C, F, R, D) input with (O, C, kf, kr, kd) weights.

    A 4D (C, F, R, D) input is treated as a batch of one and returned 4D.
    """
    squeeze = x.ndim == 4
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    N, C, F, R, D = x.shape
    O, Cw, kf, kr, kd = weight.shape
    if C != Cw:
        raise ValueError(f"input has {C} channels, weights expect {Cw}")
    pad = _triple(padding)
    st = _triple(stride)
    kernel = (kf, kr, kd)
    out_sp = tuple((n + 2 * p - k) // s + 1 for n, p, k, s in zip((F, R, D), pad, kernel, st))
    if min(out_sp) < 1:
        raise ValueError(f"kernel {kernel} larger than padded input {(F, R, D)}")
    dtype = x.dtype
    xp = np.pad(x.data, ((0, 0), (0, 0)) + tuple((p, p) for p in pad)) if any(pad) else x.data
    xp = np.ascontiguousarray(xp, dtype=dtype)
    cols = kernels.im2col3d(xp, kernel, st, out_sp)
    w2 = weight.data.reshape(O, -1).astype(dtype, copy=False)
    y = w2 @ cols
    if bias is not None:
        y += bias.data.astype(dtype, copy=False)[:, None]
    out = np.ascontiguousarray(y.reshape((O, N) + out_sp).transpose(1, 0, 2, 3, 4))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gc = np.ascontiguousarray(g.astype(dtype, copy=False).transpose(1, 0, 2, 3, 4)).reshape(O, -1)
        if weight.requires_grad:
            _accumulate(weight, (gc @ cols.T).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, gc.sum(axis=1, dtype=np.float64))
        if x.requires_grad:
            dxp = kernels.col2im3d(w2.T @ gc, xp.shape, kernel, st, out_sp)
            crop = (slice(None), slice(None)) + tuple(slice(p, p + n) for p, n in zip(pad, (F, R, D)))
            _accumulate(x, dxp[crop])

    res = _make(out, parents, backward)
    return reshape(res, res.shape[1:]) if squeeze else res


def conv_transpose3d(x, weight, bias=None, factor=2):
    """Learned upsampling: kernel = stride = ``factor``, weights (C_in, C_out, f, f, f)."""
    N, C, F, R, D = x.shape
    Cw, O, kf, kr, kd = weight.shape
    if C != Cw or (kf, kr, kd) != (factor,) * 3:
        raise ValueError(f"weights {weight.shape} do not match input channels {C} / factor {factor}")
    dtype = x.dtype
    x2 = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3, 4)).reshape(C, -1)
    w2 = weight.data.reshape(C, -1).astype(dtype, copy=False)
    y = (w2.T @ x2).reshape(O, factor, factor, factor, N, F, R, D)
    y = y.transpose(4, 0, 5, 1, 6, 2, 7, 3).reshape(N, O, F * factor, R * factor, D * factor)
    if bias is not None:
        y = y + bias.data.astype(dtype, copy=False)[None, :, None, None, None]
    out = np.ascontiguousarray(y)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gg = g.astype(dtype, copy=False).reshape(N, O, F, factor, R, factor, D, factor)
        gm = np.ascontiguousarray(gg.transpose(1, 3, 5, 7, 0, 2, 4, 6)).reshape(O * factor**3, -1)
        if weight.requires_grad:
            _accumulate(weight, (x2 @ gm.T).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3, 4)))
        if x.requires_grad:
            _accumulate(x, (w2 @ gm).reshape(C, N, F, R, D).transpose(1, 0, 2, 3, 4))

    return _make(out, parents, backward)


def maxpool3d(x, window=(2, 2, 2)):
    """Max over disjoint windows; ties route the gradient to the first maximum."""
    wf, wr, wd = _triple(window)
    N, C, F, R, D = x.shape
    if F % wf or R % wr or D % wd:
        raise ValueError(f"spatial shape {(F, R, D)} not divisible by window {(wf, wr, wd)}")
    Fo, Ro, Do = F // wf, R // wr, D // wd
    blocks = x.data.reshape(N, C, Fo, wf, Ro, wr, Do, wd).transpose(0, 1, 2, 4, 6, 3, 5, 7)
    blocks = blocks.reshape(N, C, Fo, Ro, Do, wf * wr * wd)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros((N, C, Fo, Ro, Do, wf * wr * wd), dtype=np.float64)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(N, C, Fo, Ro, Do, wf, wr, wd).transpose(0, 1, 2, 5, 3, 6, 4, 7)
        _accumulate(x, gb.reshape(x.shape))

    return _make(np.ascontiguousarray(out), (x,), backward)


def instance_norm(x, gamma=None, beta=None, eps=1e-5):
    """Normalise each (sample, channel) over its spatial voxels, then scale and shift."""
    axes = tuple(range(2, x.ndim))
    xd = x.data.astype(np.float64)
    mu = xd.mean(axis=axes, keepdims=True)
    var = xd.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    bshape = (1, -1) + (1,) * len(axes)
    y = xhat
    if gamma is not None:
        y = y * gamma.data.reshape(bshape)
    if beta is not None:
        y = y + beta.data.reshape(bshape)
    parents = tuple(t for t in (x, gamma, beta) if t is not None)

    def backward(g):
        red = (0,) + axes
        if gamma is not None and gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=red))
        if beta is not None and beta.requires_grad:
            _accumulate(beta, g.sum(axis=red))
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(bshape) if gamma is not None else g
            dx = inv * (
                dxhat
                - dxhat.mean(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
            )
            _accumulate(x, dx)

    return _make(y.astype(x.dtype), parents, backward)


def reshape(x, shape):
    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), backward)


def flip(x, axes):
    def backward(g):
        _accumulate(x, np.flip(g, axes))

    return _make(np.ascontiguousarray(np.flip(x.data, axes)), (x,), backward)

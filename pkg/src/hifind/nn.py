"""Segmentation losses, Adam, the learning-rate schedule and a gradient checker."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, _accumulate, _make, no_grad

DICE_EPS = 1e-5
BCE_CLAMP = 1e-7
BCE_WEIGHT = 0.5


def _per_sample(x):
    x = np.asarray(x)
    n = x.shape[0] if x.ndim >= 2 else 1
    return x.reshape(n, -1)


def _target_array(target, shape):
    y = np.asarray(getattr(target, "data", target), dtype=np.float64)
    if y.shape != shape:
        raise ValueError(f"prediction shape {shape} != target shape {y.shape}")
    return y


def dice_loss(pred: Tensor, target, eps: float = DICE_EPS) -> Tensor:
    """1 - mean over samples of (2*sum(y*p) + eps) / (sum(y) + sum(p) + eps).

    The leading axis is the batch axis for inputs with two or more dims.
    """
    y = _per_sample(_target_array(target, pred.shape))
    p = _per_sample(pred.data).astype(np.float64)
    n = p.shape[0]
    num = 2.0 * (y * p).sum(axis=1) + eps
    den = y.sum(axis=1) + p.sum(axis=1) + eps
    loss = 1.0 - float(np.mean(num / den))

    def backward(g):
        dd = (2.0 * y * den[:, None] - num[:, None]) / (den[:, None] ** 2)
        _accumulate(pred, (-float(g) / n * dd).reshape(pred.shape))

    return _make(np.asarray(loss), (pred,), backward)


def bce_loss(pred: Tensor, target, clamp: float = BCE_CLAMP) -> Tensor:
    """Mean binary cross-entropy with ``pred`` clamped to [clamp, 1 - clamp]."""
    y = _target_array(target, pred.shape)
    raw = pred.data.astype(np.float64)
    p = np.clip(raw, clamp, 1.0 - clamp)
    n = p.size
    loss = -float(np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))

    def backward(g):
        inside = (raw >= clamp) & (raw <= 1.0 - clamp)
        dp = (-y / p + (1.0 - y) / (1.0 - p)) / n
        _accumulate(pred, float(g) * dp * inside)

    return _make(np.asarray(loss), (pred,), backward)


def combined_loss(pred: Tensor, target, bce_weight: float = BCE_WEIGHT) -> Tensor:
    """Dice loss plus ``bce_weight`` times binary cross-entropy."""
    return dice_loss(pred, target) + bce_loss(pred, target) * bce_weight


# optimisation -----------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """Bias-corrected Adam update applied in place to every array in ``params``.

    Moments are stored in the parameter dtype so checkpoints capture them exactly.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m64 = state.beta1 * m + (1.0 - state.beta1) * g
        v64 = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m[...] = m64
        v[...] = v64
        update = (state.lr / bc1) * m.astype(np.float64) / (np.sqrt(v.astype(np.float64) / bc2) + state.eps)
        p[...] = p - update


class Adam:
    """Adam over a name -> Tensor registry."""

    def __init__(self, params: dict, lr: float = 0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.state = AdamState(lr, beta1, beta2, eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None):
        if lr is not None:
            if lr <= 0:
                raise ValueError(f"learning rate must be positive, got {lr}")
            self.state.lr = lr
        adam_step(
            {k: p.data for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items() if p.grad is not None},
            self.state,
        )


def lr_schedule(epoch: int, total_epochs: int = 600, lr_start: float = 0.01, lr_end: float = 0.0005) -> float:
    """Per-epoch exponential decay from ``lr_start`` at epoch 0 to ``lr_end`` at the last epoch."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if epoch == 0 or total_epochs == 1:
        return lr_start
    if epoch == total_epochs - 1:
        return lr_end
    return lr_start * (lr_end / lr_start) ** (epoch / (total_epochs - 1))


# gradient checking ---------------------------------------------------------------


def grad_check(fn, inputs, h: float = 1e-3, floor: float = 1e-3) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``fn`` maps Tensors to a scalar Tensor. Inputs are promoted to float64.
    Each element's error is ``|a - n| / max(|a|, |n|, floor * max|n|)``; the
    floor keeps components that are zero up to round-off from dominating.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*tensors)
    out.backward()
    worst = 0.0
    for t, a in zip(tensors, arrays):
        analytic = t.grad if t.grad is not None else np.zeros_like(a)
        numeric = np.zeros_like(a)
        flat = a.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = fn(*[Tensor(b) for b in arrays]).item()
                flat[i] = orig - h
                down = fn(*[Tensor(b) for b in arrays]).item()
                flat[i] = orig
                numeric.reshape(-1)[i] = (up - down) / (2.0 * h)
        scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor * max(np.abs(numeric).max(), 1e-300))
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / scale)))
    return worst


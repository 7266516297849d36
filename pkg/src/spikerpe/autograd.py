"""A small reverse-mode autodiff tape over numpy arrays.

Enough to train a toy spiking Transformer: dense layers, batch norm, LIF
layers with surrogate gradients, and the spiking attention primitives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DimensionError, NumericError
from .neuron import LIFParams


class DiffTensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, values, requires_grad=False, parents=(), backward=None, name=None):
        values = np.asarray(values)
        if values.dtype not in (np.float32, np.float64):
            values = values.astype(np.float64)
        self.values = values
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    def __repr__(self):
        return f"DiffTensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.values.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.values.size != 1:
                raise DimensionError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.values)
        order = _topo(self)
        for node in order:
            if node._backward is not None:
                node.grad = None
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def tensor(values, requires_grad=False, name=None) -> DiffTensor:
    return DiffTensor(values, requires_grad=requires_grad, name=name)


def _wrap(x, like=None):
    if isinstance(x, DiffTensor):
        return x
    if like is not None and isinstance(like, DiffTensor):
        return DiffTensor(np.asarray(x, dtype=like.values.dtype))
    return DiffTensor(x)


def _wrap2(a, b):
    return _wrap(a, b), _wrap(b, a)


def _result(values, parents, backward):
    parents = tuple(p for p in parents if p.requires_grad)
    if not parents:
        return DiffTensor(values)
    return DiffTensor(values, requires_grad=True, parents=parents, backward=backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural
# ---------------------------------------------------------------------------


def add(a, b) -> DiffTensor:
    a, b = _wrap2(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.values + b.values, (a, b), bw)


def mul(a, b) -> DiffTensor:
    a, b = _wrap2(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.values, b.shape))

    return _result(a.values * b.values, (a, b), bw)


def reshape(x: DiffTensor, shape) -> DiffTensor:
    def bw(g):
        x._accumulate(g.reshape(x.shape))

    return _result(x.values.reshape(shape), (x,), bw)


def mean(x: DiffTensor, axis) -> DiffTensor:
    n = np.prod([x.shape[a] for a in np.atleast_1d(axis)])

    def bw(g):
        x._accumulate(np.broadcast_to(np.expand_dims(g, axis) / n, x.shape))

    return _result(x.values.mean(axis=axis), (x,), bw)


def sum_all(x: DiffTensor) -> DiffTensor:
    def bw(g):
        x._accumulate(np.broadcast_to(g, x.shape))

    return _result(x.values.sum(), (x,), bw)


def select(x: DiffTensor, index: int, axis: int) -> DiffTensor:
    """x.take(index, axis) with the axis dropped."""

    def bw(g):
        full = np.zeros(x.shape, dtype=x.values.dtype)
        sl = [slice(None)] * x.values.ndim
        sl[axis] = index
        full[tuple(sl)] = g
        x._accumulate(full)

    return _result(np.take(x.values, index, axis=axis), (x,), bw)


def repeat_time(x: DiffTensor, steps: int) -> DiffTensor:
    """Broadcast x to a new leading time axis of length ``steps``."""

    def bw(g):
        x._accumulate(g.sum(axis=0))

    return _result(np.broadcast_to(x.values, (steps,) + x.shape).copy(), (x,), bw)


def concat_const(x: DiffTensor, const) -> DiffTensor:
    """Append a constant block along the last axis (broadcast over leading axes)."""
    const = np.asarray(const, dtype=x.values.dtype)
    c = np.broadcast_to(const, x.shape[:-1] + const.shape[-1:])
    d = x.shape[-1]

    def bw(g):
        x._accumulate(g[..., :d])

    return _result(np.concatenate([x.values, c], axis=-1), (x,), bw)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def matmul(a, b) -> DiffTensor:
    a, b = _wrap2(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.values, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.values, -1, -2) @ g, b.shape))

    return _result(a.values @ b.values, (a, b), bw)


def linear(x, w, bias=None) -> DiffTensor:
    """x[..., D_in] @ w[D_in, D_out] (+ bias)."""
    x, w = _wrap(x), _wrap(w)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    lead = x.shape[:-1]
    x2 = x.values.reshape(-1, x.shape[-1])
    out = (x2 @ w.values).reshape(lead + (w.shape[1],))

    def bw(g):
        g2 = g.reshape(-1, w.shape[1])
        if x.requires_grad:
            x._accumulate((g2 @ w.values.T).reshape(x.shape))
        if w.requires_grad:
            w._accumulate(x2.T @ g2)

    y = _result(out, (x, w), bw)
    return y if bias is None else add(y, bias)


@dataclass
class BatchNormState:
    gamma: DiffTensor
    beta: DiffTensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def create(cls, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float64) -> BatchNormState:
        return cls(
            gamma=tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
            eps=eps,
            momentum=momentum,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def batch_norm(x: DiffTensor, state: BatchNormState, training: bool = True) -> DiffTensor:
    """Per-channel normalisation over every axis except the last."""
    if x.shape[-1] != state.channels:
        raise DimensionError(f"batch_norm: {x.shape[-1]} channels, state has {state.channels}")
    n = int(np.prod(x.shape[:-1]))
    if n == 0:
        raise NumericError("batch_norm on an empty batch")
    gamma, beta = state.gamma, state.beta
    x2 = x.values.reshape(n, state.channels)
    if training:
        out, xhat, mu, var, inv_std = _kernels.bn_forward(x2, gamma.values, beta.values, state.eps)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        unbiased = var * n / (n - 1) if n > 1 else var
        state.running_var = (1 - m) * state.running_var + m * unbiased
    else:
        inv_std = (1.0 / np.sqrt(state.running_var + state.eps)).astype(x2.dtype)
        xhat = (x2 - state.running_mean.astype(x2.dtype)) * inv_std
        out = xhat * gamma.values + beta.values

    def bw(g):
        gx, dgamma, dbeta = _kernels.bn_backward(g.reshape(n, -1), xhat, gamma.values, inv_std, training)
        if gamma.requires_grad:
            gamma._accumulate(dgamma)
        if beta.requires_grad:
            beta._accumulate(dbeta)
        if x.requires_grad:
            x._accumulate(gx.reshape(x.shape))

    return _result(out.reshape(x.shape), (x, gamma, beta), bw)


def spike_layer(x: DiffTensor, params: LIFParams = LIFParams(), alpha: float = 2.0) -> DiffTensor:
    """LIF neurons unrolled over axis 0 (time); surrogate-gradient BPTT backward.

    The membrane starts at u_reset for every call.
    """
    shape = x.shape
    cur = x.values.reshape(shape[0], -1)
    spikes, h = _kernels.lif_forward(cur, params.tau, params.u_thr, params.u_reset)

    def bw(g):
        gi = _kernels.lif_backward(
            g.reshape(shape[0], -1), h, spikes, params.tau, params.u_thr, params.u_reset, alpha
        )
        x._accumulate(gi.reshape(shape))

    return _result(spikes.reshape(shape), (x,), bw)


def heaviside(x: DiffTensor, alpha: float = 2.0) -> DiffTensor:
    """Step function forward, arctangent surrogate backward."""
    c = math.pi * alpha / 2.0

    def bw(g):
        x._accumulate(g * alpha / (2.0 * (1.0 + (c * x.values) ** 2)))

    return _result((x.values >= 0).astype(x.values.dtype), (x,), bw)


def xnor_scores(q: DiffTensor, k: DiffTensor) -> DiffTensor:
    """sum_d [1 - q - k + 2 q k] over the last axis, for every (i, j) pair.

    Equals the agreeing-bit count on binary inputs and is smooth in real
    inputs, which is what the surrogate backward differentiates.
    """
    q, k = _wrap(q), _wrap(k)
    d = q.shape[-1]
    kt = np.swapaxes(k.values, -1, -2)
    out = d - q.values.sum(-1)[..., :, None] - k.values.sum(-1)[..., None, :] + 2.0 * (q.values @ kt)

    def bw(g):
        if q.requires_grad:
            q._accumulate(2.0 * (g @ k.values) - g.sum(-1)[..., None])
        if k.requires_grad:
            k._accumulate(2.0 * (np.swapaxes(g, -1, -2) @ q.values) - g.sum(-2)[..., None])

    return _result(out, (q, k), bw)


def dot_scores(q: DiffTensor, k: DiffTensor) -> DiffTensor:
    return matmul(q, _transpose(k))


def _transpose(x: DiffTensor) -> DiffTensor:
    def bw(g):
        x._accumulate(np.swapaxes(g, -1, -2))

    return _result(np.swapaxes(x.values, -1, -2), (x,), bw)


def attend(scores: DiffTensor, v: DiffTensor, sigma) -> DiffTensor:
    """sigma * (scores @ v); sigma may be a float or a learnable scalar tensor."""
    return mul(matmul(scores, v), sigma)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def cross_entropy(logits: DiffTensor, labels) -> DiffTensor:
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.values - logits.values.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = labels.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        logits._accumulate(g * p / n)

    return _result(loss, (logits,), bw)


def mse(pred: DiffTensor, target) -> DiffTensor:
    target = np.asarray(target, dtype=pred.values.dtype)
    diff = pred.values - target

    def bw(g):
        pred._accumulate(g * 2.0 * diff / diff.size)

    return _result(np.mean(diff**2), (pred,), bw)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


def grad_check(f, params, eps: float = 1e-4, floor: float = 1e-8) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps the list ``params`` (DiffTensors) to a scalar DiffTensor and
    must rebuild its graph on every call.
    """
    for p in params:
        p.zero_grad()
    out = f(params)
    out.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros(p.shape) if p.grad is None else p.grad.copy()
        numeric = np.zeros(p.shape)
        flat = p.values.reshape(-1)
        for idx in range(flat.size):
            old = flat[idx]
            flat[idx] = old + eps
            fp = float(f(params).values)
            flat[idx] = old - eps
            fm = float(f(params).values)
            flat[idx] = old
            numeric.reshape(-1)[idx] = (fp - fm) / (2 * eps)
        scale = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
        rel = np.abs(analytic - numeric) / scale
        # entries where both are ~0 compare absolutely
        rel = np.where(scale <= floor, np.abs(analytic - numeric), rel)
        worst = max(worst, float(rel.max()))
    for p in params:
        p.zero_grad()
    return worst


@dataclass
class Adam:
    params: list
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    _m: list = field(default_factory=list)
    _v: list = field(default_factory=list)

    def __post_init__(self):
        self._m = [np.zeros_like(p.values) for p in self.params]
        self._v = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1 - b1**self.step_count
        c2 = 1 - b2**self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                p.values *= 1 - lr * self.weight_decay
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.values -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def cosine_lr(base: float, step: int, total: int, floor: float = 0.0) -> float:
    if total <= 0:
        return base
    return floor + 0.5 * (base - floor) * (1 + math.cos(math.pi * min(step, total) / total))

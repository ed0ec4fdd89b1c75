"""Minimal reverse-mode differentiation over numpy arrays, plus Adam.

A ``Tensor`` records the operation that produced it and a closure mapping
the output gradient to gradients of its inputs. The graph is rebuilt on
every forward pass (define-by-run); ``backward`` walks it in reverse
topological order. All data is float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NotScalar, ShapeMismatch

__all__ = [
    "Tensor", "tensor", "constant", "matmul", "exp", "log", "sigmoid", "sqrt",
    "sum", "mean", "variance", "l2_norm", "transpose", "reshape",
    "broadcast_to", "stack", "concatenate", "scalar_power_base", "expm1",
    "linear_recurrence",
    "OptimizerState", "adam_step", "Adam",
]


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array that participates in a recorded computation."""

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad and not _parents else None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self):
        """Populate ``grad`` on every reachable tensor that requires it.

        Leaf gradients accumulate across calls; intermediate gradients are
        reset on each pass.
        """
        if self.size != 1:
            raise NotScalar("backward needs a scalar loss", shape=self.shape)
        if not self.requires_grad:
            return

        order, seen = [], set()
        stack = [(self, False)]
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

        for node in order:
            if node._parents:
                node.grad = None
        self.grad = np.ones_like(self.data) if self.grad is None else self.grad + 1.0

        for node in reversed(order):
            if not node._parents or node.grad is None:
                continue
            grads = node._backward(node.grad)
            if node is not self:
                node.grad = None  # free intermediate buffers as we go
            for p, g in zip(node._parents, grads):
                if g is None or not p.requires_grad:
                    continue
                g = _unbroadcast(np.asarray(g, dtype=np.float64), p.shape)
                p.grad = g.copy() if p.grad is None else p.grad + g

    # arithmetic --------------------------------------------------------
    def __add__(self, other):
        return _binary(self, other, np.add, _first, _first, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract, _first, _negfirst, "sub")

    def __rsub__(self, other):
        return _binary(_as_tensor(other), self, np.subtract, _first, _negfirst, "sub")

    def __mul__(self, other):
        return _binary(self, other, np.multiply, lambda g, a, b: g * b, lambda g, a, b: g * a, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return _unary(self, -self.data, lambda g: -g, "neg")

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("tensor exponents are not supported; use scalar_power_base")
        p = float(exponent)
        x = self.data
        return _unary(self, x ** p, lambda g: g * p * x ** (p - 1.0), "pow")

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(_as_tensor(other), self)

    def __getitem__(self, idx):
        out = self.data[idx]
        shape = self.shape

        def back(g):
            full = np.zeros(shape)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor(out, self.requires_grad, (self,), back, "getitem")

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad=True):
    """A trainable leaf."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True if requires_grad else False)


def constant(data):
    return Tensor(data, requires_grad=False)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unary(a, out, grad_fn, op):
    return Tensor(out, a.requires_grad, (a,), lambda g: (grad_fn(g),), op)


def _first(g, a, b):
    return g


def _negfirst(g, a, b):
    return -g


def _binary(a, b, fn, grad_a, grad_b, op):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = fn(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatch(f"{op}: {exc}", left=a.shape, right=b.shape) from None
    ad, bd = a.data, b.data

    def back(g):
        return (grad_a(g, ad, bd) if a.requires_grad else None,
                grad_b(g, ad, bd) if b.requires_grad else None)

    return Tensor(out, a.requires_grad or b.requires_grad, (a, b), back, op)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if np.any(b.data == 0):
        raise DomainError("division by zero")
    return _binary(a, b, np.divide, lambda g, x, y: g / y,
                   lambda g, x, y: -g * x / (y * y), "div")


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul operands need at least 2 dimensions",
                            left=a.shape, right=b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatch(f"matmul: {exc}", left=a.shape, right=b.shape) from None
    ad, bd = a.data, b.data

    def back(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(ad, -1, -2), g) if b.requires_grad else None
        return ga, gb

    return Tensor(out, a.requires_grad or b.requires_grad, (a, b), back, "matmul")


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _unary(a, out, lambda g: g * out, "exp")


def expm1(a):
    """``exp(a) - 1`` without cancellation near zero."""
    a = _as_tensor(a)
    x = a.data
    return _unary(a, np.expm1(x), lambda g: g * np.exp(x), "expm1")


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of a nonpositive value", min=float(a.data.min()))
    x = a.data
    return _unary(a, np.log(x), lambda g: g / x, "log")


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _unary(a, out, lambda g: g * out * (1.0 - out), "sigmoid")


def sqrt(a):
    a = _as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of a negative value")
    out = np.sqrt(a.data)
    return _unary(a, out, lambda g: g * 0.5 / out, "sqrt")


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return Tensor(out, a.requires_grad, (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis, keepdims) * (1.0 / count)


def variance(a, axis=None, keepdims=False):
    """Population variance (no Bessel correction)."""
    a = _as_tensor(a)
    d = a - mean(a, axis, keepdims=True)
    return mean(d * d, axis, keepdims)


def l2_norm(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    x = a.data
    out = np.sqrt((x * x).sum(axis=axis, keepdims=keepdims))
    shape = a.shape

    def back(g):
        n = out
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
            n = np.expand_dims(n, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.broadcast_to(g, shape) * np.where(n > 0, x / safe, 0.0),)

    return Tensor(out, a.requires_grad, (a,), back, "l2_norm")


def transpose(a, axes=None):
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = np.argsort(axes)
    return _unary(a, np.transpose(a.data, axes), lambda g: np.transpose(g, inv), "transpose")


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape: {exc}", shape=old, target=shape) from None
    return _unary(a, out, lambda g: g.reshape(old), "reshape")


def broadcast_to(a, shape):
    a = _as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeMismatch(f"broadcast: {exc}", shape=a.shape, target=shape) from None
    return _unary(a, out, lambda g: g, "broadcast")


def stack(tensors, axis=0):
    ts = [_as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"stack: {exc}") from None

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return Tensor(out, any(t.requires_grad for t in ts), tuple(ts), back, "stack")


def concatenate(tensors, axis=0):
    ts = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concatenate: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor(out, any(t.requires_grad for t in ts), tuple(ts), back, "concatenate")


def linear_recurrence(q, x, init=None):
    """``y[..., 0] = init``, ``y[..., t] = q * y[..., t-1] + x[..., t-1]``.

    ``x`` is (..., T); ``q`` and ``init`` broadcast against ``x[..., 0]``.
    The adjoint runs the same recurrence backwards in time, so both
    directions cost O(T) vectorised steps.
    """
    q, x = _as_tensor(q), _as_tensor(x)
    init = _as_tensor(0.0 if init is None else init)
    T = x.shape[-1]
    lead = np.broadcast_shapes(q.shape, x.shape[:-1], init.shape)
    qd = np.broadcast_to(q.data, lead)
    xd = x.data
    y = np.empty(lead + (T,))
    y[..., 0] = init.data
    for t in range(1, T):
        y[..., t] = qd * y[..., t - 1] + xd[..., t - 1]

    def back(g):
        lam = np.empty_like(y)
        lam[..., T - 1] = g[..., T - 1]
        for t in range(T - 2, -1, -1):
            lam[..., t] = g[..., t] + qd * lam[..., t + 1]
        gq = gx = gi = None
        if q.requires_grad:
            gq = (lam[..., 1:] * y[..., :-1]).sum(axis=-1)
        if x.requires_grad:
            gx = np.zeros(lead + (T,))
            gx[..., :-1] = lam[..., 1:]
        if init.requires_grad:
            gi = lam[..., 0]
        return gq, gx, gi

    needs = q.requires_grad or x.requires_grad or init.requires_grad
    return Tensor(y, needs, (q, x, init), back, "linear_recurrence")


def scalar_power_base(c, M):
    """``c ** M`` elementwise, computed as ``exp(M * log(c))``; ``c`` > 0."""
    return exp(_as_tensor(M) * log(c))


# --- optimizer ---------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place. Returns ``(params, state)``."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeMismatch("optimizer state does not match parameter list")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ShapeMismatch("parameter/gradient shape mismatch", param=p.shape, grad=g.shape)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


class Adam:
    """Adam over a list of trainable tensors."""

    def __init__(self, params, lr=1e-2, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state)

"""Reverse-mode autodiff over numpy arrays.

Every op records a closure that maps the output gradient to parent gradients.
``Tensor.backward`` walks the graph in reverse topological order. Arrays keep
their dtype, float32 by default; grad checks re-run the same graph in float64.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float32
KL_CLAMP = 1e-12

_grad_enabled = True


class no_grad:
    """Context manager that stops graph recording (inference)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev


class ShapeError(ValueError):
    pass


def _as_array(x):
    if isinstance(x, np.ndarray) and np.issubdtype(x.dtype, np.floating):
        return x
    if isinstance(x, np.floating):
        # full reductions return numpy scalars; keep their precision
        return np.asarray(x)
    return np.asarray(x, dtype=DTYPE)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), op=""):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'})"

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
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
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                _accumulate(node, g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """A named leaf that owns a gradient buffer of its own shape."""

    __slots__ = ("name",)

    def __init__(self, data, name="", trainable=True):
        super().__init__(np.array(data, dtype=DTYPE), requires_grad=trainable)
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def trainable(self):
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag):
        self.requires_grad = bool(flag)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def _accumulate(node, g):
    if node.grad is None:
        node.grad = np.array(g, dtype=node.data.dtype, copy=True)
    else:
        node.grad = node.grad + g.astype(node.grad.dtype, copy=False)


def tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, op, backward):
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, req, parents if req else (), op)
    if req:
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = tensor(a), tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b), "add",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = tensor(a), tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b), "sub",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = tensor(a)
        c = np.asarray(b, dtype=a.data.dtype)
        return _make(a.data * c, (a,), "scale", lambda g: (g * c,))
    a, b = tensor(a), tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(a.data * b.data, (a, b), "mul",
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def exp(a):
    a = tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), "exp", lambda g: (g * out,))


def log(a):
    a = tensor(a)
    return _make(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def clamp_min(a, lo):
    a = tensor(a)
    keep = a.data >= lo
    out = np.where(keep, a.data, np.asarray(lo, dtype=a.data.dtype))
    return _make(out, (a,), "clamp_min", lambda g: (g * keep,))


def relu(a):
    a = tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), "relu", lambda g: (g * mask,))


def sigmoid(a):
    a = tensor(a)
    x = a.data
    # split branches keep exp() from overflowing
    ex = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex)).astype(x.dtype)
    return _make(out, (a,), "sigmoid", lambda g: (g * out * (1 - out),))


def tanh(a):
    a = tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), "tanh", lambda g: (g * (1 - out * out),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a):
    """tanh approximation of GELU."""
    a = tensor(a)
    x = a.data
    c = np.asarray(_GELU_C, dtype=x.dtype)
    x2 = x * x
    t = np.tanh(c * (x + np.asarray(0.044715, x.dtype) * x2 * x))
    out = 0.5 * x * (1 + t)

    def back(g):
        du = c * (1 + np.asarray(3 * 0.044715, x.dtype) * x2)
        return (g * (0.5 * (1 + t) + 0.5 * x * (1 - t * t) * du),)

    return _make(out, (a,), "gelu", back)


# ---------------------------------------------------------------------------
# shape ops


def matmul(a, b):
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    k = a.shape[-1]
    flat = b.ndim == 2
    if flat:
        # fold batch dims into a single GEMM
        out = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        out = np.matmul(a.data, b.data)

    def back(g):
        if flat:
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape)
            gb = a.data.reshape(-1, k).T @ g2
            return ga, gb
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), "matmul", back)


def reshape(a, shape):
    a = tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _make(out, (a,), "reshape", lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    a = tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), "transpose", lambda g: (g.transpose(inv),))


def getitem(a, idx):
    a = tensor(a)
    out = a.data[idx]

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g) if _fancy(idx) else full.__setitem__(idx, g)
        return (full,)

    return _make(out, (a,), "getitem", back)


def _fancy(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis=0):
    ts = [tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, tuple(ts), "concat", lambda g: tuple(np.split(g, bounds, axis=axis)))


def tsum(a, axis=None, keepdims=False):
    a = tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), "sum", back)


def mean(a, axis=None, keepdims=False):
    a = tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# composite layers with analytic backward


def softmax(a, axis=-1):
    a = tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _make(s, (a,), "softmax",
                 lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def layer_norm(a, gamma, beta, eps=1e-5):
    a, gamma, beta = tensor(a), tensor(gamma), tensor(beta)
    if a.shape[-1] != gamma.shape[-1] or gamma.shape != beta.shape:
        raise ShapeError(f"layer_norm: input {a.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def back(g):
        dxhat = g * gamma.data
        dx = rstd / n * (n * dxhat - dxhat.sum(-1, keepdims=True)
                         - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return _make(out, (a, gamma, beta), "layer_norm", back)


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` with ``weight`` shaped (d_out, d_in)."""
    x, weight = tensor(x), tensor(weight)
    if x.shape[-1] != weight.shape[-1]:
        raise ShapeError(f"linear: input {x.shape} vs weight {weight.shape}")
    out = matmul(x, transpose(weight, (1, 0)))
    return out if bias is None else add(out, bias)


def mse(pred, target):
    pred, target = tensor(pred), tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes {pred.shape} and {target.shape} differ")
    d = sub(pred, target)
    return mean(mul(d, d))


def kl_div(p, q, axis=-1):
    """Sum over ``axis`` of p (log p - log q), both clamped to >= 1e-12."""
    p, q = tensor(p), tensor(q)
    if p.shape != q.shape:
        raise ShapeError(f"kl_div: shapes {p.shape} and {q.shape} differ")
    pc, qc = clamp_min(p, KL_CLAMP), clamp_min(q, KL_CLAMP)
    return tsum(mul(pc, sub(log(pc), log(qc))), axis=axis)


def dropout(x, p, rng, training=True):
    if not training or p == 0:
        return tensor(x)
    x = tensor(x)
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / np.asarray(1 - p, x.data.dtype)
    return mul(x, Tensor(keep))

"""Minimal reverse-mode tape over a fixed set of array ops.

Every op records its inputs and a closure that maps the output adjoint to
input adjoints. Only tensors created through the functions below are
differentiable; feeding a :class:`Tensor` to a raw numpy function raises
:class:`UnsupportedOpError` instead of silently dropping the graph.
"""
import numpy as np

from ..errors import DimensionError, UnsupportedOpError

SUPPORTED_OPS = frozenset({
    "leaf", "matmul", "add", "sub", "mul", "div", "neg", "scale", "gelu",
    "relu", "sqrt", "layer_norm", "softmax", "log_softmax", "concat", "sum",
    "mean", "take", "index", "reshape", "transpose",
})

_GELU_K = float(np.sqrt(2.0 / np.pi))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, op="leaf", parents=(), backward=None):
        if op not in SUPPORTED_OPS:
            raise UnsupportedOpError(f"op {op!r} is not supported by the tape")
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        raise UnsupportedOpError(f"numpy ufunc {ufunc.__name__!r} is not a tape op")

    def __array_function__(self, func, types, args, kwargs):
        raise UnsupportedOpError(f"numpy function {func.__name__!r} is not a tape op")

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return index(self, idx)

    @property
    def T(self):
        return transpose(self)

    def backward(self, grad=None):
        backward(self, grad)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        return Tensor(np.asarray(x))
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, op, parents, backward):
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, op=op, parents=parents, backward=backward)


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = as_tensor(b, a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = as_tensor(a, b.dtype)
    elif not isinstance(a, Tensor):
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a, b):
    a, b = _pair(a, b)
    if a.data.ndim == 0 or b.data.ndim == 0:
        raise DimensionError("matmul needs at least 1-d operands")
    out = a.data @ b.data

    def bw(g):
        ad, bd = a.data, b.data
        if bd.ndim == 1:
            ga = np.multiply.outer(g, bd) if ad.ndim > 1 else g * bd
            gb = np.tensordot(ad, g, axes=(tuple(range(ad.ndim - 1)), tuple(range(g.ndim))))
            return _unbroadcast(ga, ad.shape), gb
        if ad.ndim == 1:
            ga = bd @ g
            gb = np.multiply.outer(ad, g)
            return ga, _unbroadcast(gb, bd.shape)
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(out, "matmul", (a, b), bw)


def add(a, b):
    a, b = _pair(a, b)
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _pair(a, b)
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _pair(a, b)
    return _make(a.data * b.data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data
    return _make(out, "div", (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def scale(a, c):
    c = a.dtype.type(c)
    return _make(a.data * c, "scale", (a,), lambda g: (g * c,))


def relu(a):
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.dtype), "relu", (a,), lambda g: (g * mask,))


def gelu(a):
    x = a.data
    t = np.tanh(_GELU_K * (x + 0.044715 * (x * x * x)))
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_K * (1.0 + 3 * 0.044715 * x * x)
        return (g * d,)

    return _make(out.astype(a.dtype), "gelu", (a,), bw)


def sqrt(a):
    out = np.sqrt(a.data)
    return _make(out, "sqrt", (a,), lambda g: (g * 0.5 / out,))


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then apply the affine ``gamma``/``beta``."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx = g * gamma.data
        gx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _make(out.astype(xd.dtype), "layer_norm", (x, gamma, beta), bw)


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, "softmax", (a,),
                 lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return _make(out, "log_softmax", (a,),
                 lambda g: (g - sm * g.sum(axis=axis, keepdims=True),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, "concat", tuple(tensors), bw)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), "sum", (a,), bw)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).astype(a.dtype),)

    return _make(np.asarray(out), "mean", (a,), bw)


def take(table, ids):
    """Embedding lookup: rows of ``table`` selected by integer ``ids``."""
    ids = np.asarray(ids)
    out = table.data[ids]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(out, "take", (table,), bw)


def index(a, idx):
    out = a.data[idx]

    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(np.asarray(out), "index", (a,), bw)


def reshape(a, shape):
    return _make(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(range(a.data.ndim))[::-1]
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), "transpose", (a,), lambda g: (g.transpose(inv),))


def backward(root, grad=None):
    """Accumulate ``d root / d leaf`` into ``leaf.grad`` for every leaf needing it."""
    if grad is None:
        if root.data.size != 1:
            raise DimensionError("backward() without a seed needs a scalar output")
        grad = np.ones_like(root.data)
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        stack.extend((p, False) for p in node._parents)

    grads = {id(root): grad}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.op not in SUPPORTED_OPS:
            raise UnsupportedOpError(f"op {node.op!r} has no adjoint")
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def grad_eval(loss_fn, params, trainable=None):
    """Evaluate ``loss_fn`` on leaf tensors built from ``params``.

    ``params`` maps names to arrays; ``trainable`` restricts which of them
    receive gradients (default: all). Returns ``(loss, grads)`` where
    ``grads`` maps each trainable name to an array shaped like its parameter.
    """
    names = set(params) if trainable is None else set(trainable)
    leaves = {k: Tensor(v, requires_grad=k in names) for k, v in params.items()}
    loss = loss_fn(leaves)
    if not isinstance(loss, Tensor):
        loss = as_tensor(loss)
    if loss.requires_grad:
        backward(loss)
    grads = {}
    for k in names:
        g = leaves[k].grad
        grads[k] = np.zeros_like(params[k]) if g is None else g
    return float(loss.data), grads

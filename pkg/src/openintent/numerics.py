"""Dense float64 tensors with a recorded graph for reverse-mode gradients.

Every op builds its output eagerly and, when any input requires a gradient,
records a closure that maps the output gradient to input gradients.  Calling
``Tensor.backward`` on a scalar walks the recorded graph in reverse
topological order and accumulates into ``Parameter.grad``.

Matrix products accumulate over the shared dimension one term at a time in
ascending order, so results are bit-identical to a naive triple loop and do
not depend on the BLAS build.  A numba kernel is used when available; the
numpy fallback keeps the same accumulation order.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy.special import erf

from .errors import ConfigError, DimensionError, LabelError, NumericError, PoolingError

try:
    import numba as _numba

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover
    _HAS_NUMBA = False

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording the graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "_rg", "_parents", "_backward", "_op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._rg = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @property
    def requires_grad(self):
        return self._rg

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'})"

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(_topo_order(self)):
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
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; multiply by a constant reciprocal")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """A named leaf tensor whose gradient is accumulated by ``backward``.

    Frozen parameters (``trainable=False``) are treated as constants when
    the graph is recorded, so no gradient ever reaches them.
    """

    __slots__ = ("name", "trainable")

    def __init__(self, data, name="", trainable=True):
        super().__init__(np.array(data, dtype=np.float64, copy=True))
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    @property
    def requires_grad(self):
        return self.trainable

    @property
    def value(self):
        return self.data

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = "trainable" if self.trainable else "frozen"
        return f"Parameter({self.name!r}, shape={self.shape}, {flag})"


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(data, op):
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite value produced by {op}")


def _make(data, parents, backward, op):
    _check_finite(data, op)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, _op=op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), backward, "add")


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), backward, "mul")


def relu(a):
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def tanh(a):
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a):
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def backward(g):
        return (g * (cdf + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)),)

    return _make(x * cdf, (a,), backward, "gelu")


def softplus(a):
    x = a.data
    y = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _make(y, (a,), lambda g: (g * sig,), "softplus")


def tabs(a):
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape):
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swap_last(a):
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def expand(a, shape):
    old = a.shape
    out = np.broadcast_to(a.data, shape)
    return _make(out, (a,), lambda g: (_unbroadcast(g, old),), "expand")


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return _make(out, tuple(tensors), backward, "concat")


def getitem(a, idx):
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _make(a.data[idx], (a,), backward, "getitem")


def take_rows(table, ids):
    """Gather rows of a 2-D table; ``ids`` may have any integer shape."""
    ids = np.asarray(ids)
    shape = table.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _make(table.data[ids], (table,), backward, "take_rows")


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims=False):
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


def masked_mean(h, mask):
    """Mean over the second-to-last axis restricted to positions with mask 1."""
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != h.shape[:-1]:
        raise DimensionError(f"mask shape {m.shape} does not match {h.shape[:-1]}")
    count = m.sum(axis=-1)
    if (count <= 0).any():
        raise PoolingError("cannot pool a sequence with no unmasked positions")
    weight = (m / count[..., None])[..., None]

    def backward(g):
        return (np.expand_dims(g, -2) * weight,)

    return _make((h.data * m[..., None]).sum(axis=-2) / count[..., None], (h,), backward, "masked_mean")


# ---------------------------------------------------------------------------
# linear algebra


def _mm_numpy(a, b, out):
    for j in range(a.shape[-1]):
        out += a[..., :, j : j + 1] * b[..., j : j + 1, :]
    return out


if _HAS_NUMBA:

    @_numba.njit(cache=True)
    def _mm_kernel(a, b, out):
        # out[t, i, j] accumulates a[t, i, p] * b[t, p, j] for p = 0, 1, ...
        for t in range(a.shape[0]):
            for i in range(a.shape[1]):
                for p in range(a.shape[2]):
                    x = a[t, i, p]
                    for j in range(b.shape[2]):
                        out[t, i, j] += x * b[t, p, j]
        return out


def _mm(a, b):
    """Batched matrix product with ascending-index accumulation."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    m, k, n = a.shape[-2], a.shape[-1], b.shape[-1]
    out = np.zeros(batch + (m, n))
    if not _HAS_NUMBA:
        return _mm_numpy(a, b, out)
    a3 = np.ascontiguousarray(np.broadcast_to(a, batch + (m, k))).reshape(-1, m, k)
    b3 = np.ascontiguousarray(np.broadcast_to(b, batch + (k, n))).reshape(-1, k, n)
    return _mm_kernel(a3, b3, out.reshape(-1, m, n)).reshape(out.shape)


def _swap(x):
    return np.swapaxes(x, -1, -2)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(_mm(g, _swap(bd)), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(_mm(_swap(ad), g), bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(_mm(ad, bd), (a, b), backward, "matmul")


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with ``weight`` shaped (in, out)."""
    x = _as_tensor(x)
    if x.ndim == 1:
        return reshape(linear(reshape(x, (1, -1)), weight, bias), (-1,))
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# ---------------------------------------------------------------------------
# normalisation and probabilities


def softmax_rows(x):
    """Softmax over the last axis with per-row max subtraction."""
    if x.shape[-1] == 0:
        raise DimensionError("softmax over an empty row")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), backward, "softmax")


def layer_norm(x, gain, bias, eps=1e-12):
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    if x.shape[-1] < 1:
        raise DimensionError("layer_norm needs at least one feature")
    xd, gd = x.data, gain.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    lead = tuple(range(xd.ndim - 1))

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gd + bias.data, (x, gain, bias), backward, "layer_norm")


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if n == 0:
        raise DimensionError("cross_entropy over an empty batch")
    if ((labels < 0) | (labels >= k)).any():
        raise LabelError(f"labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    nll = np.log(s[:, 0]) - z[rows, labels]

    def backward(g):
        p = e / s
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return _make(np.array(nll.mean()), (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# verification


def grad_check(f, params, eps=1e-5, floor=1e-3):
    """Largest relative error between reverse-mode and central-difference gradients.

    ``f`` is re-evaluated from scratch for every perturbation and must return a
    scalar ``Tensor``.  Only trainable parameters are checked.  The relative
    error of each entry is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    entries whose true gradient is ~0 from reporting pure round-off as error.
    """
    if not 0 < eps <= 1e-3:
        raise ConfigError(f"eps must lie in (0, 1e-3], got {eps}")
    params = [p for p in params if p.trainable]
    for p in params:
        p.zero_grad()
    out = f()
    if out.data.size != 1:
        raise DimensionError("grad_check needs a scalar-valued function")
    out.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad.reshape(-1).copy()
        flat = p.data.reshape(-1)
        if not np.shares_memory(flat, p.data):
            raise DimensionError(f"parameter {p.name!r} is not contiguous")
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                fp = _scalar(f())
                flat[i] = orig - eps
                fm = _scalar(f())
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            err = abs(analytic[i] - num) / max(abs(analytic[i]), abs(num), floor)
            worst = max(worst, err)
    return worst


def _scalar(t):
    v = float(np.asarray(t.data).reshape(-1)[0])
    if not math.isfinite(v):
        raise NumericError("function value is not finite")
    return v

"""Dense tensors with reverse-mode differentiation on top of numpy.

Every op records a closure that maps the output gradient to the gradients of
its inputs. ``Tensor.backward`` walks the recorded graph in reverse
topological order and accumulates gradients additively, so fan-out is handled
without special casing. Graphs are rebuilt on each forward pass and released
once ``backward`` has run.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition was violated."""


_state = {"dtype": np.float32, "grad": True}


def get_default_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the float type used for new tensors.

    Training runs in float32; gradient checks switch to float64 so finite
    differences are not swamped by rounding.
    """
    prev = _state["dtype"]
    _state["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def is_grad_enabled():
    return _state["grad"]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=_state["dtype"])
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @classmethod
    def _result(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        track = _state["grad"] and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._backward = backward if track else None
        return out

    # -- basic properties -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- autodiff ---------------------------------------------------------

    def backward(self):
        """Populate ``.grad`` of every reachable tensor that requires grad."""
        if self.data.size != 1 or self.data.ndim > 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor requiring grad")

        order = []
        seen = set()
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

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            # release the graph as we go
            node._parents = ()
            node._backward = None

    def zero_grad(self):
        self.grad = None

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _wrap(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ----------------------------------------------


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None
    sa, sb = a.shape, b.shape
    return Tensor._result(
        out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def neg(a):
    return Tensor._result(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from None

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(out, (a, b), backward)


def reciprocal(a):
    out = 1.0 / a.data
    return Tensor._result(out, (a,), lambda g: (-g * out * out,))


def exp(a):
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,))


def log(a):
    x = a.data
    return Tensor._result(np.log(x), (a,), lambda g: (g / x,))


def tanh(a):
    out = np.tanh(a.data)
    return Tensor._result(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor._result(out, (a,), lambda g: (g * out * (1.0 - out),))


def clip(a, lo, hi):
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return Tensor._result(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return Tensor._result(out, (a,), backward)


# -- reductions and shape ops --------------------------------------------


def tsum(a, axis=None, keepdims=False):
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._result(np.asarray(out), (a,), backward)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {tuple(shape)}") from None
    return Tensor._result(out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._result(
        a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),)
    )


def getitem(a, index):
    shape = a.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._result(np.asarray(a.data[index]), (a,), backward)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"cannot concatenate shapes {shapes} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(out, tuple(tensors), backward)


def broadcast_to(a, shape):
    src = a.shape
    out = np.broadcast_to(a.data, shape)
    return Tensor._result(out, (a,), lambda g: (_unbroadcast(g, src),))


# -- row gather / scatter for batched token sequences --------------------


def take_rows(x, idx):
    """Select rows per batch item: ``x`` (B, N, D), ``idx`` (B, K) -> (B, K, D)."""
    idx = np.asarray(idx)
    if x.ndim != 3 or idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise ShapeError(f"take_rows: x {x.shape} incompatible with idx {idx.shape}")
    b = np.arange(x.shape[0])[:, None]
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        # indices within one row of idx are distinct, so assignment equals accumulation
        full[b, idx] = g
        return (full,)

    return Tensor._result(x.data[b, idx], (x,), backward)


def put_rows(base, values, idx):
    """Copy of ``base`` (B, N, D) with rows ``idx`` (B, K) replaced by ``values`` (B, K, D)."""
    idx = np.asarray(idx)
    b = np.arange(base.shape[0])[:, None]
    if values.shape != idx.shape + base.shape[2:]:
        raise ShapeError(
            f"put_rows: values {values.shape} incompatible with idx {idx.shape}"
        )
    out = base.data.copy()
    out[b, idx] = values.data

    def backward(g):
        gb = g.copy()
        gb[b, idx] = 0
        return gb, g[b, idx]

    return Tensor._result(out, (base, values), backward)


# -- linear algebra ------------------------------------------------------


def matmul(a, b):
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}") from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if a.ndim > 2 and b.ndim == 2:
                # fold batch axes into one GEMM instead of a batched one
                a2 = a.data.reshape(-1, a.shape[-1])
                gb = a2.T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return Tensor._result(out, (a, b), backward)


def linear(x, weight, bias=None):
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def softmax(x, axis=-1):
    x = _wrap(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    out = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def backward(g):
        s = (g * out).sum(axis=axis, keepdims=True)
        gx = g - s
        gx *= out
        return (gx,)

    return Tensor._result(out, (x,), backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis with population statistics, then scale and shift."""
    x = _wrap(x)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: last dim {d} vs gamma {gamma.shape}, beta {beta.shape}"
        )
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = ggamma = gbeta = None
        if gamma.requires_grad:
            ggamma = (g * xhat).reshape(-1, d).sum(axis=0)
        if beta.requires_grad:
            gbeta = g.reshape(-1, d).sum(axis=0)
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (
                gh
                - gh.mean(axis=-1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            )
        return gx, ggamma, gbeta

    return Tensor._result(out, (x, gamma, beta), backward)


def dropout(x, p, rng, training=True):
    """Inverted dropout; identity when not training."""
    if not training or p == 0.0:
        return x
    dtype = x.data.dtype
    keep = rng.random(x.shape, dtype=dtype if dtype in (np.float32, np.float64) else np.float64)
    keep = (keep >= p).astype(dtype)
    keep *= 1.0 / (1.0 - p)
    return Tensor._result(x.data * keep, (x,), lambda g: (g * keep,))


def conv1d_same(x, weight, bias=None):
    """Stride-1 'same' 1-D convolution in channels-last layout.

    ``x`` is (M, L, C_in), ``weight`` is (K, C_in, C_out) with odd K; returns
    (M, L, C_out). Cross-correlation, as in most deep-learning libraries.
    """
    k, cin, cout = weight.shape
    if x.ndim != 3 or x.shape[2] != cin:
        raise ShapeError(f"conv1d input {x.shape} incompatible with weight {weight.shape}")
    if k % 2 == 0:
        raise ContractError("conv1d_same needs an odd kernel")
    m, length, _ = x.shape
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    cols = np.stack([xp[:, j : j + length, :] for j in range(k)], axis=2)
    cols = cols.reshape(m * length, k * cin)
    w2 = weight.data.reshape(k * cin, cout)
    out = (cols @ w2).reshape(m, length, cout)
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(m * length, cout)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (cols.T @ g2).reshape(k, cin, cout)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            gcols = (g2 @ w2.T).reshape(m, length, k, cin)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j : j + length, :] += gcols[:, :, j, :]
            gx = gxp[:, pad : pad + length, :]
        grads = (gx, gw) if bias is None else (gx, gw, gb)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, backward)

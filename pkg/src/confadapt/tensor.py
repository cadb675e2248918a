"""Float64 tensors with reverse-mode automatic differentiation.

The operation set is exactly what the searchable Conformer stack and its
sequence losses need, nothing more. Constraints that keep the gradient
rules small and testable:

- all values are 64-bit floats,
- broadcasting is limited to leading-dim expansion: a tensor of shape
  ``(d,)`` may combine elementwise with ``(..., d)``; anything else
  requires an explicit reshape,
- an op result joins the autodiff graph iff some operand has
  ``requires_grad`` and recording is enabled; ``backward`` consumes the
  recorded graph, so each recorded forward supports one backward pass.

Leaf tensors created with ``requires_grad=True`` hold a zero ``grad``
buffer from the start, so a leaf that never contributes to a loss reads
as all-zero gradient after backward.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (for evaluation)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item: tensor of shape {self.data.shape} is not scalar")
        return float(self.data.reshape(())[()])

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(scalar))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tensor_slice(self, key)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def swapaxes(self, ax1, ax2):
        axes = list(range(self.data.ndim))
        axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
        return transpose(self, tuple(axes))


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _from_op(data, parents, backward_fn):
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    rg = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=rg)
    if rg:
        out._parents = parents
        out._backward = backward_fn
    return out


def backward(loss):
    """Populate ``grad`` for every contributing tensor of a scalar loss.

    Consumes the recorded graph: the visited op nodes are released and a
    second backward through any of them raises ``RuntimeError``.
    """
    if not isinstance(loss, Tensor):
        raise TypeError(f"backward expects a Tensor, got {type(loss).__name__}")
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if loss._consumed:
        raise RuntimeError("backward: tape already consumed by a previous backward pass")
    if not loss.requires_grad:
        raise RuntimeError("backward: loss is not on a live tape (no recorded operations)")

    # iterative post-order topological sort
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        if node._backward is not None and node._consumed:
            raise RuntimeError("backward: tape already consumed by a previous backward pass")
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += 1.0

    for node in reversed(topo):
        fn = node._backward
        if fn is not None:
            fn(node.grad if node.grad is not None else np.zeros_like(node.data))
            node._backward = None
            node._parents = ()
        node._consumed = True


# ---------------------------------------------------------------------
# elementwise ops with leading-dim broadcasting
# ---------------------------------------------------------------------


def _check_elementwise(opname, a, b):
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        return
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return
    raise ShapeError(f"{opname}: shapes {sa} and {sb} do not conform")


def _reduce_to(g, shape):
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("add", a, b)
    data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a.grad += _reduce_to(g, a.data.shape)
        if b.requires_grad:
            b.grad += _reduce_to(g, b.data.shape)

    return _from_op(data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("sub", a, b)
    data = a.data - b.data

    def bw(g):
        if a.requires_grad:
            a.grad += _reduce_to(g, a.data.shape)
        if b.requires_grad:
            b.grad -= _reduce_to(g, b.data.shape)

    return _from_op(data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("mul", a, b)
    data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a.grad += _reduce_to(g * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _reduce_to(g * a.data, b.data.shape)

    return _from_op(data, (a, b), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    ok = False
    if b.data.ndim == 2 and a.data.ndim >= 1:
        ok = sa[-1] == sb[0]
    elif a.data.ndim == b.data.ndim and a.data.ndim >= 3:
        ok = sa[:-2] == sb[:-2] and sa[-1] == sb[-2]
    if not ok:
        raise ShapeError(f"matmul: shapes {sa} and {sb} do not conform")
    data = a.data @ b.data

    def bw(g):
        if b.data.ndim == 2:
            if a.requires_grad:
                a.grad += g @ b.data.T
            if b.requires_grad:
                if a.data.ndim == 1:
                    b.grad += np.outer(a.data, g)
                else:
                    b.grad += a.data.reshape(-1, sa[-1]).T @ g.reshape(-1, sb[-1])
        else:
            if a.requires_grad:
                a.grad += g @ np.swapaxes(b.data, -1, -2)
            if b.requires_grad:
                b.grad += np.swapaxes(a.data, -1, -2) @ g

    return _from_op(data, (a, b), bw)


# ---------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------

_BASIC_KEY_TYPES = (int, np.integer, slice, type(Ellipsis))


def _check_basic_key(key):
    parts = key if isinstance(key, tuple) else (key,)
    for p in parts:
        if not isinstance(p, _BASIC_KEY_TYPES):
            raise TypeError(f"slice: only basic indexing is supported, got {type(p).__name__}")


def tensor_slice(x, key):
    x = as_tensor(x)
    _check_basic_key(key)
    data = np.asarray(x.data[key])

    def bw(g):
        if x.requires_grad:
            x.grad[key] += g

    return _from_op(data, (x,), bw)


def reshape(x, shape):
    x = as_tensor(x)
    data = x.data.reshape(shape)
    old = x.data.shape

    def bw(g):
        if x.requires_grad:
            x.grad += g.reshape(old)

    return _from_op(data, (x,), bw)


def transpose(x, axes):
    x = as_tensor(x)
    if sorted(axes) != list(range(x.data.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.data.shape}")
    data = np.transpose(x.data, axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        if x.requires_grad:
            x.grad += np.transpose(g, inv)

    return _from_op(data, (x,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    ref = tensors[0].data.shape
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != len(ref) or any(i != axis and s[i] != ref[i] for i in range(len(ref))):
            raise ShapeError(f"concat: shapes {ref} and {s} do not conform along axis {axis}")
    data = np.concatenate([t.data for t in tensors], axis=axis)

    def bw(g):
        ofs = 0
        for t in tensors:
            n = t.data.shape[axis]
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(ofs, ofs + n)
            if t.requires_grad:
                t.grad += g[tuple(sl)]
            ofs += n

    return _from_op(data, tensors, bw)


def stack(tensors, axis=0):
    expanded = [reshape(t, t.data.shape[:axis] + (1,) + t.data.shape[axis:]) for t in map(as_tensor, tensors)]
    return concat(expanded, axis=axis)


def tensor_sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if x.requires_grad:
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            x.grad += np.broadcast_to(gg, x.data.shape)

    return _from_op(data, (x,), bw)


def tensor_mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    scale = x.data.size / max(data.size, 1)

    def bw(g):
        if x.requires_grad:
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            x.grad += np.broadcast_to(gg, x.data.shape) / scale

    return _from_op(data, (x,), bw)


# ---------------------------------------------------------------------
# nonlinearities and normalizations
# ---------------------------------------------------------------------


def sigmoid(x):
    x = as_tensor(x)
    data = 1.0 / (1.0 + np.exp(-x.data))

    def bw(g):
        if x.requires_grad:
            x.grad += g * data * (1.0 - data)

    return _from_op(data, (x,), bw)


def swish(x):
    x = as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    data = x.data * s

    def bw(g):
        if x.requires_grad:
            x.grad += g * (s + x.data * s * (1.0 - s))

    return _from_op(data, (x,), bw)


def glu(x, axis=-1):
    """Gated linear unit: split in half along ``axis``, first * sigmoid(second)."""
    x = as_tensor(x)
    n = x.data.shape[axis]
    if n % 2 != 0:
        raise ShapeError(f"glu: axis {axis} of shape {x.data.shape} has odd extent {n}")
    h = n // 2
    sl_a = [slice(None)] * x.data.ndim
    sl_b = [slice(None)] * x.data.ndim
    sl_a[axis] = slice(0, h)
    sl_b[axis] = slice(h, n)
    sl_a, sl_b = tuple(sl_a), tuple(sl_b)
    a = x.data[sl_a]
    s = 1.0 / (1.0 + np.exp(-x.data[sl_b]))
    data = a * s

    def bw(g):
        if x.requires_grad:
            x.grad[sl_a] += g * s
            x.grad[sl_b] += g * a * s * (1.0 - s)

    return _from_op(data, (x,), bw)


def softmax(x, axis=-1):
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        if x.requires_grad:
            x.grad += (g - (g * data).sum(axis=axis, keepdims=True)) * data

    return _from_op(data, (x,), bw)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    data = x.data - m - np.log(e.sum(axis=axis, keepdims=True))

    def bw(g):
        if x.requires_grad:
            x.grad += g - np.exp(data) * g.sum(axis=axis, keepdims=True)

    return _from_op(data, (x,), bw)


def logsumexp(x, axis=-1):
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    data = (m + np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True))).squeeze(axis)

    def bw(g):
        if x.requires_grad:
            ge = np.expand_dims(g, axis)
            x.grad += np.exp(x.data - np.expand_dims(data, axis)) * ge

    return _from_op(data, (x,), bw)


def layer_norm(x, gain, bias, eps=1e-6):
    """Normalize the last axis to zero mean, unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias shapes {gain.data.shape}/{bias.data.shape} "
            f"do not match feature dim {(d,)}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def bw(g):
        if gain.requires_grad:
            gain.grad += (g * xhat).reshape(-1, d).sum(axis=0)
        if bias.requires_grad:
            bias.grad += g.reshape(-1, d).sum(axis=0)
        if x.requires_grad:
            dxh = g * gain.data
            x.grad += (
                dxh
                - dxh.mean(axis=-1, keepdims=True)
                - xhat * (dxh * xhat).mean(axis=-1, keepdims=True)
            ) * inv

    return _from_op(data, (x, gain, bias), bw)


# ---------------------------------------------------------------------
# structured ops
# ---------------------------------------------------------------------


def depthwise_conv1d(x, kernel, bias=None):
    """Per-channel 1-D convolution with same padding, center aligned.

    ``x`` is (batch, time, channels), ``kernel`` is (width, channels) with
    odd width, so every width yields the input's sequence length.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.data.ndim != 3 or kernel.data.ndim != 2:
        raise ShapeError(
            f"depthwise_conv1d: expected input (B,T,C) and kernel (K,C), "
            f"got {x.data.shape} and {kernel.data.shape}"
        )
    k, c = kernel.data.shape
    if k % 2 == 0:
        raise ValueError(f"depthwise_conv1d: kernel width must be odd, got {k}")
    if x.data.shape[-1] != c:
        raise ShapeError(
            f"depthwise_conv1d: shapes {x.data.shape} and {kernel.data.shape} do not conform"
        )
    if bias is not None:
        bias = as_tensor(bias)
        if bias.data.shape != (c,):
            raise ShapeError(f"depthwise_conv1d: bias shape {bias.data.shape} != {(c,)}")
    b, t, _ = x.data.shape
    p = k // 2
    xp = np.zeros((b, t + 2 * p, c))
    xp[:, p:p + t, :] = x.data
    data = np.zeros((b, t, c))
    for j in range(k):
        data += xp[:, j:j + t, :] * kernel.data[j]
    if bias is not None:
        data += bias.data

    def bw(g):
        if kernel.requires_grad:
            for j in range(k):
                kernel.grad[j] += (xp[:, j:j + t, :] * g).sum(axis=(0, 1))
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for j in range(k):
                gp[:, j:j + t, :] += g * kernel.data[j]
            x.grad += gp[:, p:p + t, :]
        if bias is not None and bias.requires_grad:
            bias.grad += g.sum(axis=(0, 1))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _from_op(data, parents, bw)


def embedding(table, ids):
    """Row lookup: ``table`` is (vocab, dim), ``ids`` an integer array."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.data.shape}")
    if ids.dtype.kind not in "iu":
        raise TypeError(f"embedding: ids must be integers, got dtype {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ValueError(
            f"embedding: id out of range for table with {table.data.shape[0]} rows"
        )
    data = table.data[ids]

    def bw(g):
        if table.requires_grad:
            np.add.at(table.grad, ids, g)

    return _from_op(data, (table,), bw)


def masked_fill(x, mask, value):
    """Replace entries where ``mask`` (bool array, broadcastable) is True."""
    x = as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.data.shape)
    data = np.where(mask, float(value), x.data)

    def bw(g):
        if x.requires_grad:
            x.grad += np.where(mask, 0.0, g)

    return _from_op(data, (x,), bw)

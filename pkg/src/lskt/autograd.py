"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to one gradient per parent.  Node ids are
drawn from a global counter, so sorting reachable nodes by id recovers the
execution order; :func:`backward` walks that order in reverse and visits each
node exactly once.

Only leaves (tensors without parents, e.g. parameters) accumulate into
``.grad``.  Intermediate gradients live in a scratch dict for the duration of
one backward pass, which makes repeated backward calls on the same graph add
exactly the same amount to the leaves each time.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import ContractError, DimensionError, EmptyAttentionError, VocabularyError

_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad and not _parents else None
        self._parents = _parents
        self._backward = _backward
        self._id = next(_ids)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node._id in nodes:
            continue
        nodes[node._id] = node
        stack.extend(p for p in node._parents if p.requires_grad and p._id not in nodes)

    grads = {loss._id: np.ones_like(loss.data)}
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if not node._parents:
            node.grad = node.grad + g if node.grad is not None else g.copy()
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


# -- elementwise arithmetic ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def clip(x, lo, hi) -> Tensor:
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def dropout(x, rate: float, train: bool, rng=None) -> Tensor:
    """Inverted dropout.  Identity in eval mode or when ``rate == 0``."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# -- reductions and shape ------------------------------------------------------


def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), back)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose_last(x) -> Tensor:
    """Swap the two trailing axes."""
    x = as_tensor(x)
    return _make(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def getitem(x, index) -> Tensor:
    x = as_tensor(x)

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(x.data[index], (x,), back)


def take(table, idx) -> Tensor:
    """Row lookup ``table[idx]`` for an integer index array of any shape."""
    table = as_tensor(table)
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise VocabularyError(
            f"index out of range for table {table.name or ''} with {table.shape[0]} rows: "
            f"min={idx.min()}, max={idx.max()}"
        )

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(table.data[idx], (table,), back)


def concat_last(*tensors) -> Tensor:
    """Concatenate along the last axis; all leading dimensions must agree."""
    tensors = [as_tensor(t) for t in tensors]
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise DimensionError(
                f"concat_last leading dimensions differ: {tensors[0].shape} vs {t.shape}"
            )
    sizes = [t.shape[-1] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=-1))

    return _make(np.concatenate([t.data for t in tensors], axis=-1), tensors, back)


# -- linear algebra ------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules; ``a`` may be a vector."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim < 2:
        raise DimensionError(f"matmul right operand must be at least 2-D, got {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    vec = a.ndim == 1
    a2 = a.data[None, :] if vec else a.data
    out = a2 @ b.data

    def back(g):
        g2 = g[None, :] if vec else g
        if g2.ndim < out.ndim:
            g2 = g2.reshape(out.shape)
        ga = g2 @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        ga = ga[0] if vec else _unbroadcast(ga, a.shape)
        return ga, _unbroadcast(gb, b.shape)

    return _make(out[0] if vec else out, (a, b), back)


def masked_softmax(logits, mask) -> Tensor:
    """Softmax over the last axis restricted to positions where ``mask`` is true.

    Masked positions come out as exact zeros.  A row with no unmasked position
    raises :class:`EmptyAttentionError`.
    """
    logits = as_tensor(logits)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not mask.any(axis=-1).all():
        raise EmptyAttentionError("empty attention window: every position is masked")
    shifted = np.where(mask, logits.data, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (logits,), back)


def causal_conv1d(y, kernel, dilation: int = 1) -> Tensor:
    """Causal dilated convolution over the time axis.

    ``y`` is ``[..., L, Din]`` and ``kernel`` is ``[M, Din, Dout]``.  Output
    step ``t`` sums ``y[t - m*dilation] @ kernel[M-1-m]`` over ``m < M``, with
    steps before the sequence start read as zero.
    """
    y, kernel = as_tensor(y), as_tensor(kernel)
    if kernel.ndim != 3 or kernel.shape[0] < 1:
        raise DimensionError(f"kernel must be [M, Din, Dout] with M >= 1, got {kernel.shape}")
    if dilation < 1:
        raise DimensionError(f"dilation must be >= 1, got {dilation}")
    if y.shape[-1] != kernel.shape[1]:
        raise DimensionError(f"causal_conv1d channel mismatch: {y.shape} vs kernel {kernel.shape}")
    M = kernel.shape[0]
    L = y.shape[-2]
    out = np.zeros(y.shape[:-1] + (kernel.shape[2],))
    for m in range(M):
        shift = m * dilation
        if shift >= L:
            break
        out[..., shift:, :] += y.data[..., : L - shift, :] @ kernel.data[M - 1 - m]

    def back(g):
        gy = np.zeros_like(y.data)
        gk = np.zeros_like(kernel.data)
        for m in range(M):
            shift = m * dilation
            if shift >= L:
                break
            tap = kernel.data[M - 1 - m]
            gy[..., : L - shift, :] += g[..., shift:, :] @ tap.T
            src = y.data[..., : L - shift, :].reshape(-1, y.shape[-1])
            gk[M - 1 - m] = src.T @ g[..., shift:, :].reshape(-1, g.shape[-1])
        return gy, gk

    return _make(out, (y, kernel), back)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def back(g):
        gxhat = g * gain.data
        n = x.shape[-1]
        gx = inv / n * (
            n * gxhat
            - gxhat.sum(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return (
            gx,
            _unbroadcast(g * xhat, gain.shape),
            _unbroadcast(g, bias.shape),
        )

    return _make(out, (x, gain, bias), back)


def weight_norm(direction, magnitude, eps: float = 1e-12) -> Tensor:
    """``magnitude * direction / ||direction||`` with the norm over all elements."""
    v, g = as_tensor(direction), as_tensor(magnitude)
    norm = math.sqrt(float((v.data**2).sum()) + eps)
    unit = v.data / norm
    gval = float(g.data.reshape(-1)[0])

    def back(grad):
        dot = float((grad * unit).sum())
        gv = gval / norm * (grad - unit * dot)
        gg = np.full(g.shape, dot)
        return gv, gg

    return _make(gval * unit, (v, g), back)

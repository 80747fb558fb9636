"""Reverse-mode automatic differentiation over numpy float64 arrays.

A deliberately small closed set of primitives, just enough for a
decoder-only transformer: broadcast add/mul, batched matmul, embedding
lookup, row slicing, reshape/transpose, tanh-approximation GELU,
affine-free layer norm, softmax, and a fused per-sequence mean NLL loss.
Each primitive records a closure on the tape; Tensor.backward() runs an
iterative topological sort so deep graphs cannot hit the recursion limit.

Gradients accumulate into every node (no requires_grad flag); callers
read .grad off the leaves they care about and reset with .grad = None.
Everything is float64 for clean finite-difference checks and bit-stable
reruns.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "add",
    "mul",
    "matmul",
    "embed",
    "take_rows",
    "reshape",
    "transpose",
    "gelu",
    "layer_norm",
    "softmax",
    "mean_nll",
]


class Tensor:
    """A float64 array plus tape bookkeeping."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Backpropagate from a scalar: seeds grad 1 and walks the tape."""
        if self.data.ndim != 0:
            raise ValueError("backward() starts from a scalar loss")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # light sugar so model code stays readable
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to shape, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, (a, b))

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    out._backward = bwd
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, (a, b))

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    out._backward = bwd
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data @ b.data, (a, b))

    def bwd(g):
        _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    out._backward = bwd
    return out


def embed(table: Tensor, ids) -> Tensor:
    """Row lookup table[ids]; scattered gradient via np.add.at."""
    ids = np.asarray(ids)
    out = Tensor(table.data[ids], (table,))

    def bwd(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    out._backward = bwd
    return out


def take_rows(a: Tensor, n: int) -> Tensor:
    """First n rows of a 2-d table (position embeddings up to length n)."""
    out = Tensor(a.data[:n], (a,))

    def bwd(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[:n] += g

    out._backward = bwd
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,))

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    out._backward = bwd
    return out


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes), (a,))

    def bwd(g):
        _accum(a, g.transpose(inverse))

    out._backward = bwd
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t), (a,))

    def bwd(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        _accum(a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner))

    out._backward = bwd
    return out


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance. No affine
    parameters, so a zero input stays exactly zero."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv
    out = Tensor(y, (a,))

    def bwd(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        _accum(a, inv * (g - gm - y * gy))

    out._backward = bwd
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-shifted for stability."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, (a,))

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accum(a, y * (g - dot))

    out._backward = bwd
    return out


def mean_nll(logits: Tensor, targets, mask) -> Tensor:
    """Mean over sequences of the per-sequence mean negative log-likelihood.

    logits: (B, T, V); targets: (B, T) int ids; mask: (B, T) 1.0 at real
    positions, 0.0 at padding. Each sequence's NLL is averaged over its own
    unpadded length, then sequences are averaged equally, so padding and
    batch packing cannot change any string's contribution.
    """
    x = logits.data
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=np.float64)
    B = x.shape[0]
    m = x.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(x - m).sum(axis=-1))
    picked = np.take_along_axis(x, targets[..., None], axis=-1)[..., 0]
    nll = lse - picked
    seq_len = mask.sum(axis=-1)
    per_seq = (nll * mask).sum(axis=-1) / seq_len
    out = Tensor(per_seq.mean(), (logits,))

    def bwd(g):
        probs = np.exp(x - m)
        probs /= probs.sum(axis=-1, keepdims=True)
        gl = probs
        np.put_along_axis(
            gl, targets[..., None], np.take_along_axis(gl, targets[..., None], -1) - 1.0, -1
        )
        weight = float(g) * mask / (seq_len[:, None] * B)
        _accum(logits, gl * weight[..., None])

    out._backward = bwd
    return out

"""Minimal reverse-mode differentiation over numpy arrays.

Only the primitives the JND network needs are provided. Every op builds a
node holding its parents and a closure mapping the output gradient to one
gradient per parent; :func:`backward` walks the graph in reverse
topological order.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

_ids = itertools.count()


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class ContractError(RuntimeError):
    """An op was called outside its contract (e.g. non-scalar loss)."""


class Tensor:
    """N-dimensional array participating in a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Tensor", ...] = (), _backward: Callable | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        self.node_id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # operator sugar
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

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    return Tensor(data, _parents=tuple(parents), _backward=backward)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and grad.shape[lead + i] != 1)
    return grad.sum(axis=axes).reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)))


def elementwise(a, b, kind: str) -> Tensor:
    ops = {"add": add, "sub": sub, "mul": mul}
    if kind not in ops:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return ops[kind](a, b)


def tabs(x: Tensor) -> Tensor:
    s = np.sign(x.data)
    return _node(np.abs(x.data), (x,), lambda g: (g * s,))


def square(x: Tensor) -> Tensor:
    d = x.data
    return _node(d * d, (x,), lambda g: (2.0 * g * d,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis; ``-inf`` entries get probability 0."""
    out = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _node(out, (x,), back)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind in ("softmax", "softmax-lastdim"):
        return softmax(x)
    raise ValueError(f"unknown activation {kind!r}")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _node(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# --- reductions and shape ops ---------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def roll(x: Tensor, shift, axis) -> Tensor:
    neg = tuple(-s for s in shift) if isinstance(shift, (tuple, list)) else -shift
    return _node(np.roll(x.data, shift, axis=axis), (x,), lambda g: (np.roll(g, neg, axis=axis),))


def pad_spatial(x: Tensor, bottom: int, right: int, axes=(2, 3)) -> Tensor:
    """Zero-pad the end of two spatial axes."""
    if bottom == 0 and right == 0:
        return x
    widths = [(0, 0)] * x.ndim
    widths[axes[0]] = (0, bottom)
    widths[axes[1]] = (0, right)
    h, w = x.shape[axes[0]], x.shape[axes[1]]
    index = [slice(None)] * x.ndim
    index[axes[0]] = slice(0, h)
    index[axes[1]] = slice(0, w)
    index = tuple(index)
    return _node(np.pad(x.data, widths), (x,), lambda g: (g[index],))


def crop_spatial(x: Tensor, h: int, w: int, axes=(2, 3)) -> Tensor:
    if x.shape[axes[0]] == h and x.shape[axes[1]] == w:
        return x
    index = [slice(None)] * x.ndim
    index[axes[0]] = slice(0, h)
    index[axes[1]] = slice(0, w)
    index = tuple(index)
    shape = x.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _node(x.data[index], (x,), back)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, bounds, axis=axis)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return unbroadcast(ga, ad.shape), unbroadcast(gb, bd.shape)

    return _node(ad @ bd, (a, b), back)


# --- layers ----------------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Patches of an NCHW array as an ``(N, C * k * k, Ho * Wo)`` array."""
    n, c, hp, wp = xp.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(n, c * k * k, ho * wo)


def _correlate(xp: np.ndarray, wmat: np.ndarray, k: int, stride: int):
    n = xp.shape[0]
    ho = (xp.shape[2] - k) // stride + 1
    wo = (xp.shape[3] - k) // stride + 1
    cols = _im2col(xp, k, stride)
    return np.matmul(wmat, cols).reshape(n, -1, ho, wo), cols


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           pad: int = 0) -> Tensor:
    """2-D cross-correlation on NCHW input with zero padding."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input, got {x.shape}")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d needs stride >= 1 and pad >= 0")
    n, c, h, w = x.shape
    co, ci, k, k2 = weight.shape
    if ci != c or k != k2:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {ci}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d: kernel larger than padded input")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    wmat = weight.data.reshape(co, -1)
    out, cols = _correlate(xp, wmat, k, stride)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)
    xshape = xp.shape

    def back(g):
        g2 = g.reshape(n, co, ho * wo)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if stride == 1 and pad <= k - 1:
            # input gradient = full correlation of g with the flipped, transposed kernel
            edge = k - 1 - pad
            gp = np.pad(g, ((0, 0), (0, 0), (edge, edge), (edge, edge)))
            wflip = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
            gx, _ = _correlate(gp, wflip, k, 1)
            gx = gx[:, :, :h, :w]
        else:
            gcols = np.matmul(wmat.T, g2).reshape(n, c, k, k, ho, wo)
            gxp = np.zeros(xshape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
            gx = gxp[:, :, pad:pad + h, pad:pad + w]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, back)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis; ``weight`` is (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"fully_connected: input width {x.shape[-1]} != weight in {weight.shape[1]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    wd = weight.data
    out = x2 @ wd.T
    if bias is not None:
        out += bias.data

    def back(g):
        g2 = g.reshape(-1, wd.shape[0])
        grads = [(g2 @ wd).reshape(x.shape), g2.T @ x2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out.reshape(lead + (wd.shape[0],)), parents, back)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects rank-4 input, got {x.shape}")
    if x.shape[2] * x.shape[3] == 0:
        raise ShapeError("global_avg_pool: empty spatial extent")
    return mean(x, axis=(2, 3))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd, bd = gamma.data, beta.data

    def back(g):
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(d.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _node(xhat * gd + bd, (x, gamma, beta), back)


# --- graph traversal -------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.node_id not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params=None) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    ``params`` (a ParamStore or iterable of tensors) get a zero gradient when
    the loss does not depend on them.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        leaves = params.tensors() if hasattr(params, "tensors") else list(params)
        for p in leaves:
            p.grad = np.zeros_like(p.data)
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = np.array(g) if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                pg = np.broadcast_to(pg, parent.shape)
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg

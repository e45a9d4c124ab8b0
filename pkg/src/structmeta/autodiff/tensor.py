"""Reverse-mode automatic differentiation on numpy arrays.

Every backward rule is written in terms of ``Tensor`` operations, so when
``create_graph=True`` the backward pass records its own graph and can be
differentiated again. That is all the meta-objective needs: the gradient of a
loss evaluated at parameters that were themselves produced by a gradient step.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from ..errors import ShapeError

_state = threading.local()
_default_dtype = np.float64


def set_default_dtype(dtype) -> None:
    """Switch the dtype used for new tensors (float64 unless overridden)."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _default_dtype = dtype.type


def get_default_dtype():
    return _default_dtype


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def set_grad_enabled(flag: bool):
    prev = is_grad_enabled()
    _state.enabled = flag
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    return set_grad_enabled(False)


def _as_array(value) -> np.ndarray:
    if isinstance(value, np.ndarray) and value.dtype in (np.float32, np.float64):
        return value
    return np.asarray(value, dtype=_default_dtype)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self.op = op

    # -- construction helpers -------------------------------------------
    @staticmethod
    def _make(data, parents, backward, op):
        out = Tensor(data, op=op)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(ensure_tensor(other)))

    def __rsub__(self, other):
        return add(ensure_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        n = self.size if axis is None else self.shape[axis]
        return sum_(self, axis=axis) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def backward(self, seed=None) -> None:
        """Accumulate d(seed . self)/d(leaf) into ``leaf.grad`` for every leaf."""
        leaves = [t for t in _toposort(self) if not t._parents and t.requires_grad]
        grads = grad(self, leaves, seed=seed)
        for leaf, g in zip(leaves, grads):
            leaf.grad = g.data if leaf.grad is None else leaf.grad + g.data


def ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- broadcasting ------------------------------------------------------------

def sum_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1
    )
    data = x.data.sum(axis=axes, keepdims=True).reshape(shape)
    src = x.shape
    return Tensor._make(data, (x,), lambda g: (broadcast_to(g, src),), "sum_to")


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    data = np.broadcast_to(x.data, shape).copy()
    src = x.shape
    return Tensor._make(data, (x,), lambda g: (sum_to(g, src),), "broadcast_to")


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}", "add") from exc
    sa, sb = a.shape, b.shape
    return Tensor._make(data, (a, b), lambda g: (sum_to(g, sa), sum_to(g, sb)), "add")


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), lambda g: (neg(g),), "neg")


def mul(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}", "mul") from exc
    sa, sb = a.shape, b.shape
    return Tensor._make(
        data, (a, b), lambda g: (sum_to(mul(g, b), sa), sum_to(mul(g, a), sb)), "mul"
    )


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def back(g):
        return (mul(g, out),)

    out = Tensor._make(data, (a,), back, "exp")
    return out


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(a.data.dtype)
    return Tensor._make(a.data * mask, (a,), lambda g: (mul(g, Tensor(mask)),), "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def back(g):
        return (mul(g, mul(out, add(1.0, neg(out)))),)

    out = Tensor._make(data, (a,), back, "sigmoid")
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    x = a.data
    data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return Tensor._make(data, (a,), lambda g: (mul(g, sigmoid(a)),), "softplus")


# -- reductions and shape ops --------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    src = a.shape
    if axis is None:
        kshape = (1,) * a.ndim
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % a.ndim for ax in axes)
        kshape = tuple(1 if i in axes else s for i, s in enumerate(src))

    def back(g):
        return (broadcast_to(reshape(g, kshape), src),)

    return Tensor._make(data, (a,), back, "sum")


def logsumexp(a: Tensor, axis=-1, keepdims=False) -> Tensor:
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    data = (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True)))
    kshape = data.shape
    if not keepdims:
        data = np.squeeze(data, axis=axis)

    def back(g):
        out_k = reshape(out, kshape)
        soft = exp(add(a, neg(broadcast_to(out_k, a.shape))))
        return (mul(broadcast_to(reshape(g, kshape), a.shape), soft),)

    out = Tensor._make(data, (a,), back, "logsumexp")
    return out


def softmax(a: Tensor, axis=-1) -> Tensor:
    lse = logsumexp(a, axis=axis, keepdims=True)
    return exp(add(a, neg(lse)))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}", "reshape") from exc
    src = a.shape
    return Tensor._make(data, (a,), lambda g: (reshape(g, src),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._make(
        np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (transpose(g, inv),), "transpose"
    )


def matmul(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape} incompatible", "matmul")
    return Tensor._make(
        a.data @ b.data,
        (a, b),
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
        "matmul",
    )


def concat(tensors, axis=0) -> Tensor:
    tensors = [ensure_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        n = g.shape[axis]
        bounds = [0, *sizes.tolist(), n]
        outs = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            outs.append(index(g, tuple(sl)))
        return tuple(outs)

    return Tensor._make(data, tuple(tensors), back, "concat")


def index(a: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing; the adjoint pads zeros back into place."""
    data = a.data[key]
    src = a.shape

    def back(g):
        return (_pad_index(g, key, src),)

    return Tensor._make(np.ascontiguousarray(data), (a,), back, "index")


def _pad_index(g: Tensor, key, shape) -> Tensor:
    data = np.zeros(shape, dtype=g.data.dtype)
    data[key] = g.data
    return Tensor._make(data, (g,), lambda gg: (index(gg, key),), "pad_index")


# -- gather / scatter along the last axis ------------------------------------

def gather(a: Tensor, idx: np.ndarray, per_row: bool = False) -> Tensor:
    """Select entries of the last axis of ``a`` (1-D or 2-D).

    ``idx`` holds positions in ``[-1, width)``; ``-1`` produces an exact zero,
    which is how convolution padding is realised. For a 2-D ``a`` of shape
    (n, width), ``idx`` is shared by all rows unless ``per_row`` is set, in
    which case its first axis must be n.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if a.ndim == 1:
        n, width = 1, a.shape[0]
        flat = np.concatenate([a.data, np.zeros(1, a.data.dtype)])
        gidx = np.where(idx < 0, width, idx)
        out_shape = idx.shape
    elif a.ndim == 2:
        n, width = a.shape
        if per_row and idx.shape[:1] != (n,):
            raise ShapeError(f"per-row index leading dim {idx.shape[:1]} != {n}", "gather")
        flat = np.concatenate([a.data, np.zeros((n, 1), a.data.dtype)], axis=1).ravel()
        local = np.where(idx < 0, width, idx)
        if per_row:
            rows = np.arange(n).reshape((n,) + (1,) * (idx.ndim - 1))
            gidx = rows * (width + 1) + local
        else:
            rows = np.arange(n).reshape((n,) + (1,) * idx.ndim)
            gidx = rows * (width + 1) + local[None]
        out_shape = gidx.shape
    else:
        raise ShapeError(f"gather expects a 1-D or 2-D tensor, got {a.shape}", "gather")
    if idx.size and (idx.max() >= width or idx.min() < -1):
        raise ShapeError(f"gather index out of range for width {width}", "gather")
    data = flat[gidx].reshape(out_shape)
    return Tensor._make(data, (a,), lambda g: (_scatter(g, gidx, a.shape),), "gather")


def _scatter(g: Tensor, gidx: np.ndarray, shape) -> Tensor:
    """Adjoint of gather: sum ``g`` into a zero tensor of ``shape``."""
    width = shape[-1]
    n = 1 if len(shape) == 1 else shape[0]
    buf = np.bincount(gidx.ravel(), weights=g.data.ravel(), minlength=n * (width + 1))
    data = buf.reshape(n, width + 1)[:, :width].reshape(shape).astype(g.data.dtype, copy=False)

    def back(gg):
        flat = np.concatenate(
            [gg.data.reshape(n, width), np.zeros((n, 1), gg.data.dtype)], axis=1
        ).ravel()
        return (Tensor._make(flat[gidx].reshape(g.shape), (gg,), lambda h: (_scatter(h, gidx, shape),), "gather"),)

    return Tensor._make(data, (g,), back, "scatter")


# -- reverse sweep ------------------------------------------------------------

def _toposort(root: Tensor) -> list:
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
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, inputs, seed=None, create_graph: bool = False) -> list:
    """Gradients of ``seed . output`` with respect to each tensor in ``inputs``.

    Inputs the output does not depend on get zero gradients. With
    ``create_graph`` the returned tensors are themselves differentiable.
    """
    if seed is None:
        if output.size != 1:
            raise ShapeError("seed required for non-scalar output", output.op)
        seed_t = Tensor(np.ones_like(output.data))
    else:
        seed_t = ensure_tensor(seed)
        if seed_t.shape != output.shape:
            raise ShapeError(f"seed shape {seed_t.shape} != output shape {output.shape}", output.op)
    single = isinstance(inputs, Tensor)
    inputs = [inputs] if single else list(inputs)
    grads: dict[int, Tensor] = {}
    keep = {id(t) for t in inputs}
    if output.requires_grad:
        grads[id(output)] = seed_t
        with set_grad_enabled(create_graph):
            for node in reversed(_toposort(output)):
                g = grads.get(id(node)) if id(node) in keep else grads.pop(id(node), None)
                if g is None or node._backward is None:
                    continue
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    grads[key] = pg if key not in grads else add(grads[key], pg)
    out = []
    for t in inputs:
        g = grads.get(id(t))
        if g is None:
            g = Tensor(np.zeros_like(t.data))
        elif not create_graph:
            g = Tensor(g.data)
        out.append(g)
    return out[0] if single else out

"""Layer and loss primitives built on ``Tensor``.

Images are channels-last, ``(n, H, W, C)``. Convolution kernels are stored as
``(k, k, C_in, C_out)``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..errors import ShapeError
from .tensor import (
    Tensor,
    ensure_tensor,
    gather,
    logsumexp,
    matmul,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
)

__all__ = [
    "linear",
    "conv2d",
    "max_pool2d",
    "relu",
    "sigmoid",
    "softmax",
    "bce_with_logits",
    "cross_entropy",
    "conv_output_size",
]


def conv_output_size(n: int, kernel: int, stride: int = 1, padding: int = 0) -> int:
    return (n + 2 * padding - kernel) // stride + 1


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped (out, in)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear input {x.shape} does not match weight {weight.shape}", "linear")
    out = matmul(x, weight.T)
    return out if bias is None else out + bias


@lru_cache(maxsize=64)
def _patch_index(h: int, w: int, c: int, k: int, stride: int, padding: int) -> np.ndarray:
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {k} too large for {h}x{w} input with padding {padding}", "conv2d")
    r = (np.arange(ho) * stride - padding)[:, None, None, None, None] + np.arange(k)[None, None, :, None, None]
    q = (np.arange(wo) * stride - padding)[None, :, None, None, None] + np.arange(k)[None, None, None, :, None]
    ch = np.arange(c)[None, None, None, None, :]
    r, q, ch = np.broadcast_arrays(r, q, ch)
    idx = (r * w + q) * c + ch
    inside = (r >= 0) & (r < h) & (q >= 0) & (q < w)
    idx = np.where(inside, idx, -1)
    idx.setflags(write=False)
    return idx


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (n, H, W, C) input, got {x.shape}", "conv2d")
    n, h, w, c = x.shape
    k, k2, cin, cout = weight.shape
    if k != k2 or cin != c:
        raise ShapeError(f"conv2d kernel {weight.shape} incompatible with input {x.shape}", "conv2d")
    idx = _patch_index(h, w, c, k, stride, padding)
    ho, wo = idx.shape[:2]
    patches = gather(reshape(x, (n, h * w * c)), idx)
    cols = reshape(patches, (n * ho * wo, k * k * c))
    out = matmul(cols, reshape(weight, (k * k * c, cout)))
    if bias is not None:
        out = out + bias
    return reshape(out, (n, ho, wo, cout))


@lru_cache(maxsize=64)
def _pool_index(h: int, w: int, c: int, p: int) -> np.ndarray:
    ho, wo = h // p, w // p
    if ho < 1 or wo < 1:
        raise ShapeError(f"pool size {p} too large for {h}x{w}", "max_pool2d")
    r = (np.arange(ho) * p)[:, None, None, None, None] + np.arange(p)[None, None, :, None, None]
    q = (np.arange(wo) * p)[None, :, None, None, None] + np.arange(p)[None, None, None, :, None]
    ch = np.arange(c)[None, None, None, None, :]
    idx = (r * w + q) * c + ch
    idx = idx.reshape(ho, wo, p * p, c)
    idx.setflags(write=False)
    return idx


def max_pool2d(x: Tensor, size: int) -> Tensor:
    """Non-overlapping ``size`` x ``size`` max pooling (stride = size, floor)."""
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d expects (n, H, W, C) input, got {x.shape}", "max_pool2d")
    n, h, w, c = x.shape
    idx = _pool_index(h, w, c, size)
    flat = x.data.reshape(n, -1)
    windows = flat[:, idx]
    # first maximum wins on ties, fixed by argmax
    pick = np.take_along_axis(
        np.broadcast_to(idx, windows.shape), windows.argmax(axis=3)[:, :, :, None, :], axis=3
    )[:, :, :, 0, :]
    return gather(reshape(x, (n, h * w * c)), pick, per_row=True)


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy, ``mean(softplus(z) - y z)``."""
    y = ensure_tensor(labels)
    if logits.shape != y.shape:
        raise ShapeError(f"logits {logits.shape} vs labels {y.shape}", "bce")
    return (softplus(logits) - logits * y).mean()


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy for integer class labels."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels {labels.shape} vs logits {logits.shape}", "cross_entropy")
    onehot = np.zeros((n, c), dtype=logits.data.dtype)
    onehot[np.arange(n), labels] = 1.0
    return (logsumexp(logits, axis=1) - (logits * onehot).sum(axis=1)).mean()

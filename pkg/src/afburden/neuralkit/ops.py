"""Differentiable operations used by the window CNN and the GRU heads.

Sequence tensors are channels-last: ``(batch, length, channels)``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import Tensor, as_tensor


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._make(x.data * mask, (x,), "relu", lambda g: x._accumulate(g * mask))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return Tensor._make(out, (x,), "sigmoid", lambda g: x._accumulate(g * out * (1.0 - out)))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._make(out, (x,), "tanh", lambda g: x._accumulate(g * (1.0 - out * out)))


def log_softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def bw(g):
        x._accumulate(g - soft * g.sum(axis=-1, keepdims=True))
    return Tensor._make(out, (x,), "log_softmax", bw)


def softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        x._accumulate(out * (g - (g * out).sum(axis=-1, keepdims=True)))
    return Tensor._make(out, (x,), "softmax", bw)


def log(x: Tensor) -> Tensor:
    return Tensor._make(np.log(x.data), (x,), "log", lambda g: x._accumulate(g / x.data))


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight.T + bias`` with weight shaped (n_out, n_in)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense: input {x.shape} does not fit weight {weight.shape}")
    return x @ weight.T + bias


def conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Valid, stride-1 convolution (cross-correlation).

    x: (B, L, C_in); weight: (C_out, C_in, K); bias: (C_out,) -> (B, L-K+1, C_out)
    """
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} does not fit weight {weight.shape}")
    c_out, c_in, k = weight.shape
    b, length, _ = x.shape
    if length < k:
        raise ShapeError(f"conv1d: input length {length} shorter than kernel {k}")
    l_out = length - k + 1
    cols = sliding_window_view(x.data, k, axis=1).reshape(b * l_out, c_in * k)
    wmat = weight.data.reshape(c_out, c_in * k)
    out = (cols @ wmat.T).reshape(b, l_out, c_out) + bias.data

    def bw(g):
        g2 = g.reshape(b * l_out, c_out)
        if weight.requires_grad:
            weight._accumulate((g2.T @ cols).reshape(weight.shape))
        if bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(b, l_out, c_in, k)
            dx = np.zeros_like(x.data)
            for j in range(k):
                dx[:, j:j + l_out, :] += dcols[:, :, :, j]
            x._accumulate(dx)
    return Tensor._make(out, (x, weight, bias), "conv1d", bw)


def maxpool1d(x: Tensor, width: int = 2) -> Tensor:
    """Non-overlapping max pooling along the length axis (floor semantics)."""
    if x.ndim != 3:
        raise ShapeError(f"maxpool1d expects (B, L, C), got {x.shape}")
    b, length, c = x.shape
    l_out = length // width
    blocks = x.data[:, :l_out * width, :].reshape(b, l_out, width, c)
    arg = blocks.argmax(axis=2)[:, :, None, :]
    out = np.take_along_axis(blocks, arg, axis=2)[:, :, 0, :]

    def bw(g):
        d = np.zeros_like(blocks)
        np.put_along_axis(d, arg, g[:, :, None, :], axis=2)
        dx = np.zeros_like(x.data)
        dx[:, :l_out * width, :] = d.reshape(b, l_out * width, c)
        x._accumulate(dx)
    return Tensor._make(out, (x,), "maxpool1d", bw)


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])
    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis),
                        tuple(tensors), "concat", bw)


def class_weights_from_counts(labels, n_classes: int = 2) -> np.ndarray:
    """Inverse-frequency weights N / (n_classes * N_c); absent classes get 1."""
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    w = np.ones(n_classes)
    present = counts > 0
    w[present] = labels.size / (n_classes * counts[present])
    return w


def _weighted_pick(values: Tensor, labels, class_weights) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    if values.ndim != 2 or labels.shape != (values.shape[0],):
        raise ShapeError(f"loss: scores {values.shape} vs labels {labels.shape}")
    w = np.ones(values.shape[1]) if class_weights is None else np.asarray(class_weights, float)
    rows = np.arange(labels.size)
    return (values[rows, labels] * w[labels]).sum() * (-1.0 / labels.size)


def weighted_cross_entropy(probs: Tensor, labels, class_weights=None) -> Tensor:
    """Mean over the batch of ``-w[y] * ln p[y]`` given probabilities."""
    return _weighted_pick(log(probs), labels, class_weights)


def softmax_cross_entropy(logits: Tensor, labels, class_weights=None) -> Tensor:
    """Same loss as :func:`weighted_cross_entropy`, computed stably from logits."""
    return _weighted_pick(log_softmax(logits), labels, class_weights)

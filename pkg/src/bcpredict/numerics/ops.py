"""Differentiable kernels with explicit forward and backward passes.

Everything works in float64. The single-window functions (``conv_valid``,
``relu_maxpool``) wrap the batched kernels in ``kernels``; the model calls
the batched forms directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DimensionMismatch, EmptyMap, FilterTooWide, IndexOutOfRange
from . import kernels

PROB_FLOOR = 1e-12


@dataclass
class ConvFilter:
    weights: np.ndarray  # (width, d)
    bias: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[0] < 1:
            raise DimensionMismatch(f"filter weights must be (width>=1, d), got {self.weights.shape}")

    @property
    def width(self) -> int:
        return self.weights.shape[0]

    @property
    def height(self) -> int:
        return self.weights.shape[1]


def stack_filters(filters: Sequence[ConvFilter]) -> tuple[np.ndarray, np.ndarray]:
    widths = {f.width for f in filters}
    if len(widths) != 1:
        raise DimensionMismatch(f"filters in one bank must share a width, got {sorted(widths)}")
    w = np.stack([f.weights for f in filters])
    b = np.array([f.bias for f in filters], dtype=np.float64)
    return w, b


def check_conv_shapes(frames: int, d: int, w: np.ndarray) -> None:
    if w.shape[2] != d:
        raise DimensionMismatch(f"filter height {w.shape[2]} != feature dimension {d}")
    if w.shape[1] > frames:
        raise FilterTooWide(f"filter width {w.shape[1]} > {frames} frames")


def conv_valid(x, filters: Sequence[ConvFilter]) -> np.ndarray:
    """Valid convolution of a (frames, d) window with full-height filters.

    Returns an (frames - width + 1, n_filters) map; column j is filter j's
    response plus its bias.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch(f"input must be 2-D, got shape {x.shape}")
    if not filters:
        raise DimensionMismatch("at least one filter is required")
    for f in filters:
        if f.height != x.shape[1]:
            raise DimensionMismatch(f"filter height {f.height} != feature dimension {x.shape[1]}")
        if f.width > x.shape[0]:
            raise FilterTooWide(f"filter width {f.width} > {x.shape[0]} frames")
    w, b = stack_filters(filters)
    return kernels.conv_forward(x[None], w, b)[0]


def relu_maxpool(fmap, pool_rows: int) -> np.ndarray:
    """ReLU, then max over disjoint blocks of ``pool_rows`` rows per column.

    Trailing rows that do not fill a block are dropped. The pooled columns
    are concatenated column after column.
    """
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim == 1:
        fmap = fmap[:, None]
    if pool_rows < 1:
        raise ValueError("pool_rows must be >= 1")
    if fmap.shape[0] == 0:
        raise EmptyMap("feature map has zero rows")
    out, _ = kernels.relu_maxpool_forward(fmap[None], pool_rows)
    return out[0].T.reshape(-1)


def pooled_length(frames: int, width: int, pool_rows: int) -> int:
    return (frames - width + 1) // pool_rows


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs, gprobs):
    return probs * (gprobs - (probs * gprobs).sum(axis=-1, keepdims=True))


def cross_entropy(probs, gold: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= gold < probs.shape[-1]:
        raise IndexOutOfRange(f"gold index {gold} outside 0..{probs.shape[-1] - 1}")
    return float(-np.log(max(probs[gold], PROB_FLOOR)))


def cross_entropy_backward(probs, gold: int) -> np.ndarray:
    g = np.zeros_like(probs, dtype=np.float64)
    p = probs[gold]
    if p > PROB_FLOOR:
        g[gold] = -1.0 / p
    return g


def softmax_xent_batch(logits, gold):
    """Mean cross-entropy over a batch and its gradient w.r.t. the logits."""
    probs = softmax(logits)
    n = probs.shape[0]
    p = probs[np.arange(n), gold]
    loss = float(-np.log(np.maximum(p, PROB_FLOOR)).mean())
    g = probs.copy()
    g[np.arange(n), gold] -= 1.0
    # below the floor the loss is constant in the logits
    g[p <= PROB_FLOOR] = 0.0
    return loss, probs, g / n


def dropout(v, rate: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout; returns (output, mask). Eval mode is the identity."""
    v = np.asarray(v, dtype=np.float64)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return v, None
    if rng is None:
        raise ValueError("train-mode dropout needs a seeded generator")
    mask = (rng.random(v.shape) >= rate) / (1.0 - rate)
    return v * mask, mask


def affine(x, w, b):
    return x @ w + b


def affine_backward(x, w, gout):
    """Return (dx, dw, db) for ``affine``; ``x`` may be a vector or a batch."""
    x2 = np.atleast_2d(x)
    g2 = np.atleast_2d(gout)
    dw = x2.T @ g2
    db = g2.sum(axis=0)
    dx = gout @ w.T
    return dx, dw, db


def tanh_backward(y, gout):
    return gout * (1.0 - y * y)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, gout):
    return np.where(x > 0.0, gout, 0.0)

"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, and as the
reference the compiled path is tested against. Shapes follow the batched
convention used everywhere in the model:

    x     (batch, frames, d)
    w     (n_filters, width, d)
    map   (batch, out_len, n_filters)
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _columns(x, width):
    # (B, L, width*d) with row-major (t, i) ordering to match w.reshape(F, -1)
    win = sliding_window_view(x, width, axis=1)  # (B, L, d, width)
    B, L, d, k = win.shape
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B, L, k * d)


def conv_forward(x, w, b):
    F, k, d = w.shape
    cols = _columns(x, k)
    return cols @ w.reshape(F, k * d).T + b


def conv_backward(x, w, gout):
    """Return (dx, dw, db) for ``conv_forward``."""
    F, k, d = w.shape
    B, L, _ = gout.shape
    cols = _columns(x, k).reshape(B * L, k * d)
    g2 = gout.reshape(B * L, F)
    dw = (g2.T @ cols).reshape(F, k, d)
    db = g2.sum(axis=0)
    gcols = (gout @ w.reshape(F, k * d)).reshape(B, L, k, d)
    dx = np.zeros_like(x)
    for t in range(k):
        dx[:, t:t + L, :] += gcols[:, :, t, :]
    return dx, dw, db


def relu_maxpool_forward(m, pool):
    """ReLU then non-overlapping max over ``pool`` rows; remainder rows dropped.

    Returns (out, arg) where ``arg`` holds the source row of each max.
    """
    B, L, F = m.shape
    P = L // pool
    blocks = m[:, :P * pool, :].reshape(B, P, pool, F)
    idx = blocks.argmax(axis=2)
    best = np.take_along_axis(blocks, idx[:, :, None, :], axis=2)[:, :, 0, :]
    arg = idx + (np.arange(P) * pool)[None, :, None]
    return np.maximum(best, 0.0), arg


def relu_maxpool_backward(gout, out, arg, rows):
    B, P, F = gout.shape
    gm = np.zeros((B, rows, F))
    g = np.where(out > 0.0, gout, 0.0)
    bi = np.arange(B)[:, None, None]
    fi = np.arange(F)[None, None, :]
    # pools are disjoint, so no index repeats within one assignment
    gm[bi, arg, fi] = g
    return gm

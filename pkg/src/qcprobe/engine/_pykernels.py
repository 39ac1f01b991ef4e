"""Pure numpy implementations of the hot kernels.

Arrays are float64, laid out (batch, channels, length). This module is the
fallback used when the compiled ``_ckernels`` extension is unavailable, and the
reference the compiled version is benchmarked against.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "python"


def _pad(x, pad_left, k):
    b, c, n = x.shape
    xp = np.zeros((b, c, n + k - 1))
    xp[:, :, pad_left:pad_left + n] = x
    return xp


def _im2col(x, pad_left, k):
    b, c, n = x.shape
    xp = _pad(x, pad_left, k)
    # (b, c, n, k) view -> (b*n, c*k) rows, one per output position
    return sliding_window_view(xp, k, axis=2).transpose(0, 2, 1, 3).reshape(b * n, c * k)


def conv1d_forward(x, w, b, pad_left):
    """Same-length cross-correlation: y[b,o,l] = sum_{c,j} w[o,c,j] x[b,c,l+j-pad_left] + b[o]."""
    bs, c, n = x.shape
    o, _, k = w.shape
    if o == 1:
        # single output channel: tap loop beats a (b*n, c*k) @ (c*k, 1) gemv
        xp = _pad(x, pad_left, k)
        y = np.zeros((bs, 1, n))
        w0 = w[0]
        for j in range(k):
            y[:, 0, :] += np.einsum("c,bcl->bl", w0[:, j], xp[:, :, j:j + n])
        y += b[:, None]
        return y
    cols = _im2col(x, pad_left, k)
    y = cols @ w.reshape(o, c * k).T
    y += b
    return np.ascontiguousarray(y.reshape(bs, n, o).transpose(0, 2, 1))


def conv1d_backward(dy, x, w, pad_left, need_dx=True):
    bs, c, n = x.shape
    o, _, k = w.shape
    db = dy.sum(axis=(0, 2))
    dy2 = dy.transpose(1, 0, 2).reshape(o, bs * n)
    dw = (dy2 @ _im2col(x, pad_left, k)).reshape(o, c, k)
    dx = None
    if need_dx:
        # gradient wrt input is a same-conv of dy with the flipped, channel-swapped kernel
        wt = np.ascontiguousarray(w.transpose(1, 0, 2)[:, :, ::-1])
        dx = conv1d_forward(dy, wt, np.zeros(c), k - 1 - pad_left)
    return dx, dw, db


def maxpool2_forward(x):
    bs, c, n = x.shape
    pairs = x.reshape(bs, c, n // 2, 2)
    # first element wins ties
    second = pairs[..., 1] > pairs[..., 0]
    y = np.where(second, pairs[..., 1], pairs[..., 0])
    return y, second.astype(np.int8)


def maxpool2_backward(dy, idx):
    bs, c, half = dy.shape
    dx = np.zeros((bs, c, half, 2))
    sel = idx.astype(bool)
    dx[..., 0] = np.where(sel, 0.0, dy)
    dx[..., 1] = np.where(sel, dy, 0.0)
    return dx.reshape(bs, c, 2 * half)


def upsample2_forward(x):
    return np.repeat(x, 2, axis=2)


def upsample2_backward(dy):
    bs, c, n = dy.shape
    return dy.reshape(bs, c, n // 2, 2).sum(axis=3)

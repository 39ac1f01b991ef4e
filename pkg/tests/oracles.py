"""Slow, obviously-correct reference implementations used by the tests."""

import numpy as np


def naive_conv1d_same(x, w, b):
    """Triple loop over (batch, out channel, position); zero padding, left pad (k-1)//2."""
    bs, c, n = x.shape
    o, _, k = w.shape
    pad = (k - 1) // 2
    y = np.zeros((bs, o, n))
    for bi in range(bs):
        for oi in range(o):
            for l in range(n):
                acc = b[oi]
                for ci in range(c):
                    for j in range(k):
                        src = l + j - pad
                        if 0 <= src < n:
                            acc += w[oi, ci, j] * x[bi, ci, src]
                y[bi, oi, l] = acc
    return y


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` with respect to every entry of array ``x`` (in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


def naive_batchnorm(x, gain, shift, eps=1e-5):
    mean = x.mean(axis=(0, 2), keepdims=True)
    var = ((x - mean) ** 2).mean(axis=(0, 2), keepdims=True)
    return gain[None, :, None] * (x - mean) / np.sqrt(var + eps) + shift[None, :, None]


def adam_reference(params, grads_seq, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam with bias correction on a single array."""
    p = params.copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads_seq, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        p = p - lr * mh / (np.sqrt(vh) + eps)
    return p


def empirical_covariance(draws):
    d = np.asarray(draws)
    d = d - d.mean(axis=0)
    return d.T @ d / (len(d) - 1)

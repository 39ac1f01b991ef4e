"""Reverse-mode differentiation over a small, fixed operator set.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure that pushes the output gradient back into them. Signal tensors are
laid out ``(batch, channels, length)``; a single signal is a batch of one.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, values, requires_grad=False, _parents=(), op=""):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op

    @property
    def shape(self):
        return self.values.shape

    @property
    def channels(self):
        return self.values.shape[-2]

    @property
    def length(self):
        return self.values.shape[-1]

    def zero_grad(self):
        self.grad = np.zeros_like(self.values)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable tensor's ``grad``."""
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        if grad is None:
            if self.values.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.values)
        self.grad = self.grad + grad
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'})"


def _result(values, parents, op):
    return Tensor(values, any(p.requires_grad for p in parents), parents, op)


def conv1d_same(x, kernel, bias):
    """Stride-1 convolution with zero padding that keeps the length.

    For even kernels the left pad is ``(k - 1) // 2`` and the extra sample goes
    on the right.
    """
    if x.values.ndim != 3:
        raise ShapeError(f"conv input must be (batch, channels, length), got {x.shape}")
    o, c, k = kernel.shape
    if x.channels != c:
        raise ShapeError(f"conv expects {c} input channels, got {x.channels}")
    if bias.shape != (o,):
        raise ShapeError(f"bias shape {bias.shape} does not match {o} output channels")
    pad_left = (k - 1) // 2
    out = _result(kernels.conv1d_forward(x.values, kernel.values, bias.values, pad_left),
                  (x, kernel, bias), "conv1d")

    def backward():
        dx, dw, db = kernels.conv1d_backward(out.grad, x.values, kernel.values, pad_left,
                                             x.requires_grad)
        if dx is not None:
            x.grad += dx
        kernel.grad += dw
        bias.grad += db

    out._backward = backward
    return out


def relu(x):
    positive = x.values > 0
    out = _result(np.where(positive, x.values, 0.0), (x,), "relu")

    def backward():
        # subgradient 0 at exactly 0
        x.grad += np.where(positive, out.grad, 0.0)

    out._backward = backward
    return out


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5


def batchnorm_channels(x, gain, shift, state, mode="train"):
    """Normalize each channel over the (batch, length) axes.

    Train mode uses batch statistics and folds them into ``state`` with the
    configured momentum; eval mode uses the running statistics only.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    v = x.values
    g = gain.values[None, :, None]
    s = shift.values[None, :, None]
    if mode == "train":
        if v.shape[0] < 2:
            raise ValueError("batchnorm in train mode needs a batch of at least 2")
        mean = v.mean(axis=(0, 2))
        var = v.var(axis=(0, 2))
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (v - mean[None, :, None]) * inv_std[None, :, None]
        m = state.momentum
        state.running_mean = m * state.running_mean + (1 - m) * mean
        state.running_var = m * state.running_var + (1 - m) * var
    else:
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (v - state.running_mean[None, :, None]) * inv_std[None, :, None]
    out = _result(xhat * g + s, (x, gain, shift), "batchnorm")

    def backward():
        dy = out.grad
        gain.grad += (dy * xhat).sum(axis=(0, 2))
        shift.grad += dy.sum(axis=(0, 2))
        if not x.requires_grad:
            return
        dxhat = dy * g
        if mode == "eval":
            x.grad += dxhat * inv_std[None, :, None]
            return
        count = v.shape[0] * v.shape[2]
        sum_d = dxhat.sum(axis=(0, 2))[None, :, None]
        sum_dx = (dxhat * xhat).sum(axis=(0, 2))[None, :, None]
        x.grad += (inv_std[None, :, None] / count) * (count * dxhat - sum_d - xhat * sum_dx)

    out._backward = backward
    return out


def maxpool2(x):
    if x.length % 2:
        raise ShapeError(f"maxpool2 needs an even length, got {x.length}")
    y, idx = kernels.maxpool2_forward(x.values)
    out = _result(y, (x,), "maxpool2")

    def backward():
        x.grad += kernels.maxpool2_backward(out.grad, idx)

    out._backward = backward
    return out


def upsample2(x):
    out = _result(kernels.upsample2_forward(x.values), (x,), "upsample2")

    def backward():
        x.grad += kernels.upsample2_backward(out.grad)

    out._backward = backward
    return out


def dense(x, weight, bias):
    """Affine map of the flattened signal; output is ``(batch, out, 1)``.

    Flattening is channel-major: all positions of channel 0, then channel 1, ...
    """
    bs = x.shape[0]
    flat = x.values.reshape(bs, -1)
    n_out, n_in = weight.shape
    if flat.shape[1] != n_in:
        raise ShapeError(f"dense expects {n_in} inputs, got {flat.shape[1]} ({x.shape})")
    if bias.shape != (n_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match {n_out} outputs")
    out = _result((flat @ weight.values.T + bias.values)[:, :, None], (x, weight, bias), "dense")

    def backward():
        dy = out.grad[:, :, 0]
        weight.grad += dy.T @ flat
        bias.grad += dy.sum(axis=0)
        if x.requires_grad:
            x.grad += (dy @ weight.values).reshape(x.shape)

    out._backward = backward
    return out


def reshape(x, shape):
    out = _result(x.values.reshape(shape), (x,), "reshape")

    def backward():
        x.grad += out.grad.reshape(x.shape)

    out._backward = backward
    return out


def masked_mse(prediction, target, mask):
    """Mean squared error over punished samples only.

    ``mask`` is boolean, broadcast against the prediction along the trailing
    (length) axis; False marks unpunished samples, which get exactly zero
    gradient.
    """
    p = prediction.values
    t = target.values if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} and target {t.shape} differ")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[-1] != p.shape[-1]:
        raise ShapeError(f"mask length {mask.shape[-1]} != signal length {p.shape[-1]}")
    m = np.broadcast_to(mask, p.shape)
    count = m.sum()
    if count == 0:
        raise ValueError("mask has no punished samples")
    diff = np.where(m, p - t, 0.0)
    out = _result(np.array((diff * diff).sum() / count), (prediction,), "masked_mse")

    def backward():
        prediction.grad += (2.0 * out.grad / count) * diff

    out._backward = backward
    return out

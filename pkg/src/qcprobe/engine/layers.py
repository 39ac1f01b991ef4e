"""Layer objects wrapping the engine ops with their parameters."""

import numpy as np

from .tensor import (
    BatchNormState,
    Tensor,
    batchnorm_channels,
    conv1d_same,
    dense,
    maxpool2,
    relu,
    reshape,
    upsample2,
)


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    kind = "layer"

    def params(self):
        """Trainable tensors keyed by name."""
        return {}

    def buffers(self):
        """Non-trainable state arrays keyed by name."""
        return {}

    def set_buffer(self, name, value):
        raise KeyError(name)

    def init(self, rng):
        pass

    def forward(self, x, train=True):
        raise NotImplementedError

    def output_shape(self, channels, length):
        return channels, length


class Conv1d(Layer):
    kind = "conv"

    def __init__(self, in_channels, out_channels, kernel_size):
        if kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.kernel = Tensor(np.zeros((out_channels, in_channels, kernel_size)), True)
        self.bias = Tensor(np.zeros(out_channels), True)

    def params(self):
        return {"bias": self.bias, "kernel": self.kernel}

    def init(self, rng):
        k = self.kernel_size
        self.kernel.values = glorot_uniform(rng, self.kernel.shape,
                                            self.in_channels * k, self.out_channels * k)
        self.bias.values = np.zeros(self.out_channels)

    def forward(self, x, train=True):
        return conv1d_same(x, self.kernel, self.bias)

    def output_shape(self, channels, length):
        if channels != self.in_channels:
            raise ValueError(f"conv expects {self.in_channels} channels, got {channels}")
        return self.out_channels, length


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=True):
        return relu(x)


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, channels, momentum=0.9, eps=1e-5):
        self.channels = channels
        self.gain = Tensor(np.ones(channels), True)
        self.shift = Tensor(np.zeros(channels), True)
        self.state = BatchNormState(np.zeros(channels), np.ones(channels), momentum, eps)

    def params(self):
        return {"gain": self.gain, "shift": self.shift}

    def buffers(self):
        return {"running_mean": self.state.running_mean, "running_var": self.state.running_var}

    def set_buffer(self, name, value):
        if name not in ("running_mean", "running_var"):
            raise KeyError(name)
        setattr(self.state, name, np.array(value, dtype=np.float64))

    def forward(self, x, train=True):
        return batchnorm_channels(x, self.gain, self.shift, self.state,
                                  "train" if train else "eval")


class MaxPool2(Layer):
    kind = "maxpool"

    def forward(self, x, train=True):
        return maxpool2(x)

    def output_shape(self, channels, length):
        if length % 2:
            raise ValueError(f"cannot pool odd length {length}")
        return channels, length // 2


class Upsample2(Layer):
    kind = "upsample"

    def forward(self, x, train=True):
        return upsample2(x)

    def output_shape(self, channels, length):
        return channels, length * 2


class Dense(Layer):
    """Fully connected layer; the output is shaped ``(batch, out_units, 1)``."""

    kind = "dense"

    def __init__(self, in_units, out_units):
        self.in_units = in_units
        self.out_units = out_units
        self.weight = Tensor(np.zeros((out_units, in_units)), True)
        self.bias = Tensor(np.zeros(out_units), True)

    def params(self):
        return {"bias": self.bias, "weight": self.weight}

    def init(self, rng):
        self.weight.values = glorot_uniform(rng, self.weight.shape, self.in_units, self.out_units)
        self.bias.values = np.zeros(self.out_units)

    def forward(self, x, train=True):
        return dense(x, self.weight, self.bias)

    def output_shape(self, channels, length):
        if channels * length != self.in_units:
            raise ValueError(f"dense expects {self.in_units} inputs, got {channels}x{length}")
        return self.out_units, 1


class Unflatten(Layer):
    kind = "unflatten"

    def __init__(self, channels, length):
        self.channels = channels
        self.length = length

    def forward(self, x, train=True):
        return reshape(x, (x.shape[0], self.channels, self.length))

    def output_shape(self, channels, length):
        if channels * length != self.channels * self.length:
            raise ValueError("unflatten size mismatch")
        return self.channels, self.length


def run_layers(layers, x, train=True):
    for layer in layers:
        x = layer.forward(x, train)
    return x

"""Parameter bookkeeping and the Adam update."""

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, names):
        self.names = list(names)
        super().__init__(f"non-finite gradient in {', '.join(self.names)}")


class ParamStore:
    """Named parameters of a layer list in canonical order.

    Names are ``"{layer_index:03d}.{param}"``; within a layer parameters are
    sorted alphabetically, trainable tensors and batchnorm running statistics
    together. Adam moments are kept alongside, keyed by the same names.
    """

    def __init__(self, layers):
        self.layers = list(layers)
        self.trainable = {}
        self._buffer_owner = {}
        names = []
        for i, layer in enumerate(self.layers):
            entries = {**layer.params(), **{k: None for k in layer.buffers()}}
            for pname in sorted(entries):
                name = f"{i:03d}.{pname}"
                names.append(name)
                if entries[pname] is None:
                    self._buffer_owner[name] = (layer, pname)
                else:
                    self.trainable[name] = entries[pname]
        self.names = names
        self.m = {n: np.zeros_like(t.values) for n, t in self.trainable.items()}
        self.v = {n: np.zeros_like(t.values) for n, t in self.trainable.items()}
        self.t = 0

    def get(self, name):
        if name in self.trainable:
            return self.trainable[name].values
        layer, pname = self._buffer_owner[name]
        return layer.buffers()[pname]

    def set(self, name, value):
        value = np.array(value, dtype=np.float64)
        if name in self.trainable:
            if value.shape != self.trainable[name].shape:
                raise ValueError(f"{name}: shape {value.shape} != {self.trainable[name].shape}")
            self.trainable[name].values = value
        else:
            layer, pname = self._buffer_owner[name]
            layer.set_buffer(pname, value)

    def arrays(self):
        return [(n, self.get(n)) for n in self.names]

    def n_parameters(self):
        return sum(t.values.size for t in self.trainable.values())

    def zero_grad(self):
        for t in self.trainable.values():
            t.zero_grad()

    def grads(self):
        return {n: t.grad for n, t in self.trainable.items()}


def adam_step(store, grads, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, t=None):
    """One bias-corrected Adam update of every trainable entry in ``store``.

    ``t`` is the 1-based step index; by default the store's own counter is
    advanced and used.
    """
    bad = [n for n in store.trainable if not np.all(np.isfinite(grads[n]))]
    if bad:
        raise NonFiniteGradientError(bad)
    if t is None:
        store.t += 1
        t = store.t
    else:
        store.t = t
    b1, b2 = betas
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, tensor in store.trainable.items():
        g = grads[name]
        m = b1 * store.m[name] + (1.0 - b1) * g
        v = b2 * store.v[name] + (1.0 - b2) * (g * g)
        store.m[name] = m
        store.v[name] = v
        tensor.values = tensor.values - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store

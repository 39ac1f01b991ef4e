"""Convolutional autoencoder assembled from a declarative encoder spec.

The decoder mirrors the encoder: a dense layer back to the bottleneck shape,
then for each encoder unit in reverse an upsample (for a pool) or a conv with
the same kernel and swapped channel counts followed by the same activation /
normalization layers. The mirror of the first encoder conv is the output
layer: a conv down to one channel without activation.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import (
    BatchNorm,
    Conv1d,
    Dense,
    MaxPool2,
    NonFiniteGradientError,
    ParamStore,
    ReLU,
    Tensor,
    Unflatten,
    Upsample2,
    adam_step,
    masked_mse,
    run_layers,
)
from .signal_core import SignalRecord


class SpecError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    """Raised on a non-finite loss; the model has been restored to ``epoch``."""

    def __init__(self, epoch, message):
        self.epoch = epoch
        super().__init__(message)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel_size: int = 0
    out_channels: int = 0
    window: int = 2
    factor: int = 2
    out_units: int = 0

    def __str__(self):
        if self.kind == "conv":
            return f"conv {self.kernel_size}x1/{self.out_channels}"
        if self.kind == "maxpool":
            return f"pool {self.window}"
        if self.kind == "dense":
            return f"dense {self.out_units}"
        return self.kind


def conv(k, c):
    return LayerSpec("conv", kernel_size=k, out_channels=c)


def pool():
    return LayerSpec("maxpool", window=2)


def dense(n):
    return LayerSpec("dense", out_units=n)


RELU = LayerSpec("relu")
BN = LayerSpec("batchnorm")


@dataclass(frozen=True)
class NetworkSpec:
    input_length: int
    encoder_layers: tuple
    latent_dim: int
    name: str = "custom"

    def to_dict(self):
        return {"name": self.name, "input_length": self.input_length,
                "latent_dim": self.latent_dim,
                "encoder_layers": [asdict(layer) for layer in self.encoder_layers]}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["input_length"]), tuple(LayerSpec(**x) for x in d["encoder_layers"]),
                   int(d["latent_dim"]), d.get("name", "custom"))

    @property
    def n_pools(self):
        return sum(layer.kind == "maxpool" for layer in self.encoder_layers)


def _block(k, c, pooled=True):
    return [conv(k, c), RELU, BN] + ([pool()] if pooled else [])


def paper_spec(input_length=512, latent_dim=30):
    """Table-style encoder: four conv/ReLU/BN/pool blocks and a dense bottleneck."""
    layers = (_block(100, 30) + _block(100, 15) + _block(30, 15) + _block(20, 5)
              + [dense(latent_dim)])
    return NetworkSpec(input_length, tuple(layers), latent_dim, "paper")


def bad_spec(input_length=512, latent_dim=30):
    """Heavy compression preset (total pooling x16); identical to the paper stack."""
    spec = paper_spec(input_length, latent_dim)
    return NetworkSpec(spec.input_length, spec.encoder_layers, latent_dim, "bad")


def good_spec(input_length=512, latent_dim=30):
    """Light compression preset: only the first two pools are kept (total pooling x4)."""
    layers = (_block(100, 30) + _block(100, 15) + _block(30, 15, pooled=False)
              + _block(20, 5, pooled=False) + [dense(latent_dim)])
    return NetworkSpec(input_length, tuple(layers), latent_dim, "good")


PRESETS = {"paper": paper_spec, "good": good_spec, "bad": bad_spec}


def scaled_spec(spec, kernel_scale=1.0, channel_scale=1.0, input_length=None, name=None):
    """Copy of ``spec`` with kernels / channel counts scaled (rounded, at least 1)."""
    layers = []
    for layer in spec.encoder_layers:
        if layer.kind == "conv":
            layer = conv(max(1, int(round(layer.kernel_size * kernel_scale))),
                         max(1, int(round(layer.out_channels * channel_scale))))
        layers.append(layer)
    return NetworkSpec(input_length or spec.input_length, tuple(layers), spec.latent_dim,
                       name or spec.name)


def uniform_kernel_spec(spec, kernel_size, channel_scale=1.0, name=None):
    """Copy of ``spec`` with every conv kernel set to ``kernel_size`` and channels scaled."""
    layers = tuple(conv(kernel_size, max(1, int(round(layer.out_channels * channel_scale))))
                   if layer.kind == "conv" else layer for layer in spec.encoder_layers)
    return NetworkSpec(spec.input_length, layers, spec.latent_dim, name or f"{spec.name}-k{kernel_size}")


def shape_chain(spec):
    """[(layer description, (channels, length) after the layer)], validating the spec."""
    if spec.input_length < 1 or spec.latent_dim < 1:
        raise SpecError("input_length and latent_dim must be positive")
    if not spec.encoder_layers or spec.encoder_layers[-1].kind != "dense":
        raise SpecError("encoder must end with a dense layer")
    if spec.encoder_layers[-1].out_units != spec.latent_dim:
        raise SpecError(f"final dense has {spec.encoder_layers[-1].out_units} units, "
                        f"latent_dim is {spec.latent_dim}")
    chain = [("input", (1, spec.input_length))]
    c, n = 1, spec.input_length
    for layer in spec.encoder_layers:
        if layer.kind == "conv":
            if layer.kernel_size < 1 or layer.out_channels < 1:
                raise SpecError(f"bad conv {layer}")
            c = layer.out_channels
        elif layer.kind == "maxpool":
            if layer.window != 2:
                raise SpecError("only pooling window 2 is supported")
            if n % 2:
                raise SpecError(f"pooling does not divide length {n} (input_length "
                                f"{spec.input_length}, {spec.n_pools} pools)")
            n //= 2
        elif layer.kind == "dense":
            c, n = layer.out_units, 1
        elif layer.kind not in ("relu", "batchnorm"):
            raise SpecError(f"unknown layer kind {layer.kind!r}")
        chain.append((str(layer), (c, n)))
    if sum(layer.kind == "dense" for layer in spec.encoder_layers) != 1:
        raise SpecError("exactly one dense layer (the bottleneck) is supported")
    return chain


def _build_encoder(spec):
    layers, c, n = [], 1, spec.input_length
    units = []  # (kind, layer spec, in_channels) for mirroring
    for ls in spec.encoder_layers:
        if ls.kind == "conv":
            layers.append(Conv1d(c, ls.out_channels, ls.kernel_size))
            units.append(["conv", ls, c, []])
            c = ls.out_channels
        elif ls.kind in ("relu", "batchnorm"):
            layers.append(ReLU() if ls.kind == "relu" else BatchNorm(c))
            if units and units[-1][0] == "conv":
                units[-1][3].append(ls.kind)
        elif ls.kind == "maxpool":
            layers.append(MaxPool2())
            units.append(["pool", ls, c, []])
            n //= 2
        elif ls.kind == "dense":
            layers.append(Dense(c * n, ls.out_units))
    return layers, units, (c, n)


def _build_decoder(spec, units, bottleneck):
    c, n = bottleneck
    layers = [Dense(spec.latent_dim, c * n), Unflatten(c, n)]
    first_conv = next(i for i, u in enumerate(units) if u[0] == "conv")
    for i in range(len(units) - 1, -1, -1):
        kind, ls, in_c, acts = units[i]
        if kind == "pool":
            layers.append(Upsample2())
            continue
        if i == first_conv:
            layers.append(Conv1d(c, 1, ls.kernel_size))
            c = 1
            continue
        layers.append(Conv1d(c, in_c, ls.kernel_size))
        c = in_c
        for act in acts:
            layers.append(ReLU() if act == "relu" else BatchNorm(c))
    return layers


class Model:
    def __init__(self, spec, seed=0):
        shape_chain(spec)
        self.spec = spec
        self.seed = seed
        self.encoder, units, self.bottleneck = _build_encoder(spec)
        self.decoder = _build_decoder(spec, units, self.bottleneck)
        self.store = ParamStore(self.encoder + self.decoder)
        init_rng = np.random.default_rng(seed)
        for layer in self.encoder + self.decoder:
            layer.init(init_rng)
        self.rng = np.random.default_rng(seed)
        self.epoch = 0
        self.train_config = None

    @property
    def layers(self):
        return self.encoder + self.decoder

    def forward(self, x, train=True):
        if not isinstance(x, Tensor):
            x = Tensor(_as_batch(x, self.spec.input_length))
        return run_layers(self.decoder, run_layers(self.encoder, x, train), train)

    def encode_batch(self, x, chunk=64):
        x = _as_batch(x, self.spec.input_length)
        out = [run_layers(self.encoder, Tensor(x[i:i + chunk]), train=False).values[:, :, 0]
               for i in range(0, len(x), chunk)]
        return np.concatenate(out)

    def decode_batch(self, z, chunk=64):
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.spec.latent_dim:
            raise ValueError(f"latent vectors must have {self.spec.latent_dim} entries, got {z.shape[1]}")
        out = [run_layers(self.decoder, Tensor(z[i:i + chunk, :, None]), train=False).values[:, 0, :]
               for i in range(0, len(z), chunk)]
        return np.concatenate(out)

    def reconstruct_batch(self, x, chunk=64):
        x = _as_batch(x, self.spec.input_length)
        out = [self.forward(Tensor(x[i:i + chunk]), train=False).values[:, 0, :]
               for i in range(0, len(x), chunk)]
        return np.concatenate(out)

    def clone(self):
        return copy.deepcopy(self)


def _as_batch(x, length):
    if isinstance(x, SignalRecord):
        x = x.samples
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], SignalRecord):
        x = np.stack([r.samples for r in x])
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, None, :]
    elif x.ndim == 2:
        x = x[:, None, :]
    if x.shape[-1] != length:
        raise ValueError(f"signal length {x.shape[-1]} != model input length {length}")
    return x


def build_autoencoder(spec, seed=0):
    return Model(spec, seed)


def encode(model, signal):
    return model.encode_batch(signal)[0]


def decode(model, z, fs=128.0, id="decoded"):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.spec.latent_dim,):
        raise ValueError(f"latent vector must have {model.spec.latent_dim} entries, got {z.shape}")
    return SignalRecord(model.decode_batch(z)[0], fs, "synthetic", "decoded", id)


# ------------------------------------------------------------------ training

@dataclass
class RegionMask:
    flags: np.ndarray

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=bool)
        if self.flags.ndim != 1:
            raise ValueError("mask must be one-dimensional")
        if not self.flags.any():
            raise ValueError("mask must punish at least one sample")

    @classmethod
    def full(cls, length):
        return cls(np.ones(length, dtype=bool))

    @classmethod
    def block(cls, length, start, size):
        """Unpunished contiguous block ``[start, start + size)``."""
        if size < 0 or start < 0 or start + size > length:
            raise ValueError(f"block [{start}, {start + size}) outside length {length}")
        flags = np.ones(length, dtype=bool)
        flags[start:start + size] = False
        return cls(flags)

    @classmethod
    def centered(cls, length, size):
        if size >= length:
            raise ValueError(f"unpunished block of {size} would cover all {length} samples")
        return cls.block(length, (length - size) // 2, size)

    @property
    def unpunished(self):
        return ~self.flags

    def __len__(self):
        return self.flags.size

    def to_str(self):
        return "".join("1" if f else "0" for f in self.flags)

    @classmethod
    def from_str(cls, s):
        return cls(np.array([ch == "1" for ch in s]))


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    mask: RegionMask | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batchnorm)")
        self.betas = tuple(self.betas)

    def to_dict(self):
        return {"epochs": self.epochs, "batch_size": self.batch_size, "lr": self.lr,
                "seed": self.seed, "betas": list(self.betas), "eps": self.eps,
                "mask": None if self.mask is None else self.mask.to_str()}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        mask = d.pop("mask", None)
        return cls(mask=None if mask is None else RegionMask.from_str(mask), **d)


@dataclass
class TrainingHistory:
    punished_loss: list = field(default_factory=list)
    unpunished_error: list = field(default_factory=list)

    @property
    def epochs(self):
        return len(self.punished_loss)


def train(model, dataset, cfg=TrainConfig(), callback=None):
    """Adam on the masked MSE; returns per-epoch punished loss and unpunished error.

    The unpunished error is diagnostic only. With no unpunished samples it is
    defined as the punished loss, so the two streams coincide.
    """
    x = _as_batch(dataset, model.spec.input_length)
    n = len(x)
    if n < cfg.batch_size:
        raise ValueError(f"dataset of {n} records is smaller than batch_size {cfg.batch_size}")
    mask = cfg.mask if cfg.mask is not None else RegionMask.full(model.spec.input_length)
    if len(mask) != model.spec.input_length:
        raise ValueError("mask length does not match the model input length")
    flags = mask.flags
    hidden = ~flags
    rng = np.random.default_rng(cfg.seed)
    model.rng = rng
    history = TrainingHistory()
    store = model.store
    last_good = _snapshot(model)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        batches = np.array_split(perm, max(1, n // cfg.batch_size))
        loss_sum, hidden_sum, hidden_count = 0.0, 0.0, 0
        for idx in batches:
            xb = x[idx]
            store.zero_grad()
            out = model.forward(Tensor(xb), train=True)
            loss = masked_mse(out, xb, flags)
            lv = float(loss.values)
            if not np.isfinite(lv):
                _restore(model, last_good)
                raise TrainingDiverged(model.epoch, f"non-finite loss at epoch {model.epoch + 1}; "
                                                    f"restored epoch {model.epoch}")
            loss.backward()
            try:
                adam_step(store, store.grads(), cfg.lr, cfg.betas, cfg.eps)
            except NonFiniteGradientError as err:
                _restore(model, last_good)
                raise TrainingDiverged(model.epoch, str(err)) from err
            loss_sum += lv * len(idx)
            if hidden.any():
                d = out.values[:, 0, hidden] - xb[:, 0, hidden]
                hidden_sum += float((d * d).sum())
                hidden_count += d.size
        model.epoch += 1
        history.punished_loss.append(loss_sum / n)
        history.unpunished_error.append(hidden_sum / hidden_count if hidden_count
                                        else history.punished_loss[-1])
        last_good = _snapshot(model)
        if callback is not None:
            callback(model, history)
    return history


def _snapshot(model):
    return {"arrays": [(n, a.copy()) for n, a in model.store.arrays()],
            "m": {k: v.copy() for k, v in model.store.m.items()},
            "v": {k: v.copy() for k, v in model.store.v.items()},
            "t": model.store.t, "epoch": model.epoch}


def _restore(model, snap):
    for name, arr in snap["arrays"]:
        model.store.set(name, arr)
    model.store.m = snap["m"]
    model.store.v = snap["v"]
    model.store.t = snap["t"]
    model.epoch = snap["epoch"]


def split_dataset(records, test_fraction=0.2, seed=0):
    """Seeded split by record id: returns (train, test)."""
    ids = sorted({r.id for r in records})
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    test_ids = {ids[i] for i in order[:n_test]}
    return ([r for r in records if r.id not in test_ids], [r for r in records if r.id in test_ids])

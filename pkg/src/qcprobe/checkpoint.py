"""Binary model checkpoints.

Layout: ``b"QCAE"``, format version (u16 LE), metadata length (u32 LE), UTF-8
JSON metadata, then the payload of little-endian float64 values: every
ParamStore entry in canonical order, followed by the Adam first and second
moments of each trainable entry. The metadata carries a SHA-256 of the payload.
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .autoencoder import Model, NetworkSpec, TrainConfig

MAGIC = b"QCAE"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


def _payload_arrays(model):
    arrays = [a for _, a in model.store.arrays()]
    names = list(model.store.trainable)
    arrays += [model.store.m[n] for n in names] + [model.store.v[n] for n in names]
    return arrays


def save_checkpoint(model, path, config=None):
    arrays = _payload_arrays(model)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    meta = {
        "format_version": FORMAT_VERSION,
        "input_length": model.spec.input_length,
        "latent_dim": model.spec.latent_dim,
        "spec": model.spec.to_dict(),
        "train_config": None if config is None else config.to_dict(),
        "epoch": model.epoch,
        "init_seed": model.seed,
        "adam_t": model.store.t,
        "entries": [[n, list(a.shape)] for n, a in model.store.arrays()],
        "rng_state": model.rng.bit_generator.state,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HI", FORMAT_VERSION, len(blob)) + blob + payload)
    return path


def read_header(path):
    """Metadata dict of a checkpoint without loading the payload."""
    return _read(path)[0]


def _read(path):
    data = Path(path).read_bytes()
    if len(data) < 10 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, meta_len = struct.unpack("<HI", data[4:10])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if len(data) < 10 + meta_len:
        raise ChecksumError(f"{path}: truncated metadata")
    try:
        meta = json.loads(data[10:10 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ChecksumError(f"{path}: corrupt metadata ({err})") from None
    payload = data[10 + meta_len:]
    if len(payload) != meta["payload_bytes"] or \
            hashlib.sha256(payload).hexdigest() != meta["payload_sha256"]:
        raise ChecksumError(f"{path}: payload checksum mismatch (truncated or corrupt file)")
    return meta, payload


def load_checkpoint(path):
    meta, payload = _read(path)
    model = Model(NetworkSpec.from_dict(meta["spec"]), meta["init_seed"])
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape, dtype=np.int64))
        out = values[pos:pos + size].reshape(shape).copy()
        pos += size
        return out

    expected = [n for n, _ in model.store.arrays()]
    if expected != [n for n, _ in meta["entries"]]:
        raise CheckpointError(f"{path}: parameter layout does not match its spec")
    for name, shape in meta["entries"]:
        model.store.set(name, take(tuple(shape)))
    for store in (model.store.m, model.store.v):
        for name, tensor in model.store.trainable.items():
            store[name] = take(tensor.shape)
    model.store.t = meta["adam_t"]
    model.epoch = meta["epoch"]
    model.rng.bit_generator.state = meta["rng_state"]
    model.train_config = None if meta["train_config"] is None else TrainConfig.from_dict(meta["train_config"])
    return model

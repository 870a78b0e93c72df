"""Binary checkpoint format.

Layout (little-endian)::

    b"FSNC" | u32 version | u32 header_len | header JSON (utf-8)
    u32 tensor_count
    repeat: u32 name_len | name | u32 ndim | u32 * ndim shape | float64 * size

The header holds ``config``, ``config_hash`` and a free-form ``state`` dict
(training step, RNG state, ...). Adam moments are stored as extra tensors
prefixed ``adam.m/`` and ``adam.v/``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..numerics.optim import ParamStore

MAGIC = b"FSNC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_hash(config: dict) -> str:
    text = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _pack_tensor(name: str, value: np.ndarray) -> bytes:
    encoded = name.encode()
    arr = np.ascontiguousarray(value, dtype="<f8")
    head = struct.pack("<I", len(encoded)) + encoded + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def encode_checkpoint(config: dict, store: ParamStore, state: dict | None = None) -> bytes:
    header = {"config": config, "config_hash": config_hash(config), "state": state or {}}
    header["state"] = dict(header["state"], adam_step=store.step)
    blob = json.dumps(header, sort_keys=True).encode()
    tensors = [(n, v) for n, v in store.params.items()]
    tensors += [(f"adam.m/{n}", v) for n, v in store.m.items()]
    tensors += [(f"adam.v/{n}", v) for n, v in store.v.items()]
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    parts += [_pack_tensor(n, v) for n, v in tensors]
    return b"".join(parts)


def decode_checkpoint(raw: bytes) -> tuple[dict, ParamStore]:
    """Returns (header, store)."""
    if raw[:4] != MAGIC:
        raise CheckpointError("not an FSNC checkpoint")
    try:
        version, hlen = struct.unpack_from("<II", raw, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 12
        header = json.loads(raw[off : off + hlen].decode())
        off += hlen
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off : off + nlen].decode()
            off += nlen
            (ndim,) = struct.unpack_from("<I", raw, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if off + 8 * size > len(raw):
                raise CheckpointError("truncated tensor data")
            tensors[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).copy()
            off += 8 * size
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if off != len(raw):
        raise CheckpointError("trailing bytes after checkpoint payload")
    if header.get("config_hash") != config_hash(header.get("config", {})):
        raise CheckpointError("config hash does not match embedded config")

    store = ParamStore()
    for name, value in tensors.items():
        if not name.startswith("adam."):
            store.add(name, value)
    for name in store.params:
        store.m[name] = tensors.get(f"adam.m/{name}", np.zeros_like(store.params[name]))
        store.v[name] = tensors.get(f"adam.v/{name}", np.zeros_like(store.params[name]))
    store.step = int(header["state"].get("adam_step", 0))
    return header, store


def save_checkpoint(path, config: dict, store: ParamStore, state: dict | None = None) -> bytes:
    raw = encode_checkpoint(config, store, state)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(raw)
    tmp.replace(path)
    return raw


def load_checkpoint(path, expected_config: dict | None = None) -> tuple[dict, ParamStore]:
    header, store = decode_checkpoint(Path(path).read_bytes())
    if expected_config is not None and header["config_hash"] != config_hash(expected_config):
        raise CheckpointError("checkpoint was written for a different config")
    return header, store

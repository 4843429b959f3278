"""Versioned binary model checkpoints.

Layout (little-endian):

    magic "LENSCKPT" | version u32
    config JSON (length-prefixed utf-8): model config + table flags
    blob count u32, then per tensor, sorted by name:
        name string | ndim u32 | dims u32[] | float64 data
    optimizer flag u8; if 1, same blob layout for accumulator arrays

Round trips are bit-exact: loading a checkpoint and saving it again
produces the same bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CompatibilityError, DataError
from .model import ModelConfig, ModelParams, init_params, shape_manifest

MAGIC = b"LENSCKPT"
VERSION = 1

_U32 = struct.Struct("<I")


def _pack_str(out: bytearray, text: str) -> None:
    raw = text.encode("utf-8")
    out += _U32.pack(len(raw))
    out += raw


def _pack_blob(out: bytearray, name: str, array: np.ndarray) -> None:
    _pack_str(out, name)
    out += _U32.pack(array.ndim)
    for d in array.shape:
        out += _U32.pack(d)
    out += np.ascontiguousarray(array, dtype=np.float64).tobytes()


def save_checkpoint(params: ModelParams, path, optimizer_state: dict[str, np.ndarray] | None = None) -> None:
    """Write params (and optionally RMSprop accumulators) to ``path``."""
    envelope = {
        "model": asdict(params.config),
        "tables": {
            "item_trainable": params.item_table.trainable,
            "user_trainable": params.user_table.trainable,
            "item_cold_rows": params.item_table.n_cold_rows,
        },
    }
    out = bytearray()
    out += MAGIC
    out += _U32.pack(VERSION)
    _pack_str(out, json.dumps(envelope, sort_keys=True))
    named = params.named_tensors()
    out += _U32.pack(len(named))
    for name, tensor in named.items():
        _pack_blob(out, name, tensor.data)
    if optimizer_state is None:
        out += b"\x00"
    else:
        out += b"\x01"
        out += _U32.pack(len(optimizer_state))
        for name in sorted(optimizer_state):
            _pack_blob(out, name, optimizer_state[name])
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.pos = 0
        self.path = path
        self.context = "header"

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise DataError(f"{self.path}: truncated in {self.context} at byte {self.pos}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def text(self) -> str:
        n = self.u32()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataError(f"{self.path}: corrupt string in {self.context}: {exc}") from None

    def blob_pair(self):
        self.context = "blob name"
        name = self.text()
        self.context = f"blob '{name}'"
        ndim = self.u32()
        shape = tuple(self.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(self.take(8 * count), dtype="<f8").reshape(shape).copy()
        return name, data


def load_checkpoint(path):
    """Rebuild ``(params, optimizer_state)`` from a checkpoint file.

    The optimizer state is None when the file holds none. Corruption is
    fatal and names the blob where reading stopped.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    rd = _Reader(raw, str(path))
    if rd.take(len(MAGIC)) != MAGIC:
        raise DataError(f"{path}: not a model checkpoint (bad magic)")
    version = rd.u32()
    if version != VERSION:
        raise CompatibilityError(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    rd.context = "config"
    try:
        envelope = json.loads(rd.text())
        model_kwargs = dict(envelope["model"])
        tables = envelope["tables"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: corrupt config block: {exc}") from None
    config = ModelConfig(**model_kwargs)

    params = init_params(config, seed=0)
    params.item_table.trainable = bool(tables["item_trainable"])
    params.user_table.trainable = bool(tables["user_trainable"])
    params.item_table.n_cold_rows = int(tables.get("item_cold_rows", 0))

    expected = shape_manifest(config)
    named = params.named_tensors()
    seen = set()
    rd.context = "blob count"
    n_blobs = rd.u32()
    for _ in range(n_blobs):
        name, data = rd.blob_pair()
        if name not in expected:
            raise CompatibilityError(f"{path}: unknown tensor '{name}'")
        if data.shape != expected[name]:
            raise CompatibilityError(
                f"{path}: tensor '{name}' has shape {data.shape}, config implies {expected[name]}"
            )
        named[name].data[:] = data
        seen.add(name)
    missing = sorted(set(expected) - seen)
    if missing:
        raise DataError(f"{path}: checkpoint is missing tensor '{missing[0]}'")

    rd.context = "optimizer flag"
    flag = rd.take(1)
    optimizer_state = None
    if flag == b"\x01":
        rd.context = "optimizer count"
        optimizer_state = {}
        for _ in range(rd.u32()):
            name, data = rd.blob_pair()
            optimizer_state[name] = data
    elif flag != b"\x00":
        raise DataError(f"{path}: bad optimizer flag byte {flag!r}")
    if rd.pos != len(raw):
        raise DataError(f"{path}: {len(raw) - rd.pos} trailing bytes")
    return params, optimizer_state

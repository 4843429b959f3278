"""Binary container for an ingested dataset (vocabulary + funnels).

Single file, little-endian, fully deterministic: writing the same dataset
twice produces byte-identical output. Layout:

    magic "LENSDATA" | version u32
    vocab:   count u32, then per item (len u32, utf-8 bytes)
    funnels: count u32, then per funnel
        client_id string
        session count u32, then per session
            tran_id string, ISO timestamp string
            total_amount f64, total_qty f64
            item count u32, item indices u32[]

Strings are length-prefixed utf-8. Session features are recomputed on
load, not stored.
"""

from __future__ import annotations

import struct
from datetime import datetime
from pathlib import Path

from .data import Funnel, ItemVocab, Session, _features_for
from .errors import CompatibilityError, DataError

MAGIC = b"LENSDATA"
VERSION = 1

_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")


def _pack_str(out: bytearray, text: str) -> None:
    raw = text.encode("utf-8")
    out += _U32.pack(len(raw))
    out += raw


def save_dataset(path, vocab: ItemVocab, funnels: list[Funnel]) -> None:
    out = bytearray()
    out += MAGIC
    out += _U32.pack(VERSION)
    items = vocab.items
    out += _U32.pack(len(items))
    for item in items:
        _pack_str(out, item)
    out += _U32.pack(len(funnels))
    for funnel in funnels:
        _pack_str(out, funnel.client_id)
        out += _U32.pack(len(funnel.sessions))
        for sess in funnel.sessions:
            _pack_str(out, sess.tran_id)
            _pack_str(out, sess.timestamp.isoformat())
            out += _F64.pack(sess.total_amount)
            out += _F64.pack(sess.total_qty)
            out += _U32.pack(len(sess.items))
            for idx in sess.items:
                out += _U32.pack(idx)
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise DataError(f"{self.path}: truncated at byte {self.pos} (wanted {n} more)")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def f64(self) -> float:
        return _F64.unpack(self.take(8))[0]

    def text(self) -> str:
        n = self.u32()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataError(f"{self.path}: corrupt string at byte {self.pos}: {exc}") from None


def load_dataset(path):
    """Read a dataset container back into ``(vocab, funnels)``."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    rd = _Reader(blob, str(path))
    if rd.take(len(MAGIC)) != MAGIC:
        raise DataError(f"{path}: not a funnel dataset (bad magic)")
    version = rd.u32()
    if version != VERSION:
        raise CompatibilityError(f"{path}: dataset version {version}, this build reads {VERSION}")

    vocab = ItemVocab([rd.text() for _ in range(rd.u32())])

    funnels = []
    n_funnels = rd.u32()
    for user_index in range(n_funnels):
        client_id = rd.text()
        sessions = []
        for _ in range(rd.u32()):
            tran_id = rd.text()
            try:
                ts = datetime.fromisoformat(rd.text())
            except ValueError as exc:
                raise DataError(f"{path}: corrupt timestamp: {exc}") from None
            amount = rd.f64()
            qty = rd.f64()
            items = [rd.u32() for _ in range(rd.u32())]
            for idx in items:
                if idx >= len(vocab):
                    raise DataError(f"{path}: item index {idx} outside vocabulary of {len(vocab)}")
            sessions.append(Session(tran_id=tran_id, timestamp=ts, items=items,
                                    total_amount=amount, total_qty=qty))
        funnels.append(Funnel(
            client_id=client_id,
            user_index=user_index,
            sessions=sessions,
            session_features=_features_for(sessions),
        ))
    if rd.pos != len(blob):
        raise DataError(f"{path}: {len(blob) - rd.pos} trailing bytes after funnel data")
    return vocab, funnels

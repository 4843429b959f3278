"""Item and user latent-vector tables.

Tables are either cold-started (uniform random) or warm-started from a
plain-text vector file, and either fine-tuned with the rest of the model
or frozen. Frozen tables never receive gradient and survive training
bit-identical.

Warm-start file format: first line ``dim=<n>``, then one row per item:
the item string followed by n whitespace-separated reals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import ItemVocab
from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

COLD_RANGE = 0.05


@dataclass
class EmbeddingTable:
    kind: str  # "item" or "user"
    matrix: ad.Tensor  # (rows, dim)
    trainable: bool
    n_cold_rows: int = 0  # rows that fell back to random init on warm load

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def lookup(self, index: int) -> ad.Tensor:
        """Row ``index`` as a vector node.

        Trainable tables route the upstream gradient to that single row;
        frozen tables return a detached constant so no gradient flows.
        """
        if not 0 <= index < self.rows:
            raise IndexError(f"embedding index {index} outside table of {self.rows} rows")
        if self.trainable:
            return ad.take_row(self.matrix, index)
        return ad.Tensor(self.matrix.data[index].copy(), op="frozen-lookup")

    def parameters(self) -> list[ad.Tensor]:
        return [self.matrix] if self.trainable else []


def init_cold(kind: str, rows: int, dim: int, seed: int) -> EmbeddingTable:
    """Fresh trainable table, i.i.d. uniform on [-COLD_RANGE, COLD_RANGE]."""
    if rows < 1 or dim < 1:
        raise ConfigError(f"embedding table needs positive shape, got ({rows}, {dim})")
    rng = np.random.default_rng(seed)
    values = rng.uniform(-COLD_RANGE, COLD_RANGE, size=(rows, dim))
    return EmbeddingTable(kind=kind, matrix=ad.Tensor(values, op="embedding"), trainable=True)


def load_warm(path, vocab: ItemVocab, dim: int, fine_tune: bool, seed: int = 0) -> EmbeddingTable:
    """Item table built from a pretrained vector file.

    Every vocabulary item found in the file gets its stored vector; items
    absent from the file (and the reserved rows) get cold init, with the
    fallback count logged and kept on the table. A vector width different
    from the file's declared ``dim=`` header, or a header different from
    ``dim``, is fatal.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read embedding file {path}: {exc}") from None
    if not lines or not lines[0].startswith("dim="):
        raise DataError(f"{path}: first line must be 'dim=<n>'")
    try:
        file_dim = int(lines[0][4:])
    except ValueError:
        raise DataError(f"{path}: bad dimension header {lines[0]!r}") from None
    if file_dim != dim:
        raise ConfigError(f"{path} holds {file_dim}-dim vectors, model wants {dim}")

    vectors: dict[str, np.ndarray] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        item, values = parts[0], parts[1:]
        if len(values) != dim:
            raise DataError(f"{path}:{line_no}: item '{item}' has {len(values)} values, expected {dim}")
        try:
            vectors[item] = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"{path}:{line_no}: {exc}") from None

    table = init_cold("item", len(vocab), dim, seed)
    table.trainable = fine_tune
    n_warm = 0
    for item in vocab.items:
        vec = vectors.get(item)
        if vec is not None:
            table.matrix.data[vocab.index_of(item)] = vec
            n_warm += 1
    table.n_cold_rows = len(vocab) - n_warm
    if table.n_cold_rows:
        logger.info(
            "warm start covered %d of %d vocabulary rows; %d fell back to cold init",
            n_warm, len(vocab), table.n_cold_rows,
        )
    return table


def save_warm(path, vocab: ItemVocab, table: EmbeddingTable) -> None:
    """Write an item table in the warm-start text format (reserved rows skipped)."""
    lines = [f"dim={table.dim}"]
    for item in vocab.items:
        vec = table.matrix.data[vocab.index_of(item)]
        lines.append(item + " " + " ".join(repr(float(v)) for v in vec))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

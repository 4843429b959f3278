"""Transaction-log parsing and funnel assembly.

Raw delimited transaction rows become, in order: TransactionRecord lists,
an item vocabulary, per-customer funnels of sessions, and finally the
incremental training slices / last-basket validation split the models
consume.

A "session" is one receipt: all rows sharing (client_id, tran_id). A
"funnel" is one customer's time-ordered list of sessions.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0
FEATURE_DIM = 8

# Reserved vocabulary indices. EOB terminates autoregressive decoding.
PAD = 0
UNK = 1
EOB = 2
N_RESERVED = 3

REQUIRED_FIELDS = ("tran_id", "client_id", "prod_id", "timestamp", "prod_amount", "prod_qty")

DEFAULT_COLUMNS = {
    "tran_id": "TRAN_ID",
    "client_id": "CLIENT_ID",
    "prod_id": "PROD_ID",
    "timestamp": "TIMESTAMP",
    "prod_amount": "PROD_AMOUNT",
    "prod_qty": "PRODT_QTY",
}

MAX_MALFORMED_FRACTION = 0.10
_MALFORMED_LOG_LIMIT = 20


@dataclass
class SchemaConfig:
    """How to read a raw transaction file: delimiter, column names, timestamps."""

    delimiter: str = ","
    timestamp_format: str | None = None  # None -> ISO-8601
    columns: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_COLUMNS))


@dataclass
class TransactionRecord:
    tran_id: str
    client_id: str
    prod_id: str
    timestamp: datetime
    prod_amount: float
    prod_qty: float


@dataclass
class ParseStats:
    n_rows: int = 0
    n_records: int = 0
    n_malformed: int = 0


def _parse_timestamp(raw: str, fmt: str | None) -> datetime:
    if fmt is None:
        return datetime.fromisoformat(raw.strip())
    return datetime.strptime(raw.strip(), fmt)


def parse_transactions(source, schema: SchemaConfig | None = None):
    """Read a delimited transaction file into records.

    ``source`` is a path or an open text stream. The header must name every
    configured column (order free, extra columns ignored). Malformed rows
    are skipped, counted and logged with their line number; more than 10%
    malformed is a fatal data error.

    Returns ``(records, stats)`` with rows kept in input order.
    """
    schema = schema or SchemaConfig()
    if isinstance(source, (str, Path)):
        try:
            with open(source, "r", encoding="utf-8", newline="") as fh:
                return parse_transactions(fh, schema)
        except OSError as exc:
            raise DataError(f"cannot read transaction file {source}: {exc}") from exc
    if not isinstance(source, io.TextIOBase):
        raise ConfigError(f"unsupported transaction source {type(source).__name__}")

    reader = csv.reader(source, delimiter=schema.delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("transaction file is empty (no header row)") from None
    header = [h.strip() for h in header]
    positions = {}
    for fld in REQUIRED_FIELDS:
        col = schema.columns.get(fld)
        if col is None:
            raise ConfigError(f"schema is missing a column name for '{fld}'")
        try:
            positions[fld] = header.index(col)
        except ValueError:
            raise ConfigError(f"required column '{col}' (for '{fld}') not in header {header}") from None

    records: list[TransactionRecord] = []
    stats = ParseStats()
    width = max(positions.values()) + 1
    for line_no, row in enumerate(reader, start=2):
        stats.n_rows += 1
        try:
            if len(row) < width:
                raise ValueError(f"expected at least {width} fields, got {len(row)}")
            raw = {fld: row[pos].strip() for fld, pos in positions.items()}
            for fld in ("tran_id", "client_id", "prod_id"):
                if not raw[fld]:
                    raise ValueError(f"empty {fld}")
            qty = float(raw["prod_qty"])
            if not qty > 0:
                raise ValueError(f"prod_qty {qty} not positive")
            records.append(TransactionRecord(
                tran_id=raw["tran_id"],
                client_id=raw["client_id"],
                prod_id=raw["prod_id"],
                timestamp=_parse_timestamp(raw["timestamp"], schema.timestamp_format),
                prod_amount=float(raw["prod_amount"]),
                prod_qty=qty,
            ))
            stats.n_records += 1
        except (ValueError, IndexError) as exc:
            stats.n_malformed += 1
            if stats.n_malformed <= _MALFORMED_LOG_LIMIT:
                logger.warning("skipping malformed row at line %d: %s", line_no, exc)
            else:
                logger.debug("skipping malformed row at line %d: %s", line_no, exc)

    if stats.n_rows and stats.n_malformed / stats.n_rows > MAX_MALFORMED_FRACTION:
        raise DataError(
            f"{stats.n_malformed} of {stats.n_rows} rows malformed "
            f"(> {MAX_MALFORMED_FRACTION:.0%}); refusing to continue"
        )
    return records, stats


class ItemVocab:
    """Bijection between product strings and dense indices.

    Indices 0..2 are reserved (PAD, UNK, EOB) and never collide with items;
    real items start at index 3 in first-appearance order. Unknown items
    resolve to UNK at lookup time.
    """

    def __init__(self, items: list[str] | None = None):
        self._items: list[str] = []
        self._index: dict[str, int] = {}
        for item in items or []:
            self.add(item)

    def add(self, item: str) -> int:
        idx = self._index.get(item)
        if idx is None:
            idx = N_RESERVED + len(self._items)
            self._index[item] = idx
            self._items.append(item)
        return idx

    def index_of(self, item: str) -> int:
        return self._index.get(item, UNK)

    def item_at(self, index: int) -> str:
        if index < N_RESERVED:
            return ("<pad>", "<unk>", "<eob>")[index]
        return self._items[index - N_RESERVED]

    def __contains__(self, item: str) -> bool:
        return item in self._index

    def __len__(self) -> int:
        """Total table size including the reserved rows."""
        return N_RESERVED + len(self._items)

    @property
    def items(self) -> list[str]:
        return list(self._items)

    def __eq__(self, other) -> bool:
        return isinstance(other, ItemVocab) and self._items == other._items


def build_vocab(records: list[TransactionRecord]) -> ItemVocab:
    """Index every distinct product, in first-appearance order."""
    if not records:
        raise DataError("cannot build a vocabulary from zero records")
    vocab = ItemVocab()
    for rec in records:
        vocab.add(rec.prod_id)
    return vocab


@dataclass
class Session:
    """One basket: deduplicated item indices in ascending order."""

    tran_id: str
    timestamp: datetime
    items: list[int]
    total_amount: float
    total_qty: float


@dataclass
class Funnel:
    """One customer's complete, time-ordered purchase history."""

    client_id: str
    user_index: int
    sessions: list[Session]
    session_features: np.ndarray  # (n_sessions, FEATURE_DIM)

    def __len__(self) -> int:
        return len(self.sessions)

    def trimmed(self, n_sessions: int) -> "Funnel":
        """A copy restricted to the first ``n_sessions`` sessions."""
        return replace(
            self,
            sessions=self.sessions[:n_sessions],
            session_features=self.session_features[:n_sessions],
        )


def compute_session_features(session: Session, previous: Session | None) -> np.ndarray:
    """Fixed 8-dim feature vector for one session.

    [days since previous session (0 for the first), log1p(total amount),
    log1p(total quantity), log1p(basket size), then cyclic day-of-week and
    day-of-month encodings].
    """
    if previous is None:
        dt_days = 0.0
    else:
        dt_days = (session.timestamp - previous.timestamp).total_seconds() / SECONDS_PER_DAY
    dow = session.timestamp.weekday()  # Monday == 0
    dom = session.timestamp.day  # 1..31
    dow_angle = 2.0 * math.pi * dow / 7.0
    dom_angle = 2.0 * math.pi * (dom - 1) / 31.0
    return np.array([
        dt_days,
        math.log1p(max(session.total_amount, 0.0)),
        math.log1p(session.total_qty),
        math.log1p(len(session.items)),
        math.sin(dow_angle),
        math.cos(dow_angle),
        math.sin(dom_angle),
        math.cos(dom_angle),
    ], dtype=np.float64)


def _features_for(sessions: list[Session]) -> np.ndarray:
    rows = np.zeros((len(sessions), FEATURE_DIM), dtype=np.float64)
    prev = None
    for i, sess in enumerate(sessions):
        rows[i] = compute_session_features(sess, prev)
        prev = sess
    return rows


def assemble_funnels(records: list[TransactionRecord], vocab: ItemVocab) -> list[Funnel]:
    """Group records into one funnel per client, one session per receipt.

    Duplicate (client, tran, product) rows collapse into a single item with
    quantities and amounts summed. Items are stored as ascending vocabulary
    indices; sessions sort by timestamp with ties broken by tran_id.
    Funnels come back in first-appearance order of the client.
    """
    by_client: dict[str, dict[str, list[TransactionRecord]]] = {}
    for rec in records:
        by_client.setdefault(rec.client_id, {}).setdefault(rec.tran_id, []).append(rec)

    funnels = []
    for user_index, (client_id, trans) in enumerate(by_client.items()):
        sessions = []
        for tran_id, rows in trans.items():
            indices = sorted({vocab.index_of(r.prod_id) for r in rows})
            sessions.append(Session(
                tran_id=tran_id,
                timestamp=min(r.timestamp for r in rows),
                items=indices,
                total_amount=sum(r.prod_amount for r in rows),
                total_qty=sum(r.prod_qty for r in rows),
            ))
        sessions.sort(key=lambda s: (s.timestamp, s.tran_id))
        funnels.append(Funnel(
            client_id=client_id,
            user_index=user_index,
            sessions=sessions,
            session_features=_features_for(sessions),
        ))
    return funnels


@dataclass
class TrainingSlice:
    """A funnel prefix plus its next-session target.

    ``prefix_len`` sessions of ``funnel`` are the input; the session at
    that position is the prediction target. ``delta_days`` is the gap
    between the last prefix session and the target, the regression label.
    """

    funnel: Funnel
    prefix_len: int
    target: Session
    delta_days: float


@dataclass
class ValidationPair:
    """A held-out last basket: the trimmed funnel and what actually came next."""

    funnel: Funnel
    target: Session
    delta_days: float


def make_training_slices(funnel: Funnel, min_sessions: int = 3) -> list[TrainingSlice]:
    """Incremental prefix slices of one funnel.

    One slice per prefix length T in [min_sessions-1, len-1] (never below
    1), each targeting the session right after the prefix. Funnels shorter
    than ``min_sessions`` yield no slices.
    """
    n = len(funnel.sessions)
    if n < min_sessions:
        return []
    slices = []
    for t in range(max(1, min_sessions - 1), n):
        gap = funnel.sessions[t].timestamp - funnel.sessions[t - 1].timestamp
        slices.append(TrainingSlice(
            funnel=funnel,
            prefix_len=t,
            target=funnel.sessions[t],
            delta_days=gap.total_seconds() / SECONDS_PER_DAY,
        ))
    return slices


def split_train_validation(
    funnels: list[Funnel],
    holdout_fraction: float = 0.30,
    seed: int = 0,
    min_sessions: int = 3,
):
    """Hold out the last basket of a random fraction of eligible customers.

    Only funnels with at least ``min_sessions`` sessions participate. For
    each selected customer the chronologically last session becomes a
    validation target and is removed from their training funnel. The number
    held out is round-half-up(fraction * eligible) and the selection is
    fully determined by ``seed``.

    Returns ``(train_funnels, validation_pairs)``; training funnels keep
    the input order.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise ConfigError(f"holdout fraction must be in (0, 1), got {holdout_fraction}")
    eligible = [i for i, f in enumerate(funnels) if len(f.sessions) >= min_sessions]
    if len(eligible) < 2:
        raise DataError(f"need at least 2 funnels with >= {min_sessions} sessions, found {len(eligible)}")
    n_hold = int(math.floor(holdout_fraction * len(eligible) + 0.5))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(eligible), size=n_hold, replace=False)
    held = {eligible[int(i)] for i in chosen}

    train_funnels: list[Funnel] = []
    pairs: list[ValidationPair] = []
    for i, funnel in enumerate(funnels):
        if i not in held:
            train_funnels.append(funnel)
            continue
        trimmed = funnel.trimmed(len(funnel.sessions) - 1)
        target = funnel.sessions[-1]
        if trimmed.sessions:
            gap = target.timestamp - trimmed.sessions[-1].timestamp
            delta = gap.total_seconds() / SECONDS_PER_DAY
        else:
            delta = 0.0
        train_funnels.append(trimmed)
        pairs.append(ValidationPair(funnel=trimmed, target=target, delta_days=delta))
    return train_funnels, pairs

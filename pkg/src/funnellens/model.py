"""Hierarchical next-basket model.

Three recurrent stages share one set of parameters:

  * basket encoder: bidirectional LSTM over a session's item embeddings,
    final states concatenated into one session vector;
  * funnel encoder: stacked (bi)LSTM over session vectors, each step
    augmented with 8 session features and the customer embedding; its final
    top-layer hidden state is the funnel state;
  * two alternative heads on the funnel state: an autoregressive LSTM
    decoder that emits the next basket item by item until an end symbol,
    and a small dense regressor for days-until-next-session.

Two named presets (lens1000, lens2000) pin the layer/cell sizes; everything
else is reachable through ModelConfig.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import EOB, FEATURE_DIM, PAD, UNK, Funnel, Session
from .errors import ConfigError, DataError
from .embeddings import EmbeddingTable

INIT_RANGE = 0.05
FORGET_BIAS = 1.0


@dataclass
class ModelConfig:
    vocab_size: int
    user_count: int
    sce_layers: int = 1
    sce_cells: int = 64
    sce_bidirectional: bool = True
    fbe_layers: int = 1
    fbe_cells: int = 256
    fbe_bidirectional: bool = True
    nsd_layers: int = 1
    nsd_cell_sizes: tuple[int, ...] = (512,)
    item_dim: int | None = None  # None -> sce_cells
    user_dim: int = 32
    decode_max_items: int = 10
    tte_hidden: int = 64

    def __post_init__(self):
        if self.item_dim is None:
            self.item_dim = self.sce_cells
        self.nsd_cell_sizes = tuple(self.nsd_cell_sizes)
        if self.vocab_size < 4:
            raise ConfigError(f"vocab_size {self.vocab_size} leaves no real items after the 3 reserved rows")
        positive = {
            "user_count": self.user_count, "sce_layers": self.sce_layers,
            "sce_cells": self.sce_cells, "fbe_layers": self.fbe_layers,
            "fbe_cells": self.fbe_cells, "nsd_layers": self.nsd_layers,
            "item_dim": self.item_dim, "user_dim": self.user_dim,
            "decode_max_items": self.decode_max_items, "tte_hidden": self.tte_hidden,
        }
        for name, value in positive.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if len(self.nsd_cell_sizes) != self.nsd_layers:
            raise ConfigError(
                f"nsd_cell_sizes has {len(self.nsd_cell_sizes)} entries for {self.nsd_layers} layers"
            )
        if any(h < 1 for h in self.nsd_cell_sizes):
            raise ConfigError(f"decoder cell sizes must be >= 1, got {self.nsd_cell_sizes}")

    @property
    def session_vector_dim(self) -> int:
        return self.sce_cells * (2 if self.sce_bidirectional else 1)

    @property
    def fbe_input_dim(self) -> int:
        return self.session_vector_dim + FEATURE_DIM + self.user_dim

    @property
    def funnel_state_dim(self) -> int:
        return self.fbe_cells * (2 if self.fbe_bidirectional else 1)

    @classmethod
    def lens1000(cls, vocab_size: int, user_count: int, **overrides) -> "ModelConfig":
        base = dict(
            sce_layers=1, sce_cells=64, sce_bidirectional=True,
            fbe_layers=1, fbe_cells=256, fbe_bidirectional=True,
            nsd_layers=1, nsd_cell_sizes=(512,),
        )
        base.update(overrides)
        return cls(vocab_size=vocab_size, user_count=user_count, **base)

    @classmethod
    def lens2000(cls, vocab_size: int, user_count: int, **overrides) -> "ModelConfig":
        base = dict(
            sce_layers=1, sce_cells=256, sce_bidirectional=True,
            fbe_layers=2, fbe_cells=256, fbe_bidirectional=True,
            nsd_layers=2, nsd_cell_sizes=(512, 128),
        )
        base.update(overrides)
        return cls(vocab_size=vocab_size, user_count=user_count, **base)


PRESETS = {"lens1000": ModelConfig.lens1000, "lens2000": ModelConfig.lens2000}


@dataclass
class LSTMWeights:
    """Fused-gate cell weights: rows ordered input, forget, candidate, output."""

    W: ad.Tensor  # (4H, in_dim + H)
    b: ad.Tensor  # (4H,)

    @property
    def hidden(self) -> int:
        return self.W.shape[0] // 4


@dataclass
class Dense:
    W: ad.Tensor  # (out, in)
    b: ad.Tensor  # (out,)


@dataclass
class ModelParams:
    config: ModelConfig
    item_table: EmbeddingTable
    user_table: EmbeddingTable
    sce: list  # [layer][direction] -> LSTMWeights
    fbe: list  # [layer][direction] -> LSTMWeights
    nsd: list  # [layer] -> LSTMWeights
    nsd_init: list  # [layer] -> Dense, funnel state -> initial hidden
    out: Dense  # top decoder hidden -> vocab logits
    tte_hidden_layer: Dense
    tte_out_layer: Dense

    def named_tensors(self) -> dict[str, ad.Tensor]:
        """Every weight tensor under a stable name, embedding tables included."""
        named = {
            "embeddings.item": self.item_table.matrix,
            "embeddings.user": self.user_table.matrix,
            "out.W": self.out.W, "out.b": self.out.b,
            "tte.hidden.W": self.tte_hidden_layer.W, "tte.hidden.b": self.tte_hidden_layer.b,
            "tte.out.W": self.tte_out_layer.W, "tte.out.b": self.tte_out_layer.b,
        }
        for stage, stack in (("sce", self.sce), ("fbe", self.fbe)):
            for l, directions in enumerate(stack):
                for d, w in zip(("fwd", "bwd"), directions):
                    named[f"{stage}.l{l}.{d}.W"] = w.W
                    named[f"{stage}.l{l}.{d}.b"] = w.b
        for l, w in enumerate(self.nsd):
            named[f"nsd.l{l}.W"] = w.W
            named[f"nsd.l{l}.b"] = w.b
        for l, dense in enumerate(self.nsd_init):
            named[f"nsd_init.l{l}.W"] = dense.W
            named[f"nsd_init.l{l}.b"] = dense.b
        return dict(sorted(named.items()))

    def parameters(self) -> list[ad.Tensor]:
        """Trainable tensors in stable name order; frozen tables excluded."""
        frozen = {id(t.matrix) for t in (self.item_table, self.user_table) if not t.trainable}
        return [t for t in self.named_tensors().values() if id(t) not in frozen]


def _lstm_shapes(in_dim: int, hidden: int):
    return (4 * hidden, in_dim + hidden), (4 * hidden,)


def shape_manifest(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every tensor the config implies.

    init_params must realize exactly these shapes; parameter_count sums
    them, so the count is a pure function of the config.
    """
    shapes: dict[str, tuple[int, ...]] = {
        "embeddings.item": (config.vocab_size, config.item_dim),
        "embeddings.user": (config.user_count, config.user_dim),
    }
    sce_dirs = 2 if config.sce_bidirectional else 1
    for l in range(config.sce_layers):
        in_dim = config.item_dim if l == 0 else config.sce_cells * sce_dirs
        for d in ("fwd", "bwd")[:sce_dirs]:
            w, b = _lstm_shapes(in_dim, config.sce_cells)
            shapes[f"sce.l{l}.{d}.W"] = w
            shapes[f"sce.l{l}.{d}.b"] = b
    fbe_dirs = 2 if config.fbe_bidirectional else 1
    for l in range(config.fbe_layers):
        in_dim = config.fbe_input_dim if l == 0 else config.fbe_cells * fbe_dirs
        for d in ("fwd", "bwd")[:fbe_dirs]:
            w, b = _lstm_shapes(in_dim, config.fbe_cells)
            shapes[f"fbe.l{l}.{d}.W"] = w
            shapes[f"fbe.l{l}.{d}.b"] = b
    for l, hidden in enumerate(config.nsd_cell_sizes):
        in_dim = config.item_dim if l == 0 else config.nsd_cell_sizes[l - 1]
        w, b = _lstm_shapes(in_dim, hidden)
        shapes[f"nsd.l{l}.W"] = w
        shapes[f"nsd.l{l}.b"] = b
        shapes[f"nsd_init.l{l}.W"] = (hidden, config.funnel_state_dim)
        shapes[f"nsd_init.l{l}.b"] = (hidden,)
    shapes["out.W"] = (config.vocab_size, config.nsd_cell_sizes[-1])
    shapes["out.b"] = (config.vocab_size,)
    shapes["tte.hidden.W"] = (config.tte_hidden, config.funnel_state_dim)
    shapes["tte.hidden.b"] = (config.tte_hidden,)
    shapes["tte.out.W"] = (1, config.tte_hidden)
    shapes["tte.out.b"] = (1,)
    return dict(sorted(shapes.items()))


def parameter_count(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for shape in shape_manifest(config).values())


def _init_lstm(rng, in_dim: int, hidden: int) -> LSTMWeights:
    w_shape, b_shape = _lstm_shapes(in_dim, hidden)
    W = ad.Tensor(rng.uniform(-INIT_RANGE, INIT_RANGE, w_shape), op="lstm.W")
    b = np.zeros(b_shape)
    b[hidden:2 * hidden] = FORGET_BIAS
    return LSTMWeights(W=W, b=ad.Tensor(b, op="lstm.b"))


def _init_dense(rng, out_dim: int, in_dim: int) -> Dense:
    W = ad.Tensor(rng.uniform(-INIT_RANGE, INIT_RANGE, (out_dim, in_dim)), op="dense.W")
    return Dense(W=W, b=ad.Tensor(np.zeros(out_dim), op="dense.b"))


def init_params(config: ModelConfig, seed: int = 0, item_table: EmbeddingTable | None = None) -> ModelParams:
    """Seed-deterministic parameter set; pass a warm item table to keep it."""
    rng = np.random.default_rng(seed)
    if item_table is None:
        item_table = EmbeddingTable(
            "item",
            ad.Tensor(rng.uniform(-INIT_RANGE, INIT_RANGE, (config.vocab_size, config.item_dim)), op="embedding"),
            trainable=True,
        )
    elif (item_table.rows, item_table.dim) != (config.vocab_size, config.item_dim):
        raise ConfigError(
            f"item table is {item_table.rows}x{item_table.dim}, "
            f"config wants {config.vocab_size}x{config.item_dim}"
        )
    user_table = EmbeddingTable(
        "user",
        ad.Tensor(rng.uniform(-INIT_RANGE, INIT_RANGE, (config.user_count, config.user_dim)), op="embedding"),
        trainable=True,
    )

    sce_dirs = 2 if config.sce_bidirectional else 1
    sce = []
    for l in range(config.sce_layers):
        in_dim = config.item_dim if l == 0 else config.sce_cells * sce_dirs
        sce.append([_init_lstm(rng, in_dim, config.sce_cells) for _ in range(sce_dirs)])
    fbe_dirs = 2 if config.fbe_bidirectional else 1
    fbe = []
    for l in range(config.fbe_layers):
        in_dim = config.fbe_input_dim if l == 0 else config.fbe_cells * fbe_dirs
        fbe.append([_init_lstm(rng, in_dim, config.fbe_cells) for _ in range(fbe_dirs)])
    nsd, nsd_init = [], []
    for l, hidden in enumerate(config.nsd_cell_sizes):
        in_dim = config.item_dim if l == 0 else config.nsd_cell_sizes[l - 1]
        nsd.append(_init_lstm(rng, in_dim, hidden))
        nsd_init.append(_init_dense(rng, hidden, config.funnel_state_dim))
    out = _init_dense(rng, config.vocab_size, config.nsd_cell_sizes[-1])
    tte_hidden_layer = _init_dense(rng, config.tte_hidden, config.funnel_state_dim)
    tte_out_layer = _init_dense(rng, 1, config.tte_hidden)
    return ModelParams(
        config=config, item_table=item_table, user_table=user_table,
        sce=sce, fbe=fbe, nsd=nsd, nsd_init=nsd_init, out=out,
        tte_hidden_layer=tte_hidden_layer, tte_out_layer=tte_out_layer,
    )


def lstm_cell(x: ad.Tensor, h: ad.Tensor, c: ad.Tensor, w: LSTMWeights):
    """One fused-gate step: returns (new hidden, new cell)."""
    hid = w.hidden
    z = ad.add(ad.matmul(w.W, ad.concat([x, h])), w.b)
    i = ad.sigmoid(ad.narrow(z, 0, hid))
    f = ad.sigmoid(ad.narrow(z, hid, hid))
    g = ad.tanh(ad.narrow(z, 2 * hid, hid))
    o = ad.sigmoid(ad.narrow(z, 3 * hid, hid))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def _run_direction(inputs, w: LSTMWeights, reverse: bool):
    h = ad.zeros(w.hidden)
    c = ad.zeros(w.hidden)
    order = range(len(inputs) - 1, -1, -1) if reverse else range(len(inputs))
    outputs = [None] * len(inputs)
    for t in order:
        h, c = lstm_cell(inputs[t], h, c, w)
        outputs[t] = h
    return outputs, h


def _run_stack(inputs, layers, bidirectional: bool):
    """Stacked (bi)LSTM over a sequence; returns (per-step outputs, final state).

    Final state is the last layer's final hidden, both directions
    concatenated when bidirectional.
    """
    seq = inputs
    final = None
    for directions in layers:
        fwd_out, fwd_final = _run_direction(seq, directions[0], reverse=False)
        if bidirectional:
            bwd_out, bwd_final = _run_direction(seq, directions[1], reverse=True)
            seq = [ad.concat([f, b]) for f, b in zip(fwd_out, bwd_out)]
            final = ad.concat([fwd_final, bwd_final])
        else:
            seq = fwd_out
            final = fwd_final
    return seq, final


def encode_basket(params: ModelParams, items: list[int]) -> ad.Tensor:
    """Session vector for one basket of vocabulary indices."""
    if not items:
        raise DataError("cannot encode an empty basket")
    inputs = [params.item_table.lookup(i) for i in items]
    _, final = _run_stack(inputs, params.sce, params.config.sce_bidirectional)
    return final


def encode_funnel(params: ModelParams, sessions: list[Session], features: np.ndarray, user_index: int) -> ad.Tensor:
    """Funnel state for a session prefix; features must align with sessions."""
    if not sessions:
        raise DataError("cannot encode an empty funnel prefix")
    if len(features) != len(sessions):
        raise DataError(f"{len(sessions)} sessions but {len(features)} feature rows")
    user_vec = params.user_table.lookup(user_index)
    steps = []
    for sess, row in zip(sessions, features):
        steps.append(ad.concat([
            encode_basket(params, sess.items),
            ad.Tensor(np.array(row, dtype=np.float64), op="features"),
            user_vec,
        ]))
    _, final = _run_stack(steps, params.fbe, params.config.fbe_bidirectional)
    return final


def funnel_state(params: ModelParams, funnel: Funnel, prefix_len: int | None = None) -> ad.Tensor:
    n = len(funnel.sessions) if prefix_len is None else prefix_len
    return encode_funnel(params, funnel.sessions[:n], funnel.session_features[:n], funnel.user_index)


def _decoder_start(params: ModelParams, state: ad.Tensor):
    hs, cs = [], []
    for dense, w in zip(params.nsd_init, params.nsd):
        hs.append(ad.add(ad.matmul(dense.W, state), dense.b))
        cs.append(ad.zeros(w.hidden))
    return hs, cs


def _decoder_step(params: ModelParams, x: ad.Tensor, hs, cs):
    new_h, new_c = [], []
    for l, w in enumerate(params.nsd):
        h, c = lstm_cell(x, hs[l], cs[l], w)
        new_h.append(h)
        new_c.append(c)
        x = h
    logits = ad.add(ad.matmul(params.out.W, x), params.out.b)
    return new_h, new_c, logits


def nsd_teacher_forced_loss(params: ModelParams, state: ad.Tensor, target_items: list[int]) -> ad.Tensor:
    """Mean per-step cross-entropy of the target basket followed by EOB."""
    if not target_items:
        raise DataError("teacher forcing needs a non-empty target basket")
    targets = list(target_items) + [EOB]
    hs, cs = _decoder_start(params, state)
    losses = []
    for t, target in enumerate(targets):
        if t == 0:
            x = ad.zeros(params.config.item_dim)
        else:
            x = params.item_table.lookup(targets[t - 1])
        hs, cs, logits = _decoder_step(params, x, hs, cs)
        losses.append(ad.softmax_cross_entropy(logits, target))
    return ad.mean(ad.concat(losses))


def masked_argmax(logits: np.ndarray, banned: set[int]):
    """Argmax over unmasked entries plus the renormalized distribution."""
    masked = logits.astype(np.float64).copy()
    for idx in banned:
        masked[idx] = -np.inf
    keep = np.isfinite(masked)
    shifted = masked[keep] - masked[keep].max()
    probs = np.zeros_like(masked)
    probs[keep] = np.exp(shifted) / np.exp(shifted).sum()
    return int(np.argmax(masked)), probs


def nsd_decode_greedy(params: ModelParams, state: ad.Tensor, k_max: int | None = None, return_steps: bool = False):
    """Autoregressive argmax decode of the next basket.

    Already-emitted items and the PAD/UNK rows are masked at every step;
    the end symbol stays available and stops decoding. Emission order is
    returned; output never exceeds ``k_max`` items and holds no duplicates.
    """
    if k_max is None:
        k_max = params.config.decode_max_items
    hs, cs = _decoder_start(params, state)
    x = ad.zeros(params.config.item_dim)
    banned = {PAD, UNK}
    emitted: list[int] = []
    steps = []
    while len(emitted) < k_max:
        hs, cs, logits = _decoder_step(params, x, hs, cs)
        choice, probs = masked_argmax(logits.data, banned)
        if return_steps:
            steps.append((choice, probs))
        if choice == EOB:
            break
        emitted.append(choice)
        banned.add(choice)
        x = params.item_table.lookup(choice)
    return (emitted, steps) if return_steps else emitted


def predict_days(params: ModelParams, state: ad.Tensor) -> ad.Tensor:
    """Positive days-until-next-session estimate, shape (1,)."""
    hidden = ad.relu(ad.add(ad.matmul(params.tte_hidden_layer.W, state), params.tte_hidden_layer.b))
    raw = ad.add(ad.matmul(params.tte_out_layer.W, hidden), params.tte_out_layer.b)
    return ad.softplus(raw)


def tte_loss(predicted: ad.Tensor, observed_days: float, kind: str = "mae") -> ad.Tensor:
    if observed_days < 0:
        raise DataError(f"observed gap must be >= 0 days, got {observed_days}")
    target = ad.Tensor(np.array([float(observed_days)]), op="target")
    diff = ad.sub(predicted, target)
    if kind == "mae":
        return ad.abs_(diff)
    if kind == "mse":
        return ad.mul(diff, diff)
    raise ConfigError(f"unknown regression loss '{kind}' (use 'mae' or 'mse')")

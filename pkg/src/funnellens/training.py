"""Optimization loop: slicing, batching, RMSprop updates, checkpoints.

Each funnel becomes incremental prefix slices; every epoch shuffles the
slices deterministically from (seed, epoch), walks them in batches of at
most ``batch_max``, and takes one clipped RMSprop step per batch. Two
objectives share the encoder: next-basket decoding (teacher-forced NLL)
and days-to-next-session regression.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .data import Funnel, TrainingSlice, ValidationPair, make_training_slices
from .errors import ConfigError, DataError, TrainingError
from .model import ModelParams, funnel_state, nsd_teacher_forced_loss, predict_days, tte_loss

logger = logging.getLogger(__name__)

OBJECTIVES = ("next-basket", "time-to-event")
SCENARIOS = ("cold", "warm", "warm-frozen")


@dataclass
class TrainRunConfig:
    epochs: int = 30
    batch_max: int = 128
    learning_rate: float = 0.001
    clip_norm: float = 5.0
    seed: int = 0
    objective: str = "next-basket"
    scenario: str = "cold"
    min_sessions: int = 3
    tte_loss_kind: str = "mae"
    early_stop_patience: int = 3  # 0 disables
    early_stop_delta: float = 1e-4
    checkpoint_every: int = 0  # epochs between intermediate saves; 0 -> final only

    def __post_init__(self):
        if self.batch_max < 1:
            raise ConfigError(f"batch_max must be >= 1, got {self.batch_max}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got '{self.objective}'")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got '{self.scenario}'")
        if self.min_sessions < 1:
            raise ConfigError(f"min_sessions must be >= 1, got {self.min_sessions}")


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    validation_losses: list[float] = field(default_factory=list)
    n_slices: int = 0
    n_funnels: int = 0
    n_validation: int = 0
    wall_seconds: float = 0.0
    stopped_early: bool = False
    epochs_run: int = 0
    checkpoint_path: str | None = None
    config_echo: dict = field(default_factory=dict)


def prepare_slices(funnels: list[Funnel], min_sessions: int = 3) -> list[TrainingSlice]:
    slices = []
    for funnel in funnels:
        slices.extend(make_training_slices(funnel, min_sessions=min_sessions))
    return slices


def batch_slices(slices: list, batch_max: int, seed: int, epoch: int) -> list[list]:
    """Deterministic shuffled batches for one epoch; every slice exactly once."""
    if not slices:
        raise DataError("no training slices to batch")
    order = np.random.default_rng([seed, epoch]).permutation(len(slices))
    return [
        [slices[int(j)] for j in order[i:i + batch_max]]
        for i in range(0, len(order), batch_max)
    ]


def slice_loss(params: ModelParams, sl: TrainingSlice, objective: str, tte_kind: str = "mae") -> ad.Tensor:
    state = funnel_state(params, sl.funnel, sl.prefix_len)
    if objective == "next-basket":
        return nsd_teacher_forced_loss(params, state, sl.target.items)
    return tte_loss(predict_days(params, state), sl.delta_days, kind=tte_kind)


def compute_batch_loss(batch: list, params: ModelParams, objective: str, tte_kind: str = "mae") -> ad.Tensor:
    """Mean per-slice loss as one graph (a batch of one is the slice's loss)."""
    if not batch:
        raise DataError("empty batch")
    total = slice_loss(params, batch[0], objective, tte_kind)
    for sl in batch[1:]:
        total = ad.add(total, slice_loss(params, sl, objective, tte_kind))
    return ad.scale(total, 1.0 / len(batch))


def _leak_check(slices: list[TrainingSlice], validation: list[ValidationPair]) -> None:
    held = {(p.funnel.client_id, p.target.tran_id) for p in validation}
    if not held:
        return
    hits = 0
    for sl in slices:
        sessions = sl.funnel.sessions[:sl.prefix_len] + [sl.target]
        for sess in sessions:
            if (sl.funnel.client_id, sess.tran_id) in held:
                hits += 1
    if hits:
        raise DataError(f"{hits} held-out validation baskets reachable from training slices")


def _validation_loss(params, validation, run: TrainRunConfig) -> float:
    total, count = 0.0, 0
    for i in range(0, len(validation), run.batch_max):
        chunk = validation[i:i + run.batch_max]
        batch = [
            TrainingSlice(funnel=p.funnel, prefix_len=len(p.funnel.sessions),
                          target=p.target, delta_days=p.delta_days)
            for p in chunk if p.funnel.sessions
        ]
        if not batch:
            continue
        total += compute_batch_loss(batch, params, run.objective, run.tte_loss_kind).item() * len(batch)
        count += len(batch)
    return total / count if count else float("nan")


def train(
    run: TrainRunConfig,
    params: ModelParams,
    train_funnels: list[Funnel],
    validation: list[ValidationPair] | None = None,
    checkpoint_path=None,
) -> TrainReport:
    """Run the full optimization loop and return its report.

    Gradients are averaged per batch by backward-accumulating each slice's
    loss scaled by 1/batch size, then clipped to ``clip_norm`` before one
    RMSprop step. A non-finite loss aborts with the epoch and batch named.
    """
    validation = validation or []
    slices = prepare_slices(train_funnels, min_sessions=run.min_sessions)
    if not slices:
        raise DataError(f"no funnel yields a training slice at min_sessions={run.min_sessions}")
    _leak_check(slices, validation)

    trainable = params.parameters()
    optimizer = ad.RMSprop(trainable, learning_rate=run.learning_rate)
    report = TrainReport(
        n_slices=len(slices),
        n_funnels=len(train_funnels),
        n_validation=len(validation),
        config_echo=dict(vars(run)),
        checkpoint_path=str(checkpoint_path) if checkpoint_path else None,
    )

    def save(path):
        state = {
            name: acc for name, acc in zip(_trainable_names(params), optimizer.accumulators)
        }
        save_checkpoint(params, path, optimizer_state=state)

    start = time.perf_counter()
    best_val = float("inf")
    stagnant = 0
    for epoch in range(run.epochs):
        epoch_total = 0.0
        for batch_idx, batch in enumerate(batch_slices(slices, run.batch_max, run.seed, epoch)):
            optimizer.zero_grad()
            batch_total = 0.0
            inv = 1.0 / len(batch)
            for sl in batch:
                loss = slice_loss(params, sl, run.objective, run.tte_loss_kind)
                batch_total += loss.item()
                ad.scale(loss, inv).backward()
            if not np.isfinite(batch_total):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {batch_idx}")
            ad.clip_global_norm([p.grad for p in trainable], run.clip_norm)
            optimizer.step()
            epoch_total += batch_total
        report.epoch_losses.append(epoch_total / len(slices))
        report.epochs_run = epoch + 1

        if validation:
            val = _validation_loss(params, validation, run)
            report.validation_losses.append(val)
            logger.info("epoch %d: train %.6f validation %.6f", epoch, report.epoch_losses[-1], val)
            if run.early_stop_patience > 0:
                if val < best_val - run.early_stop_delta:
                    best_val = val
                    stagnant = 0
                else:
                    stagnant += 1
                    if stagnant >= run.early_stop_patience:
                        report.stopped_early = True
                        logger.info("early stop after %d stagnant epochs", stagnant)
                        break
        else:
            logger.info("epoch %d: train %.6f", epoch, report.epoch_losses[-1])

        if checkpoint_path and run.checkpoint_every and (epoch + 1) % run.checkpoint_every == 0:
            save(checkpoint_path)

    report.wall_seconds = time.perf_counter() - start
    if checkpoint_path:
        save(checkpoint_path)
    return report


def _trainable_names(params: ModelParams) -> list[str]:
    frozen = {id(t.matrix) for t in (params.item_table, params.user_table) if not t.trainable}
    return [name for name, t in params.named_tensors().items() if id(t) not in frozen]

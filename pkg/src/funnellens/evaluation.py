"""Held-out next-basket scoring and the frequency baseline.

Per held-out customer: encode the training prefix, decode at most k items,
and score the prediction against the actual basket with set recall,
precision and F1. Corpus numbers are unweighted means over customers. The
same path also scores any non-neural predictor, so the frequency baseline
is directly comparable.

Precision with an empty prediction is defined as 0. Precision here is
also the hit rate of the recommendation list, so no separate hit-rate
metric is emitted.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .data import ValidationPair
from .errors import DataError
from .model import ModelParams, funnel_state, nsd_decode_greedy, predict_days

DEFAULT_K = 10


@dataclass
class BasketMetrics:
    recall: float
    precision: float
    f1: float


@dataclass
class CustomerResult:
    client_id: str
    predicted: tuple[int, ...]
    actual: tuple[int, ...]
    metrics: BasketMetrics


@dataclass
class EvaluationReport:
    label: str
    metrics: BasketMetrics
    per_customer: list[CustomerResult]
    n_evaluated: int
    n_skipped: int
    k_max: int

    def table_row(self) -> dict:
        return {
            "model": self.label,
            "recall": self.metrics.recall,
            "precision": self.metrics.precision,
            "f1": self.metrics.f1,
        }


def basket_metrics(predicted, actual) -> BasketMetrics:
    """Set-overlap scores of one prediction against one actual basket."""
    actual_set = set(actual)
    if not actual_set:
        raise DataError("actual basket is empty; nothing to score")
    predicted_set = set(predicted)
    hits = len(predicted_set & actual_set)
    recall = hits / len(actual_set)
    precision = hits / len(predicted_set) if predicted_set else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return BasketMetrics(recall=recall, precision=precision, f1=f1)


def evaluate_predictor(predict_fn, pairs: list[ValidationPair], k_max: int = DEFAULT_K,
                       label: str = "model") -> EvaluationReport:
    """Score any ``pair -> item list`` predictor over held-out customers."""
    results = []
    skipped = 0
    for pair in pairs:
        if not pair.funnel.sessions:
            skipped += 1
            continue
        predicted = list(predict_fn(pair))[:k_max]
        metrics = basket_metrics(predicted, pair.target.items)
        results.append(CustomerResult(
            client_id=pair.funnel.client_id,
            predicted=tuple(predicted),
            actual=tuple(pair.target.items),
            metrics=metrics,
        ))
    if not results:
        raise DataError("no held-out customer was evaluable (all prefixes empty)")
    corpus = BasketMetrics(
        recall=float(np.mean([r.metrics.recall for r in results])),
        precision=float(np.mean([r.metrics.precision for r in results])),
        f1=float(np.mean([r.metrics.f1 for r in results])),
    )
    return EvaluationReport(
        label=label, metrics=corpus, per_customer=results,
        n_evaluated=len(results), n_skipped=skipped, k_max=k_max,
    )


def evaluate_model(params: ModelParams, pairs: list[ValidationPair], k_max: int = DEFAULT_K,
                   label: str = "model") -> EvaluationReport:
    """Greedy-decode the next basket for each held-out customer and score it."""

    def predict(pair: ValidationPair):
        state = funnel_state(params, pair.funnel)
        return nsd_decode_greedy(params, state, k_max=k_max)

    return evaluate_predictor(predict, pairs, k_max=k_max, label=label)


def frequency_baseline(train_funnels, k: int = DEFAULT_K):
    """Per-customer top-k items by session presence, global top-k backfill.

    Ties break toward the smaller item index; customers absent from the
    training funnels get the global list. Returns a predictor usable with
    evaluate_predictor.
    """
    if k < 1:
        raise DataError(f"baseline needs k >= 1, got {k}")
    global_counts: Counter = Counter()
    per_user: dict[str, Counter] = {}
    for funnel in train_funnels:
        counts: Counter = Counter()
        for sess in funnel.sessions:
            for item in sess.items:
                counts[item] += 1
                global_counts[item] += 1
        per_user[funnel.client_id] = counts

    def top(counts: Counter, n: int):
        return [item for item, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:n]]

    global_top = top(global_counts, k)

    def predict(pair: ValidationPair):
        counts = per_user.get(pair.funnel.client_id)
        picks = top(counts, k) if counts else []
        for item in global_top:
            if len(picks) >= k:
                break
            if item not in picks:
                picks.append(item)
        return picks

    return predict


@dataclass
class TTEReport:
    mae_days: float
    mse_days: float
    n_evaluated: int
    n_skipped: int


def tte_aggregate(predictions, targets) -> TTEReport:
    """MAE/MSE in days over aligned prediction/target lists."""
    if len(predictions) != len(targets):
        raise DataError(f"{len(predictions)} predictions vs {len(targets)} targets")
    if not predictions:
        raise DataError("nothing to aggregate")
    err = np.asarray(predictions, dtype=np.float64) - np.asarray(targets, dtype=np.float64)
    return TTEReport(
        mae_days=float(np.mean(np.abs(err))),
        mse_days=float(np.mean(err ** 2)),
        n_evaluated=len(predictions),
        n_skipped=0,
    )


def tte_evaluate(params: ModelParams, pairs: list[ValidationPair]) -> TTEReport:
    """Days-to-next-session error of the regression head on held-out customers."""
    preds, targets = [], []
    skipped = 0
    for pair in pairs:
        if not pair.funnel.sessions:
            skipped += 1
            continue
        state = funnel_state(params, pair.funnel)
        preds.append(predict_days(params, state).item())
        targets.append(pair.delta_days)
    report = tte_aggregate(preds, targets)
    report.n_skipped = skipped
    return report

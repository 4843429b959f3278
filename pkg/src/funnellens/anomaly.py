"""Funnel anomaly detection in three stages.

For every eligible funnel: (1) predict its last session from everything
before it and measure the Jaccard distance between prediction and what the
customer actually bought; (2) cluster the funnel states so customers are
compared against behavioral peers; (3) within each cluster, score each
funnel's distance by its robust deviation (median/MAD) and flag scores
above the threshold.

Funnels are processed in client_id order internally, so permuting the
input permutes nothing: the report is identical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cluster import select_k
from .data import Funnel
from .errors import DataError
from .model import ModelParams, funnel_state, nsd_decode_greedy

logger = logging.getLogger(__name__)

MAD_EPSILON = 1e-9
MIN_ELIGIBLE = 4


@dataclass
class AnomalyConfig:
    min_sessions: int = 3  # prefix length; eligibility needs one more observed session
    k_min: int = 2
    k_max: int = 10
    threshold: float = 3.0
    seed: int = 0
    decode_items: int = 10

    def __post_init__(self):
        if self.min_sessions < 1:
            raise DataError(f"min_sessions must be >= 1, got {self.min_sessions}")
        if not 2 <= self.k_min <= self.k_max:
            raise DataError(f"need 2 <= k_min <= k_max, got [{self.k_min}, {self.k_max}]")
        if self.threshold <= 0:
            raise DataError(f"threshold must be > 0, got {self.threshold}")


@dataclass
class FunnelVerdict:
    client_id: str
    distance: float  # prediction-vs-observation Jaccard distance
    cluster: int
    score: float
    flagged: bool


@dataclass
class AnomalyReport:
    verdicts: list[FunnelVerdict]  # sorted by score descending
    n_clusters: int
    cluster_sizes: list[int]
    silhouette: float | None
    n_excluded: int
    threshold: float
    config_echo: dict = field(default_factory=dict)


def jaccard_distance(a, b) -> float:
    """1 - |A∩B| / |A∪B|; two empty sets count as identical (0)."""
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 0.0
    return 1.0 - len(a & b) / len(union)


def prediction_distance(params: ModelParams, funnel: Funnel, decode_items: int = 10) -> float:
    """d in [0,1] between the decoded and the observed last session."""
    if len(funnel.sessions) < 2:
        raise DataError(f"funnel {funnel.client_id} has no prefix/observation split")
    prefix = len(funnel.sessions) - 1
    state = funnel_state(params, funnel, prefix)
    predicted = nsd_decode_greedy(params, state, k_max=decode_items)
    return jaccard_distance(predicted, funnel.sessions[-1].items)


def cluster_funnels(embeddings: np.ndarray, k_min: int, k_max: int, seed: int = 0):
    """Silhouette-selected k-means assignment of funnel states.

    Returns ``(assignment, n_clusters, silhouette)``. Identical embeddings
    collapse to a single cluster with silhouette None.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    n = len(embeddings)
    if n < 2:
        raise DataError(f"clustering needs at least 2 funnels, got {n}")
    if np.all(embeddings == embeddings[0]):
        logger.warning("all %d funnel states identical; skipping silhouette selection", n)
        return np.zeros(n, dtype=int), 1, None
    candidates = range(k_min, min(k_max, n - 1) + 1)
    best_k, result, silhouettes = select_k(embeddings, candidates, seed=seed)
    return result.assignment, best_k, silhouettes[best_k]


def score_outliers(distances: np.ndarray, assignment: np.ndarray, threshold: float = 3.0):
    """Robust within-cluster deviation of each funnel's distance.

    score_i = |d_i - median(cluster)| / (MAD(cluster) + eps); singleton
    clusters score 0. Returns ``(scores, flagged)``.
    """
    distances = np.asarray(distances, dtype=np.float64)
    assignment = np.asarray(assignment)
    if len(distances) != len(assignment):
        raise DataError(f"{len(distances)} distances vs {len(assignment)} assignments")
    scores = np.zeros(len(distances))
    for label in np.unique(assignment):
        members = assignment == label
        if members.sum() == 1:
            continue
        values = distances[members]
        med = np.median(values)
        mad = np.median(np.abs(values - med))
        scores[members] = np.abs(values - med) / (mad + MAD_EPSILON)
    return scores, scores > threshold


def detect(params: ModelParams, funnels: list[Funnel], config: AnomalyConfig | None = None) -> AnomalyReport:
    """Run all three stages over a funnel corpus."""
    config = config or AnomalyConfig()
    ordered = sorted(
        (f for f in funnels if len(f.sessions) >= config.min_sessions + 1),
        key=lambda f: f.client_id,
    )
    n_excluded = len(funnels) - len(ordered)
    if len(ordered) < MIN_ELIGIBLE:
        raise DataError(
            f"anomaly detection needs >= {MIN_ELIGIBLE} funnels with "
            f">= {config.min_sessions + 1} sessions, found {len(ordered)}"
        )

    distances = np.array([prediction_distance(params, f, config.decode_items) for f in ordered])
    states = np.stack([
        funnel_state(params, f, len(f.sessions) - 1).data for f in ordered
    ])
    assignment, n_clusters, silhouette = cluster_funnels(states, config.k_min, config.k_max, config.seed)
    scores, flagged = score_outliers(distances, assignment, config.threshold)

    verdicts = [
        FunnelVerdict(
            client_id=f.client_id,
            distance=float(distances[i]),
            cluster=int(assignment[i]),
            score=float(scores[i]),
            flagged=bool(flagged[i]),
        )
        for i, f in enumerate(ordered)
    ]
    verdicts.sort(key=lambda v: (-v.score, v.client_id))
    sizes = [int((assignment == c).sum()) for c in range(n_clusters)]
    return AnomalyReport(
        verdicts=verdicts,
        n_clusters=n_clusters,
        cluster_sizes=sizes,
        silhouette=None if silhouette is None else float(silhouette),
        n_excluded=n_excluded,
        threshold=config.threshold,
        config_echo=dict(vars(config)),
    )

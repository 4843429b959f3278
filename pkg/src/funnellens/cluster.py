"""Seed-deterministic k-means with silhouette model selection.

Implemented in-package (squared-Euclidean Lloyd iterations over numpy
arrays) so the within-cluster objective is observable per iteration; the
trace it records must never increase. K is chosen by maximal mean
silhouette over a candidate range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class KMeansResult:
    centers: np.ndarray  # (k, dim)
    assignment: np.ndarray  # (n,) int
    inertia: float
    inertia_trace: list[float]
    n_iter: int
    converged: bool


def _sq_dists_to_centers(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _plus_plus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = [points[int(rng.integers(n))]]
    for _ in range(1, k):
        d2 = _sq_dists_to_centers(points, np.array(centers)).min(axis=1)
        total = d2.sum()
        if total <= 0.0:  # remaining points coincide with chosen centers
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(points[idx])
    return np.array(centers)


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int) -> KMeansResult:
    assignment = None
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists_to_centers(points, centers)
        new_assignment = d2.argmin(axis=1)
        inertia = float(d2[np.arange(len(points)), new_assignment].sum())
        trace.append(inertia)
        if assignment is not None and np.array_equal(new_assignment, assignment):
            converged = True
            assignment = new_assignment
            break
        assignment = new_assignment
        centers = centers.copy()
        for c in range(len(centers)):
            members = points[assignment == c]
            if len(members):
                centers[c] = members.mean(axis=0)
            else:
                # revive an empty cluster at the currently worst-fit point
                worst = int(d2[np.arange(len(points)), assignment].argmax())
                centers[c] = points[worst]
    return KMeansResult(
        centers=centers, assignment=assignment, inertia=trace[-1],
        inertia_trace=trace, n_iter=it, converged=converged,
    )


def kmeans(points: np.ndarray, k: int, seed: int = 0, restarts: int = 10,
           max_iter: int = 300) -> KMeansResult:
    """Best-of-``restarts`` Lloyd runs with k-means++ seeding."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DataError(f"points must be a (n, dim) matrix, got shape {points.shape}")
    n = len(points)
    if not 1 <= k <= n:
        raise DataError(f"k must be in [1, {n}], got {k}")
    best = None
    for restart in range(restarts):
        rng = np.random.default_rng([seed, k, restart])
        centers = _plus_plus_init(points, k, rng)
        result = _lloyd(points, centers, max_iter)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def silhouette_mean(points: np.ndarray, assignment: np.ndarray) -> float:
    """Mean silhouette over all points; singleton-cluster points score 0."""
    points = np.asarray(points, dtype=np.float64)
    assignment = np.asarray(assignment)
    labels = np.unique(assignment)
    if len(labels) < 2:
        raise DataError("silhouette needs at least 2 clusters")
    diff = points[:, None, :] - points[None, :, :]
    dists = np.sqrt(np.einsum("ijd,ijd->ij", diff, diff))
    scores = np.zeros(len(points))
    for i in range(len(points)):
        own = assignment[i]
        mates = assignment == own
        n_own = int(mates.sum())
        if n_own == 1:
            scores[i] = 0.0
            continue
        a = dists[i, mates].sum() / (n_own - 1)
        b = min(dists[i, assignment == other].mean() for other in labels if other != own)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def select_k(points: np.ndarray, k_values, seed: int = 0, restarts: int = 10,
             max_iter: int = 300):
    """Run kmeans for each candidate K and keep the best mean silhouette.

    Returns ``(best_k, best_result, silhouette_by_k)``; ties go to the
    smaller K.
    """
    points = np.asarray(points, dtype=np.float64)
    k_values = sorted(set(int(k) for k in k_values))
    n = len(points)
    valid = [k for k in k_values if 2 <= k <= n - 1]
    if not valid:
        raise DataError(f"no usable K in {k_values} for {n} points (need 2 <= K <= {n - 1})")
    best_k, best_result, best_sil = None, None, -np.inf
    silhouettes = {}
    for k in valid:
        result = kmeans(points, k, seed=seed, restarts=restarts, max_iter=max_iter)
        sil = silhouette_mean(points, result.assignment)
        silhouettes[k] = sil
        if sil > best_sil:
            best_k, best_result, best_sil = k, result, sil
    return best_k, best_result, silhouettes

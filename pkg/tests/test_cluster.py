import numpy as np
import pytest

from funnellens.cluster import kmeans, select_k, silhouette_mean
from funnellens.errors import DataError


def two_blobs(rng, n_per=30, sep=5.0, sigma=0.05, dim=3):
    a = rng.normal(scale=sigma, size=(n_per, dim))
    b = rng.normal(scale=sigma, size=(n_per, dim)) + sep
    points = np.vstack([a, b])
    labels = np.array([0] * n_per + [1] * n_per)
    return points, labels


def agreement_up_to_relabel(got, truth):
    assert set(got) == {0, 1}
    direct = np.mean(got == truth)
    return max(direct, 1.0 - direct)


class TestKMeans:
    def test_recovers_two_blobs(self, rng):
        points, truth = two_blobs(rng)
        result = kmeans(points, k=2, seed=0)
        assert agreement_up_to_relabel(result.assignment, truth) == 1.0
        assert result.converged

    def test_inertia_trace_non_increasing(self, rng):
        for trial in range(10):
            points = rng.normal(size=(40, 4)) * rng.uniform(0.5, 3)
            result = kmeans(points, k=int(rng.integers(2, 6)), seed=trial, restarts=1)
            trace = result.inertia_trace
            assert all(trace[i + 1] <= trace[i] + 1e-9 for i in range(len(trace) - 1))

    def test_deterministic_for_seed(self, rng):
        points = rng.normal(size=(50, 3))
        a = kmeans(points, k=3, seed=7)
        b = kmeans(points, k=3, seed=7)
        assert np.array_equal(a.assignment, b.assignment)
        assert a.inertia == b.inertia

    def test_restarts_never_hurt(self, rng):
        points = rng.normal(size=(60, 2))
        one = kmeans(points, k=4, seed=3, restarts=1)
        ten = kmeans(points, k=4, seed=3, restarts=10)
        assert ten.inertia <= one.inertia + 1e-12

    def test_duplicate_points_co_clustered(self, rng):
        base = rng.normal(size=(10, 3))
        points = np.vstack([base, base])  # each point duplicated
        result = kmeans(points, k=3, seed=1)
        for i in range(10):
            assert result.assignment[i] == result.assignment[i + 10]

    def test_k_equal_n_allowed(self, rng):
        points = rng.normal(size=(6, 2))
        result = kmeans(points, k=6, seed=0)
        assert result.inertia == pytest.approx(0.0, abs=1e-18)

    def test_invalid_k(self, rng):
        points = rng.normal(size=(5, 2))
        with pytest.raises(DataError):
            kmeans(points, k=0)
        with pytest.raises(DataError):
            kmeans(points, k=6)


class TestSilhouette:
    def test_matches_sklearn_oracle(self, rng):
        sklearn_metrics = pytest.importorskip("sklearn.metrics")
        for trial in range(10):
            points = rng.normal(size=(40, 3))
            k = int(rng.integers(2, 6))
            assignment = kmeans(points, k=k, seed=trial).assignment
            if len(np.unique(assignment)) < 2:
                continue
            ours = silhouette_mean(points, assignment)
            theirs = sklearn_metrics.silhouette_score(points, assignment)
            assert ours == pytest.approx(theirs, abs=1e-9)

    def test_well_separated_near_one(self, rng):
        points, truth = two_blobs(rng, sep=50.0)
        assert silhouette_mean(points, truth) > 0.99

    def test_single_cluster_rejected(self, rng):
        points = rng.normal(size=(10, 2))
        with pytest.raises(DataError):
            silhouette_mean(points, np.zeros(10, dtype=int))


class TestSelectK:
    def test_two_blobs_select_two(self, rng):
        points, truth = two_blobs(rng)
        best_k, result, silhouettes = select_k(points, range(2, 8), seed=0)
        assert best_k == 2
        assert agreement_up_to_relabel(result.assignment, truth) == 1.0
        assert silhouettes[2] == max(silhouettes.values())

    def test_large_k_allowed_but_not_chosen(self, rng):
        points, _ = two_blobs(rng, n_per=10)
        n = len(points)
        best_k, _, silhouettes = select_k(points, range(2, n), seed=0)
        assert n - 1 in silhouettes
        assert best_k == 2

    def test_k_range_clamped_to_data(self, rng):
        points = rng.normal(size=(4, 2))
        best_k, _, silhouettes = select_k(points, range(2, 50), seed=0)
        assert max(silhouettes) <= 3

    def test_no_valid_k_is_error(self, rng):
        points = rng.normal(size=(2, 2))
        with pytest.raises(DataError):
            select_k(points, range(2, 5), seed=0)

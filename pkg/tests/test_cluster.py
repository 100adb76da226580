"""k-means recovery, model selection, imputation, and determinism."""

from datetime import date, timedelta
from itertools import permutations

import numpy as np
import pytest

from mobflow.cluster import (
    Clustering,
    SeriesMatrix,
    kmeans,
    mean_silhouette,
    select_k,
)
from mobflow.diversity import DiversitySeries

DATES = [date(2020, 3, 2) + timedelta(days=i) for i in range(10)]


def matrix_from(values: np.ndarray, names=None) -> SeriesMatrix:
    names = names or [f"P{i:02d}" for i in range(values.shape[0])]
    return SeriesMatrix(provinces=names, dates=DATES[: values.shape[1]], values=values.astype(float))


def planted(levels, per_group, n_days=10, noise=0.01, seed=0) -> tuple[SeriesMatrix, np.ndarray]:
    rng = np.random.default_rng(seed)
    rows, truth = [], []
    for g, level in enumerate(levels):
        for _ in range(per_group):
            rows.append(np.clip(level + rng.normal(0, noise, n_days), 0, 1))
            truth.append(g)
    return matrix_from(np.vstack(rows)), np.array(truth)


def same_partition(a: np.ndarray, b: np.ndarray) -> bool:
    """Label-permutation-invariant equality."""
    ka, kb = len(set(a.tolist())), len(set(b.tolist()))
    if ka != kb:
        return False
    for perm in permutations(range(kb)):
        if all(perm[x] == y for x, y in zip(a, b)):
            return True
    return False


class TestKMeans:
    def test_k1_closed_form(self):
        rng = np.random.default_rng(4)
        x = rng.random((12, 10))
        clustering = kmeans(matrix_from(x), 1, seed=0)
        assert np.allclose(clustering.centroids[0], x.mean(axis=0))
        expected_inertia = ((x - x.mean(axis=0)) ** 2).sum()
        assert clustering.inertia == pytest.approx(expected_inertia, rel=1e-12)

    def test_two_planted_groups_recovered(self):
        matrix, truth = planted([0.2, 0.8], per_group=8, seed=1)
        clustering = kmeans(matrix, 2, seed=3)
        assert same_partition(clustering.labels, truth)
        # inertia is just the within-group noise, far below the split distance
        assert clustering.inertia < 8 * 2 * 10 * (3 * 0.01) ** 2

    def test_k_equals_n_zero_inertia(self):
        rng = np.random.default_rng(5)
        x = rng.random((6, 10))
        clustering = kmeans(matrix_from(x), 6, seed=0)
        assert clustering.inertia == 0.0

    def test_every_cluster_non_empty_even_with_duplicate_rows(self):
        x = np.vstack([np.full((4, 10), 0.2), np.full((4, 10), 0.8)])
        clustering = kmeans(matrix_from(x), 3, seed=0)
        for j in range(3):
            assert (clustering.labels == j).sum() > 0

    def test_reproducible(self):
        matrix, _ = planted([0.2, 0.5, 0.8], per_group=6, seed=2)
        a = kmeans(matrix, 3, seed=11, restarts=4)
        b = kmeans(matrix, 3, seed=11, restarts=4)
        assert (a.labels == b.labels).all()
        assert a.inertia == b.inertia

    def test_k_out_of_range(self):
        matrix, _ = planted([0.5], per_group=4)
        with pytest.raises(ValueError):
            kmeans(matrix, 5, seed=0)
        with pytest.raises(ValueError):
            kmeans(matrix, 0, seed=0)

    def test_band_is_mean_plus_minus_std(self):
        matrix, _ = planted([0.3, 0.7], per_group=5, seed=6)
        clustering = kmeans(matrix, 2, seed=0)
        for j in range(2):
            members = matrix.values[clustering.labels == j]
            assert np.allclose(clustering.centroids[j], members.mean(axis=0))
            assert np.allclose(clustering.band_std[j], members.std(axis=0))

    def test_inertia_matches_definition(self):
        matrix, _ = planted([0.2, 0.6, 0.9], per_group=5, seed=7)
        clustering = kmeans(matrix, 3, seed=1)
        direct = sum(
            ((matrix.values[i] - clustering.centroids[clustering.labels[i]]) ** 2).sum()
            for i in range(matrix.values.shape[0])
        )
        assert clustering.inertia == pytest.approx(direct, rel=1e-12)


class TestSelectK:
    def test_five_planted_levels_recovered(self):
        matrix, _ = planted([0.1, 0.3, 0.5, 0.7, 0.9], per_group=8, seed=8)
        selection = select_k(matrix, range(2, 13), seed=0)
        assert selection.k_star == 5

    def test_two_planted_levels_elbow_agrees(self):
        matrix, _ = planted([0.2, 0.8], per_group=10, seed=9)
        selection = select_k(matrix, range(2, 9), seed=0)
        assert selection.k_star == 2
        assert selection.elbow_k == 2

    def test_identical_series_degenerate(self):
        matrix = matrix_from(np.full((8, 10), 0.5))
        selection = select_k(matrix, range(2, 6), seed=0)
        assert selection.k_star == 1
        assert selection.degenerate
        assert selection.diagnostics == []

    def test_inertia_non_increasing_in_k(self):
        rng = np.random.default_rng(10)
        matrix = matrix_from(rng.random((30, 10)))
        selection = select_k(matrix, range(2, 16), seed=3)
        inertias = [d.inertia for d in selection.diagnostics]
        assert all(a >= b - 1e-9 for a, b in zip(inertias, inertias[1:]))

    def test_k_range_validation(self):
        matrix, _ = planted([0.5, 0.9], per_group=3)
        with pytest.raises(ValueError):
            select_k(matrix, range(2, 40), seed=0)


class TestSilhouette:
    def test_perfect_separation_scores_near_one(self):
        x = np.vstack([np.full((5, 4), 0.0), np.full((5, 4), 1.0)])
        labels = np.array([0] * 5 + [1] * 5)
        assert mean_silhouette(x, labels) == pytest.approx(1.0)

    def test_coincident_points_in_different_clusters_score_zero(self):
        x = np.full((4, 4), 0.5)
        labels = np.array([0, 0, 1, 1])
        assert mean_silhouette(x, labels) == 0.0


class TestSeriesMatrix:
    def _series(self, province, values):
        return DiversitySeries(province, "in", DATES[: len(values)], values)

    def test_interior_gap_linearly_interpolated(self):
        series = self._series("A", [0.2, None, 0.6, 0.6])
        matrix = SeriesMatrix.from_series([series])
        assert matrix.values[0].tolist() == [0.2, pytest.approx(0.4), 0.6, 0.6]

    def test_edges_extended(self):
        series = self._series("A", [None, 0.4, 0.5, None])
        matrix = SeriesMatrix.from_series([series])
        assert matrix.values[0].tolist() == [0.4, 0.4, 0.5, 0.5]

    def test_mostly_absent_province_dropped_and_reported(self):
        good = self._series("A", [0.2, 0.3, 0.4, 0.5])
        bad = self._series("B", [None, None, None, 0.5])
        matrix = SeriesMatrix.from_series([good, bad])
        assert matrix.provinces == ["A"]
        assert matrix.dropped == ["B"]

    def test_mismatched_dates_rejected(self):
        a = self._series("A", [0.2, 0.3])
        b = DiversitySeries("B", "in", DATES[1:3], [0.2, 0.3])
        with pytest.raises(ValueError, match="date axis"):
            SeriesMatrix.from_series([a, b])

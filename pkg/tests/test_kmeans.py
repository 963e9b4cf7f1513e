import numpy as np
import pytest

from conftest import brute_force_two_means
from odclab.errors import TooFewPointsError
from odclab.kmeans import kmeans, kmeans_pp_seed, lloyd, repair_empty, split_two
from odclab.numerics import make_rng, pairwise_sq_dists


class TestSeeding:
    def test_k_equals_n_uses_every_point(self):
        pts = np.arange(12.0).reshape(6, 2)
        seeds = kmeans_pp_seed(pts, 6, make_rng(0))
        assert sorted(map(tuple, seeds)) == sorted(map(tuple, pts))

    def test_k_one(self):
        pts = np.arange(10.0).reshape(5, 2)
        seeds = kmeans_pp_seed(pts, 1, make_rng(3))
        assert seeds.shape == (1, 2)
        assert any((seeds[0] == p).all() for p in pts)

    def test_too_few_points(self):
        with pytest.raises(TooFewPointsError):
            kmeans_pp_seed(np.zeros((2, 2)), 3, make_rng(0))

    def test_far_pairs_get_separated(self):
        # two tight pairs 10 apart; same-pair second seed has probability
        # eps^2/(eps^2 + ~2 L^2) ~ 5e-5, so 500 trials should all separate
        pts = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]])
        rng = make_rng(11)
        separated = 0
        for _ in range(500):
            seeds = kmeans_pp_seed(pts, 2, rng)
            separated += abs(seeds[0, 0] - seeds[1, 0]) > 5.0
        assert separated >= 495

    def test_identical_points_distinct_rows(self):
        pts = np.ones((4, 3))
        seeds = kmeans_pp_seed(pts, 3, make_rng(0))
        assert seeds.shape == (3, 3)


class TestLloyd:
    def test_two_points_1d(self):
        pts = np.array([[0.0], [10.0]])
        res = lloyd(pts, np.array([[1.0], [9.0]]))
        assert res.objective == 0.0
        np.testing.assert_array_equal(np.sort(res.centroids[:, 0]), [0.0, 10.0])

    def test_identical_points_zero_objective(self):
        pts = np.ones((6, 2))
        res = lloyd(pts, kmeans_pp_seed(pts, 3, make_rng(0)))
        assert res.objective == 0.0
        assert np.bincount(res.assignments, minlength=3).min() >= 1

    def test_matches_brute_force_on_six_points(self):
        rng = make_rng(5)
        pts = rng.normal(size=(6, 2))
        expected, _ = brute_force_two_means(pts)
        res = kmeans(pts, 2, make_rng(9), restarts=10)
        assert res.objective <= expected + 1e-9

    def test_objective_trace_non_increasing(self):
        rng = make_rng(21)
        for trial in range(20):
            pts = rng.normal(size=(30, 3))
            res = lloyd(pts, kmeans_pp_seed(pts, 4, rng))
            trace = np.asarray(res.objective_trace)
            assert (np.diff(trace) <= 1e-9).all()

    def test_fixpoint_assignments_match_centroids(self):
        rng = make_rng(31)
        pts = rng.normal(size=(40, 2))
        res = lloyd(pts, kmeans_pp_seed(pts, 3, rng), max_iters=200)
        if res.converged:
            d = pairwise_sq_dists(pts, res.centroids)
            np.testing.assert_array_equal(d.argmin(axis=1), res.assignments)
        else:
            assert res.iterations_run <= 200

    def test_deterministic_given_seed(self):
        pts = np.random.default_rng(1).normal(size=(25, 4))
        a = kmeans(pts, 3, make_rng(77))
        b = kmeans(pts, 3, make_rng(77))
        np.testing.assert_array_equal(a.assignments, b.assignments)
        np.testing.assert_array_equal(a.centroids, b.centroids)
        assert a.objective == b.objective


class TestRepairEmpty:
    def test_noop_when_all_populated(self):
        pts = np.array([[0.0], [1.0], [5.0]])
        assignments = np.array([0, 0, 1])
        centroids = np.array([[0.5], [5.0]])
        before = centroids.copy()
        assert repair_empty(pts, assignments, centroids) is False
        np.testing.assert_array_equal(centroids, before)

    def test_outlier_becomes_new_centroid(self):
        pts = np.array([[0.0], [0.1], [0.2], [100.0]])
        assignments = np.array([0, 0, 0, 0])
        centroids = np.array([[0.1], [55.0]])
        repair_empty(pts, assignments, centroids)
        assert assignments[3] == 1
        np.testing.assert_array_equal(centroids[1], [100.0])

    def test_no_empty_after_repair(self):
        rng = make_rng(13)
        pts = rng.normal(size=(10, 2))
        assignments = np.zeros(10, dtype=np.int64)
        centroids = rng.normal(size=(4, 2))
        repair_empty(pts, assignments, centroids)
        assert np.bincount(assignments, minlength=4).min() >= 1


class TestSplitTwo:
    def test_two_points(self):
        labels = split_two(np.array([[0.0], [1.0]]), make_rng(0))
        assert sorted(labels.tolist()) == [0, 1]

    def test_two_blobs_are_separated(self):
        rng = make_rng(17)
        blob_a = rng.normal(size=(5, 2)) * 0.1
        blob_b = rng.normal(size=(5, 2)) * 0.1 + 10.0
        pts = np.vstack([blob_a, blob_b])
        expected_obj, expected_labels = brute_force_two_means(pts)
        labels = split_two(pts, make_rng(3))
        same = (labels == expected_labels).all()
        flipped = (labels == 1 - expected_labels).all()
        assert same or flipped

    def test_identical_points_both_sides_nonempty(self):
        labels = split_two(np.ones((7, 3)), make_rng(2))
        counts = np.bincount(labels, minlength=2)
        assert counts.min() >= 1

    def test_single_point_raises(self):
        with pytest.raises(TooFewPointsError):
            split_two(np.ones((1, 3)), make_rng(0))


def test_restarted_lloyd_hits_brute_force_optimum_often():
    # overlapping 2-D normal clouds are the hard case: a handful of genuine
    # local minima survive 10 restarts, but well under 10% of instances
    rng = np.random.default_rng(2024)
    hits = 0
    trials = 100
    for _ in range(trials):
        n = int(rng.integers(4, 9))
        pts = rng.normal(size=(n, 2))
        expected, _ = brute_force_two_means(pts)
        res = kmeans(pts, 2, make_rng(int(rng.integers(1 << 30))), restarts=10)
        hits += res.objective <= expected + 1e-9
    assert hits >= 90

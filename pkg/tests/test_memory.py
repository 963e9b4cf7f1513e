import numpy as np
import pytest

from conftest import brute_force_two_means
from odclab.errors import CorruptCheckpointError
from odclab.memory import (
    CentroidsMemory,
    SamplesMemory,
    check_consistency,
    full_recompute,
    init_memories,
    load_snapshot,
    momentum_update,
    reassign,
    recompute_clusters,
    recompute_dirty,
    save_snapshot,
)
from odclab.numerics import make_rng


def unit_rows(rng, n, d):
    rows = rng.normal(size=(n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def make_memories(features, labels, n_clusters):
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=n_clusters).astype(np.int64)
    mem = SamplesMemory(features=np.array(features, dtype=np.float64),
                        labels=labels, counts=counts)
    cmem = CentroidsMemory(centroids=np.zeros((n_clusters, mem.features.shape[1])))
    recompute_clusters(mem, cmem, range(n_clusters))
    return mem, cmem


class TestInitMemories:
    def test_one_point_per_cluster(self):
        feats = np.eye(4)
        mem, cmem = init_memories(feats, 4, make_rng(0))
        assert np.bincount(mem.labels, minlength=4).tolist() == [1, 1, 1, 1]
        for idx in range(4):
            np.testing.assert_allclose(cmem.centroids[mem.labels[idx]], feats[idx])

    def test_two_blobs_separated(self):
        rng = make_rng(3)
        a = unit_rows(rng, 6, 3) * 0.01 + np.array([1.0, 0.0, 0.0])
        b = unit_rows(rng, 4, 3) * 0.01 + np.array([-1.0, 0.0, 0.0])
        feats = np.vstack([a, b])
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        expected_obj, expected_labels = brute_force_two_means(feats)
        mem, _ = init_memories(feats, 2, make_rng(1))
        same = (mem.labels == expected_labels).all()
        flipped = (mem.labels == 1 - expected_labels).all()
        assert same or flipped
        assert sorted(np.bincount(mem.labels).tolist()) == [4, 6]

    def test_counts_sum_to_n(self):
        feats = unit_rows(make_rng(9), 30, 5)
        mem, cmem = init_memories(feats, 7, make_rng(2))
        check_consistency(mem, cmem)
        assert mem.counts.sum() == 30
        assert len(cmem.dirty) == 0


class TestMomentumUpdate:
    def test_full_momentum_takes_fresh(self):
        mem, _ = make_memories(np.array([[1.0, 0.0]]), [0], 1)
        momentum_update(mem, 0, np.array([0.0, 5.0]), momentum=1.0)
        np.testing.assert_allclose(mem.features[0], [0.0, 1.0], atol=1e-15)

    def test_half_momentum_blend(self):
        mem, _ = make_memories(np.array([[1.0, 0.0]]), [0], 1)
        momentum_update(mem, 0, np.array([0.0, 2.0]), momentum=0.5)
        s = np.sqrt(2.0) / 2.0
        np.testing.assert_allclose(mem.features[0], [s, s], atol=1e-12)

    def test_parallel_fresh_is_fixed_point(self):
        mem, _ = make_memories(np.array([[0.6, 0.8]]), [0], 1)
        momentum_update(mem, 0, np.array([1.2, 1.6]), momentum=0.5)
        np.testing.assert_allclose(mem.features[0], [0.6, 0.8], atol=1e-12)

    def test_zero_fresh_counted_and_row_kept(self):
        mem, _ = make_memories(np.array([[1.0, 0.0]]), [0], 1)
        momentum_update(mem, 0, np.array([0.0, 0.0]), momentum=0.5)
        np.testing.assert_array_equal(mem.features[0], [1.0, 0.0])
        assert mem.skipped_updates == 1

    def test_rows_stay_unit(self):
        rng = make_rng(4)
        mem, _ = make_memories(unit_rows(rng, 10, 6), [0] * 10, 1)
        for _ in range(50):
            idx = int(rng.integers(10))
            momentum_update(mem, idx, rng.normal(size=6), momentum=0.5)
        norms = np.linalg.norm(mem.features, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-9)


class TestReassign:
    def test_exact_centroid_match(self):
        feats = np.eye(5)
        mem, cmem = make_memories(feats, [0, 1, 2, 3, 4], 5)
        mem.labels[2] = 0
        mem.counts = np.bincount(mem.labels, minlength=5).astype(np.int64)
        old, new = reassign(mem, cmem, 2)
        assert (old, new) == (0, 2)
        assert cmem.dirty == {0, 2}

    def test_tie_goes_to_lowest_index(self):
        # centroids 1 and 4 equidistant from the sample
        centroids = np.array([
            [10.0, 0.0], [1.0, 0.0], [10.0, 10.0], [-10.0, 3.0], [-1.0, 0.0],
        ])
        mem = SamplesMemory(
            features=np.array([[0.0, 1.0]]),
            labels=np.array([3], dtype=np.int64),
            counts=np.bincount([3], minlength=5).astype(np.int64),
        )
        cmem = CentroidsMemory(centroids=centroids)
        _, new = reassign(mem, cmem, 0)
        assert new == 1

    def test_matches_linear_scan_oracle(self):
        rng = make_rng(12)
        feats = unit_rows(rng, 10, 4)
        mem, cmem = make_memories(feats, rng.integers(0, 3, size=10), 3)
        cmem.centroids = rng.normal(size=(3, 4))
        for idx in range(10):
            expected = min(
                range(3),
                key=lambda c: (((mem.features[idx] - cmem.centroids[c]) ** 2).sum(), c),
            )
            _, new = reassign(mem, cmem, idx)
            assert new == expected
            check_consistency(mem, cmem, norm_tol=1e-6)

    def test_unchanged_label_not_dirty(self):
        feats = np.eye(3)
        mem, cmem = make_memories(feats, [0, 1, 2], 3)
        old, new = reassign(mem, cmem, 0)
        assert old == new == 0
        assert cmem.dirty == set()

    def test_invariant_under_centroid_relabeling(self):
        rng = make_rng(21)
        feats = unit_rows(rng, 8, 3)
        labels = rng.integers(0, 4, size=8)
        mem, cmem = make_memories(feats, labels, 4)
        perm = np.array([2, 0, 3, 1])  # new id of old cluster c is perm[c]
        inv = np.argsort(perm)
        mem2 = SamplesMemory(features=feats.copy(), labels=perm[labels],
                             counts=np.bincount(perm[labels], minlength=4).astype(np.int64))
        cmem2 = CentroidsMemory(centroids=cmem.centroids[inv].copy())
        for idx in range(8):
            _, new1 = reassign(mem, cmem, idx)
            _, new2 = reassign(mem2, cmem2, idx)
            assert perm[new1] == new2


class TestRecompute:
    def test_dirty_empty_noop(self):
        feats = np.eye(3)
        mem, cmem = make_memories(feats, [0, 1, 2], 3)
        before = cmem.centroids.copy()
        assert recompute_dirty(mem, cmem) == []
        np.testing.assert_array_equal(cmem.centroids, before)

    def test_singleton_cluster_centroid_is_member(self):
        feats = np.eye(3)
        mem, cmem = make_memories(feats, [0, 1, 1], 3)
        cmem.centroids[0] = 9.0
        cmem.dirty.add(0)
        empties = recompute_dirty(mem, cmem)
        np.testing.assert_array_equal(cmem.centroids[0], feats[0])
        assert empties == []

    def test_dirty_empty_cluster_flagged_and_stale(self):
        feats = np.eye(3)
        mem, cmem = make_memories(feats, [0, 1, 1], 3)
        # a reassignment away from cluster 2 leaves it dirty and empty
        mem.labels[:] = [0, 1, 1]
        cmem.dirty.update({1, 2})
        stale = cmem.centroids[2].copy()
        empties = recompute_dirty(mem, cmem)
        assert empties == [2]
        np.testing.assert_array_equal(cmem.centroids[2], stale)
        assert cmem.dirty == set()

    def test_mean_of_two_rows(self):
        feats = np.array([[1.0, 0.0], [0.0, 1.0]])
        mem, cmem = make_memories(feats, [0, 0], 1)
        cmem.centroids[0] = 0.0
        cmem.dirty.add(0)
        recompute_dirty(mem, cmem)
        np.testing.assert_allclose(cmem.centroids[0], [0.5, 0.5])

    def test_full_recompute_matches_scratch_oracle(self):
        rng = make_rng(31)
        feats = unit_rows(rng, 20, 4)
        labels = rng.integers(0, 5, size=20)
        mem, cmem = make_memories(feats, labels, 5)
        cmem.centroids = rng.normal(size=(5, 4))  # scramble
        full_recompute(mem, cmem)
        for c in range(5):
            members = feats[labels == c]
            if members.size:
                np.testing.assert_allclose(cmem.centroids[c], members.mean(axis=0),
                                           atol=1e-12)

    def test_full_recompute_idempotent(self):
        rng = make_rng(32)
        feats = unit_rows(rng, 12, 3)
        mem, cmem = make_memories(feats, rng.integers(0, 3, size=12), 3)
        full_recompute(mem, cmem)
        snapshot = cmem.centroids.copy()
        full_recompute(mem, cmem)
        np.testing.assert_array_equal(cmem.centroids, snapshot)

    def test_full_recompute_ignores_dirty_state(self):
        feats = np.array([[1.0, 0.0], [0.0, 1.0]])
        mem, cmem = make_memories(feats, [0, 1], 2)
        cmem.centroids[1] = 7.0
        assert not cmem.dirty  # empty dirty set must not skip the work
        full_recompute(mem, cmem)
        np.testing.assert_array_equal(cmem.centroids[1], [0.0, 1.0])


class TestSnapshot:
    def test_round_trip(self, tmp_path):
        rng = make_rng(41)
        feats = unit_rows(rng, 9, 4)
        mem, cmem = make_memories(feats, rng.integers(0, 3, size=9), 3)
        path = tmp_path / "mem.json"
        save_snapshot(mem, cmem, str(path))
        mem2, cmem2 = load_snapshot(str(path))
        np.testing.assert_array_equal(mem.features, mem2.features)
        np.testing.assert_array_equal(mem.labels, mem2.labels)
        np.testing.assert_array_equal(mem.counts, mem2.counts)
        np.testing.assert_array_equal(cmem.centroids, cmem2.centroids)
        save_snapshot(mem2, cmem2, str(tmp_path / "mem2.json"))
        assert (tmp_path / "mem.json").read_bytes() == (tmp_path / "mem2.json").read_bytes()

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorruptCheckpointError):
            load_snapshot(str(tmp_path / "gone.json"))

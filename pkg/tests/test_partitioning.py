import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import normalized_mutual_info_score

from blocksparse_lab.numerics import l2_normalize_rows
from blocksparse_lab.partitioning import (
    DEFAULT_I_MAX,
    affinity_step,
    cocluster,
    kmeans,
    kmeans_pair,
    nmi,
)

TRUTH = frozenset({frozenset(range(4)), frozenset(range(4, 8))})


def _two_groups(seed, spread=0.05):
    rng = np.random.default_rng(seed)
    a = np.array([3.0, 0.0, 0.0]) + spread * rng.standard_normal((4, 3))
    b = np.array([0.0, 3.0, 0.0]) + spread * rng.standard_normal((4, 3))
    return np.vstack([a, b])


def _two_partitions(n):
    """Every split of range(n) into two nonempty groups, as sets of groups."""
    for mask in range(1, 2 ** (n - 1)):
        left = frozenset(i for i in range(n) if mask >> i & 1)
        yield frozenset({left, frozenset(range(n)) - left})


def _scatter(points, groups):
    return sum(((points[list(g)] - points[list(g)].mean(axis=0)) ** 2).sum() for g in groups)


def _brute_best(points):
    return min(_two_partitions(len(points)), key=lambda p: _scatter(points, p))


def _member_mean_gap(x, part):
    worst = 0.0
    for b in range(part.k):
        idx = part.labels == b
        if idx.any():
            worst = max(worst, float(np.abs(part.centroids[b] - x[idx].mean(axis=0)).max()))
    return worst


class TestCocluster:
    def test_default_iterations(self):
        assert DEFAULT_I_MAX == 2
        x = _two_groups(0)
        assert cocluster(x, x, 2, 2).iterations_run == 2

    def test_singleton_blocks(self):
        rng = np.random.default_rng(0)
        q, k = rng.standard_normal((6, 3)), rng.standard_normal((7, 3))
        res = cocluster(q, k, 6, 7, seed=4)
        for x, part in ((q, res.query_partition), (k, res.key_partition)):
            assert sorted(part.labels.tolist()) == list(range(len(x)))
            np.testing.assert_array_equal(part.centroids[part.labels], x)

    @pytest.mark.parametrize("seed", range(5))
    def test_two_separated_groups(self, seed):
        x = _two_groups(seed)
        # the oracle scores partitions on normalized affinity to all query tokens
        affinity = l2_normalize_rows(x @ x.T)
        assert _brute_best(affinity) == TRUTH
        res = cocluster(x, x, 2, 2, seed=seed)
        assert res.key_partition.groups() == TRUTH
        assert res.query_partition.groups() == TRUTH

    @pytest.mark.parametrize("bad", [dict(k_q=0), dict(k_q=9), dict(k_k=9), dict(i_max=0)])
    def test_argument_errors(self, bad):
        x = _two_groups(0)
        kwargs = dict(k_q=2, k_k=2, i_max=2) | bad
        with pytest.raises(ValueError):
            cocluster(x, x, **kwargs)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            cocluster(np.ones((4, 3)), np.ones((4, 2)), 2, 2)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6))
    @settings(max_examples=25, deadline=None)
    def test_labels_and_centroid_consistency(self, seed, k_q, k_k):
        rng = np.random.default_rng(seed)
        q, k = rng.standard_normal((20, 4)), rng.standard_normal((24, 4))
        res = cocluster(q, k, k_q, k_k, seed=seed)
        for x, part, kk in ((q, res.query_partition, k_q), (k, res.key_partition, k_k)):
            assert part.labels.min() >= 0 and part.labels.max() < kk
            assert np.bincount(part.labels, minlength=kk).min() >= 1
            assert _member_mean_gap(x, part) <= 1e-12

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        q, k = rng.standard_normal((50, 6)), rng.standard_normal((50, 6))
        a, b = cocluster(q, k, 5, 7, seed=11), cocluster(q, k, 5, 7, seed=11)
        for pa, pb in ((a.query_partition, b.query_partition), (a.key_partition, b.key_partition)):
            np.testing.assert_array_equal(pa.labels, pb.labels)
            np.testing.assert_array_equal(pa.centroids, pb.centroids)

    def test_seed_recorded(self):
        x = _two_groups(0)
        assert cocluster(x, x, 2, 2, seed=123).seed == 123

    def test_query_dependent_key_partition(self):
        keys = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, -1.0], [-1.0, 1.0]])
        for seed in range(10):
            p1 = cocluster(np.array([[1.0, 0.0]]), keys, 1, 2, seed=seed).key_partition
            p2 = cocluster(np.array([[0.0, 1.0]]), keys, 1, 2, seed=seed).key_partition
            assert p1.groups() == frozenset({frozenset({0, 1}), frozenset({2, 3})})
            assert p2.groups() == frozenset({frozenset({0, 3}), frozenset({1, 2})})
            assert p1.groups() != p2.groups()


class TestAssignmentOptimality:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30)
    def test_no_key_improves_by_switching(self, seed):
        rng = np.random.default_rng(seed)
        keys = rng.standard_normal((15, 4))
        c_k, c_q = rng.standard_normal((4, 4)), rng.standard_normal((3, 4))
        labels, dist = affinity_step(keys, c_k, c_q)

        def unit(v):
            n = np.sqrt(sum(t * t for t in v))
            return [t / n for t in v] if n > 0 else list(v)

        p = [unit(row @ c_q.T) for row in keys]
        p_bar = [unit(row @ c_q.T) for row in c_k]
        for i, row in enumerate(p):
            d = [sum((a - b) ** 2 for a, b in zip(row, c)) for c in p_bar]
            assert d[labels[i]] <= min(d) + 1e-12
            assert labels[i] == d.index(min(d)) or abs(d[labels[i]] - min(d)) <= 1e-12
            assert dist[i] == pytest.approx(d[labels[i]], abs=1e-12)


class TestKMeans:
    def test_singletons(self):
        x = np.random.default_rng(0).standard_normal((6, 2))
        part = kmeans(x, 6, seed=1)
        assert sorted(part.labels.tolist()) == list(range(6))
        np.testing.assert_array_equal(part.centroids[part.labels], x)

    @pytest.mark.parametrize("seed", range(5))
    def test_two_groups_match_brute_force(self, seed):
        x = _two_groups(seed)
        assert _brute_best(x) == TRUTH
        assert kmeans(x, 2, seed=seed).groups() == TRUTH

    def test_identical_tokens_repair(self):
        x = np.tile([1.0, 2.0], (6, 1))
        a, b = kmeans(x, 2, seed=9), kmeans(x, 2, seed=9)
        assert sorted(np.bincount(a.labels, minlength=2).tolist()) == [1, 5]
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_centroid_consistency(self):
        x = np.random.default_rng(3).standard_normal((40, 3))
        assert _member_mean_gap(x, kmeans(x, 5, seed=2)) <= 1e-12

    @pytest.mark.parametrize("k, iters", [(0, 10), (7, 10), (2, 0)])
    def test_argument_errors(self, k, iters):
        with pytest.raises(ValueError):
            kmeans(np.ones((6, 2)), k, iters)

    def test_pair_uses_distinct_streams(self):
        x = np.random.default_rng(0).standard_normal((30, 3))
        res = kmeans_pair(x, x, 4, 4, seed=0)
        np.testing.assert_array_equal(res.query_partition.labels, kmeans(x, 4, seed=0).labels)
        np.testing.assert_array_equal(res.key_partition.labels, kmeans(x, 4, seed=1).labels)


class TestNMI:
    def test_identical(self):
        assert nmi([0, 1, 2, 0], [0, 1, 2, 0]) == pytest.approx(1.0)

    def test_relabeling(self):
        assert nmi([0, 0, 1, 1, 2], [2, 2, 0, 0, 1]) == pytest.approx(1.0)

    def test_independent(self):
        assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-15)

    def test_degenerate_entropies(self):
        assert nmi([0, 0, 0], [1, 1, 1]) == 1.0
        assert nmi([0, 0, 0], [0, 1, 2]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            nmi([0, 1], [0, 1, 2])

    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 5)), min_size=2, max_size=60))
    @settings(max_examples=60, deadline=None)
    def test_matches_sklearn(self, pairs):
        a, b = zip(*pairs)
        if len(set(a)) == 1 or len(set(b)) == 1:
            return  # sklearn's conventions differ in the single-cluster edge cases
        expected = normalized_mutual_info_score(a, b, average_method="arithmetic")
        assert nmi(a, b) == pytest.approx(expected, abs=1e-10)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        a, b = rng.integers(0, 4, 50), rng.integers(0, 3, 50)
        assert nmi(a, b) == pytest.approx(nmi(b, a), abs=1e-15)


def test_brute_force_helper_counts():
    assert sum(1 for _ in _two_partitions(8)) == 2 ** 7 - 1
    assert len(set(_two_partitions(4))) == 7
    assert all(len(p) == 2 for p in itertools.islice(_two_partitions(5), 10))

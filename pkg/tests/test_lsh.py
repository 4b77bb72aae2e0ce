import numpy as np
import pytest

from gais.errors import ConfigError
from gais.lsh import (
    MAX_SPLIT_DEPTH,
    HashTable,
    LshIndex,
    LshParams,
    bucket_quality,
    build_ml_graph,
    build_mvml_graph,
    build_sl_graph,
    hash_angular,
    hash_euclidean,
    level_params,
    merge_buckets,
    split_bucket,
    table_edges,
)


def edge_set(g, view=0, level=0):
    a = g.arc_set(view, level)
    return set(zip(a.src.tolist(), a.dst.tolist()))


class TestHashes:
    def test_zero_vector_all_ones(self):
        P = np.random.default_rng(0).normal(size=(3, 6))
        assert hash_angular(P, np.zeros(3)).tolist() == [1] * 6

    def test_antipodal_complementary(self):
        P = np.random.default_rng(1).normal(size=(4, 8))
        x = np.random.default_rng(2).normal(size=4)
        assert np.all(hash_angular(P, x) + hash_angular(P, -x) == 1)

    def test_single_bit(self):
        P = np.array([[1.0], [0.0]])
        assert hash_angular(P, np.array([-3.0, 5.0])).tolist() == [0]

    @pytest.mark.parametrize("value,expected", [(0.0, 0), (-0.5, -1), (2.0, 2)])
    def test_euclidean_floor(self, value, expected):
        P = np.array([[1.0]])
        assert hash_euclidean(P, np.zeros(1), 1.0, np.array([value])).tolist() == [expected]

    def test_rows(self):
        P = np.eye(2)
        codes = hash_euclidean(P, np.array([0.5, 0.0]), 2.0, np.array([[1.0, 3.0], [-1.0, -0.1]]))
        assert codes.tolist() == [[0, 1], [-1, -1]]


class TestSplit:
    def test_identical_points_hit_depth_cap(self):
        Z = np.ones((10, 3))
        out = split_bucket(Z, np.arange(10), (0,), theta=4, rng=np.random.default_rng(0))
        assert len(out) == 1
        key, members, capped = out[0]
        assert capped and len(members) == 10 and len(key) == 1 + MAX_SPLIT_DEPTH

    def test_symmetric_points_split_once(self):
        # 1-d: any fresh projection separates the sign of x
        Z = np.concatenate([-np.arange(1, 5), np.arange(1, 5)]).astype(float)[:, None]
        out = split_bucket(Z, np.arange(8), (), theta=4, rng=np.random.default_rng(0))
        assert sorted(len(m) for _, m, _ in out) == [4, 4]
        assert all(len(k) == 1 and not c for k, _, c in out)
        for key, members, _ in out:
            assert len(set(np.sign(Z[members, 0]).tolist())) == 1

    def test_at_threshold_untouched(self):
        Z = np.random.default_rng(0).normal(size=(5, 2))
        out = split_bucket(Z, np.arange(5), (1, 0), theta=5, rng=np.random.default_rng(0))
        assert out[0][0] == (1, 0) and len(out) == 1

    def test_post_split_bound(self):
        Z = np.random.default_rng(3).normal(size=(500, 4))
        out = split_bucket(Z, np.arange(500), (), theta=20, rng=np.random.default_rng(1))
        assert sum(len(m) for _, m, _ in out) == 500
        assert all(len(m) <= 20 for _, m, c in out if not c)


class TestMerge:
    def test_hamming_one_singletons(self):
        b = {(0, 1, 1, 0): np.array([0]), (0, 1, 1, 1): np.array([1])}
        out, _ = merge_buckets(b, 5)
        assert len(out) == 1 and list(out.values())[0].tolist() == [0, 1]

    def test_strict_size_bound(self):
        b = {(0, 0): np.arange(3), (0, 1): np.arange(3, 6)}
        out, _ = merge_buckets(b, 5)
        assert len(out) == 2

    def test_hamming_two(self):
        b = {(0, 0, 0, 0): np.array([0]), (0, 0, 1, 1): np.array([1])}
        out, _ = merge_buckets(b, 5)
        assert len(out) == 2

    def test_keeps_larger_code(self):
        b = {(0, 0): np.array([0]), (0, 1): np.array([1, 2])}
        out, _ = merge_buckets(b, 5)
        assert list(out) == [(0, 1)]

    def test_euclidean_l1_adjacency(self):
        b = {(2, -1): np.array([0]), (3, -1): np.array([1]), (5, 5): np.array([2])}
        out, _ = merge_buckets(b, 5)
        assert sorted(len(m) for m in out.values()) == [1, 2]

    def test_single_pass_pairs_only(self):
        b = {(0, 0): np.array([0]), (0, 1): np.array([1]), (1, 1): np.array([2])}
        out, _ = merge_buckets(b, 10)
        assert sorted(len(m) for m in out.values()) == [1, 2]

    def test_merge_safety(self):
        rng = np.random.default_rng(0)
        b = {tuple(rng.integers(0, 2, 5).tolist()): None for _ in range(40)}
        b = {k: np.arange(i * 10, i * 10 + rng.integers(1, 6)) for i, k in enumerate(b)}
        out, _ = merge_buckets(b, 6)
        before = sorted(len(m) for m in b.values())
        assert sum(len(m) for m in out.values()) == sum(before)
        grew = [m for k, m in out.items() if k not in b or len(m) != len(b[k])]
        assert all(len(m) < 6 for m in grew)


def two_blobs(n=50, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    centers = np.array([[5.0, 5.0, 0.0], [-5.0, 0.0, 5.0]])
    return centers[y] + 0.3 * rng.normal(size=(n, 3)), y


class TestBuildGraphs:
    def test_identical_points_connected(self):
        X = np.random.default_rng(0).normal(size=(20, 3))
        X[7] = X[3]
        g, _, _ = build_sl_graph(X, np.zeros(20, int), np.arange(20), LshParams(L=3, k=6, theta=40))
        assert (3, 7) in edge_set(g)

    def test_distinct_buckets_no_edges(self):
        t = table_from_labels(np.arange(6), 6)
        u, v = table_edges(t, 40, np.random.default_rng(0))
        assert len(u) == 0 and len(v) == 0

    def test_capped_bucket_degree_bound(self):
        t = table_from_labels(np.zeros(30, int), 30)
        t.capped = {(0,)}
        u, v = table_edges(t, 4, np.random.default_rng(0))
        assert np.all(np.bincount(u) == 4) and np.all(u != v)

    def test_blob_edges_mostly_intra(self):
        X, y = two_blobs()
        g, _, _ = build_sl_graph(X, y, np.arange(50), LshParams(L=5, k=4, seed=1))
        a = g.arc_set(0, 0)
        assert len(a) > 0
        assert np.mean(y[a.src] == y[a.dst]) >= 0.9

    def test_level_params(self):
        assert level_params(LshParams(L=5, k=2, theta=40), 1) == (10, 4, 20)
        assert [level_params(LshParams(L=3), m)[0] for m in (1, 2, 3)] == [6, 12, 24]
        assert level_params(LshParams(theta=5), 3)[2] == 2

    def test_ml_levels_stored_separately(self):
        X, y = two_blobs(80)
        g, index, report = build_ml_graph(X, y, np.arange(80), LshParams(L=2, k=2, M=3, theta=10))
        assert [a.key for a in g.arc_sets] == [(0, 0), (0, 1), (0, 2)]
        assert report["tables"] == 4 + 8 + 16
        assert [sum(t.level == m for t in index.tables) for m in (1, 2, 3)] == [4, 8, 16]

    def test_projection_overflow(self):
        X = np.random.default_rng(0).normal(size=(10, 1))
        with pytest.raises(ConfigError, match="fewer levels"):
            build_ml_graph(X, np.zeros(10, int), np.arange(10), LshParams(k=40, M=1))

    def test_mvml_single_view_matches_ml(self):
        X, y = two_blobs(60, seed=2)
        p = LshParams(L=2, k=3, M=2, seed=4)
        g1, _, _ = build_ml_graph(X, y, np.arange(60), p)
        g2, _, _ = build_mvml_graph(X, y, np.arange(60), [p], M=2, seed=4)
        assert [a.key for a in g1.arc_sets] == [a.key for a in g2.arc_sets]
        for a, b in zip(g1.arc_sets, g2.arc_sets):
            np.testing.assert_array_equal(a.src, b.src)
            np.testing.assert_array_equal(a.dst, b.dst)

    def test_mvml_two_views(self):
        X, y = two_blobs(60, seed=3)
        views = [LshParams(family="angular", L=2, k=3), LshParams(family="euclidean", L=2, k=2, w=1.0)]
        g, _, _ = build_mvml_graph(X, y, np.arange(60), views, M=2)
        assert [a.key for a in g.arc_sets] == [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_views_use_separate_streams(self):
        X, y = two_blobs(60, seed=5)
        p = LshParams(L=1, k=3)
        _, index, _ = build_mvml_graph(X, y, np.arange(60), [p, p], M=1)
        v0 = [t for t in index.tables if t.view == 0][0]
        v1 = [t for t in index.tables if t.view == 1][0]
        assert not np.allclose(v0.P, v1.P)

    def test_deterministic(self):
        X, y = two_blobs(70, seed=6)
        p = LshParams(L=3, k=3, M=2, seed=11)
        a, _, _ = build_ml_graph(X, y, np.arange(70), p)
        b, _, _ = build_ml_graph(X, y, np.arange(70), p)
        for s, t in zip(a.arc_sets, b.arc_sets):
            np.testing.assert_array_equal(s.src, t.src)

    def test_post_split_bound_in_tables(self):
        X = np.random.default_rng(0).normal(size=(400, 5))
        p = LshParams(L=2, k=2, theta=30, M=2, gamma_merge=2)
        _, index, _ = build_ml_graph(X, np.zeros(400, int), np.arange(400), p)
        for t in index.tables:
            theta_m = level_params(p, t.level)[2]
            assert all(len(m) <= theta_m for k, m in t.buckets.items() if k not in t.capped)


def table_from_labels(bucket_of, n):
    buckets = {(int(b),): np.flatnonzero(bucket_of == b) for b in np.unique(bucket_of)}
    return HashTable("angular", np.zeros((1, 1)), None, 1.0, buckets)


class TestBucketQuality:
    def test_pure_buckets(self):
        y = np.array([0] * 10 + [1] * 10)
        X = np.random.default_rng(0).normal(size=(20, 3))
        q = bucket_quality(LshIndex([table_from_labels(y, 20)], 20), X, y)
        assert q.purity == 1.0 and q.mean_bucket_size == 10.0

    def test_random_buckets_half_purity(self):
        rng = np.random.default_rng(1)
        n = 20_000
        y = np.arange(n) % 2
        X = rng.normal(size=(n, 3))
        q = bucket_quality(LshIndex([table_from_labels(rng.integers(0, 20, n), n)], n), X, y)
        assert abs(q.purity - 0.5) <= 0.05

    def test_single_bucket(self):
        y = np.arange(30) % 3
        X = np.random.default_rng(2).normal(size=(30, 4))
        q = bucket_quality(LshIndex([table_from_labels(np.zeros(30, int), 30)], 30), X, y)
        assert q.recall_at_5 == 1.0
        assert np.isnan(q.separation)
        assert q.to_json()["separation"] is None

    def test_ranges(self):
        X, y = two_blobs(200, seed=7)
        X = X + 10.0  # positive orthant keeps mean cosines positive
        g, index, _ = build_sl_graph(X, y, np.arange(200), LshParams(L=4, k=3))
        q = bucket_quality(index, X, y)
        assert 0.5 <= q.purity <= 1.0
        assert 0.0 <= q.recall_at_5 <= 1.0
        assert -1.0 <= q.pearson_rho <= 1.0
        assert q.separation > 1.0

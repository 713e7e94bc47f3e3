import math

import numpy as np
import pytest

from corsem.core import StatMap
from corsem.semantics import (OVERLAY_CATEGORIES, build_network,
                              cluster_mean_maps, hierarchy_overlay,
                              overlay_counts, similarity_matrix, to_distance,
                              ward_cluster, ward_merge_sequence)

CODE = {name: i for i, name in enumerate(OVERLAY_CATEGORIES)}


def corrected_map(t, label="m", df=40):
    t = np.asarray(t, dtype=np.float32)
    return StatMap(label=label, level="corrected", df=df,
                   beta=t / 2, se=np.zeros_like(t), t=t,
                   r2=np.zeros_like(t), p=np.ones_like(t))


def naive_ward_oracle(dist):
    """Recompute every pairwise cluster distance from the raw squared
    distances at each merge (no recurrence)."""
    d2 = np.asarray(dist, float) ** 2
    n = d2.shape[0]
    clusters = {i: [i] for i in range(n)}
    merges = []
    for step in range(n - 1):
        best = None
        for a in sorted(clusters):
            for b in sorted(clusters):
                if a >= b:
                    continue
                A, B = clusters[a], clusters[b]
                sab = sum(d2[i, j] for i in A for j in B) / (len(A) * len(B))
                saa = sum(d2[i, j] for i in A for j in A) / (2 * len(A) ** 2)
                sbb = sum(d2[i, j] for i in B for j in B) / (2 * len(B) ** 2)
                w = 2 * (len(A) * len(B) / (len(A) + len(B))) * (sab - saa - sbb)
                key = (w, a, b)
                if best is None or key < best:
                    best = key
        w, a, b = best
        merges.append((step, a, b, math.sqrt(max(w, 0.0))))
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]
    return merges


class TestOverlayCounts:
    def test_all_positive(self):
        maps = [corrected_map([2.0, 0.0], label=f"l{i}") for i in range(3)]
        counts = overlay_counts(maps)
        assert counts.total[0] == 3 and counts.positive[0] == 3
        assert counts.negative[0] == 0
        assert counts.total[1] == 0

    def test_zero_everywhere(self):
        maps = [corrected_map([0.0, 0.0], label=f"l{i}") for i in range(4)]
        counts = overlay_counts(maps)
        assert (counts.total == 0).all()

    def test_partition_identity(self):
        rng = np.random.default_rng(0)
        maps = [corrected_map(rng.choice([-3.0, 0.0, 3.0], size=50), label=f"l{i}")
                for i in range(10)]
        counts = overlay_counts(maps)
        assert (counts.total == counts.positive + counts.negative).all()
        assert (counts.total <= 10).all()

    def test_disjoint_planted_multiplicity(self):
        n = 60
        maps = []
        for i in range(6):
            t = np.zeros(n, dtype=np.float32)
            t[10 * i:10 * (i + 1)] = 4.0
            maps.append(corrected_map(t, label=f"l{i}"))
        counts = overlay_counts(maps)
        assert (counts.total == 1).all()

    def test_uncorrected_rejected(self):
        good = corrected_map([1.0])
        bad = StatMap(label="x", level="subject", df=3,
                      beta=np.zeros(1, np.float32), se=np.zeros(1, np.float32),
                      t=np.zeros(1, np.float32), r2=np.zeros(1, np.float32),
                      p=np.ones(1, np.float32))
        with pytest.raises(ValueError, match="corrected"):
            overlay_counts([good, bad])


class TestHierarchyOverlay:
    def test_all_nine_sign_patterns(self):
        upper_t = [1, -1, 1, 0, -1, 0, 1, -1, 0]
        lower_t = [1, -1, 0, 1, 0, -1, -1, 1, 0]
        expected = ["both_pos", "both_neg", "upper_only_pos", "lower_only_pos",
                    "upper_only_neg", "lower_only_neg", "conflict_pos_neg",
                    "conflict_neg_pos", "none"]
        overlay = hierarchy_overlay(corrected_map(upper_t, "up"),
                                    corrected_map(lower_t, "lo"))
        assert [OVERLAY_CATEGORIES[c] for c in overlay.codes] == expected

    def test_partition(self):
        rng = np.random.default_rng(1)
        up = corrected_map(rng.choice([-2.0, 0.0, 2.0], 200), "up")
        lo = corrected_map(rng.choice([-2.0, 0.0, 2.0], 200), "lo")
        overlay = hierarchy_overlay(up, lo)
        counts = overlay.counts()
        assert sum(counts.values()) == 200
        assert (overlay.codes >= 0).all() and (overlay.codes <= 8).all()

    def test_identical_maps_have_no_only_categories(self):
        rng = np.random.default_rng(2)
        t = rng.choice([-2.0, 0.0, 2.0], 100)
        overlay = hierarchy_overlay(corrected_map(t, "a"), corrected_map(t, "b"))
        counts = overlay.counts()
        for name in ("upper_only_pos", "lower_only_pos", "upper_only_neg",
                     "lower_only_neg", "conflict_pos_neg", "conflict_neg_pos"):
            assert counts[name] == 0


class TestSimilarityMatrix:
    def test_self_correlation(self):
        rng = np.random.default_rng(3)
        t = rng.normal(0, 1, 100)
        m = corrected_map(t, "a")
        sim = similarity_matrix([m, corrected_map(t, "b")])
        assert sim[0, 1] == pytest.approx(1.0, abs=1e-7)
        assert sim[0, 0] == 1.0

    def test_negation(self):
        rng = np.random.default_rng(4)
        t = rng.normal(0, 1, 100)
        sim = similarity_matrix([corrected_map(t, "a"), corrected_map(-t, "b")])
        assert sim[0, 1] == pytest.approx(-1.0, abs=1e-7)

    def test_independent_noise_weakly_correlated(self):
        rng = np.random.default_rng(5)
        a = corrected_map(rng.normal(0, 1, 1000), "a")
        b = corrected_map(rng.normal(0, 1, 1000), "b")
        sim = similarity_matrix([a, b])
        assert abs(sim[0, 1]) < 0.1

    def test_symmetric_unit_diagonal(self):
        rng = np.random.default_rng(6)
        maps = [corrected_map(rng.normal(0, 1, 80), f"l{i}") for i in range(6)]
        sim = similarity_matrix(maps)
        assert np.array_equal(sim, sim.T)
        assert np.array_equal(np.diag(sim), np.ones(6))

    def test_constant_map_rejected(self):
        good = corrected_map(np.random.default_rng(7).normal(0, 1, 10), "a")
        bad = corrected_map(np.zeros(10), "flat")
        with pytest.raises(ValueError, match="constant"):
            similarity_matrix([good, bad])


class TestToDistance:
    def test_known_values(self):
        s = np.array([[1.0, 1.0, -1.0, 0.0],
                      [1.0, 1.0, 0.5, 0.0],
                      [-1.0, 0.5, 1.0, 0.0],
                      [0.0, 0.0, 0.0, 1.0]])
        d = to_distance(s)
        assert d[0, 1] == 0.0
        assert d[0, 2] == 2.0
        assert d[0, 3] == 1.0
        assert (np.diag(d) == 0.0).all()

    def test_range_and_symmetry_random(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            n = rng.integers(2, 10)
            s = rng.uniform(-1, 1, (n, n))
            s = (s + s.T) / 2
            np.fill_diagonal(s, 1.0)
            d = to_distance(s)
            assert (d >= 0.0).all() and (d <= 2.0).all()
            assert np.array_equal(d, d.T)
            assert (np.diag(d) == 0.0).all()

    def test_out_of_range_rejected(self):
        s = np.array([[1.0, 1.5], [1.5, 1.0]])
        with pytest.raises(ValueError, match="outside"):
            to_distance(s)

    def test_bad_diagonal_rejected(self):
        s = np.array([[0.9, 0.2], [0.2, 1.0]])
        with pytest.raises(ValueError, match="diagonal"):
            to_distance(s)


class TestWardCluster:
    def test_k_equals_l(self):
        rng = np.random.default_rng(9)
        d = _random_distance(rng, 6)
        assert ward_cluster(d, 6).tolist() == [0, 1, 2, 3, 4, 5]

    def test_k_equals_one(self):
        rng = np.random.default_rng(10)
        d = _random_distance(rng, 5)
        assert ward_cluster(d, 1).tolist() == [0] * 5

    def test_two_well_separated_pairs(self):
        d = np.full((4, 4), 1.9)
        np.fill_diagonal(d, 0.0)
        d[0, 2] = d[2, 0] = 0.1
        d[1, 3] = d[3, 1] = 0.1
        assignment = ward_cluster(d, 2)
        assert assignment[0] == assignment[2]
        assert assignment[1] == assignment[3]
        assert assignment[0] != assignment[1]
        # ids numbered by first member: label 0's cluster is 0
        assert assignment[0] == 0 and assignment[1] == 1

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(60):
            n = int(rng.integers(2, 9))
            d = _random_distance(rng, n)
            mine = ward_merge_sequence(d)
            ref = naive_ward_oracle(d)
            assert [(s, a, b) for s, a, b, _ in mine] == \
                [(s, a, b) for s, a, b, _ in ref]
            for (_, _, _, h1), (_, _, _, h2) in zip(mine, ref):
                assert h1 == pytest.approx(h2, rel=1e-8, abs=1e-10)

    def test_tie_break_lexicographic(self):
        # four equidistant points: every pair ties at every step (the Ward
        # distance from {0,1} to a singleton stays 1.0 here), so the
        # lexicographic rule picks (0,1), then (0,2), then (0,3); the
        # naive oracle must agree
        d = np.full((4, 4), 1.0)
        np.fill_diagonal(d, 0.0)
        merges = ward_merge_sequence(d)
        assert [(a, b) for _, a, b, _ in merges] == [(0, 1), (0, 2), (0, 3)]
        ref = naive_ward_oracle(d)
        assert [(a, b) for _, a, b, _ in ref] == [(0, 1), (0, 2), (0, 3)]

    def test_k_out_of_range(self):
        d = _random_distance(np.random.default_rng(12), 4)
        with pytest.raises(ValueError):
            ward_cluster(d, 0)
        with pytest.raises(ValueError):
            ward_cluster(d, 5)


def _random_distance(rng, n):
    s = rng.uniform(-1, 1, (n, n))
    s = (s + s.T) / 2
    np.fill_diagonal(s, 1.0)
    return to_distance(s)


class TestClusterMeanMaps:
    def test_singleton_cluster(self):
        rng = np.random.default_rng(13)
        maps = [corrected_map(rng.normal(0, 1, 20), f"l{i}") for i in range(3)]
        means = cluster_mean_maps(maps, [0, 1, 2], 3)
        for i in range(3):
            np.testing.assert_array_equal(means[i], maps[i].t)

    def test_two_identical_maps(self):
        rng = np.random.default_rng(14)
        t = rng.normal(0, 1, 20)
        means = cluster_mean_maps([corrected_map(t, "a"), corrected_map(t, "b")],
                                  [0, 0], 1)
        np.testing.assert_allclose(means[0], t.astype(np.float32), rtol=1e-6)

    def test_cancellation(self):
        rng = np.random.default_rng(15)
        t = rng.normal(0, 1, 20).astype(np.float32)
        means = cluster_mean_maps([corrected_map(t, "a"), corrected_map(-t, "b")],
                                  [0, 0], 1)
        np.testing.assert_allclose(means[0], 0.0, atol=1e-7)

    def test_empty_cluster_rejected(self):
        maps = [corrected_map(np.ones(5), "a"), corrected_map(np.ones(5), "b")]
        with pytest.raises(ValueError, match="empty"):
            cluster_mean_maps(maps, [0, 2], 3)


class TestBuildNetwork:
    def test_spec_threshold_example(self):
        s = np.eye(3)
        s[0, 1] = s[1, 0] = 0.6
        s[0, 2] = s[2, 0] = 0.4
        s[1, 2] = s[2, 1] = 0.2
        net = build_network(s, ["a", "b", "c"], [0, 0, 1], 0.55)
        assert [(e[0], e[1]) for e in net.edges] == [("a", "b")]
        assert net.edges[0][2] == pytest.approx(0.6)

    def test_no_edges(self):
        s = np.eye(4) * 1.0
        net = build_network(s, list("abcd"), [0, 1, 2, 3], 0.55)
        assert net.edges == ()
        assert len(net.nodes) == 4

    def test_complete_graph(self):
        n = 5
        s = np.full((n, n), 0.9)
        np.fill_diagonal(s, 1.0)
        net = build_network(s, [f"l{i}" for i in range(n)], [0] * n, 0.55)
        assert len(net.edges) == n * (n - 1) // 2

    def test_brute_force_equivalence(self):
        rng = np.random.default_rng(16)
        for _ in range(30):
            n = int(rng.integers(2, 12))
            s = rng.uniform(-1, 1, (n, n))
            s = (s + s.T) / 2
            np.fill_diagonal(s, 1.0)
            labels = [f"l{i}" for i in range(n)]
            net = build_network(s, labels, np.zeros(n, int), 0.55)
            expected = {(labels[i], labels[j])
                        for i in range(n) for j in range(i + 1, n)
                        if s[i, j] > 0.55}
            assert {(a, b) for a, b, _ in net.edges} == expected

    def test_threshold_strictness(self):
        s = np.eye(2)
        s[0, 1] = s[1, 0] = 0.55
        net = build_network(s, ["a", "b"], [0, 0], 0.55)
        assert net.edges == ()  # strictly greater-than

    def test_json_and_graphml_shape(self):
        s = np.eye(2)
        s[0, 1] = s[1, 0] = 0.8
        net = build_network(s, ["dog", "cat"], [0, 1], 0.5)
        doc = net.to_json_dict()
        assert doc["nodes"] == [{"label": "dog", "cluster": 0},
                                {"label": "cat", "cluster": 1}]
        assert doc["edges"][0]["a"] == "dog" and doc["edges"][0]["b"] == "cat"
        xml = net.to_graphml()
        assert '<node id="dog">' in xml and "<edge source" in xml
        assert "graphml" in xml

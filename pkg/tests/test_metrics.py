import itertools
import math

import numpy as np
import pytest

from cocomg.metrics import (
    Partition,
    clustering_accuracy,
    f1_scores,
    format_metrics,
    kmeans,
    linear_probe,
    lloyd,
    nmi,
    silhouette,
)
from cocomg.numerics import make_rng


def brute_accuracy(p, y):
    k = max(max(p), max(y)) + 1
    best = 0
    for perm in itertools.permutations(range(k)):
        best = max(best, sum(perm[a] == b for a, b in zip(p, y)))
    return best / len(p)


def blobs(rng, centers, per, sigma=1.0):
    centers = np.asarray(centers, dtype=float)
    x = np.concatenate([c + sigma * rng.normal(size=(per, centers.shape[1])) for c in centers])
    return x, np.repeat(np.arange(len(centers)), per)


class TestLinearProbe:
    def test_separable_1d(self):
        z = np.array([[-1.0]] * 10 + [[1.0]] * 10)
        y = np.array([0] * 10 + [1] * 10)
        m = linear_probe(z, y, z, y)
        assert m["macro_f1"] == 1.0 and m["micro_f1"] == 1.0

    def test_perfect_predictions(self):
        y = np.array([0, 1, 2, 2, 1])
        assert f1_scores(y, y) == (1.0, 1.0)

    def test_micro_equals_accuracy(self):
        r = make_rng(0)
        for _ in range(50):
            y = r.integers(0, 4, 40)
            pred = r.integers(0, 4, 40)
            assert f1_scores(y, pred)[1] == pytest.approx(np.mean(y == pred), abs=1e-15)

    def test_macro_hand_computed(self):
        # class 0: tp=1 fp=1 fn=1 -> 0.5 ; class 1: tp=1 fp=1 fn=1 -> 0.5
        assert f1_scores([0, 0, 1, 1], [0, 1, 1, 0]) == (0.5, 0.5)

    def test_missing_train_class_warns(self):
        z = np.array([[-1.0], [-1.1], [1.0], [1.1], [0.0]])
        with pytest.warns(UserWarning):
            m = linear_probe(z[:4], [0, 0, 1, 1], z, [0, 0, 1, 1, 2])
        assert m["micro_f1"] == pytest.approx(0.8)
        assert m["macro_f1"] == pytest.approx((1 + 1 + 0) / 3, abs=0.15)

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            linear_probe(np.ones((3, 2)), [1, 1, 1], np.ones((2, 2)), [1, 1])

    def test_deterministic(self, rng):
        z, y = blobs(rng, [[0, 0], [2, 2], [0, 3]], 20)
        assert linear_probe(z, y, z, y) == linear_probe(z, y, z, y)

    def test_invariant_to_global_scale(self, rng):
        z, y = blobs(rng, [[0, 0], [2, 2], [0, 3]], 20)
        assert linear_probe(z, y, z, y) == linear_probe(1000.0 * z, y, 1000.0 * z, y)

    def test_faint_dimensions_stay_faint(self, rng):
        # two strong informative dims plus many tiny noise dims; per-column
        # standardization would blow the noise up to equal weight
        sig, y = blobs(rng, [[0, 0], [6, 0], [0, 6]], 40)
        z = np.hstack([sig, 1e-3 * rng.normal(size=(len(sig), 60))])
        tr = rng.permutation(len(z))[:24]
        te = np.setdiff1d(np.arange(len(z)), tr)
        assert linear_probe(z[tr], y[tr], z[te], y[te])["micro_f1"] > 0.95


class TestKmeans:
    def test_k_equals_n(self, rng):
        x = rng.normal(size=(6, 2))
        p = kmeans(x, 6, rng)
        assert sorted(p.assignments.tolist()) == list(range(6))
        assert p.inertia == pytest.approx(0.0, abs=1e-12)

    def test_k_one(self, rng):
        x = rng.normal(size=(20, 3))
        labels, centers, _ = lloyd(x, x[:1].copy())
        np.testing.assert_allclose(centers[0], x.mean(axis=0), atol=1e-12)
        assert np.all(labels == 0)

    def test_separated_blobs_every_restart(self):
        r = make_rng(3)
        x, y = blobs(r, [[0, 0], [10, 0], [5, 8.66]], 30)
        p = kmeans(x, 3, r)
        assert nmi(p, y) == 1.0
        for restart in range(10):
            from cocomg.metrics import _kmeanspp

            labels, _, _ = lloyd(x, _kmeanspp(x, 3, make_rng((3, restart))))
            assert nmi(labels, y) == 1.0

    def test_inertia_non_increasing(self):
        r = make_rng(8)
        for _ in range(10):
            x = r.normal(size=(60, 3))
            p = kmeans(x, 5, r)
            assert all(b <= a + 1e-9 for a, b in zip(p.inertia_trace, p.inertia_trace[1:]))

    def test_empty_cluster_reseeded(self):
        x = np.array([[0.0], [0.1], [10.0], [10.1]])
        labels, centers, trace = lloyd(x, np.array([[0.0], [100.0], [10.0]]))
        assert len(set(labels.tolist())) == 3
        assert all(b <= a for a, b in zip(trace, trace[1:]))

    def test_errors(self, rng):
        with pytest.raises(ValueError):
            kmeans(np.ones((3, 2)), 0, rng)
        with pytest.raises(ValueError):
            kmeans(np.ones((3, 2)), 4, rng)

    def test_deterministic(self):
        x = make_rng(1).normal(size=(50, 2))
        a = kmeans(x, 4, make_rng(2)).assignments
        b = kmeans(x, 4, make_rng(2)).assignments
        assert np.array_equal(a, b)


class TestClusteringAccuracy:
    def test_permutation(self):
        assert clustering_accuracy([2, 2, 0, 0, 1], [0, 0, 1, 1, 2]) == 1.0

    def test_swap(self):
        assert clustering_accuracy([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0

    def test_exhaustive_case(self):
        assert brute_accuracy([0, 1, 0, 1, 2], [0, 0, 1, 1, 2]) == 0.6
        assert clustering_accuracy([0, 1, 0, 1, 2], [0, 0, 1, 1, 2]) == pytest.approx(0.6)

    def test_against_brute_force(self):
        r = make_rng(4)
        for _ in range(50):
            k = int(r.integers(1, 6))
            p = r.integers(0, k, 25).tolist()
            y = r.integers(0, k, 25).tolist()
            assert clustering_accuracy(p, y) == pytest.approx(brute_accuracy(p, y), abs=1e-12)

    def test_hungarian_path_agrees(self):
        import cocomg.metrics as m

        r = make_rng(6)
        for _ in range(20):
            p, y = r.integers(0, 6, 40), r.integers(0, 6, 40)
            exhaustive = clustering_accuracy(p, y)
            old = m.EXHAUSTIVE_MATCH_MAX_K
            m.EXHAUSTIVE_MATCH_MAX_K = 0
            try:
                assert clustering_accuracy(p, y) == pytest.approx(exhaustive, abs=1e-12)
            finally:
                m.EXHAUSTIVE_MATCH_MAX_K = old

    def test_mismatched_k_padded(self):
        assert clustering_accuracy([0, 0, 0, 0], [0, 1, 2, 3]) == 0.25

    def test_large_k(self):
        y = np.arange(30) % 12
        assert clustering_accuracy((y + 5) % 12, y) == 1.0


class TestNmi:
    def test_identical(self):
        assert nmi([0, 1, 2, 0, 1], [0, 1, 2, 0, 1]) == pytest.approx(1.0)

    def test_single_cluster(self):
        assert nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0

    def test_independent(self):
        assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-15)

    def test_direct_contingency(self):
        p, y = [0, 0, 1, 1, 1], [0, 0, 0, 1, 1]
        n = 5
        cont = {(0, 0): 2, (1, 0): 1, (1, 1): 2}
        pp, py = {0: 2, 1: 3}, {0: 3, 1: 2}
        mi = sum(c / n * math.log((c / n) / (pp[a] / n * py[b] / n)) for (a, b), c in cont.items())
        hp = -sum(c / n * math.log(c / n) for c in pp.values())
        hy = -sum(c / n * math.log(c / n) for c in py.values())
        assert nmi(p, y) == pytest.approx(mi / math.sqrt(hp * hy), abs=1e-12)

    def test_permutation_invariance(self):
        r = make_rng(10)
        for _ in range(50):
            p, y = r.integers(0, 4, 30), r.integers(0, 5, 30)
            perm_p, perm_y = r.permutation(4), r.permutation(5)
            assert nmi(perm_p[p], perm_y[y]) == pytest.approx(nmi(p, y), abs=1e-12)
            assert clustering_accuracy(perm_p[p], perm_y[y]) == pytest.approx(clustering_accuracy(p, y), abs=1e-12)


class TestSilhouette:
    def test_separated(self, rng):
        x, y = blobs(rng, [[0, 0], [50, 50]], 20, sigma=0.5)
        assert silhouette(x, Partition.from_labels(y)) > 0.9

    def test_identical_points(self):
        assert silhouette(np.ones((6, 2)), [0, 0, 0, 1, 1, 1]) == 0.0

    def test_singleton_contributes_zero(self):
        x = np.array([[0.0], [0.2], [5.0]])
        y = [0, 0, 1]
        a = 0.2
        per_point = [(5.0 - a) / 5.0, (4.8 - a) / 4.8, 0.0]
        assert silhouette(x, y) == pytest.approx(np.mean(per_point))

    def test_matches_pairwise_definition(self, rng):
        x = rng.normal(size=(15, 3))
        y = rng.integers(0, 3, 15)
        d = np.linalg.norm(x[:, None] - x[None], axis=2)
        scores = []
        for i in range(15):
            same = [j for j in range(15) if y[j] == y[i] and j != i]
            if not same:
                scores.append(0.0)
                continue
            a = np.mean(d[i, same])
            b = min(np.mean(d[i, y == c]) for c in set(y.tolist()) if c != y[i])
            scores.append((b - a) / max(a, b))
        assert silhouette(x, y) == pytest.approx(np.mean(scores), abs=1e-12)

    def test_needs_two_clusters(self):
        with pytest.raises(ValueError):
            silhouette(np.ones((3, 2)), [0, 0, 0])


def test_partition_validation():
    with pytest.raises(ValueError):
        Partition(np.array([0, 3]), 2)


def test_metric_tsv():
    assert format_metrics({"nmi": 1.0, "accuracy": 0.5}) == "metric\tvalue\nnmi\t1.000000\naccuracy\t0.500000\n"

import numpy as np
import pytest

from augcluster.clustering import kmeans
from augcluster.errors import InputError
from oracles import best_partition_inertia as partition_optimum


class TestKMeans:
    def test_one_dimensional_example(self):
        x = np.array([[0.0], [0.1], [10.0], [10.1]])
        assert partition_optimum(x, 2) == pytest.approx(0.01, abs=1e-12)
        res = kmeans(x, 2, seed=0)
        assert res.inertia == pytest.approx(0.01, abs=1e-9)
        assert res.labels[0] == res.labels[1] != res.labels[2] == res.labels[3]
        np.testing.assert_allclose(sorted(res.centroids[:, 0]), [0.05, 10.05])

    def test_single_cluster(self):
        x = np.random.default_rng(0).normal(size=(10, 3))
        res = kmeans(x, 1)
        np.testing.assert_allclose(res.centroids[0], x.mean(axis=0))
        assert res.inertia == pytest.approx(x.var(axis=0).sum() * len(x))

    def test_every_point_own_cluster(self):
        x = np.random.default_rng(1).normal(size=(6, 2))
        res = kmeans(x, 6)
        assert res.inertia == pytest.approx(0.0, abs=1e-12)
        assert sorted(res.labels.tolist()) == list(range(6))

    @pytest.mark.parametrize("k", [0, 5])
    def test_bad_k(self, k):
        with pytest.raises(InputError):
            kmeans(np.zeros((4, 2)), k)

    def test_deterministic(self):
        x = np.random.default_rng(2).normal(size=(30, 4))
        a, b = kmeans(x, 3, seed=5), kmeans(x, 3, seed=5)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert a.inertia == b.inertia

    def test_no_empty_clusters_with_duplicates(self):
        x = np.array([[0.0, 0.0]] * 5 + [[1.0, 1.0]] * 2 + [[5.0, 5.0]])
        res = kmeans(x, 3, seed=0)
        assert set(res.labels.tolist()) == {0, 1, 2}

    def test_inertia_history_non_increasing(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = rng.normal(size=(int(rng.integers(5, 40)), 2))
            res = kmeans(x, int(rng.integers(1, 5)), seed=int(rng.integers(100)))
            h = res.inertia_history + [res.inertia]
            assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))

    def test_seeding_quality_small_sets(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(7, 2))
        opt = partition_optimum(x, 3)
        runs = [kmeans(x, 3, seed=s).inertia for s in range(50)]
        assert min(runs) == pytest.approx(opt, abs=1e-9)
        assert sum(abs(r - opt) < 1e-9 for r in runs) >= 45

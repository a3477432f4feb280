import numpy as np
import pytest

from federico.data import (
    Dataset, gen_cluster_classification, gen_sine_clients, load_csv_pool, partition_by_labels,
    partition_dirichlet, train_test_split,
)
from federico.errors import ConfigError


def pool(n_labels=10, per_label=40, dims=3, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(n_labels), per_label)
    x = rng.normal(size=(y.size, dims)) + y[:, None]
    return Dataset(x, y)


def all_rows(clients):
    return np.concatenate([np.concatenate([c.train.x, c.test.x]) for c in clients])


class TestSplit:
    def test_sizes(self):
        d = Dataset(np.arange(10.0).reshape(-1, 1), np.arange(10))
        s = train_test_split(d, 0.8, seed=1)
        assert (len(s.train), len(s.test)) == (8, 2)

    def test_half_split_is_a_partition(self):
        d = Dataset(np.arange(100.0).reshape(-1, 1), np.arange(100))
        s = train_test_split(d, 0.5, seed=3)
        assert len(s.train) == len(s.test) == 50
        both = np.concatenate([s.train.y, s.test.y])
        assert sorted(both.tolist()) == list(range(100))

    def test_same_seed_same_split(self):
        d = Dataset(np.arange(30.0).reshape(-1, 1), np.arange(30))
        a, b = train_test_split(d, 0.8, 7), train_test_split(d, 0.8, 7)
        np.testing.assert_array_equal(a.train.y, b.train.y)

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.2])
    def test_bad_fraction(self, frac):
        with pytest.raises(ConfigError):
            train_test_split(Dataset(np.zeros((5, 1)), np.zeros(5)), frac)


class TestSine:
    def test_segments(self):
        clients = gen_sine_clients(8, 50, seed=0)
        for i, c in enumerate(clients):
            x = np.concatenate([c.train.x, c.test.x]).ravel()
            assert x.min() >= i * np.pi / 4 and x.max() < (i + 1) * np.pi / 4
            assert c.distribution_id == i
        assert len(clients[0].train) == 40

    def test_noiseless(self):
        for c in gen_sine_clients(4, 20, noise_std=0.0, seed=2):
            np.testing.assert_array_equal(c.train.y.ravel(), np.sin(c.train.x.ravel()))

    def test_local_line_fits_its_segment(self):
        for c in gen_sine_clients(8, 50, noise_std=0.1, seed=0):
            x, y = c.train.x.ravel(), c.train.y.ravel()
            slope, icpt = np.polyfit(x, y, 1)
            assert np.mean((slope * x + icpt - y) ** 2) < 0.05

    def test_reproducible(self):
        a, b = gen_sine_clients(3, 10, seed=5), gen_sine_clients(3, 10, seed=5)
        for ca, cb in zip(a, b):
            assert ca.train.x.tobytes() == cb.train.x.tobytes()
            assert ca.test.y.tobytes() == cb.test.y.tobytes()

    def test_preconditions(self):
        with pytest.raises(ConfigError):
            gen_sine_clients(1, 10)
        with pytest.raises(ConfigError):
            gen_sine_clients(4, 3)


class TestClusters:
    def test_round_robin(self):
        clients = gen_cluster_classification(4, 8, seed=0)
        assert [c.distribution_id for c in clients] == [0, 1, 2, 3, 0, 1, 2, 3]

    def test_label_sets(self):
        clients = gen_cluster_classification(4, 8, classes_per_dist=3, n_per_client=200, seed=1)
        labels = [set(np.concatenate([c.train.y, c.test.y]).tolist()) for c in clients]
        for i in range(4):
            assert labels[i] == labels[i + 4] == {3 * i, 3 * i + 1, 3 * i + 2}

    @pytest.mark.parametrize("shared", [True, False])
    def test_far_apart_centers_are_separable(self, shared):
        clients = gen_cluster_classification(4, 8, dims=2, sep=100.0, seed=3, shared_layout=shared)
        for c in clients:
            labels = np.unique(c.train.y)
            cent = np.stack([c.train.x[c.train.y == k].mean(axis=0) for k in labels])
            dist = ((c.test.x[:, None, :] - cent[None]) ** 2).sum(axis=2)
            assert np.mean(labels[dist.argmin(axis=1)] == c.test.y) > 0.99

    def test_centers_respect_sep(self):
        clients = gen_cluster_classification(2, 2, dims=3, classes_per_dist=4, n_per_client=2000,
                                             sep=5.0, noise_std=0.1, seed=4)
        c = clients[0]
        cent = np.stack([c.train.x[c.train.y == k].mean(axis=0) for k in range(4)])
        d = np.linalg.norm(cent[:, None] - cent[None], axis=2)
        assert d[np.triu_indices(4, 1)].min() > 5.0 - 0.05

    def test_shared_layout_reuses_positions(self):
        clients = gen_cluster_classification(2, 2, dims=2, n_per_client=4000, noise_std=0.1, seed=6)
        means = [np.stack([c.train.x[c.train.y == k].mean(axis=0) for k in np.unique(c.train.y)])
                 for c in clients]
        np.testing.assert_allclose(means[0], means[1], atol=0.02)

    def test_preconditions(self):
        with pytest.raises(ConfigError):
            gen_cluster_classification(1, 4)
        with pytest.raises(ConfigError):
            gen_cluster_classification(5, 4)


class TestPartitions:
    def test_label_groups_disjoint_and_cover(self):
        p = pool(10)
        clients = partition_by_labels(p, 2, 2, seed=0)
        sets = [set(np.concatenate([c.train.y, c.test.y]).tolist()) for c in clients]
        assert len(sets[0]) == len(sets[1]) == 5
        assert not sets[0] & sets[1]
        assert sets[0] | sets[1] == set(range(10))

    def test_each_group_serves_two_clients(self):
        clients = partition_by_labels(pool(8), 4, 8, seed=1)
        ids = [c.distribution_id for c in clients]
        assert ids == [0, 1, 2, 3, 0, 1, 2, 3]
        sets = [set(np.concatenate([c.train.y, c.test.y]).tolist()) for c in clients]
        for i in range(4):
            assert sets[i] == sets[i + 4]

    def test_conserves_samples(self):
        p = pool(8)
        rows = all_rows(partition_by_labels(p, 4, 8, seed=2))
        assert rows.shape == p.x.shape
        np.testing.assert_array_equal(np.sort(rows, axis=0), np.sort(p.x, axis=0))

    def test_too_many_groups(self):
        with pytest.raises(ConfigError):
            partition_by_labels(pool(3), 4, 8)

    def test_dirichlet_conserves_samples(self):
        p = pool(10)
        clients = partition_dirichlet(p, 2, 10, alpha=0.4, seed=0)
        assert len(clients) == 10
        rows = all_rows(clients)
        np.testing.assert_array_equal(np.sort(rows, axis=0), np.sort(p.x, axis=0))

    def test_dirichlet_large_alpha_is_near_uniform(self):
        p = pool(4, per_label=1000)
        clients = partition_dirichlet(p, 2, 5, alpha=1e6, seed=1)
        shares = np.array([len(c.train) + len(c.test) for c in clients]) / len(p)
        np.testing.assert_allclose(shares, 0.2, atol=0.02)

    def test_dirichlet_bad_alpha(self):
        with pytest.raises(ConfigError):
            partition_dirichlet(pool(4), 2, 4, alpha=0.0)


class TestCsv:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "pool.csv"
        path.write_text("a,b,label\n0.5,1,0\n-2,3.25,2\n", encoding="utf-8")
        d = load_csv_pool(path)
        np.testing.assert_array_equal(d.x, [[0.5, 1.0], [-2.0, 3.25]])
        np.testing.assert_array_equal(d.y, [0, 2])

    @pytest.mark.parametrize("text", ["", "a,label\n", "a,label\n1,x\n", "a,label\n1,0.5\n",
                                      "a,b,label\n1,0\n"])
    def test_rejects(self, tmp_path, text):
        path = tmp_path / "bad.csv"
        path.write_text(text, encoding="utf-8")
        with pytest.raises(ConfigError):
            load_csv_pool(path)

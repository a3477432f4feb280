import numpy as np
import pytest

from federico.baselines import fine_tune, run_fedavg, run_fedavg_plus, run_local, weighted_average
from federico.data import gen_sine_clients
from federico.errors import ConfigError
from federico.models import ModelSpec, batch_loss
from federico.protocol import build_nodes

LIN = ModelSpec("linear_regression", 1)


def nodes_for(K=4, seed=0, noise=0.1, **kw):
    trains = [c.train.samples for c in gen_sine_clients(K, 20, noise_std=noise, seed=seed)]
    return build_nodes(trains, LIN, seed, **kw)


class TestLocal:
    def test_noiseless_loss_decreases(self):
        # Sum reduction over segments near 2*pi has curvature of several hundred, so SGD
        # needs a small step to stay stable.
        nodes = nodes_for(noise=0.0, optimizer="sgd")
        res = run_local(nodes, 50, 1e-3)
        losses = np.array(res.train_loss)
        assert np.all(losses[-1] < losses[0])

    def test_no_bytes(self):
        res = run_local(nodes_for(), 5, 0.01)
        assert res.bytes_sent == [0] * 5

    def test_single_client_equals_fedavg(self):
        X = np.linspace(0, 1, 10).reshape(-1, 1)
        data = [(X, 2 * X[:, 0] + 1)]
        a = run_local(build_nodes(data, LIN, 3, optimizer="sgd"), 20, 0.05)
        b = run_fedavg(build_nodes(data, LIN, 3, optimizer="sgd"), 20, 0.05)
        np.testing.assert_allclose(a.params[0], b.params[0], rtol=1e-13)


class TestAverage:
    def test_two_points(self):
        out = weighted_average([np.array([1.0, 0.0]), np.array([3.0, 4.0])], [1, 1])
        np.testing.assert_array_equal(out, [2.0, 2.0])

    def test_sizes_weight_the_mean(self):
        out = weighted_average([np.array([0.0]), np.array([4.0])], [3, 1])
        np.testing.assert_array_equal(out, [1.0])

    def test_order_invariant(self):
        rng = np.random.default_rng(0)
        params = [rng.normal(size=6) * 10.0 ** rng.integers(-3, 4) for _ in range(7)]
        sizes = rng.integers(5, 50, size=7)
        perm = rng.permutation(7)
        a = weighted_average(params, sizes)
        b = weighted_average([params[k] for k in perm], sizes[perm])
        assert a.tobytes() == b.tobytes()


class TestFedAvg:
    def test_bytes_per_round(self):
        nodes = nodes_for(5)
        res = run_fedavg(nodes, 3, 0.01)
        assert res.bytes_sent == [2 * 5 * nodes[0].params.nbytes] * 3

    def test_everyone_ends_on_the_global_model(self):
        nodes = nodes_for()
        res = run_fedavg(nodes, 10, 0.01, local_steps=2)
        for n, p in zip(nodes, res.params):
            np.testing.assert_array_equal(n.params, res.global_params)
            np.testing.assert_array_equal(p, res.global_params)

    def test_homogeneous_clients_match_local(self):
        # With identical data and SGD, every local copy takes the same step, so the
        # average equals any one of them.
        X = np.linspace(-1, 1, 8).reshape(-1, 1)
        data = [(X, np.sin(X[:, 0]))] * 3
        nodes = build_nodes(data, LIN, 0, optimizer="sgd")
        start = nodes[0].params.copy()
        res = run_fedavg(nodes, 15, 0.05)
        solo = build_nodes(data[:1], LIN, 0, optimizer="sgd")
        solo[0].params = start
        np.testing.assert_allclose(res.global_params, run_local(solo, 15, 0.05).params[0], rtol=1e-12)

    def test_local_steps_validated(self):
        with pytest.raises(ConfigError, match="local_steps"):
            run_fedavg(nodes_for(), 1, 0.01, local_steps=0)

    def test_heterogeneous_global_fit_is_poor(self):
        nodes = nodes_for(8, optimizer="adam")
        res = run_fedavg(nodes, 300, 0.01)
        locals_ = run_local(nodes_for(8, optimizer="adam"), 300, 0.01)
        fed = [batch_loss(LIN, res.global_params, "mse", *n.train) for n in nodes]
        loc = [batch_loss(LIN, p, "mse", *n.train) for n, p in zip(nodes, locals_.params)]
        assert np.mean(fed) > 5 * np.mean(loc)


class TestFedAvgPlus:
    def test_zero_lr_tuning_is_fedavg(self):
        a = run_fedavg(nodes_for(), 10, 0.01)
        b = run_fedavg_plus(nodes_for(), 10, 0.01, fine_tune_lr=0.0)
        for p in b.params:
            np.testing.assert_array_equal(p, a.global_params)

    def test_tuning_moves_toward_local_data(self):
        nodes = nodes_for(8, optimizer="sgd")
        res = run_fedavg_plus(nodes, 50, 1e-3, fine_tune_epochs=20)
        before = [batch_loss(LIN, res.global_params, "mse", *n.train) for n in nodes]
        after = [batch_loss(LIN, p, "mse", *n.train) for n, p in zip(nodes, res.params)]
        assert np.all(np.array(after) < np.array(before))

    def test_epochs_validated(self):
        nodes = nodes_for()
        with pytest.raises(ConfigError, match="fine_tune_epochs"):
            fine_tune(nodes, nodes[0].params, 0, 0.01)

import numpy as np
import pytest

from federico.data import gen_cluster_classification, gen_sine_clients
from federico.errors import ConfigError, ProtocolIntegrityError
from federico.mixture import LossTracker, MixtureState, fresh_state
from federico.models import ModelSpec
from federico.protocol import (
    GRADIENT_PAYLOAD, MODEL_PAYLOAD, RoundConfig, RoundMessage, SamplerConfig, Transport,
    build_nodes, client_rngs, run_round, run_rounds, sample_neighbors,
)

LIN = ModelSpec("linear_regression", 1)


def sine_nodes(K=4, seed=0, **kw):
    trains = [c.train.samples for c in gen_sine_clients(K, 20, seed=seed)]
    return build_nodes(trains, LIN, seed, **kw)


class TestSampler:
    def test_uniform_when_exploring(self):
        rng = np.random.default_rng(0)
        cfg = SamplerConfig(M=3, epsilon=1.0)
        counts = np.zeros(9)
        draws = 100_000
        w = np.random.default_rng(1).dirichlet(np.ones(9))
        for _ in range(draws):
            for j in sample_neighbors(w, 4, cfg, rng):
                counts[j] += 1
        assert counts[4] == 0
        freq = np.delete(counts, 4) / draws
        np.testing.assert_allclose(freq, 3 / 8, atol=0.01)

    def test_greedy_top_m(self):
        w = np.array([0.05, 0.3, 0.1, 0.25, 0.3])
        cfg = SamplerConfig(M=3, epsilon=0.0)
        assert sample_neighbors(w, 0, cfg, np.random.default_rng(0)) == [1, 4, 3]
        assert sample_neighbors(w, 4, cfg, np.random.default_rng(0)) == [1, 3, 2]

    def test_greedy_ties_lowest_id(self):
        cfg = SamplerConfig(M=2, epsilon=0.0)
        assert sample_neighbors(np.full(5, 0.2), 1, cfg, np.random.default_rng(0)) == [0, 2]

    def test_one_hot(self):
        w = np.zeros(8)
        w[5] = 1.0
        assert sample_neighbors(w, 0, SamplerConfig(M=1, epsilon=0.0), np.random.default_rng(0)) == [5]

    def test_greedy_exhaustive_small(self):
        # Every weight vector over a small grid agrees with a sort by (-w, id).
        cfg = SamplerConfig(M=2, epsilon=0.0)
        levels = [0.0, 0.1, 0.2]
        rng = np.random.default_rng(0)
        for a in levels:
            for b in levels:
                for c in levels:
                    for d in levels:
                        w = np.array([a, b, c, d, 0.1])
                        for me in range(5):
                            expect = sorted((j for j in range(5) if j != me), key=lambda j: (-w[j], j))[:2]
                            assert sample_neighbors(w, me, cfg, rng) == expect

    def test_accepts_mixture_state(self):
        s = fresh_state(4)
        assert len(sample_neighbors(s, 0, SamplerConfig(3, 0.0), np.random.default_rng(0))) == 3

    def test_distinct(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            got = sample_neighbors(np.ones(6) / 6, 2, SamplerConfig(5, 0.5), rng)
            assert sorted(got) == [0, 1, 3, 4, 5]

    @pytest.mark.parametrize("M,eps,key", [(0, 0.3, "sampler.M"), (4, 0.3, "sampler.M"),
                                           (2, 1.5, "sampler.epsilon"), (2, -0.1, "sampler.epsilon")])
    def test_validation(self, M, eps, key):
        with pytest.raises(ConfigError, match=key):
            SamplerConfig(M, eps).validate(4)


class TestTransport:
    def test_orders_by_sender_and_counts_bytes(self):
        t = Transport()
        for s in (3, 1, 2):
            t.send(RoundMessage(MODEL_PAYLOAD, s, 0, 1, np.zeros(4)))
        msgs = t.collect(0, 1, MODEL_PAYLOAD, expect=[1, 2, 3])
        assert [m.sender for m in msgs] == [1, 2, 3]
        assert t.bytes_sent == 3 * 32 and t.messages_sent == 3
        assert t.pending() == 0

    def test_missing_message(self):
        t = Transport()
        t.send(RoundMessage(GRADIENT_PAYLOAD, 1, 0, 1, np.zeros(2)))
        with pytest.raises(ProtocolIntegrityError):
            t.collect(0, 1, GRADIENT_PAYLOAD, expect=[1, 2])

    def test_duplicate_message(self):
        t = Transport()
        for _ in range(2):
            t.send(RoundMessage(GRADIENT_PAYLOAD, 1, 0, 1, np.zeros(2)))
        with pytest.raises(ProtocolIntegrityError):
            t.collect(0, 1, GRADIENT_PAYLOAD)


class TestRound:
    def test_two_clients_match_hand_computation(self):
        X = [np.array([[0.0], [1.0], [2.0]]), np.array([[1.0], [-1.0], [3.0]])]
        Y = [np.array([1.0, 2.0, 2.5]), np.array([0.0, 1.0, -1.0])]
        nodes = build_nodes(list(zip(X, Y)), LIN, seed=5, beta=0.6, optimizer="sgd")
        phi = [n.params.copy() for n in nodes]
        eta = 0.05
        cfg = RoundConfig(SamplerConfig(M=1, epsilon=0.3), lr=eta)
        trace = run_round(nodes, Transport(), cfg, 1)
        assert trace.neighbors == [[1], [0]]

        def loss(p, i):
            r = p[0] * X[i][:, 0] + p[1] - Y[i]
            return 0.5 * np.sum(r * r)

        def dloss(p, i):
            r = p[0] * X[i][:, 0] + p[1] - Y[i]
            return np.array([np.sum(r * X[i][:, 0]), np.sum(r)])

        W = np.empty((2, 2))
        for i in range(2):
            tracked = 0.6 * np.array([loss(phi[0], i), loss(phi[1], i)])
            e = np.exp(-(tracked - tracked.min()))
            W[i] = e / e.sum()
        for i in range(2):
            step = W[0, i] * dloss(phi[i], 0) + W[1, i] * dloss(phi[i], 1)
            np.testing.assert_allclose(nodes[i].params, phi[i] - eta * step, rtol=1e-13)
        np.testing.assert_allclose(trace.weights, W, rtol=1e-13)

    def test_unused_model_is_not_updated(self):
        nodes = sine_nodes(3, optimizer="sgd")
        before = nodes[2].params.copy()
        # An infinite accumulated loss pins every client's weight on model 2 at 0, so
        # nobody samples it greedily and its owner scales its own gradient by 0.
        for n in nodes:
            tracker = LossTracker("accumulative", np.array([0.0, 0.0, np.inf]), np.zeros(3))
            w = np.array([0.5, 0.5, 0.0])
            n.mixture = MixtureState(w, w.copy(), tracker)
        cfg = RoundConfig(SamplerConfig(M=1, epsilon=0.0), lr=0.1)
        run_round(nodes, Transport(), cfg, 1)
        np.testing.assert_array_equal(nodes[2].params, before)
        assert not np.array_equal(nodes[0].params, build_nodes(
            [c.train.samples for c in gen_sine_clients(3, 20, seed=0)], LIN, 0)[0].params)

    def test_message_conservation_and_bytes(self):
        nodes = sine_nodes(6)
        cfg = RoundConfig(SamplerConfig(M=2, epsilon=0.3), lr=0.01, local_steps=3)
        traces = run_rounds(nodes, cfg, 5)
        d_bytes = nodes[0].params.nbytes
        for tr in traces:
            pairs = sum(len(b) for b in tr.neighbors)
            # Per step: one model and one gradient per (client, neighbor) pair.
            assert tr.messages == 2 * pairs * 3
            assert tr.bytes_sent == tr.messages * d_bytes
            assert tr.all_to_all_bytes == 2 * 6 * 5 * d_bytes * 3
            assert tr.bytes_sent < tr.all_to_all_bytes

    def test_weights_stay_on_simplex(self):
        nodes = sine_nodes(5)
        traces = run_rounds(nodes, RoundConfig(SamplerConfig(2, 0.3)), 20)
        for tr in traces:
            np.testing.assert_allclose(tr.weights.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(tr.weights >= 0)

    def test_mini_batch_runs(self):
        nodes = sine_nodes(4)
        traces = run_rounds(nodes, RoundConfig(SamplerConfig(2, 0.3), batch_size=5), 3)
        assert len(traces) == 3

    def test_holdout_scores_on_held_out_part(self):
        trains = [c.train.samples for c in gen_sine_clients(3, 20, seed=1)]
        nodes = build_nodes(trains, LIN, 0, holdout_frac=0.25)
        assert [len(n.train.x) for n in nodes] == [12] * 3
        assert [len(n.holdout.x) for n in nodes] == [4] * 3
        all_x = np.sort(np.concatenate([nodes[0].train.x, nodes[0].holdout.x]).ravel())
        np.testing.assert_array_equal(all_x, np.sort(trains[0].x.ravel()))
        run_rounds(nodes, RoundConfig(SamplerConfig(1, 0.3)), 2)


class TestDeterminism:
    def test_rng_streams_depend_on_seed_and_client_only(self):
        a = client_rngs(7, 3)[1].random(4)
        b = client_rngs(7, 3)[1].random(4)
        c = client_rngs(7, 4)[1].random(4)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_workers_do_not_change_results(self):
        clients = gen_cluster_classification(4, 8, n_per_client=30, seed=2)
        spec = ModelSpec("logistic_regression", 2, 8)
        trains = [c.train.samples for c in clients]
        cfg = RoundConfig(SamplerConfig(3, 0.3), loss_kind="cross_entropy", batch_size=10)
        runs = []
        for workers in (1, 4):
            nodes = build_nodes(trains, spec, 3)
            traces = run_rounds(nodes, cfg, 15, workers=workers)
            runs.append((np.stack([t.weights for t in traces]).tobytes(),
                         b"".join(n.params.tobytes() for n in nodes)))
        assert runs[0] == runs[1]

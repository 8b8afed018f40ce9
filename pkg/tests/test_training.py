"""Trainer: recording identities, determinism, dropout, persistence."""

import numpy as np
import numpy.testing as npt
import pytest

from conftest import random_net
from lipscope.network import Network, grad_input, random_network, singular_extremes
from lipscope.tasks import Dataset, gen_sinusoid
from lipscope.training import (
    DivergenceError,
    RunLog,
    TrainConfig,
    load_run_log,
    neuron_frequencies,
    run_training,
    save_run_log,
    sgd_step,
)


def small_dataset(rng, n, dim, binary=False):
    X = rng.uniform(-1, 1, size=(n, dim))
    y = rng.integers(0, 2, size=n).astype(float) if binary else rng.normal(size=n)
    return Dataset(X, y, {"kind": "test"})


class TestConfig:
    def test_requires_exactly_one_horizon(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=2, iterations=10)
        with pytest.raises(ValueError):
            TrainConfig()

    def test_schedule_lookup(self):
        cfg = TrainConfig(lr=[[0, 0.1], [3, 0.01]], iterations=5)
        assert cfg.lr_at(0) == 0.1
        assert cfg.lr_at(2) == 0.1
        assert cfg.lr_at(3) == 0.01
        assert cfg.lr_at(100) == 0.01

    def test_schedule_must_start_at_zero(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=[[1, 0.1]], iterations=5)

    def test_bad_loss_and_dropout(self):
        with pytest.raises(ValueError):
            TrainConfig(loss="huber", epochs=1)
        with pytest.raises(ValueError):
            TrainConfig(dropout="quarter", epochs=1)

    def test_hash_sensitivity(self):
        a = TrainConfig(epochs=2, seed=1)
        b = TrainConfig(epochs=2, seed=1)
        c = TrainConfig(epochs=2, seed=2)
        assert a.config_hash() == b.config_hash() != c.config_hash()


class TestStepIdentities:
    def test_zero_update_at_exact_fit(self):
        net = Network([np.array([[2.0, -1.0]])], [np.array([3.0])], ["identity"])
        x = np.array([3.0, 2.0])
        rec = sgd_step(net, x[None, :], [7.0], lr=0.1)
        assert rec.epsilon == 0.0
        assert rec.phi is None
        assert rec.bias1_update_norm == 0.0
        npt.assert_array_equal(net.weights[0], [[2.0, -1.0]])
        npt.assert_array_equal(net.biases[0], [3.0])

    def test_phi_equals_gradient_norm_with_identity_first_layer(self, rng):
        # frozen identity first layer: sigma_1 = sigma_n = 1 and the
        # sandwich collapses to equality with the local gradient norm
        ds = small_dataset(rng, 20, 4)
        net = random_network([4, 4, 6, 1], seed=3)
        net.weights[0] = np.eye(4)
        for t in range(200):
            i = int(rng.integers(20))
            gn = np.linalg.norm(grad_input(net, ds.X[i]))
            rec = sgd_step(net, ds.X[i][None, :], [ds.y[i]], lr=0.01,
                           freeze_first_weights=True, sigma_pair=(1.0, 1.0), t=t)
            if rec.phi is not None:
                npt.assert_allclose(rec.phi, gn, rtol=1e-9, atol=1e-12)

    def test_sandwich_on_random_nets(self, rng):
        # phi * sigma_n <= ||grad f|| <= phi * sigma_1 at every step
        for _ in range(10):
            net = random_net(rng, max_depth=4, max_width=10)
            ds = small_dataset(rng, 15, net.input_dim)
            for t in range(50):
                i = int(rng.integers(15))
                s1, sn = singular_extremes(net.weights[0])
                gn = np.linalg.norm(grad_input(net, ds.X[i]))
                rec = sgd_step(net, ds.X[i][None, :], [ds.y[i]], lr=0.005, t=t)
                if rec.phi is None:
                    continue
                assert gn <= rec.phi * s1 * (1 + 1e-9) + 1e-12
                assert gn >= rec.phi * sn * (1 - 1e-9) - 1e-12

    def test_freeze_keeps_first_weights(self, rng):
        ds = small_dataset(rng, 10, 3)
        net = random_network([3, 5, 1], seed=0)
        w1 = net.weights[0].copy()
        b1 = net.biases[0].copy()
        cfg = TrainConfig(epochs=2, lr=0.05, freeze_first_weights=True, seed=4)
        run_training(net, ds, cfg)
        npt.assert_array_equal(net.weights[0], w1)
        assert np.any(net.biases[0] != b1)

    def test_bce_epsilon_recoverable_from_head_output(self, rng):
        ds = small_dataset(rng, 12, 3, binary=True)
        net = random_network([3, 6, 1], head="sigmoid", seed=9)
        cfg = TrainConfig(epochs=2, lr=0.05, loss="bce", seed=1)
        log = run_training(net, ds, cfg)
        for rec in log.records():
            y = ds.y[rec.sampled_indices[0]]
            npt.assert_allclose(rec.epsilon, 1.0 / abs(1.0 - y - rec.head_output),
                                rtol=1e-12)


class TestRunTraining:
    def test_bit_identical_replay(self, rng):
        ds = small_dataset(rng, 15, 4)
        cfg = TrainConfig(epochs=3, lr=0.01, seed=7, dropout="half")
        net_a = random_network([4, 6, 1], seed=2)
        net_b = net_a.copy()
        log_a = run_training(net_a, ds, cfg)
        log_b = run_training(net_b, ds, cfg)
        assert log_a.digest() == log_b.digest()
        for wa, wb in zip(net_a.weights, net_b.weights):
            npt.assert_array_equal(wa, wb)

    def test_seed_changes_trajectory(self, rng):
        ds = small_dataset(rng, 15, 4)
        net_a = random_network([4, 6, 1], seed=2)
        net_b = net_a.copy()
        log_a = run_training(net_a, ds, TrainConfig(epochs=2, lr=0.01, seed=1))
        log_b = run_training(net_b, ds, TrainConfig(epochs=2, lr=0.01, seed=2))
        assert log_a.digest() != log_b.digest()

    def test_matches_manual_step_loop(self, rng):
        # same streams, same math: run_training is sgd_step in a loop
        ds = small_dataset(rng, 9, 3)
        cfg = TrainConfig(epochs=2, lr=0.02, seed=5, dropout="half")
        net_a = random_network([3, 4, 4, 1], seed=6)
        net_b = net_a.copy()
        log = run_training(net_a, ds, cfg)

        children = np.random.SeedSequence(5).spawn(2)
        sample_rng = np.random.Generator(np.random.PCG64(children[0]))
        dropout_rng = np.random.Generator(np.random.PCG64(children[1]))
        for t in range(18):
            idx = sample_rng.integers(0, 9, size=1)
            keep = [dropout_rng.random((1, n)) >= 0.5 for n in net_b.hidden_sizes]
            rec = sgd_step(net_b, ds.X[idx], ds.y[idx], lr=0.02, keep_masks=keep, t=t)
            assert rec.sampled_indices == (0,)  # indices not passed through here
            assert log.sample_idx[t, 0] == idx[0]
            npt.assert_allclose(log.epsilon[t], rec.epsilon, rtol=0, atol=0)
        for wa, wb in zip(net_a.weights, net_b.weights):
            npt.assert_array_equal(wa, wb)

    def test_zero_iteration_run(self, rng):
        ds = small_dataset(rng, 5, 2)
        net = random_network([2, 3, 1], seed=1)
        before = net.copy()
        log = run_training(net, ds, TrainConfig(iterations=0, seed=0))
        assert len(log) == 0
        assert [t for t, _ in log.checkpoints] == [0]
        npt.assert_array_equal(net.weights[0], before.weights[0])
        assert log.digest()  # digest well defined on the empty log

    def test_divergence_guard_names_iteration(self, rng):
        ds = small_dataset(rng, 10, 3)
        net = random_network([3, 8, 1], seed=3)
        with pytest.raises(DivergenceError, match="iteration"):
            run_training(net, ds, TrainConfig(epochs=50, lr=1e9, seed=0))

    def test_checkpoint_stride(self, rng):
        ds = small_dataset(rng, 5, 2)
        net = random_network([2, 3, 1], seed=1)
        cfg = TrainConfig(epochs=4, lr=0.01, seed=0, checkpoint_stride_epochs=2)
        log = run_training(net, ds, cfg)
        assert [t for t, _ in log.checkpoints] == [0, 10, 20]

    def test_epoch_is_n_points_iterations(self, rng):
        ds = small_dataset(rng, 7, 2)
        net = random_network([2, 3, 1], seed=1)
        log = run_training(net, ds, TrainConfig(epochs=3, lr=0.01, seed=0))
        assert len(log) == 21
        assert log.epoch_starts() == [0, 7, 14]

    def test_zero_slope_iterations_flagged_not_dropped(self):
        # exact fits record epsilon 0 with absent phi; the update is zero,
        # so the rows stay in the log and the net never moves
        ds = Dataset(np.array([[1.0], [2.0]]), np.array([0.0, 0.0]), {})
        net = Network(
            [np.array([[0.0]]), np.array([[0.0]])],
            [np.array([0.0]), np.array([0.0])],
            ["relu", "identity"],
        )
        log = run_training(net, ds, TrainConfig(epochs=2, lr=0.1, seed=3))
        assert len(log) == 4
        assert log.zero_slope().all()
        assert np.isnan(log.phi).all()
        assert log.zero_gradient().all()
        assert (log.bias1_trace == 0.0).all()
        # contrast run: a sample with nonzero residual is not flagged
        ds2 = Dataset(np.array([[1.0], [2.0]]), np.array([0.0, 1.0]), {})
        log2 = run_training(net.copy(), ds2, TrainConfig(epochs=2, lr=0.1, seed=3))
        npt.assert_array_equal(log2.zero_slope(), log2.epsilon == 0.0)
        assert not log2.zero_slope().all()

    def test_bias_trace_matches_checkpoints(self, rng):
        ds = small_dataset(rng, 6, 2)
        net = random_network([2, 4, 1], seed=8)
        log = run_training(net, ds, TrainConfig(epochs=3, lr=0.02, seed=2))
        for t, ck in log.checkpoints:
            npt.assert_array_equal(log.bias1_trace[t], ck.biases[0])


class TestDropout:
    def test_mask_frequency_near_half(self):
        # all units pre-active, so the post-dropout pattern is the mask
        net = Network(
            [np.ones((6, 1)), np.ones((1, 6))],
            [np.full(6, 10.0), np.zeros(1)],
            ["relu", "identity"],
        )
        X = np.linspace(0.5, 1.0, 50)[:, None]
        ds = Dataset(X, np.zeros(50), {})
        cfg = TrainConfig(iterations=10000, lr=1e-12, seed=13, dropout="half",
                          record_patterns=True, record_bias_trace=False)
        log = run_training(net, ds, cfg)
        assert all(p[0].layers[0].all() for p in log.patterns_pre)
        kept = np.array([p[0].layers[0] for p in log.patterns_post], dtype=float)
        freq = kept.mean(axis=0)
        assert np.all(np.abs(freq - 0.5) <= 0.02)

    def test_dropout_off_patterns_agree(self, rng):
        ds = small_dataset(rng, 8, 3)
        net = random_network([3, 5, 1], seed=4)
        cfg = TrainConfig(epochs=1, lr=0.01, seed=2, record_patterns=True)
        log = run_training(net, ds, cfg)
        for pre, post in zip(log.patterns_pre, log.patterns_post):
            assert pre == post


class TestNeuronFrequencies:
    def test_known_geometry(self):
        net = Network(
            [np.eye(2), np.array([[1.0, 1.0]])],
            [np.zeros(2), np.zeros(1)],
            ["relu", "identity"],
        )
        X = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
        nf = neuron_frequencies(net, X)
        npt.assert_allclose(nf.per_layer[0], [0.5, 0.5])
        assert nf.p_min == 0.5
        assert nf.p_avg == 0.5

    def test_dead_unit_gives_zero_min(self):
        net = Network(
            [np.array([[1.0], [-0.0]]), np.array([[1.0, 1.0]])],
            [np.array([0.0, -1.0]), np.zeros(1)],
            ["relu", "identity"],
        )
        nf = neuron_frequencies(net, np.array([[1.0], [2.0]]))
        assert nf.p_min == 0.0
        npt.assert_allclose(nf.per_layer[0], [1.0, 0.0])

    def test_matches_pattern_recount(self, rng):
        from lipscope.network import forward

        net = random_net(rng)
        X = rng.normal(size=(30, net.input_dim))
        nf = neuron_frequencies(net, X)
        counts = [np.zeros(n) for n in net.hidden_sizes]
        for x in X:
            _, pat = forward(net, x)
            for l, mask in enumerate(pat.layers):
                counts[l] += mask
        for l in range(len(counts)):
            npt.assert_allclose(nf.per_layer[l], counts[l] / 30.0, atol=1e-12)


class TestPersistence:
    def test_round_trip(self, rng, tmp_path):
        ds = small_dataset(rng, 10, 3)
        net = random_network([3, 5, 1], seed=1)
        cfg = TrainConfig(epochs=3, lr=0.02, seed=6)
        log = run_training(net, ds, cfg)
        save_run_log(log, tmp_path)
        back = load_run_log(tmp_path)
        npt.assert_array_equal(back.epsilon, log.epsilon)
        npt.assert_array_equal(back.phi, log.phi)
        npt.assert_array_equal(back.sigma1, log.sigma1)
        npt.assert_array_equal(back.loss, log.loss)
        npt.assert_array_equal(back.head_output, log.head_output)
        npt.assert_array_equal(back.bias1_trace, log.bias1_trace)
        assert [t for t, _ in back.checkpoints] == [t for t, _ in log.checkpoints]
        for (_, a), (_, b) in zip(back.checkpoints, log.checkpoints):
            for wa, wb in zip(a.weights, b.weights):
                npt.assert_array_equal(wa, wb)
        assert back.config.config_hash() == cfg.config_hash()

    def test_trajectory_header(self, rng, tmp_path):
        ds = small_dataset(rng, 4, 2)
        net = random_network([2, 3, 1], seed=1)
        log = run_training(net, ds, TrainConfig(epochs=1, lr=0.01, seed=0))
        log.write_trajectory_csv(tmp_path / "trajectory.csv")
        header = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
        assert header == "t,sample_idx,epsilon,db1_norm,phi,sigma1,sigman,loss,head_output"

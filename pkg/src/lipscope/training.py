"""Instrumented SGD with per-iteration complexity statistics.

Every iteration records, alongside the loss, the first-layer bias
update norm divided by the step size and the loss slope. Within one
linear region that ratio exactly matches the norm of the backward row
vector through the hidden stack, so together with the extreme singular
values of the first weight matrix it sandwiches the local Lipschitz
constant at the sampled point. The trainer therefore stores, per step:
loss slope, bias update norm, the ratio (phi), sigma_1/sigma_n of W_1
at step time, the head output, and bookkeeping norms for later audits.

Randomness: ``SeedSequence(config.seed).spawn(2)`` yields the sampling
stream (child 0) and the dropout stream (child 1); the init stream of
``random_network`` is separate. Replaying the same initial network,
dataset and config reproduces the log bit-exactly.

Dropout ("half") deactivates each hidden unit's output independently
with probability 1/2 at the end of the forward pass, per sample and
per iteration, with no 1/p rescaling at train or test time; the masked
forward is what the backward pass and the recorded statistics see.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .network import (
    ActivationPattern,
    Network,
    forward_many,
    load_network,
    network_to_dict,
    save_network,
    sigmoid,
    singular_extremes,
)

LOSSES = ("mse", "bce")
DROPOUT_MODES = ("off", "half")
DIVERGENCE_LOSS = 1e12


class DivergenceError(RuntimeError):
    """Training produced a non-finite parameter or an exploding loss."""

    def __init__(self, iteration, message):
        super().__init__("iteration %d: %s" % (iteration, message))
        self.iteration = iteration


@dataclass
class TrainConfig:
    """Declarative training setup; JSON-clean and hashable.

    ``lr`` is a constant or a piecewise-constant schedule given as
    [[start_iteration, rate], ...] with start iterations ascending from
    0. Exactly one of ``epochs`` / ``iterations`` must be set; an epoch
    is n_points consecutive with-replacement draws.
    """

    lr: object = 0.001
    epochs: int = None
    iterations: int = None
    batch_size: int = 1
    loss: str = "mse"
    dropout: str = "off"
    seed: int = 0
    record_patterns: bool = False
    freeze_first_weights: bool = False
    checkpoint_stride_epochs: int = 1
    record_bias_trace: bool = True
    stop_train_mse: float = None

    def __post_init__(self):
        if (self.epochs is None) == (self.iterations is None):
            raise ValueError("set exactly one of epochs / iterations")
        if self.loss not in LOSSES:
            raise ValueError("loss must be one of %s, got %r" % (LOSSES, self.loss))
        if self.dropout not in DROPOUT_MODES:
            raise ValueError("dropout must be one of %s, got %r" % (DROPOUT_MODES, self.dropout))
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.checkpoint_stride_epochs < 1:
            raise ValueError("checkpoint_stride_epochs must be >= 1")
        if self.stop_train_mse is not None:
            if self.loss != "mse":
                raise ValueError("stop_train_mse only applies to mse runs")
            self.stop_train_mse = float(self.stop_train_mse)
            if not self.stop_train_mse > 0.0:
                raise ValueError("stop_train_mse must be positive")
        if not isinstance(self.lr, (int, float)):
            sched = [[int(t), float(a)] for t, a in self.lr]
            if not sched or sched[0][0] != 0:
                raise ValueError("lr schedule must start at iteration 0")
            if any(b[0] <= a[0] for a, b in zip(sched, sched[1:])):
                raise ValueError("lr schedule breakpoints must be ascending")
            self.lr = sched
        else:
            self.lr = float(self.lr)

    def lr_at(self, t):
        if isinstance(self.lr, float):
            return self.lr
        rate = self.lr[0][1]
        for start, a in self.lr:
            if t >= start:
                rate = a
            else:
                break
        return rate

    def total_iterations(self, n_points):
        if self.iterations is not None:
            return int(self.iterations)
        return int(self.epochs) * int(n_points)

    def normalized(self):
        return {
            "lr": self.lr,
            "epochs": self.epochs,
            "iterations": self.iterations,
            "batch_size": self.batch_size,
            "loss": self.loss,
            "dropout": self.dropout,
            "seed": self.seed,
            "record_patterns": self.record_patterns,
            "freeze_first_weights": self.freeze_first_weights,
            "checkpoint_stride_epochs": self.checkpoint_stride_epochs,
            "record_bias_trace": self.record_bias_trace,
            "stop_train_mse": self.stop_train_mse,
        }

    def config_hash(self):
        blob = json.dumps(self.normalized(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class IterationRecord:
    """One training step's statistics.

    ``phi`` is the bias update norm over (step size * loss slope); it
    is None on zero-slope iterations, where the ratio is undefined.
    ``epsilon`` aggregates the per-sample slopes by their mean.
    """

    t: int
    sampled_indices: tuple
    epsilon_each: tuple
    epsilon: float
    bias1_update_norm: float
    phi: object
    sigma1_W1: float
    sigman_W1: float
    loss_value: float
    head_output: float
    b1_norm: float
    dw2_norm: object
    patterns_pre: tuple = None
    patterns_post: tuple = None


@dataclass
class NeuronFrequencies:
    """Fraction of dataset points activating each hidden unit (no dropout)."""

    per_layer: list
    p_min: float
    p_avg: float


class RunLog:
    """Column-oriented store of per-iteration records plus checkpoints.

    ``checkpoints`` is a list of (t, Network) with t the number of
    completed iterations; it always contains t=0 and the final state.
    ``bias1_trace`` holds b_1 after t steps in row t (shape (T+1, n_1))
    when the config asked for it.
    """

    COLUMNS = ("t", "sample_idx", "epsilon", "db1_norm", "phi", "sigma1", "sigman",
               "loss", "head_output")

    def __init__(self, config, n_points, n_iterations, bias_dim, initial_net):
        self.config = config
        self.n_points = int(n_points)
        self.epoch_size = int(n_points)
        self.initial_net = initial_net.copy()
        self.final_net = None
        T = int(n_iterations)
        self.t = np.arange(T, dtype=np.int64)
        self.sample_idx = np.zeros((T, config.batch_size), dtype=np.int64)
        self.epsilon_each = np.zeros((T, config.batch_size))
        self.epsilon = np.zeros(T)
        self.db1_norm = np.zeros(T)
        self.phi = np.full(T, np.nan)
        self.sigma1 = np.zeros(T)
        self.sigman = np.zeros(T)
        self.loss = np.zeros(T)
        self.head_output = np.zeros(T)
        self.b1_norm = np.zeros(T)
        self.dw2_norm = np.full(T, np.nan)
        self.bias1_trace = (
            np.zeros((T + 1, bias_dim)) if config.record_bias_trace else None
        )
        self.checkpoints = []
        self.patterns_pre = [] if config.record_patterns else None
        self.patterns_post = [] if config.record_patterns else None

    def __len__(self):
        return self.t.size

    def zero_slope(self):
        """Mask of iterations whose loss slope vanished (phi undefined)."""
        return ~np.isfinite(self.phi) & (self.epsilon == 0.0)

    def zero_gradient(self):
        """Iterations excluded from trajectory sums and pattern systems."""
        return (self.epsilon == 0.0) | (self.db1_norm == 0.0)

    def record(self, t):
        t = int(t)
        return IterationRecord(
            t=t,
            sampled_indices=tuple(int(i) for i in self.sample_idx[t]),
            epsilon_each=tuple(float(e) for e in self.epsilon_each[t]),
            epsilon=float(self.epsilon[t]),
            bias1_update_norm=float(self.db1_norm[t]),
            phi=float(self.phi[t]) if np.isfinite(self.phi[t]) else None,
            sigma1_W1=float(self.sigma1[t]),
            sigman_W1=float(self.sigman[t]),
            loss_value=float(self.loss[t]),
            head_output=float(self.head_output[t]),
            b1_norm=float(self.b1_norm[t]),
            dw2_norm=float(self.dw2_norm[t]) if np.isfinite(self.dw2_norm[t]) else None,
            patterns_pre=None if self.patterns_pre is None else self.patterns_pre[t],
            patterns_post=None if self.patterns_post is None else self.patterns_post[t],
        )

    def records(self):
        for t in range(len(self)):
            yield self.record(t)

    def epoch_starts(self):
        return list(range(0, len(self), self.epoch_size))

    def truncate(self, n_iterations):
        """Drop rows past ``n_iterations`` after an early stop."""
        T = int(n_iterations)
        if T > len(self):
            raise ValueError("cannot truncate %d rows to %d" % (len(self), T))
        for name in ("t", "sample_idx", "epsilon_each", "epsilon", "db1_norm",
                     "phi", "sigma1", "sigman", "loss", "head_output",
                     "b1_norm", "dw2_norm"):
            setattr(self, name, getattr(self, name)[:T])
        if self.bias1_trace is not None:
            self.bias1_trace = self.bias1_trace[: T + 1]
        if self.patterns_pre is not None:
            self.patterns_pre = self.patterns_pre[:T]
            self.patterns_post = self.patterns_post[:T]
        self.checkpoints = [(t, net) for t, net in self.checkpoints if t <= T]

    def checkpoint_at(self, t):
        for ct, net in self.checkpoints:
            if ct == t:
                return net
        raise KeyError("no checkpoint at iteration %d" % t)

    def digest(self):
        """sha256 over config, nets and all record columns; replay-stable."""
        h = hashlib.sha256()
        h.update(self.config.config_hash().encode())
        h.update(json.dumps(network_to_dict(self.initial_net)).encode())
        if self.final_net is not None:
            h.update(json.dumps(network_to_dict(self.final_net)).encode())
        for arr in (self.t, self.sample_idx, self.epsilon_each, self.epsilon,
                    self.db1_norm, self.phi, self.sigma1, self.sigman, self.loss,
                    self.head_output, self.b1_norm, self.dw2_norm):
            h.update(np.ascontiguousarray(arr).tobytes())
        if self.bias1_trace is not None:
            h.update(np.ascontiguousarray(self.bias1_trace).tobytes())
        for ct, net in self.checkpoints:
            h.update(str(ct).encode())
            h.update(json.dumps(network_to_dict(net)).encode())
        return h.hexdigest()

    def write_trajectory_csv(self, path):
        """One row per iteration; absent phi cells are left empty."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for i in range(len(self)):
                idx = ";".join(str(int(v)) for v in self.sample_idx[i])
                phi = repr(float(self.phi[i])) if np.isfinite(self.phi[i]) else ""
                writer.writerow([
                    int(self.t[i]), idx, repr(float(self.epsilon[i])),
                    repr(float(self.db1_norm[i])), phi,
                    repr(float(self.sigma1[i])), repr(float(self.sigman[i])),
                    repr(float(self.loss[i])), repr(float(self.head_output[i])),
                ])


# ===== The step itself =====


def _forward_backward(net, Xb, yb, loss, keep_masks, record_patterns):
    """One batched forward/backward; returns gradients and statistics.

    ``keep_masks`` is None (no dropout) or a list of (B, n_l) boolean
    arrays, True meaning the unit's output survives. Gradients are
    averaged over the batch.
    """
    B = Xb.shape[0]
    depth = net.depth
    hs = [Xb]
    pres = []
    pre_masks = []
    post_masks = []
    h = Xb
    for l in range(depth):
        z = h @ net.weights[l].T + net.biases[l]
        pres.append(z)
        if l < depth - 1:
            on = z > 0
            pre_masks.append(on)
            if keep_masks is not None:
                on = on & keep_masks[l]
            post_masks.append(on)
            h = np.where(on, z, 0.0)
            hs.append(h)
    zd = pres[-1][:, 0]
    if net.head == "sigmoid":
        yhat = sigmoid(zd)
        if np.any((yhat <= 0.0) | (yhat >= 1.0)):
            raise ValueError(
                "sigmoid head saturated to an exact 0/1 prediction; loss slope undefined"
            )
    else:
        yhat = zd

    if loss == "mse":
        eps_each = np.abs(yhat - yb)
        loss_each = 0.5 * (yhat - yb) ** 2
        dl_dz = yhat - yb if net.head == "identity" else (yhat - yb) * yhat * (1 - yhat)
    else:
        if net.head == "identity" and np.any((yhat <= 0.0) | (yhat >= 1.0)):
            raise ValueError("bce with identity head needs predictions inside (0, 1)")
        eps_each = 1.0 / np.abs(1.0 - yb - yhat)
        loss_each = -(yb * np.log(yhat) + (1 - yb) * np.log(1 - yhat))
        dl_dz = (yhat - yb) if net.head == "sigmoid" else (yhat - yb) / (yhat * (1 - yhat))

    D = dl_dz[:, None]
    wgrads = [None] * depth
    bgrads = [None] * depth
    dw2_unscaled = None
    single = B == 1
    for l in range(depth - 1, -1, -1):
        # mean over a singleton batch axis is the row itself, bit for bit
        wgrads[l] = D.T @ hs[l] if single else D.T @ hs[l] / B
        bgrads[l] = D[0] if single else D.mean(axis=0)
        if l == 1:
            if B == 1:
                # rank-1 gradient: spectral norm = product of factor norms
                d0, h1 = D[0], hs[1][0]
                dw2_unscaled = float(math.sqrt(d0.dot(d0)) * math.sqrt(h1.dot(h1)))
            else:
                dw2_unscaled = float(np.linalg.svd(wgrads[1], compute_uv=False)[0])
        if l > 0:
            D = (D @ net.weights[l]) * post_masks[l - 1]

    patterns_pre = patterns_post = None
    if record_patterns:
        patterns_pre = tuple(
            ActivationPattern(tuple(m[i] for m in pre_masks)) for i in range(B)
        )
        patterns_post = tuple(
            ActivationPattern(tuple(m[i] for m in post_masks)) for i in range(B)
        )
    return wgrads, bgrads, eps_each, loss_each, yhat, dw2_unscaled, patterns_pre, patterns_post


def _draw_keep_masks(rng, batch, hidden_sizes):
    return [rng.random((batch, n)) >= 0.5 for n in hidden_sizes]


def sgd_step(net, Xb, yb, lr, loss="mse", keep_masks=None, freeze_first_weights=False,
             record_patterns=False, t=0, indices=None, sigma_pair=None):
    """Apply one SGD step in place; returns the IterationRecord.

    ``keep_masks`` carries explicit dropout masks (True = kept); the
    driver draws them from its dropout stream. ``sigma_pair`` lets a
    caller with a frozen first layer reuse (sigma_1, sigma_n).
    """
    Xb = np.atleast_2d(np.asarray(Xb, dtype=np.float64))
    yb = np.atleast_1d(np.asarray(yb, dtype=np.float64))
    B = Xb.shape[0]
    wgrads, bgrads, eps_each, loss_each, yhat, dw2_unscaled, pats_pre, pats_post = (
        _forward_backward(net, Xb, yb, loss, keep_masks, record_patterns)
    )
    if sigma_pair is None:
        sigma_pair = singular_extremes(net.weights[0])
    b1 = net.biases[0]
    b1_norm = math.sqrt(b1.dot(b1))

    g1 = bgrads[0]
    db1_norm = lr * math.sqrt(g1.dot(g1))
    eps_mean = float(eps_each[0]) if B == 1 else float(eps_each.mean())
    phi = db1_norm / (lr * eps_mean) if lr * eps_mean > 0.0 else None
    dw2 = lr * dw2_unscaled if dw2_unscaled is not None else None

    start = 0 if not freeze_first_weights else 1
    for l in range(net.depth):
        if l >= start:
            net.weights[l] -= lr * wgrads[l]
        net.biases[l] -= lr * bgrads[l]

    return IterationRecord(
        t=int(t),
        sampled_indices=tuple(int(i) for i in (indices if indices is not None else range(B))),
        epsilon_each=tuple(float(e) for e in eps_each),
        epsilon=eps_mean,
        bias1_update_norm=db1_norm,
        phi=phi,
        sigma1_W1=float(sigma_pair[0]),
        sigman_W1=float(sigma_pair[1]),
        loss_value=float(loss_each[0]) if B == 1 else float(loss_each.mean()),
        head_output=float(yhat[0]) if B == 1 else float(yhat.mean()),
        b1_norm=b1_norm,
        dw2_norm=dw2,
        patterns_pre=pats_pre,
        patterns_post=pats_post,
    )


def run_training(net, dataset, config):
    """Train ``net`` in place on the dataset; returns the full RunLog.

    Checkpoints are taken at iteration 0 and every stride epochs, plus
    the final state. A loss above 1e12 or any non-finite parameter
    aborts with a DivergenceError naming the iteration.
    """
    X = np.asarray(dataset.X, dtype=np.float64)
    y = np.asarray(dataset.y, dtype=np.float64)
    N = X.shape[0]
    if X.shape[1] != net.input_dim:
        raise ValueError("dataset dim %d vs network input %d" % (X.shape[1], net.input_dim))
    T = config.total_iterations(N)
    children = np.random.SeedSequence(config.seed).spawn(2)
    sample_rng = np.random.Generator(np.random.PCG64(children[0]))
    dropout_rng = np.random.Generator(np.random.PCG64(children[1]))

    log = RunLog(config, N, T, net.biases[0].size, net)
    log.checkpoints.append((0, net.copy()))
    if log.bias1_trace is not None:
        log.bias1_trace[0] = net.biases[0]

    frozen_first = config.freeze_first_weights
    sigma_pair = singular_extremes(net.weights[0]) if frozen_first else None
    hidden = net.hidden_sizes
    use_dropout = config.dropout == "half"
    B = config.batch_size
    ckpt_stride = config.checkpoint_stride_epochs * N
    stop_mse = config.stop_train_mse

    for t in range(T):
        idx = sample_rng.integers(0, N, size=B)
        keep = _draw_keep_masks(dropout_rng, B, hidden) if use_dropout else None
        pair = sigma_pair if frozen_first else singular_extremes(net.weights[0])
        try:
            rec = sgd_step(
                net, X[idx], y[idx], config.lr_at(t), loss=config.loss,
                keep_masks=keep, freeze_first_weights=frozen_first,
                record_patterns=config.record_patterns, t=t, indices=idx,
                sigma_pair=pair,
            )
        except ValueError as exc:
            raise DivergenceError(t, str(exc)) from exc

        log.sample_idx[t] = idx
        log.epsilon_each[t] = rec.epsilon_each
        log.epsilon[t] = rec.epsilon
        log.db1_norm[t] = rec.bias1_update_norm
        if rec.phi is not None:
            log.phi[t] = rec.phi
        log.sigma1[t] = rec.sigma1_W1
        log.sigman[t] = rec.sigman_W1
        log.loss[t] = rec.loss_value
        log.head_output[t] = rec.head_output
        log.b1_norm[t] = rec.b1_norm
        if rec.dw2_norm is not None:
            log.dw2_norm[t] = rec.dw2_norm
        if log.patterns_pre is not None:
            log.patterns_pre.append(rec.patterns_pre)
            log.patterns_post.append(rec.patterns_post)
        if log.bias1_trace is not None:
            log.bias1_trace[t + 1] = net.biases[0]

        if rec.loss_value > DIVERGENCE_LOSS or not np.isfinite(rec.loss_value):
            raise DivergenceError(t, "loss %r exceeds the divergence guard" % rec.loss_value)
        if (t + 1) % ckpt_stride == 0:
            if not all(np.isfinite(w).all() for w in net.weights + net.biases):
                raise DivergenceError(t, "non-finite parameter after update")
            log.checkpoints.append((t + 1, net.copy()))
        if stop_mse is not None and (t + 1) % N == 0:
            out = forward_many(net, X)[0]
            if float(np.mean((out - y) ** 2)) < stop_mse:
                T = t + 1
                break

    if T < len(log):
        log.truncate(T)
    if not log.checkpoints or log.checkpoints[-1][0] != T:
        log.checkpoints.append((T, net.copy()))
    log.final_net = net.copy()
    return log


def replay_networks(log, dataset):
    """Yield (t, net, indices, keep_masks) with net the pre-update state.

    Replays the recorded run's sampling and dropout streams exactly, so
    audits can recompute per-iteration quantities the log did not store.
    The yielded network is the live object and is mutated by the step
    that follows the yield; copy() anything kept across iterations.
    """
    config = log.config
    X = np.asarray(dataset.X, dtype=np.float64)
    y = np.asarray(dataset.y, dtype=np.float64)
    N = X.shape[0]
    if N != log.n_points:
        raise ValueError("dataset has %d points, the run recorded %d" % (N, log.n_points))
    net = log.initial_net.copy()
    children = np.random.SeedSequence(config.seed).spawn(2)
    sample_rng = np.random.Generator(np.random.PCG64(children[0]))
    dropout_rng = np.random.Generator(np.random.PCG64(children[1]))
    hidden = net.hidden_sizes
    use_dropout = config.dropout == "half"
    B = config.batch_size
    for t in range(len(log)):
        idx = sample_rng.integers(0, N, size=B)
        keep = _draw_keep_masks(dropout_rng, B, hidden) if use_dropout else None
        yield t, net, idx, keep
        sgd_step(
            net, X[idx], y[idx], config.lr_at(t), loss=config.loss,
            keep_masks=keep, freeze_first_weights=config.freeze_first_weights,
            t=t, indices=idx,
            sigma_pair=(float(log.sigma1[t]), float(log.sigman[t])),
        )


def neuron_frequencies(net, X):
    """Activation frequency of every hidden unit over the rows of X.

    Computed without dropout under the strict > 0 convention. p_min and
    p_avg range over all hidden units of all layers.
    """
    X = np.asarray(X, dtype=np.float64)
    h = X
    per_layer = []
    for l in range(net.depth - 1):
        z = h @ net.weights[l].T + net.biases[l]
        on = z > 0
        per_layer.append(on.mean(axis=0))
        h = np.where(on, z, 0.0)
    all_p = np.concatenate(per_layer) if per_layer else np.array([])
    if all_p.size == 0:
        return NeuronFrequencies([], 0.0, 0.0)
    return NeuronFrequencies(per_layer, float(all_p.min()), float(all_p.mean()))


# ===== Run directory persistence =====


def save_run_log(log, run_dir):
    """Persist a RunLog: trajectory.csv, nets, checkpoints, bias trace, index."""
    os.makedirs(run_dir, exist_ok=True)
    log.write_trajectory_csv(os.path.join(run_dir, "trajectory.csv"))
    save_network(log.initial_net, os.path.join(run_dir, "net_initial.json"))
    save_network(log.final_net, os.path.join(run_dir, "net_final.json"))
    ck_dir = os.path.join(run_dir, "checkpoints")
    os.makedirs(ck_dir, exist_ok=True)
    for t, net in log.checkpoints:
        save_network(net, os.path.join(ck_dir, "ckpt_%08d.json" % t))
    if log.bias1_trace is not None:
        np.save(os.path.join(run_dir, "bias_trace.npy"), log.bias1_trace)
    # per-iteration arrays that audits need but the csv schema omits
    np.savez(
        os.path.join(run_dir, "aux.npz"),
        epsilon_each=log.epsilon_each,
        b1_norm=log.b1_norm,
        dw2_norm=log.dw2_norm,
    )
    index = {
        "config": log.config.normalized(),
        "config_hash": log.config.config_hash(),
        "n_points": log.n_points,
        "epoch_size": log.epoch_size,
        "iterations": len(log),
        "checkpoint_iterations": [int(t) for t, _ in log.checkpoints],
        "digest": log.digest(),
    }
    with open(os.path.join(run_dir, "runlog.json"), "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=1)
        fh.write("\n")


def load_run_log(run_dir):
    """Rebuild a RunLog from a run directory (patterns are not persisted)."""
    with open(os.path.join(run_dir, "runlog.json"), "r", encoding="utf-8") as fh:
        index = json.load(fh)
    cfg_fields = dict(index["config"])
    if isinstance(cfg_fields.get("lr"), list):
        cfg_fields["lr"] = [tuple(p) for p in cfg_fields["lr"]]
    cfg_fields["record_patterns"] = False
    config = TrainConfig(**cfg_fields)
    initial = load_network(os.path.join(run_dir, "net_initial.json"))
    T = int(index["iterations"])
    log = RunLog(config, index["n_points"], T, initial.biases[0].size, initial)
    log.final_net = load_network(os.path.join(run_dir, "net_final.json"))
    with open(os.path.join(run_dir, "trajectory.csv"), "r", encoding="utf-8",
              newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != RunLog.COLUMNS:
            raise ValueError("unexpected trajectory.csv header: %r" % header)
        for i, row in enumerate(reader):
            log.sample_idx[i] = [int(v) for v in row[1].split(";")]
            log.epsilon[i] = float(row[2])
            log.db1_norm[i] = float(row[3])
            log.phi[i] = float(row[4]) if row[4] else np.nan
            log.sigma1[i] = float(row[5])
            log.sigman[i] = float(row[6])
            log.loss[i] = float(row[7])
            log.head_output[i] = float(row[8])
    trace_path = os.path.join(run_dir, "bias_trace.npy")
    if os.path.exists(trace_path):
        log.bias1_trace = np.load(trace_path)
    else:
        log.bias1_trace = None
    aux_path = os.path.join(run_dir, "aux.npz")
    if os.path.exists(aux_path):
        with np.load(aux_path) as aux:
            log.epsilon_each = aux["epsilon_each"]
            log.b1_norm = aux["b1_norm"]
            log.dw2_norm = aux["dw2_norm"]
    ck_dir = os.path.join(run_dir, "checkpoints")
    log.checkpoints = []
    for t in index["checkpoint_iterations"]:
        log.checkpoints.append((int(t), load_network(os.path.join(ck_dir, "ckpt_%08d.json" % t))))
    return log

"""Lipschitz audits of recorded training runs.

The trainer records, per iteration, the first-layer bias update norm
divided by step size and loss slope (phi) together with the extreme
singular values of W_1. Inside one linear region phi sandwiches the
local Lipschitz constant at the sampled point, so window sums of phi
track the dataset-average Lipschitz constant of the evolving network.
This module recomputes the data-side quantities from checkpoints and
checks the recorded trajectory against them: sandwich sums over
iteration windows, steadiness estimates, bias variance, distance to
initialization, a first-layer bound driven by update ratios, and a
summary artifact collecting the series that the audits consume.

Data-side series (average/max local Lipschitz constant over the
training set, dataset loss-slope statistics) are recomputed at the
checkpoint stride and linearly interpolated to iteration resolution;
``dense=True`` replays the run to recompute them at every iteration,
which is exact but costs a forward/backward sweep of the dataset per
step.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import RefusalError
from .network import epsilon, forward_many, input_gradients, singular_extremes
from .training import replay_networks

# relative grace for sandwich comparisons; covers float accumulation only
SANDWICH_RTOL = 1e-9


# ===== Pointwise quantities =====


def local_lipschitz(net, x):
    """Gradient norm of the network at x, the Lipschitz constant of R_x."""
    return float(np.linalg.norm(input_gradients(net, np.atleast_2d(x))[0]))


def lambda_stats(net, X):
    """(average, max) of the local Lipschitz constant over the rows of X."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("lambda_stats needs at least one point")
    norms = np.linalg.norm(input_gradients(net, X), axis=1)
    return float(norms.mean()), float(norms.max())


def prod_bound(net):
    """Product of spectral norms of all weight matrices (loose upper bound)."""
    out = 1.0
    for w in net.weights:
        out *= singular_extremes(w)[0]
    return float(out)


def covering_radius(points, centers):
    """max over points of the distance to the nearest center."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    worst = 0.0
    for start in range(0, points.shape[0], 1024):
        chunk = points[start:start + 1024]
        d2 = ((chunk[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        worst = max(worst, float(np.sqrt(d2.min(axis=1).max())))
    return worst


# ===== Iteration-resolution series from checkpoints =====


def _interpolate(ts, values, T):
    """Piecewise-linear series over iterations 0..T-1 from knot values."""
    ts = np.asarray(ts, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    return np.interp(np.arange(T, dtype=np.float64), ts, values)


def lambda_series(log, dataset, dense=False):
    """Per-iteration (lambda_avg, lambda_max) series for a recorded run.

    Checkpoint mode evaluates the stats at every stored checkpoint and
    interpolates; dense mode replays the run and evaluates them on the
    pre-update network of every single iteration.
    """
    T = len(log)
    X = np.asarray(dataset.X, dtype=np.float64)
    if dense:
        avg = np.zeros(T)
        mx = np.zeros(T)
        for t, net, _, _ in replay_networks(log, dataset):
            avg[t], mx[t] = lambda_stats(net, X)
        return avg, mx
    ts = [t for t, _ in log.checkpoints]
    stats = [lambda_stats(net, X) for _, net in log.checkpoints]
    avg = _interpolate(ts, [s[0] for s in stats], T)
    mx = _interpolate(ts, [s[1] for s in stats], T)
    return avg, mx


def _epsilon_dataset(net, X, y, loss):
    """Loss-slope magnitude of every training point under the current net."""
    yhat, _ = forward_many(net, X)
    return np.array([epsilon(loss, float(p), float(t)) for p, t in zip(yhat, y)])


def _epsilon_series(log, dataset, dense=False):
    """Per-iteration dataset slope stats: (eps_max, eps_avg, eps_var)."""
    T = len(log)
    X = np.asarray(dataset.X, dtype=np.float64)
    y = np.asarray(dataset.y, dtype=np.float64)
    loss = log.config.loss
    if dense:
        out = np.zeros((T, 3))
        for t, net, _, _ in replay_networks(log, dataset):
            eps = _epsilon_dataset(net, X, y, loss)
            out[t] = eps.max(), eps.mean(), eps.var()
        return out[:, 0], out[:, 1], out[:, 2]
    ts = [t for t, _ in log.checkpoints]
    rows = []
    for _, net in log.checkpoints:
        eps = _epsilon_dataset(net, X, y, loss)
        rows.append((eps.max(), eps.mean(), eps.var()))
    rows = np.asarray(rows)
    return (_interpolate(ts, rows[:, 0], T), _interpolate(ts, rows[:, 1], T),
            _interpolate(ts, rows[:, 2], T))


# ===== Trajectory-length sandwich =====


@dataclass
class TrajectoryWindow:
    """Sandwich sums over one half-open iteration window.

    Sums range over the window's non-zero-gradient iterations only
    (n_included of them). ``delta_needed`` is the smallest per-step
    slack that would make the sandwich hold; the satisfied flag uses
    the window's actual delta.
    """

    t_start: int
    t_end: int
    sum_phi: float
    lower_bound: float
    upper_bound: float
    delta: float
    n_included: int
    satisfied: bool
    delta_needed: float
    lambda_avg_series: np.ndarray = field(repr=False)
    lambda_max_series: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError("window must satisfy t_start < t_end")


def audit_theorem1(log, dataset, windows=None, delta=None, dense=False):
    """Check phi window sums against average-Lipschitz sandwich bounds.

    For each window, sums phi over non-zero-gradient iterations and
    compares against sums of lambda_avg/sigma_1 - delta (lower) and
    lambda_avg/sigma_n + delta (upper). delta defaults per window to
    0.5 * mean(lambda_max/sigma_n) over its included iterations.
    """
    if log.config.batch_size != 1:
        raise ValueError("sandwich audit is defined for batch_size 1 runs")
    T = len(log)
    if windows is None:
        windows = [(0, T)]
    lam_avg, lam_max = lambda_series(log, dataset, dense=dense)
    included = ~log.zero_gradient()
    out = []
    for t_start, t_end in windows:
        t_start, t_end = int(t_start), int(t_end)
        if not (0 <= t_start < t_end <= T):
            raise ValueError("window (%d, %d) outside run of %d iterations"
                             % (t_start, t_end, T))
        sel = np.zeros(T, dtype=bool)
        sel[t_start:t_end] = True
        inc = sel & included
        n = int(inc.sum())
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio_lo = np.where(inc, lam_avg / log.sigma1, 0.0)
            ratio_hi = np.where(inc, lam_avg / log.sigman, 0.0)
            d = delta
            if d is None:
                d = 0.5 * float((lam_max[inc] / log.sigman[inc]).mean()) if n else 0.0
        sum_phi = float(log.phi[inc].sum()) if n else 0.0
        lower0 = float(ratio_lo.sum())
        upper0 = float(ratio_hi.sum())
        lower = lower0 - n * d
        upper = upper0 + n * d
        grace = SANDWICH_RTOL * max(1.0, abs(sum_phi))
        satisfied = (lower - grace <= sum_phi) and (sum_phi <= upper + grace)
        needed = max(0.0, (lower0 - sum_phi) / n if n else 0.0,
                     (sum_phi - upper0) / n if n else 0.0)
        out.append(TrajectoryWindow(
            t_start=t_start, t_end=t_end, sum_phi=sum_phi,
            lower_bound=lower, upper_bound=upper, delta=float(d),
            n_included=n, satisfied=bool(satisfied), delta_needed=float(needed),
            lambda_avg_series=lam_avg[t_start:t_end],
            lambda_max_series=lam_max[t_start:t_end],
        ))
    return out


def sum_phi_per_epoch(log):
    """Sum of phi over each epoch's non-zero-gradient iterations."""
    included = ~log.zero_gradient()
    sums = []
    for start in log.epoch_starts():
        stop = min(start + log.epoch_size, len(log))
        sel = included[start:stop]
        sums.append(float(log.phi[start:stop][sel].sum()))
    return sums


# ===== Steadiness =====


def steady_phi(log, tau):
    """Smallest phi such that every update at t >= tau is phi-steady.

    Zero-slope iterations impose no constraint (their update is zero),
    so the value is the max of the recorded finite phis in the suffix,
    or 0.0 when the suffix never moved.
    """
    tau = int(tau)
    if not 0 <= tau < len(log):
        raise ValueError("no iterations at or after tau=%d" % tau)
    suffix = log.phi[tau:]
    finite = suffix[np.isfinite(suffix)]
    return float(finite.max()) if finite.size else 0.0


def steady_beta(log, tau):
    """Max sigma_1(W_1) over iterations t >= tau, final state included."""
    tau = int(tau)
    if not 0 <= tau < len(log):
        raise ValueError("no iterations at or after tau=%d" % tau)
    beta = float(log.sigma1[tau:].max())
    if log.final_net is not None:
        beta = max(beta, singular_extremes(log.final_net.weights[0])[0])
    return beta


def corollary1_bound(phi, beta):
    """Lipschitz bound near training points for a steady learner."""
    return float(beta) * float(phi)


# ===== Bias variance =====


@dataclass
class Corollary2Report:
    """Empirical first-layer bias variance against its lower-bound shape.

    ``bound`` evaluates the variance expression with constant 1, so only
    orderings of ``ratio`` across runs are meaningful, not the sign of
    ratio - 1. ``required_window`` is the analogous constant-1 window
    size precondition; undersized windows get precondition_met False.
    """

    t_start: int
    t_end: int
    empirical_variance: float
    bound: float
    ratio: float
    avg_term: float
    c: float
    delta: float
    eps_min: float
    eps_max: float
    beta1: float
    required_window: float
    precondition_met: bool


def audit_corollary2(log, dataset, window, delta=None, dense=False):
    """Compare recorded bias variance on a window with the bound shape.

    Needs the dense bias trace. The dataset slope statistics entering c
    are recomputed at the checkpoint stride (or densely) and averaged
    over the window.
    """
    t_start, t_end = int(window[0]), int(window[1])
    if t_end - t_start < 2:
        raise ValueError("variance window needs at least 2 iterations")
    if not (0 <= t_start < t_end <= len(log)):
        raise ValueError("window (%d, %d) outside run" % (t_start, t_end))
    if log.bias1_trace is None:
        raise ValueError("run was recorded without a bias trace")

    rows = log.bias1_trace[t_start:t_end]
    center = rows.mean(axis=0)
    empirical = float(((rows - center) ** 2).sum(axis=1).mean())

    lam_avg, lam_max = lambda_series(log, dataset, dense=dense)
    alphas = np.array([log.config.lr_at(t) for t in range(t_start, t_end)])
    sl = slice(t_start, t_end)
    with np.errstate(divide="ignore", invalid="ignore"):
        # a degenerate 0/0 (dead net with sigma1 == 0) contributes nothing
        avg_each = np.nan_to_num(alphas * lam_avg[sl] / log.sigma1[sl],
                                 nan=0.0, posinf=np.inf)
        max_each = np.nan_to_num(alphas * lam_max[sl] / log.sigma1[sl],
                                 nan=0.0, posinf=np.inf)
    avg_term = float(avg_each.mean())
    max_term = float(max_each.mean())

    _, eps_avg, eps_var = _epsilon_series(log, dataset, dense=dense)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = float(np.mean(eps_var[sl] / eps_avg[sl] ** 4))

    d = 0.5 * avg_term if delta is None else float(delta)
    denom = d / 3.0 + c
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = (avg_term - d) ** 2 / denom if denom > 0 else np.inf
        ratio = empirical / bound if bound > 0 else np.inf

    eps_min = float(log.epsilon[sl].min())
    eps_max = float(log.epsilon[sl].max())
    beta1 = float(np.linalg.norm(rows, axis=1).max())
    inv_max = 1.0 / eps_max ** 2 if eps_max > 0 else np.inf
    inv_min = 1.0 / eps_min ** 2 if eps_min > 0 else np.inf
    gap = 0.0 if np.isinf(inv_min) and np.isinf(inv_max) else inv_min - inv_max
    required = (max(gap, max_term) / d) ** 2 + beta1 ** 2 if d > 0 else np.inf
    return Corollary2Report(
        t_start=t_start, t_end=t_end, empirical_variance=empirical,
        bound=float(bound), ratio=float(ratio), avg_term=avg_term, c=c,
        delta=d, eps_min=eps_min, eps_max=eps_max, beta1=beta1,
        required_window=float(required),
        precondition_met=bool(t_end - t_start >= required),
    )


# ===== Distance to initialization =====


@dataclass
class Corollary3Report:
    tau: int
    distance: float
    bound: float
    satisfied: bool
    delta: float
    dense: bool


def audit_corollary3(log, dataset, tau, delta=0.0, dense=False):
    """Bound the first-layer bias displacement after tau steps.

    Sums alpha_t * eps_max(X, t) * lambda_avg(X, t) / sigma_n(W_1) over
    t < tau and compares with the recorded displacement. Squared-error
    runs only: a cross-entropy slope is unbounded in the confidently
    wrong regime, so the bound carries no information there.
    """
    if log.config.loss == "bce":
        raise RefusalError(
            "distance-to-initialization bound needs a bounded loss slope; "
            "the cross-entropy slope max is unbounded, use an MSE run")
    tau = int(tau)
    if not 0 <= tau <= len(log):
        raise ValueError("tau=%d outside run of %d iterations" % (tau, len(log)))
    b0 = log.initial_net.biases[0]
    if log.bias1_trace is not None:
        b_tau = log.bias1_trace[tau]
    else:
        b_tau = log.checkpoint_at(tau).biases[0]
    distance = float(np.linalg.norm(b_tau - b0))
    if tau == 0:
        return Corollary3Report(0, 0.0, 0.0, True, float(delta), dense)

    lam_avg, _ = lambda_series(log, dataset, dense=dense)
    eps_max, _, _ = _epsilon_series(log, dataset, dense=dense)
    alphas = np.array([log.config.lr_at(t) for t in range(tau)])
    with np.errstate(divide="ignore"):
        terms = alphas * eps_max[:tau] * lam_avg[:tau] / log.sigman[:tau]
    bound = float(terms.sum() + tau * delta)
    grace = SANDWICH_RTOL * max(1.0, abs(bound))
    return Corollary3Report(tau, distance, bound,
                            bool(distance <= bound + grace), float(delta), dense)


def distance_to_init_series(log):
    """‖b_1(t) - b_1(0)‖ at each checkpoint time."""
    b0 = log.initial_net.biases[0]
    return ([t for t, _ in log.checkpoints],
            [float(np.linalg.norm(net.biases[0] - b0)) for _, net in log.checkpoints])


# ===== First-layer bound =====


@dataclass
class FirstLayerReport:
    theta: float
    beta: float
    delta: float
    bound: float
    measured: float
    satisfied: bool
    n_probes: int


def first_layer_bound(log, dataset, tau, n_probes=10000, seed=0, probes=None):
    """Bound the first layer's Lipschitz constant from update ratios.

    theta caps ‖ΔW_2‖_2/‖Δb_1‖_2 + ‖b_1‖_2 over post-tau iterations with
    a nonzero update; beta caps the drift ‖W_1(t) - W_1(t')‖_2 over
    post-tau checkpoints; delta is the covering radius of the probe set
    (unit sphere by default) by the training points and must be < 1.
    The measured value maxes ‖S_1(x) W_1 x‖ over the probes with the
    final network's first layer.
    """
    tau = int(tau)
    if not 0 <= tau < len(log):
        raise ValueError("no iterations at or after tau=%d" % tau)
    if log.initial_net.depth < 2:
        raise ValueError("first-layer bound needs a second layer's updates")

    post = slice(tau, len(log))
    moving = log.db1_norm[post] > 0.0
    if not moving.any():
        raise ValueError("no nonzero updates after tau=%d" % tau)
    ratios = log.dw2_norm[post][moving] / log.db1_norm[post][moving]
    theta = float((ratios + log.b1_norm[post][moving]).max())

    mats = [net.weights[0] for t, net in log.checkpoints if t >= tau]
    if log.final_net is not None:
        mats.append(log.final_net.weights[0])
    beta = 0.0
    for i in range(len(mats)):
        for j in range(i + 1, len(mats)):
            beta = max(beta, singular_extremes(mats[i] - mats[j])[0])

    net = log.final_net if log.final_net is not None else log.checkpoints[-1][1]
    dim = net.input_dim
    if probes is None:
        rng = np.random.default_rng(seed)
        probes = rng.standard_normal((int(n_probes), dim))
        probes /= np.linalg.norm(probes, axis=1, keepdims=True)
    else:
        probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))

    delta = covering_radius(probes, dataset.X)
    if delta >= 1.0:
        raise RefusalError(
            "training points cover the probe sphere only to radius %.3f "
            ">= 1; the first-layer bound needs delta < 1" % delta)

    W1, b1 = net.weights[0], net.biases[0]
    z = probes @ W1.T
    masked = np.where(z + b1 > 0, z, 0.0)
    measured = float(np.linalg.norm(masked, axis=1).max())
    bound = (theta + beta) / (1.0 - delta)
    return FirstLayerReport(theta=theta, beta=beta, delta=float(delta),
                            bound=float(bound), measured=measured,
                            satisfied=bool(bound >= measured),
                            n_probes=int(probes.shape[0]))


# ===== Run summary artifact =====


@dataclass
class ComplexityReport:
    """Aggregated complexity series and bounds for one recorded run."""

    checkpoint_ts: list
    lambda_avg_series: list
    lambda_max_series: list
    sum_phi_per_epoch: list
    variance_last_k_epochs: float
    distance_to_init_series: list
    prod_bound: float
    steady_phi: float
    steady_tau: int
    corollary_bounds: dict
    k_epochs: int
    stride_epochs: int


def complexity_report(log, dataset, k_epochs=10):
    """Build the standard per-run summary over a trailing-window tau.

    tau is the start of the trailing min(k_epochs, total) epochs; the
    steadiness estimate, corollary-1 bound and variance window all use
    it, so the numbers describe the run's converged tail.
    """
    T = len(log)
    if T == 0:
        raise ValueError("empty run")
    X = np.asarray(dataset.X, dtype=np.float64)
    tail = min(int(k_epochs) * log.epoch_size, T)
    tau = T - tail

    ck_ts = [t for t, _ in log.checkpoints]
    stats = [lambda_stats(net, X) for _, net in log.checkpoints]
    phi = steady_phi(log, tau)
    beta = steady_beta(log, tau)

    window = (tau, T)
    try:
        c2 = audit_corollary2(log, dataset, window)
        var_tail = c2.empirical_variance
        c2_out = {"empirical_variance": c2.empirical_variance, "bound": c2.bound,
                  "ratio": c2.ratio, "c": c2.c, "delta": c2.delta,
                  "precondition_met": c2.precondition_met}
    except ValueError as exc:
        rows = np.array([net.biases[0] for t, net in log.checkpoints if t >= tau])
        var_tail = (float(((rows - rows.mean(axis=0)) ** 2).sum(axis=1).mean())
                    if rows.shape[0] >= 2 else 0.0)
        c2_out = {"skipped": str(exc)}
    try:
        c3 = audit_corollary3(log, dataset, T)
        c3_out = {"distance": c3.distance, "bound": c3.bound,
                  "satisfied": c3.satisfied}
    except RefusalError as exc:
        c3_out = {"refused": str(exc)}

    dist_ts, dist_vals = distance_to_init_series(log)
    net = log.final_net if log.final_net is not None else log.checkpoints[-1][1]
    return ComplexityReport(
        checkpoint_ts=ck_ts,
        lambda_avg_series=[s[0] for s in stats],
        lambda_max_series=[s[1] for s in stats],
        sum_phi_per_epoch=sum_phi_per_epoch(log),
        variance_last_k_epochs=var_tail,
        distance_to_init_series=dist_vals,
        prod_bound=prod_bound(net),
        steady_phi=phi,
        steady_tau=tau,
        corollary_bounds={
            "corollary1": {"phi": phi, "beta": beta,
                           "bound": corollary1_bound(phi, beta)},
            "corollary2": c2_out,
            "corollary3": c3_out,
        },
        k_epochs=int(k_epochs),
        stride_epochs=log.config.checkpoint_stride_epochs,
    )


def _json_clean(obj):
    if isinstance(obj, dict):
        return {k: _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def write_summary(log, dataset, out_dir, k_epochs=10):
    """Write summary.json plus CSV mirrors of its series; returns the report."""
    rep = complexity_report(log, dataset, k_epochs=k_epochs)
    os.makedirs(out_dir, exist_ok=True)
    payload = _json_clean({
        "lambda_avg_series": rep.lambda_avg_series,
        "lambda_max_series": rep.lambda_max_series,
        "checkpoint_iterations": rep.checkpoint_ts,
        "sum_phi_per_epoch": rep.sum_phi_per_epoch,
        "variance_last_k_epochs": rep.variance_last_k_epochs,
        "distance_to_init_series": rep.distance_to_init_series,
        "prod_bound": rep.prod_bound,
        "steady_phi": rep.steady_phi,
        "steady_tau": rep.steady_tau,
        "corollary_bounds": rep.corollary_bounds,
        "k_epochs": rep.k_epochs,
        "stride_epochs": rep.stride_epochs,
    })
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    with open(os.path.join(out_dir, "lambda_series.csv"), "w", encoding="utf-8",
              newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "lambda_avg", "lambda_max", "distance_to_init"])
        for row in zip(rep.checkpoint_ts, rep.lambda_avg_series,
                       rep.lambda_max_series, rep.distance_to_init_series):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    with open(os.path.join(out_dir, "sum_phi_per_epoch.csv"), "w", encoding="utf-8",
              newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "sum_phi"])
        for e, v in enumerate(rep.sum_phi_per_epoch):
            w.writerow([e, repr(float(v))])
    return rep

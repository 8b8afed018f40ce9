"""Activation-pattern algebra for slopes in regions without training points.

A trained ReLU network partitions its input space into linear regions,
and the training log pins down the slope only in regions that contain
sampled points. This module bounds the remaining regions: if a probe
region's flattened activation pattern is a linear combination of the
patterns seen during training, its slope is bounded by a weighted
basis-pursuit objective over the recorded bias-update magnitudes. On
top of that sit a steady-phase global slope estimate for dropout-trained
classifiers and a covering-number generalization certificate.

Pattern columns live per-layer and are flattened lazily: the flattened
dimension is the product of the hidden widths, so materializing it is
deferred until a solve actually needs the coordinates. The equality
system is restricted to coordinates where some column or the target is
active; all other rows read 0 = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import RefusalError
from .lipschitz import local_lipschitz, steady_beta, steady_phi
from .network import ActivationPattern, forward, forward_many, sigmoid_slope
from .simplex import InfeasibleError, solve_lp
from .training import neuron_frequencies, replay_networks

# Primal feasibility certified on every optimal solution.
FEAS_TOL = 1e-8
# Phase-1 tableau entries above this switch the solve to the splitting method.
ADMM_CUTOVER = 2_000_000


def patterns_of(net, X):
    """Activation pattern of every row of X, without dropout."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _, masks = forward_many(net, X)
    return [
        ActivationPattern(tuple(m[i] for m in masks)) for i in range(X.shape[0])
    ]


def bias_gradient_norms(net, X):
    """||df/db1|| at each row of X: the frozen-net limit of phi.

    During training phi_t = ||delta b1|| / (alpha eps) equals exactly
    this norm at the sampled point, so a converged network's pattern
    matrix can be built post hoc from these values.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    h = X
    masks = []
    pre_head = None
    for l in range(net.depth):
        z = h @ net.weights[l].T + net.biases[l]
        if l < net.depth - 1:
            on = z > 0
            masks.append(on)
            h = np.where(on, z, 0.0)
        else:
            pre_head = z[:, 0]
    D = np.repeat(net.weights[-1], X.shape[0], axis=0)
    if net.head == "sigmoid":
        D = D * sigmoid_slope(pre_head)[:, None]
    for l in range(net.depth - 2, 0, -1):
        D = (D * masks[l]) @ net.weights[l]
    D = D * masks[0]
    return np.linalg.norm(D, axis=1)


def _replayed_post_patterns(log, dataset, wanted):
    """Reconstruct per-iteration post-dropout patterns by replaying."""
    wanted = set(int(t) for t in wanted)
    out = {}
    for t, net, idx, keep in replay_networks(log, dataset):
        if t not in wanted:
            continue
        h = np.asarray(dataset.X[idx[0]], dtype=np.float64)
        masks = []
        for l in range(net.depth - 1):
            z = net.weights[l] @ h + net.biases[l]
            on = z > 0
            if keep is not None:
                on = on & keep[l][0]
            masks.append(on)
            h = np.where(on, z, 0.0)
        out[t] = ActivationPattern(tuple(masks))
        if len(out) == len(wanted):
            break
    return out


@dataclass
class GammaEstimate:
    """Measured consistency slack across post-window checkpoints."""

    gamma: float
    checkpoints_used: int
    pattern_violations: int


def estimate_gamma(log, dataset, t_start, t_end=None):
    """Largest slope ratio minus one over checkpoints in [t_start, t_end].

    Also counts training points whose activation pattern changes between
    checkpoints; a nonzero count means the consistency assumption the
    empty-region bounds rest on did not hold exactly on this window.
    A point whose slope hits exactly zero at one checkpoint but not
    another yields an infinite gamma.
    """
    t_end = len(log) if t_end is None else int(t_end)
    nets = [net for t, net in log.checkpoints if t_start <= t <= t_end]
    if t_end >= len(log) and log.final_net is not None:
        if not any(t == len(log) for t, _ in log.checkpoints):
            nets.append(log.final_net)
    if len(nets) < 2:
        return GammaEstimate(0.0, len(nets), 0)
    gamma = 0.0
    violations = 0
    for x in np.asarray(dataset.X, dtype=np.float64):
        pats = [forward(net, x)[1] for net in nets]
        if any(p != pats[0] for p in pats[1:]):
            violations += 1
        lams = [local_lipschitz(net, x) for net in nets]
        hi, lo = max(lams), min(lams)
        if hi == 0.0:
            continue
        gamma = max(gamma, np.inf if lo == 0.0 else hi / lo - 1.0)
    return GammaEstimate(float(gamma), len(nets), violations)


# ===== Pattern matrix =====


@dataclass
class PatternMatrix:
    """Columns of sampled activation patterns with their aligned weights.

    patterns holds one per-layer ActivationPattern per kept column; the
    flattened binary matrix is materialized on first use. phi entries
    are the normalized bias-update magnitudes aligned with the columns,
    beta dominates the first layer's spectral norm over the window,
    gamma is the measured consistency slack, and mu (sigmoid runs only)
    is the smallest distance to integrality of the sampled outputs.
    """

    patterns: list
    phi: np.ndarray
    beta: float
    gamma: float
    head: str
    layer_sizes: tuple
    mu: float = None
    source_ts: np.ndarray = None
    _flat: np.ndarray = field(default=None, init=False, repr=False, compare=False)
    _unique: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if len(self.patterns) != self.phi.size:
            raise ValueError("phi must align with the pattern columns")
        if self.phi.size and not (self.phi >= 0).all():
            raise ValueError("phi entries must be nonnegative")
        if self.mu is not None and not 0.0 < self.mu <= 0.5:
            raise ValueError("mu must lie in (0, 0.5]")
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        for p in self.patterns:
            if tuple(m.size for m in p.layers) != self.layer_sizes:
                raise ValueError("pattern layer sizes disagree with layer_sizes")

    @property
    def n_columns(self):
        return len(self.patterns)

    @property
    def flat_dim(self):
        return int(np.prod(self.layer_sizes)) if self.layer_sizes else 1

    def flat_columns(self):
        """(n_columns, flat_dim) binary matrix; cached after first call."""
        if self._flat is None:
            if self.n_columns:
                self._flat = np.stack([p.flatten() for p in self.patterns])
            else:
                self._flat = np.zeros((0, self.flat_dim))
        return self._flat

    def unique(self):
        """Deduplicated columns: (indices, phi, flat rows) of the
        minimum-phi representative of each distinct pattern."""
        if self._unique is None:
            best = {}
            for j, p in enumerate(self.patterns):
                k = p.key()
                if k not in best or self.phi[j] < self.phi[best[k]]:
                    best[k] = j
            idx = np.array(sorted(best.values()), dtype=int)
            self._unique = (idx, self.phi[idx], self.flat_columns()[idx])
        return self._unique

    @classmethod
    def from_run(cls, log, dataset=None, window=None, gamma=None):
        """Columns from a recorded single-sample run.

        Zero-gradient iterations are dropped (their phi is undefined or
        vacuous). Patterns come from the log when the run recorded them,
        otherwise from an exact replay, which needs the dataset. gamma
        is estimated from the window's checkpoints when not given,
        which also needs the dataset.
        """
        if log.config.batch_size != 1:
            raise ValueError("pattern columns need batch_size 1 runs")
        t0, t1 = (0, len(log)) if window is None else (int(window[0]), int(window[1]))
        if not (0 <= t0 < t1 <= len(log)):
            raise ValueError("window (%d, %d) outside run" % (t0, t1))
        keep = ~log.zero_gradient()
        ts = [t for t in range(t0, t1) if keep[t]]

        if log.patterns_post is not None:
            pats = [log.patterns_post[t][0] for t in ts]
        else:
            if dataset is None:
                raise ValueError(
                    "run has no recorded patterns; pass the dataset so they "
                    "can be reconstructed by replay")
            by_t = _replayed_post_patterns(log, dataset, ts)
            pats = [by_t[t] for t in ts]

        head = log.final_net.head
        mu = None
        if head == "sigmoid" and ts:
            outs = log.head_output[ts]
            mu = float(min(outs.min(), (1.0 - outs).min()))
        if gamma is None:
            if dataset is None:
                raise ValueError("pass gamma explicitly or provide the dataset")
            gamma = estimate_gamma(log, dataset, t0, t1).gamma
        beta = float(log.sigma1[t0:t1].max()) if t1 > t0 else 0.0
        return cls(
            patterns=pats, phi=log.phi[ts], beta=beta, gamma=float(gamma),
            head=head, layer_sizes=tuple(log.final_net.hidden_sizes),
            mu=mu, source_ts=np.array(ts, dtype=int),
        )

    @classmethod
    def from_frozen(cls, net, X, phi=None, gamma=0.0, mu=None):
        """Columns from a fixed network's patterns at the points X.

        phi defaults to the bias-gradient norms, the value the training
        quantity converges to once updates stop moving the function.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if phi is None:
            phi = bias_gradient_norms(net, X)
        if mu is None and net.head == "sigmoid":
            outs = forward_many(net, X)[0]
            mu = float(min(outs.min(), (1.0 - outs).min()))
        from .network import singular_extremes

        return cls(
            patterns=patterns_of(net, X), phi=phi,
            beta=float(singular_extremes(net.weights[0])[0]),
            gamma=float(gamma), head=net.head,
            layer_sizes=tuple(net.hidden_sizes), mu=mu,
        )


# ===== xi and basis pursuit =====


def xi_factor(mu, head):
    """Head correction for pattern-combination bounds."""
    if head == "identity":
        return 1.0
    if head != "sigmoid":
        raise ValueError("unknown head %r" % (head,))
    if mu is None:
        raise ValueError("sigmoid runs need mu")
    if mu == 0.0:
        raise RefusalError(
            "a sampled output hit an exact 0 or 1; the sigmoid correction "
            "0.25/(mu(1-mu)) is unbounded")
    if not 0.0 < mu <= 0.5:
        raise ValueError("mu must lie in (0, 0.5]")
    return 0.25 / (mu * (1.0 - mu))


@dataclass
class BPSolution:
    """Outcome of one weighted-L1 pattern solve."""

    k: np.ndarray
    objective: float
    bound: float
    status: str
    residual: float = None
    method: str = None


def _soft_threshold(v, thresh):
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


def _admm_weighted_l1(A, b, w, rho=1.0, max_iter=20000, tol=1e-12):
    """min ||w . k||_1 over {A k = b} by splitting; None when infeasible.

    The k-update projects onto the affine constraint set, so every
    iterate is primal feasible up to the pseudo-inverse's precision.
    """
    pinv = np.linalg.pinv(A)
    k = pinv @ b
    if A.size and np.max(np.abs(A @ k - b)) > FEAS_TOL:
        return None
    z = k.copy()
    u = np.zeros_like(k)
    thresh = np.asarray(w, dtype=np.float64) / rho
    for _ in range(max_iter):
        k = (z - u) - pinv @ (A @ (z - u) - b)
        z_new = _soft_threshold(k + u, thresh)
        if max(np.max(np.abs(k - z_new)), np.max(np.abs(z_new - z))) < tol:
            z = z_new
            break
        u += k - z_new
        z = z_new
    return (z - u) - pinv @ (A @ (z - u) - b)


def _validate_target(pm, s_target):
    target = np.asarray(s_target, dtype=np.float64).ravel()
    if target.shape != (pm.flat_dim,):
        raise ValueError(
            "target length %d, flattened pattern dimension is %d"
            % (target.size, pm.flat_dim))
    if not np.isin(target, (0.0, 1.0)).all():
        raise ValueError("target must be a binary pattern")
    return target


def basis_pursuit(pm, s_target, method=None):
    """Cheapest signed combination of training columns matching a pattern.

    Solves min ||k . phi||_1 subject to S k = s_target over the
    deduplicated columns (minimum-phi representative per pattern; the
    returned k is indexed over all columns with zeros elsewhere). The
    resulting bound (1+gamma) beta xi objective dominates the slope of
    any region carrying the target pattern.
    """
    target = _validate_target(pm, s_target)
    rep_idx, rep_phi, rep_flat = pm.unique()
    K = rep_idx.size

    col_any = rep_flat.any(axis=0) if K else np.zeros(pm.flat_dim, dtype=bool)
    if ((target > 0) & ~col_any).any():
        return BPSolution(None, None, None, "infeasible")
    rows = np.flatnonzero(col_any | (target > 0))
    xi = xi_factor(pm.mu, pm.head)
    if rows.size == 0:
        # all-off target: the empty combination already matches
        return BPSolution(np.zeros(pm.n_columns), 0.0, 0.0, "optimal",
                          residual=0.0, method="trivial")

    A = rep_flat[:, rows].T
    b = target[rows]
    m = rows.size
    if method is None:
        method = "simplex" if m * (2 * K + m) <= ADMM_CUTOVER else "admm"
    if method == "simplex":
        try:
            x, _ = solve_lp(np.concatenate([rep_phi, rep_phi]),
                            np.hstack([A, -A]), b)
        except InfeasibleError:
            return BPSolution(None, None, None, "infeasible")
        k_rep = x[:K] - x[K:]
    elif method == "admm":
        k_rep = _admm_weighted_l1(A, b, rep_phi)
        if k_rep is None:
            return BPSolution(None, None, None, "infeasible")
    else:
        raise ValueError("method must be simplex or admm")

    residual = float(np.max(np.abs(A @ k_rep - b)))
    if residual > FEAS_TOL:
        raise RuntimeError("solver left residual %.3e > %.0e" % (residual, FEAS_TOL))
    k = np.zeros(pm.n_columns)
    k[rep_idx] = k_rep
    objective = float(np.abs(k_rep) @ rep_phi)
    bound = (1.0 + pm.gamma) * pm.beta * xi * objective
    return BPSolution(k, objective, bound, "optimal",
                      residual=residual, method=method)


def binary_cover_bound(pm, s_target, k_max=6):
    """Bound from an exact disjoint cover by at most k_max columns.

    Searches subsets of distinct columns whose patterns sum exactly to
    the target; the smallest such k yields k beta (1+gamma) xi ||phi||_inf.
    Returns None when no subset works (the signed solve may still
    succeed with fractional or negative weights).
    """
    if not 1 <= int(k_max) <= 6:
        raise ValueError("k_max must be between 1 and 6 (exhaustive search)")
    target = _validate_target(pm, s_target)
    xi = xi_factor(pm.mu, pm.head)
    if not (target > 0).any():
        return 0.0
    _, _, rep_flat = pm.unique()
    tmask = target > 0
    cands = [
        row for row in rep_flat
        if row.any() and not (row.astype(bool) & ~tmask).any()
    ]
    sizes = [int(row.sum()) for row in cands]
    want = int(tmask.sum())
    per_unit = float(pm.beta * (1.0 + pm.gamma) * xi * pm.phi.max())
    for k in range(1, int(k_max) + 1):
        for combo in combinations(range(len(cands)), k):
            if sum(sizes[j] for j in combo) != want:
                continue
            total = np.sum([cands[j] for j in combo], axis=0)
            if np.array_equal(total, target):
                return k * per_unit
    return None


# ===== Probe audits =====


@dataclass
class ProbeAudit:
    index: int
    status: str
    actual: float = None
    bound: float = None
    ratio: float = None


@dataclass
class Theorem2Report:
    probes: list
    n_occupied: int
    n_infeasible: int
    n_bounded: int
    feasibility_rate: float
    soundness_rate: float
    violations: int
    median_ratio: float = None


def audit_theorem2(net, pm, probes, X):
    """Check the pattern-combination bound against measured slopes.

    Probes whose pattern matches a training point's region are
    reclassified occupied and excluded; for the rest the solve either
    fails (no information) or produces a bound that is compared with
    the probe's actual local slope.
    """
    train_keys = {p.key() for p in patterns_of(net, X)}
    probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    results = []
    ratios = []
    violations = 0
    for i, x in enumerate(probes):
        _, pat = forward(net, x)
        if pat.key() in train_keys:
            results.append(ProbeAudit(i, "occupied"))
            continue
        sol = basis_pursuit(pm, pat.flatten())
        if sol.status != "optimal":
            results.append(ProbeAudit(i, "infeasible"))
            continue
        actual = local_lipschitz(net, x)
        if actual > 0:
            ratio = sol.bound / actual
        else:
            ratio = 1.0 if sol.bound == 0.0 else np.inf
        if sol.bound < actual * (1.0 - 1e-9) - 1e-12:
            violations += 1
        ratios.append(ratio)
        results.append(ProbeAudit(i, "bounded", actual, sol.bound, float(ratio)))
    n_occ = sum(1 for r in results if r.status == "occupied")
    n_inf = sum(1 for r in results if r.status == "infeasible")
    n_ok = len(results) - n_occ - n_inf
    considered = n_ok + n_inf
    return Theorem2Report(
        probes=results, n_occupied=n_occ, n_infeasible=n_inf, n_bounded=n_ok,
        feasibility_rate=n_ok / considered if considered else 0.0,
        soundness_rate=1.0 - violations / n_ok if n_ok else 1.0,
        violations=violations,
        median_ratio=float(np.median(ratios)) if ratios else None,
    )


# ===== Steady global slope and generalization =====


def lambda_steady(phi, beta, gamma, mu, p_min, layer_sizes):
    """Steady-phase global slope estimate for dropout-trained classifiers."""
    if not 0.0 < mu <= 0.5:
        raise ValueError("mu must lie in (0, 0.5]")
    if p_min == 0.0:
        raise RefusalError(
            "some hidden unit is never active on the training set; prune "
            "dead units first (they cannot affect the output) and rerun")
    if not 0.0 < p_min <= 1.0:
        raise ValueError("p_min must lie in (0, 1]")
    total = sum(int(n) for n in layer_sizes)
    if total < 1:
        raise ValueError("layer_sizes must name at least one hidden unit")
    return (phi / 4.0) * (1.0 + gamma) * beta * math.log(total) / (
        mu * (1.0 - mu) * p_min)


def greedy_cover(points, r):
    """Cover the points with r-balls, first uncovered point as center.

    Returns (count, center indices). Deterministic in input order; the
    count upper-bounds the sample's covering number at radius r.
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    covered = np.zeros(n, dtype=bool)
    centers = []
    for i in range(n):
        if covered[i]:
            continue
        centers.append(i)
        covered |= np.linalg.norm(pts - pts[i], axis=1) <= r
    return len(centers), centers


def radius(X, f_values, c, phi, layer_sizes):
    """Ball radius at which covering the data certifies generalization."""
    f_values = np.asarray(f_values, dtype=np.float64)
    if np.asarray(X).shape[0] != f_values.size:
        raise ValueError("one output value per training point required")
    margins = np.abs(1.0 - 2.0 * f_values)
    if (margins == 0.0).any():
        raise RefusalError(
            "a training point sits exactly on the decision boundary "
            "(output 0.5); the certificate radius is zero")
    total = sum(int(n) for n in layer_sizes)
    if total < 2:
        raise ValueError("need at least two hidden units for a finite radius")
    if c <= 0 or phi <= 0:
        raise ValueError("c and phi must be positive")
    return float(margins.min() / (c * math.log(total) * phi))


def generalization_bound(cover_count, N, delta_conf):
    """Two-sided classification-error gap from a sample cover count."""
    if N < 1:
        raise ValueError("N must be at least 1")
    if not 0.0 < delta_conf <= 1.0:
        raise ValueError("delta_conf must lie in (0, 1]")
    if cover_count < 0:
        raise ValueError("cover_count must be nonnegative")
    return math.sqrt(
        (4.0 * math.log(2.0) * cover_count + 2.0 * math.log(1.0 / delta_conf)) / N)


def empirical_errors(net, dataset):
    """Fraction of training points misclassified at threshold 0.5."""
    if net.head != "sigmoid":
        raise ValueError("classification error needs a sigmoid head")
    y = np.asarray(dataset.y, dtype=np.float64)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")
    preds = (forward_many(net, dataset.X)[0] > 0.5).astype(np.float64)
    return float((preds != y).mean())


def pattern_domination_check(pm, probe_patterns):
    """Fraction of probe patterns dominated by the summed training columns.

    A probe is dominated when every coordinate of its flattened pattern
    is active in at least one column, i.e. every simultaneously-active
    unit tuple it realizes was realized by some training point. 1.0
    certifies the global-slope hypothesis on the probe set.
    """
    if not probe_patterns:
        raise ValueError("no probe patterns given")
    flat = pm.flat_columns()
    col_any = flat.any(axis=0) if pm.n_columns else np.zeros(pm.flat_dim, bool)
    dominated = 0
    for pat in probe_patterns:
        if not isinstance(pat, ActivationPattern):
            pat = ActivationPattern(tuple(pat))
        if tuple(m.size for m in pat.layers) != pm.layer_sizes:
            raise ValueError("probe pattern layer sizes disagree with columns")
        if not (pat.flatten().astype(bool) & ~col_any).any():
            dominated += 1
    return dominated / len(probe_patterns)


@dataclass
class GeneralizationCertificate:
    """Sample-based covering certificate for a dropout-trained classifier."""

    r: float
    covering_number: int
    er_emp: float
    bound: float
    ingredients: dict


def build_certificate(net, log, dataset, tau, holdout=None, delta_conf=0.05):
    """Assemble the full generalization certificate for one run.

    The cover is computed on the realized sample (training points plus
    any held-out points supplied), which stands in for the unobservable
    data manifold; the certificate records that it is sample-based.
    """
    if log.config.loss != "bce" or net.head != "sigmoid":
        raise ValueError("certificates need a sigmoid classifier trained on bce")
    if log.config.dropout != "half":
        raise ValueError("certificates need a dropout-trained run")
    phi = steady_phi(log, tau)
    if phi == 0.0:
        raise RefusalError(
            "no bias movement was recorded after tau; the steady slope "
            "estimate degenerates to zero")
    beta = steady_beta(log, tau)
    freqs = neuron_frequencies(net, dataset.X)
    if freqs.p_min == 0.0:
        raise RefusalError(
            "some hidden unit is never active on the training set; prune "
            "dead units first (they cannot affect the output) and rerun")
    est = estimate_gamma(log, dataset, tau)
    if not np.isfinite(est.gamma):
        raise RefusalError(
            "a training point's slope collapses to zero at one checkpoint "
            "after tau but not another; the consistency factor is unbounded "
            "on this window, so no certificate can be issued")
    outs = log.head_output[tau:]
    mu = float(min(outs.min(), (1.0 - outs).min()))
    hidden = tuple(net.hidden_sizes)
    total = sum(hidden)
    c = (1.0 + est.gamma) * beta / (mu * (1.0 - mu) * freqs.p_min)
    lam_steady = lambda_steady(phi, beta, est.gamma, mu, freqs.p_min, hidden)
    f_values = forward_many(net, dataset.X)[0]
    r = radius(dataset.X, f_values, c, phi, hidden)
    sample = dataset.X
    if holdout is not None:
        sample = np.vstack([dataset.X, np.atleast_2d(holdout)])
    count, _ = greedy_cover(sample, r)
    n_train = len(dataset.X)
    return GeneralizationCertificate(
        r=r, covering_number=count,
        er_emp=empirical_errors(net, dataset),
        bound=generalization_bound(count, n_train, delta_conf),
        ingredients={
            "phi": phi, "beta": beta, "gamma": est.gamma, "mu": mu,
            "p_min": freqs.p_min, "sum_nl": total, "delta_conf": delta_conf,
            "c": c, "lambda_steady": lam_steady,
            "pattern_violations": est.pattern_violations,
            "sample_based": True,
            "sample_size": int(len(sample)),
        },
    )

"""Independent reference implementations used only by the test suite.

Everything here is written against a different algorithmic route than
the library: forward passes as per-unit python loops, gradients by
central differences, singular values by Jacobi sweeps on the Gram
matrix, LP optima by Fraction-exact vertex enumeration, set covers by
exhaustive subset search. Slow on purpose; only run at test sizes.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np


def straight_line_output(net, x):
    """Forward pass with explicit per-unit loops; no matrix products."""
    h = [float(v) for v in x]
    for w, b, act in zip(net.weights, net.biases, net.activations):
        out = []
        for i in range(w.shape[0]):
            z = float(b[i])
            for j in range(w.shape[1]):
                z += float(w[i, j]) * h[j]
            if act == "relu":
                out.append(z if z > 0.0 else 0.0)
            elif act == "identity":
                out.append(z)
            else:
                out.append(1.0 / (1.0 + math.exp(-z)))
        h = out
    return h[0]


def straight_line_pattern(net, x):
    """Hidden-layer on/off masks via the same per-unit loops."""
    h = [float(v) for v in x]
    masks = []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        out, mask = [], []
        for i in range(w.shape[0]):
            z = float(b[i])
            for j in range(w.shape[1]):
                z += float(w[i, j]) * h[j]
            if act == "relu":
                mask.append(z > 0.0)
                out.append(z if z > 0.0 else 0.0)
            elif act == "identity":
                out.append(z)
            else:
                out.append(1.0 / (1.0 + math.exp(-z)))
        if act == "relu":
            masks.append(np.array(mask, dtype=bool))
        h = out
    return masks


def directional_slope_max(net, x, dirs, h=1e-6):
    """Max finite-difference slope of f along directions staying in R_x.

    Directions whose step lands in a different activation region are
    skipped; returns (best slope, how many directions were usable).
    """
    x = np.asarray(x, dtype=np.float64)
    y0 = straight_line_output(net, x)
    masks0 = [m.tolist() for m in straight_line_pattern(net, x)]
    best, used = 0.0, 0
    for u in dirs:
        u = np.asarray(u, dtype=np.float64)
        step = x + h * (u / np.linalg.norm(u))
        if [m.tolist() for m in straight_line_pattern(net, step)] != masks0:
            continue
        used += 1
        best = max(best, abs(straight_line_output(net, step) - y0) / h)
    return best, used


def loss_at(net, x, y, loss):
    yhat = straight_line_output(net, x)
    if loss == "mse":
        return 0.5 * (yhat - y) ** 2
    return -(y * math.log(yhat) + (1.0 - y) * math.log(1.0 - yhat))


def fd_input_grad(net, x, h=1e-5):
    """Central differences of the network output w.r.t. the input."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for j in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        g[j] = (straight_line_output(net, xp) - straight_line_output(net, xm)) / (2 * h)
    return g


def fd_param_grads(net, x, y, loss, h=1e-5):
    """Central differences of the loss w.r.t. every weight and bias."""
    wgs, bgs = [], []
    for l in range(net.depth):
        wg = np.zeros_like(net.weights[l])
        for i in range(wg.shape[0]):
            for j in range(wg.shape[1]):
                orig = net.weights[l][i, j]
                net.weights[l][i, j] = orig + h
                lp = loss_at(net, x, y, loss)
                net.weights[l][i, j] = orig - h
                lm = loss_at(net, x, y, loss)
                net.weights[l][i, j] = orig
                wg[i, j] = (lp - lm) / (2 * h)
        bg = np.zeros_like(net.biases[l])
        for i in range(bg.shape[0]):
            orig = net.biases[l][i]
            net.biases[l][i] = orig + h
            lp = loss_at(net, x, y, loss)
            net.biases[l][i] = orig - h
            lm = loss_at(net, x, y, loss)
            net.biases[l][i] = orig
            bg[i] = (lp - lm) / (2 * h)
        wgs.append(wg)
        bgs.append(bg)
    return wgs, bgs


def fd_loss_input_grad(net, x, y, loss, h=1e-5):
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for j in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        g[j] = (loss_at(net, xp, y, loss) - loss_at(net, xm, y, loss)) / (2 * h)
    return g


def jacobi_singular_values(M, sweeps=60, tol=1e-14):
    """Singular values via cyclic Jacobi diagonalization of M^T M."""
    M = np.asarray(M, dtype=np.float64)
    A = M.T @ M
    n = A.shape[0]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off = max(off, abs(A[p, q]))
                if abs(A[p, q]) < tol * math.sqrt(abs(A[p, p] * A[q, q]) + tol):
                    continue
                theta = 0.5 * math.atan2(2 * A[p, q], A[q, q] - A[p, p])
                c, s = math.cos(theta), math.sin(theta)
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                A = rot.T @ A @ rot
        if off < tol:
            break
    eig = np.sort(np.abs(np.diag(A)))[::-1]
    return np.sqrt(eig)


# ===== Exact LP oracle =====


def _fraction_solve(cols, b):
    """Solve the square-ish exact system [cols] k = b over Fractions.

    cols is a list of tuples (columns), b a tuple. Returns the unique
    solution or None when the system is inconsistent or the columns are
    dependent.
    """
    m, k = len(b), len(cols)
    aug = [[Fraction(cols[j][i]) for j in range(k)] + [Fraction(b[i])] for i in range(m)]
    row = 0
    pivots = []
    for col in range(k):
        piv = next((r for r in range(row, m) if aug[r][col] != 0), None)
        if piv is None:
            return None  # dependent columns
        aug[row], aug[piv] = aug[piv], aug[row]
        inv = aug[row][col]
        aug[row] = [v / inv for v in aug[row]]
        for r in range(m):
            if r != row and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [a - f * c for a, c in zip(aug[r], aug[row])]
        pivots.append(col)
        row += 1
        if row == m:
            break
    for r in range(row, m):
        if aug[r][k] != 0:
            return None  # inconsistent
    sol = [Fraction(0)] * k
    for r, col in enumerate(pivots):
        sol[col] = aug[r][k]
    return sol


def exact_min_weighted_l1(S, b, w):
    """Exact optimum of min sum_i w_i |k_i| s.t. S k = b, by vertex enumeration.

    The optimum of the split LP sits at a basic solution, so it is
    attained with support of size <= rank(S); enumerating all column
    subsets of size <= min(m, n) and solving each candidate system with
    Fraction arithmetic is exhaustive at test sizes. Returns (optimum
    as float, argmin as list) or (None, None) when infeasible.
    """
    S = [[Fraction(float(v)) for v in row] for row in np.asarray(S, dtype=np.float64)]
    m = len(S)
    n = len(S[0]) if m else 0
    b = tuple(Fraction(float(v)) for v in np.asarray(b, dtype=np.float64))
    w = [Fraction(float(v)) for v in np.asarray(w, dtype=np.float64)]
    best, best_k = None, None
    if all(v == 0 for v in b):
        return 0.0, [0.0] * n
    for size in range(1, min(m, n) + 1):
        for subset in itertools.combinations(range(n), size):
            cols = [tuple(S[i][j] for i in range(m)) for j in subset]
            sol = _fraction_solve(cols, b)
            if sol is None:
                continue
            obj = sum(w[j] * abs(v) for j, v in zip(subset, sol))
            if best is None or obj < best:
                best = obj
                best_k = [Fraction(0)] * n
                for j, v in zip(subset, sol):
                    best_k[j] = v
    if best is None:
        return None, None
    return float(best), [float(v) for v in best_k]


def exact_lp_optimum(c, A, b):
    """min c.x over {Ax=b, x>=0} by Fraction-exact basic-solution enumeration.

    Assumes the optimum is attained (use c >= 0 at test sizes). Returns
    (objective, x) or (None, None) when infeasible.
    """
    A = np.asarray(A, dtype=np.float64)
    m, n = A.shape
    cF = [Fraction(float(v)) for v in np.asarray(c, dtype=np.float64)]
    rows = [[Fraction(float(v)) for v in row] for row in A]
    bF = tuple(Fraction(float(v)) for v in np.asarray(b, dtype=np.float64))
    best, best_x = None, None
    if all(v == 0 for v in bF):
        best, best_x = Fraction(0), [Fraction(0)] * n
    for size in range(1, min(m, n) + 1):
        for subset in itertools.combinations(range(n), size):
            cols = [tuple(rows[i][j] for i in range(m)) for j in subset]
            sol = _fraction_solve(cols, bF)
            if sol is None or any(v < 0 for v in sol):
                continue
            obj = sum(cF[j] * v for j, v in zip(subset, sol))
            if best is None or obj < best:
                best = obj
                best_x = [Fraction(0)] * n
                for j, v in zip(subset, sol):
                    best_x[j] = v
    if best is None:
        return None, None
    return float(best), [float(v) for v in best_x]


def exhaustive_min_cover(points, r):
    """Smallest number of r-balls centered at points that covers points."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n == 0:
        return 0
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    covers = d <= r + 1e-12
    for k in range(1, n + 1):
        for centers in itertools.combinations(range(n), k):
            if covers[list(centers)].any(axis=0).all():
                return k
    return n

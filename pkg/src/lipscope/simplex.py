"""Dense linear programming in standard form.

Solves min c.x subject to A x = b, x >= 0 with a two-phase tableau
simplex. Pivot selection is Bland's rule (smallest eligible index for
both entering and leaving variables), which rules out cycling on the
degenerate instances that pattern systems produce. Intended for the
small dense systems this package generates; a first-order splitting
method in ``region_algebra`` takes over on larger weighted-L1
instances.
"""

from __future__ import annotations

import numpy as np

# Pivot tolerance; primal feasibility is certified to 1e-8 downstream.
PIVOT_TOL = 1e-9


class InfeasibleError(Exception):
    """The constraint system A x = b, x >= 0 has no solution."""


class UnboundedError(Exception):
    """The objective decreases without bound over the feasible set."""


def _pivot(T, basis, row, col):
    T[row] = T[row] / T[row, col]
    for i in range(T.shape[0]):
        if i != row and T[i, col] != 0.0:
            T[i] = T[i] - T[i, col] * T[row]
    basis[row] = col


def _bland_iterate(T, basis, costs, ncols):
    """Run simplex iterations on tableau T for the given cost vector.

    T is m x (ncols+1) in canonical form for ``basis``. Returns when no
    reduced cost is negative; raises UnboundedError if a ray is found.
    """
    m = T.shape[0]
    while True:
        cb = costs[basis]
        reduced = costs[:ncols] - cb @ T[:, :ncols]
        entering = -1
        for j in range(ncols):
            if reduced[j] < -PIVOT_TOL:
                entering = j
                break
        if entering < 0:
            return
        col = T[:, entering]
        best_ratio = np.inf
        leave = -1
        for i in range(m):
            if col[i] > PIVOT_TOL:
                ratio = T[i, ncols] / col[i]
                if ratio < best_ratio - PIVOT_TOL or (
                    abs(ratio - best_ratio) <= PIVOT_TOL
                    and (leave < 0 or basis[i] < basis[leave])
                ):
                    best_ratio = ratio
                    leave = i
        if leave < 0:
            raise UnboundedError("unbounded along variable %d" % entering)
        _pivot(T, basis, leave, entering)


def solve_lp(c, A, b):
    """Minimize c.x over {A x = b, x >= 0}; returns (x, objective).

    Raises InfeasibleError or UnboundedError accordingly. Redundant
    rows are dropped during phase 1, so A need not have full row rank.
    """
    A = np.array(A, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    c = np.array(c, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("A must be 2-d")
    m, n = A.shape
    if b.shape != (m,) or c.shape != (n,):
        raise ValueError("shape mismatch: A %s, b %s, c %s" % (A.shape, b.shape, c.shape))
    if m == 0:
        return np.zeros(n), 0.0

    flip = b < 0
    A = A.copy()
    A[flip] *= -1.0
    b = np.abs(b)

    # Phase 1: artificial basis.
    T = np.zeros((m, n + m + 1))
    T[:, :n] = A
    T[:, n : n + m] = np.eye(m)
    T[:, -1] = b
    basis = list(range(n, n + m))
    phase1_costs = np.concatenate([np.zeros(n), np.ones(m), [0.0]])
    _bland_iterate(T, basis, phase1_costs, n + m)
    if T[:, -1] @ phase1_costs[basis] > 1e-8:
        raise InfeasibleError("phase 1 optimum %.3e > 0" % float(T[:, -1] @ phase1_costs[basis]))

    # Drive remaining artificials out of the basis; drop redundant rows.
    keep = []
    for i in range(m):
        if basis[i] < n:
            keep.append(i)
            continue
        pivot_col = -1
        for j in range(n):
            if abs(T[i, j]) > PIVOT_TOL:
                pivot_col = j
                break
        if pivot_col >= 0:
            _pivot(T, basis, i, pivot_col)
            keep.append(i)
        # else: zero row over the real variables, redundant constraint
    T = T[keep][:, list(range(n)) + [n + m]]
    basis = [basis[i] for i in keep]

    phase2_costs = np.concatenate([c, [0.0]])
    _bland_iterate(T, basis, phase2_costs, n)
    x = np.zeros(n)
    for i, j in enumerate(basis):
        x[j] = T[i, -1]
    return x, float(c @ x)

"""LP solver: known optima, degenerate instances, random cross-checks."""

import numpy as np
import numpy.testing as npt
import pytest

from lipscope.simplex import InfeasibleError, UnboundedError, solve_lp
from oracles import exact_lp_optimum


class TestKnownInstances:
    def test_single_variable(self):
        x, obj = solve_lp([2.0], [[1.0]], [3.0])
        npt.assert_allclose(x, [3.0])
        npt.assert_allclose(obj, 6.0)

    def test_two_variable_vertex(self):
        # min x+y s.t. x+2y = 4, 3x+2y = 6 -> x=1, y=1.5
        x, obj = solve_lp([1.0, 1.0], [[1.0, 2.0], [3.0, 2.0]], [4.0, 6.0])
        npt.assert_allclose(x, [1.0, 1.5], atol=1e-10)
        npt.assert_allclose(obj, 2.5, atol=1e-10)

    def test_negative_rhs_handled_by_row_flip(self):
        x, obj = solve_lp([1.0, 0.0], [[-1.0, 1.0]], [-2.0])
        npt.assert_allclose(obj, 2.0, atol=1e-10)
        npt.assert_allclose(x, [2.0, 0.0], atol=1e-10)

    def test_redundant_row_dropped(self):
        A = [[1.0, 1.0], [2.0, 2.0]]
        x, obj = solve_lp([1.0, 2.0], A, [1.0, 2.0])
        npt.assert_allclose(obj, 1.0, atol=1e-10)

    def test_beale_degenerate_instance_terminates(self):
        # classic cycling example for naive pivoting; Bland must finish
        A = [
            [0.25, -60.0, -1.0 / 25.0, 9.0, 1.0, 0.0, 0.0],
            [0.5, -90.0, -1.0 / 50.0, 3.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        ]
        c = [-0.75, 150.0, -0.02, 6.0, 0.0, 0.0, 0.0]
        x, obj = solve_lp(c, A, [0.0, 0.0, 1.0])
        npt.assert_allclose(obj, -0.05, atol=1e-9)

    def test_infeasible(self):
        with pytest.raises(InfeasibleError):
            solve_lp([1.0], [[1.0], [1.0]], [1.0, 2.0])

    def test_zero_row_with_nonzero_rhs_infeasible(self):
        with pytest.raises(InfeasibleError):
            solve_lp([1.0, 1.0], [[0.0, 0.0]], [1.0])

    def test_unbounded(self):
        # min -x s.t. x - y = 1: x can grow with y
        with pytest.raises(UnboundedError):
            solve_lp([-1.0, 0.0], [[1.0, -1.0]], [1.0])

    def test_empty_constraints(self):
        x, obj = solve_lp([1.0, 1.0], np.zeros((0, 2)), [])
        npt.assert_array_equal(x, [0.0, 0.0])
        assert obj == 0.0


class TestRandomCrossCheck:
    def test_matches_exact_enumeration(self, rng):
        solved = 0
        for _ in range(60):
            m = int(rng.integers(1, 4))
            n = int(rng.integers(m, 7))
            A = rng.integers(-3, 4, size=(m, n)).astype(float)
            # feasible by construction
            x0 = np.where(rng.random(n) < 0.5, rng.integers(0, 3, size=n), 0).astype(float)
            b = A @ x0
            c = rng.integers(0, 5, size=n).astype(float)
            want_obj, _ = exact_lp_optimum(c, A, b)
            x, obj = solve_lp(c, A, b)
            assert want_obj is not None
            npt.assert_allclose(obj, want_obj, rtol=1e-9, atol=1e-9)
            npt.assert_allclose(A @ x, b, atol=1e-8)
            assert np.all(x >= -1e-9)
            solved += 1
        assert solved == 60

    def test_detects_random_infeasible(self, rng):
        found = 0
        for _ in range(40):
            m, n = 3, 3
            A = rng.integers(-2, 3, size=(m, n)).astype(float)
            b = rng.integers(1, 4, size=m).astype(float)
            want_obj, _ = exact_lp_optimum(np.ones(n), A, b)
            if want_obj is None:
                with pytest.raises(InfeasibleError):
                    solve_lp(np.ones(n), A, b)
                found += 1
            else:
                x, obj = solve_lp(np.ones(n), A, b)
                npt.assert_allclose(obj, want_obj, rtol=1e-9, atol=1e-9)
        assert found > 0

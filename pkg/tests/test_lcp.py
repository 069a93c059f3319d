import itertools

import numpy as np
import pytest

from torsim.lcp import (LcpError, LcpProblem, complementarity_residual,
                        solve_lcp, solve_lcp_pgs)


def random_psd_problem(rng, n, boxed=False):
    B = rng.normal(size=(n, n))
    A = B @ B.T + 0.05 * np.eye(n)
    b = rng.normal(size=n)
    if boxed:
        hi = rng.uniform(0.2, 2.0, size=n)
        lo = -hi
        return LcpProblem(A=A, b=b, lo=lo, hi=hi)
    return LcpProblem(A=A, b=b)


def brute_force_unilateral(problem, tol=1e-9):
    """Enumerate active sets: z_S solves A_SS z_S = -b_S, rest at zero."""
    n = problem.n
    best = None
    for pattern in itertools.product([0, 1], repeat=n):
        active = [i for i in range(n) if pattern[i]]
        z = np.zeros(n)
        if active:
            try:
                z[active] = np.linalg.solve(
                    problem.A[np.ix_(active, active)], -problem.b[active])
            except np.linalg.LinAlgError:
                continue
        if np.any(z < -tol):
            continue
        w = problem.A @ z + problem.b
        if np.any(w < -tol):
            continue
        best = z
        break
    return best


def brute_force_boxed(problem, tol=1e-9):
    """Enumerate (lo, clamped, hi) assignments for small boxed problems."""
    n = problem.n
    for pattern in itertools.product([0, 1, 2], repeat=n):
        z = np.zeros(n)
        C = [i for i in range(n) if pattern[i] == 1]
        for i in range(n):
            if pattern[i] == 0:
                z[i] = problem.lo[i]
            elif pattern[i] == 2:
                z[i] = problem.hi[i]
        if C:
            others = [i for i in range(n) if i not in C]
            rhs = -problem.b[C]
            if others:
                rhs = rhs - problem.A[np.ix_(C, others)] @ z[others]
            try:
                z[C] = np.linalg.solve(problem.A[np.ix_(C, C)], rhs)
            except np.linalg.LinAlgError:
                continue
        if np.any(z < problem.lo - tol) or np.any(z > problem.hi + tol):
            continue
        w = problem.A @ z + problem.b
        ok = True
        for i in range(n):
            if pattern[i] == 0 and w[i] < -tol:
                ok = False
            elif pattern[i] == 2 and w[i] > tol:
                ok = False
            elif pattern[i] == 1 and abs(w[i]) > 1e-7:
                ok = False
        if ok:
            return z
    return None


def test_scalar_active():
    z = solve_lcp(LcpProblem(A=[[1.0]], b=[-1.0]))
    assert abs(z[0] - 1.0) < 1e-12


def test_scalar_inactive():
    z = solve_lcp(LcpProblem(A=[[1.0]], b=[1.0]))
    assert z[0] == 0.0


def test_bilateral_row():
    prob = LcpProblem(A=[[2.0]], b=[-3.0], lo=[-np.inf], hi=[np.inf])
    z = solve_lcp(prob)
    assert abs(z[0] - 1.5) < 1e-12


def test_random_unilateral_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 6))
        prob = random_psd_problem(rng, n)
        z = solve_lcp(prob)
        z_ref = brute_force_unilateral(prob)
        assert z_ref is not None
        assert np.abs(z - z_ref).max() < 1e-7
        assert complementarity_residual(prob, z) <= 1e-8


def test_random_boxed_matches_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(1, 5))
        prob = random_psd_problem(rng, n, boxed=True)
        z = solve_lcp(prob)
        assert complementarity_residual(prob, z) <= 1e-8
        z_ref = brute_force_boxed(prob)
        assert z_ref is not None
        assert np.abs(z - z_ref).max() < 1e-6


def test_mixed_bilateral_and_unilateral():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = 4
        prob = random_psd_problem(rng, n)
        prob.lo[0] = -np.inf  # first row bilateral
        z = solve_lcp(prob)
        w = prob.A @ z + prob.b
        assert abs(w[0]) < 1e-8
        assert complementarity_residual(prob, z) <= 1e-8


def test_semidefinite_redundant_rows():
    # duplicated rows make A singular but the problem stays solvable
    rng = np.random.default_rng(3)
    J = rng.normal(size=(3, 2))
    J = np.vstack([J, J[0]])
    A = J @ J.T
    b = np.array([-1.0, 0.5, -1.0, -1.0])
    prob = LcpProblem(A=A, b=b)
    z = solve_lcp(prob)
    assert complementarity_residual(prob, z) <= 1e-7


def test_pgs_fallback_quality():
    rng = np.random.default_rng(4)
    prob = random_psd_problem(rng, 6)
    z_ref = solve_lcp(prob)
    z = solve_lcp_pgs(prob, sweeps=400)
    assert np.abs(z - z_ref).max() < 1e-5


def test_problem_validation():
    with pytest.raises(ValueError):
        LcpProblem(A=np.array([[1.0, 2.0], [0.0, 1.0]]), b=np.zeros(2))
    with pytest.raises(ValueError):
        LcpProblem(A=np.eye(3), b=np.zeros(2))

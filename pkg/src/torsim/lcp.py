"""Boxed linear complementarity solver (Dantzig-style principal pivoting).

Solves: find z with lo <= z <= hi and w = A z + b such that
    z_i = lo_i  ->  w_i >= 0
    z_i = hi_i  ->  w_i <= 0
    otherwise   ->  w_i  = 0

Rows with lo = 0, hi = +inf are the classic unilateral complementarity
conditions; finite two-sided bounds express boxed friction; (-inf, +inf)
rows are bilateral equality rows (w = 0).

The incremental pivoting scheme follows Baraff's contact formulation: each
variable is driven in turn while the index sets of clamped and bound rows are
maintained.  A projected Gauss-Seidel iteration is provided as a fallback for
callers when pivoting fails.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_PIVOT_TOL = 1e-10


class LcpError(RuntimeError):
    """Pivot failure or cycling; carries the pivot count for diagnostics."""

    def __init__(self, message, iterations):
        self.iterations = iterations
        super().__init__(f"{message} (after {iterations} pivots)")


@dataclass
class LcpProblem:
    A: np.ndarray
    b: np.ndarray
    lo: np.ndarray = None
    hi: np.ndarray = None
    meta: list = field(default_factory=list)  # optional per-row tags

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        n = len(self.b)
        if self.A.shape != (n, n):
            raise ValueError("A must be square and match b")
        if self.lo is None:
            self.lo = np.zeros(n)
        if self.hi is None:
            self.hi = np.full(n, np.inf)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if np.abs(self.A - self.A.T).max(initial=0.0) > 1e-9 * max(
                1.0, np.abs(self.A).max(initial=0.0)):
            raise ValueError("A must be symmetric")

    @property
    def n(self):
        return len(self.b)


def complementarity_residual(problem, z):
    """Worst-case violation of the boxed complementarity conditions."""
    z = np.asarray(z)
    w = problem.A @ z + problem.b
    res = 0.0
    for i in range(problem.n):
        res = max(res, problem.lo[i] - z[i], z[i] - problem.hi[i])
        at_lo = z[i] <= problem.lo[i] + 1e-9
        at_hi = z[i] >= problem.hi[i] - 1e-9
        if at_lo and at_hi:
            continue
        if at_lo:
            res = max(res, -w[i])
        elif at_hi:
            res = max(res, w[i])
        else:
            res = max(res, abs(w[i]))
    return float(res)


def _solve_sub(A, rows, col_vec):
    """Solve A[rows, rows] x = col_vec robustly (PSD, possibly singular)."""
    if not rows:
        return np.zeros(0)
    sub = A[np.ix_(rows, rows)]
    try:
        return np.linalg.solve(sub, col_vec)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(sub, col_vec, rcond=None)[0]


def solve_lcp(problem, max_pivots=None):
    """Dantzig principal pivoting for the boxed LCP.

    Returns the impulse vector z.  Raises LcpError on pivot failure or
    cycling; callers are expected to fall back to `solve_lcp_pgs` and flag
    the step.
    """
    A, b, lo, hi = problem.A, problem.b, problem.lo, problem.hi
    n = problem.n
    if max_pivots is None:
        max_pivots = 60 * n + 200
    z = np.clip(np.zeros(n), lo, hi)
    w = A @ z + b
    FREE, AT_LO, AT_HI, CLAMPED = 0, 1, 2, 3  # FREE = not yet processed
    state = np.full(n, FREE, dtype=int)
    clamped = []  # maintained in insertion order
    pivots = 0

    for d in range(n):
        # classify immediately if already satisfied
        for _ in range(max_pivots):
            w[d] = A[d] @ z + b[d]
            at_lo = z[d] <= lo[d] + _PIVOT_TOL
            at_hi = z[d] >= hi[d] - _PIVOT_TOL
            if abs(w[d]) <= _PIVOT_TOL:
                state[d] = CLAMPED
                clamped.append(d)
                break
            if at_lo and w[d] > 0 and np.isfinite(lo[d]):
                state[d] = AT_LO
                break
            if at_hi and w[d] < 0 and np.isfinite(hi[d]):
                state[d] = AT_HI
                break
            # drive z_d toward complementarity
            direction = 1.0 if w[d] < 0 else -1.0
            dz_c = _solve_sub(A, clamped, -A[clamped, d] * direction)
            dw = A[:, d] * direction
            if clamped:
                dw = dw + A[:, clamped] @ dz_c
            if pivots >= max_pivots:
                raise LcpError("pivot limit exceeded", pivots)
            pivots += 1

            # candidate step lengths
            s = np.inf
            kind, who = None, None
            if dw[d] * direction < 0 or abs(dw[d]) < _PIVOT_TOL * 1e-3:
                pass  # driving does not reduce |w_d|; rely on bound limits
            else:
                s_d = -w[d] / dw[d]
                if s_d < s:
                    s, kind, who = s_d, "w_zero", d
            bound_d = hi[d] if direction > 0 else lo[d]
            if np.isfinite(bound_d):
                s_b = (bound_d - z[d]) / direction
                if s_b < s:
                    s, kind, who = s_b, "d_bound", d
            for idx, j in enumerate(clamped):
                step_j = dz_c[idx]
                if step_j > _PIVOT_TOL * 1e-3 and np.isfinite(hi[j]):
                    s_j = (hi[j] - z[j]) / step_j
                    if s_j < s:
                        s, kind, who = s_j, "to_hi", j
                elif step_j < -_PIVOT_TOL * 1e-3 and np.isfinite(lo[j]):
                    s_j = (lo[j] - z[j]) / step_j
                    if s_j < s:
                        s, kind, who = s_j, "to_lo", j
            for j in range(n):
                if state[j] == AT_LO and dw[j] < -_PIVOT_TOL * 1e-3 and w[j] > 0:
                    s_j = -w[j] / dw[j]
                    if s_j < s:
                        s, kind, who = s_j, "unclamp", j
                elif state[j] == AT_HI and dw[j] > _PIVOT_TOL * 1e-3 and w[j] < 0:
                    s_j = -w[j] / dw[j]
                    if s_j < s:
                        s, kind, who = s_j, "unclamp", j

            if not np.isfinite(s):
                raise LcpError(f"unbounded ray while driving row {d}", pivots)
            s = max(s, 0.0)
            z[d] += s * direction
            if clamped:
                z[clamped] += s * dz_c
            w = A @ z + b

            if kind == "w_zero":
                state[d] = CLAMPED
                clamped.append(d)
                break
            if kind == "d_bound":
                z[d] = bound_d
                state[d] = AT_HI if direction > 0 else AT_LO
                break
            if kind in ("to_hi", "to_lo"):
                z[who] = hi[who] if kind == "to_hi" else lo[who]
                state[who] = AT_HI if kind == "to_hi" else AT_LO
                clamped.remove(who)
                continue
            if kind == "unclamp":
                state[who] = CLAMPED
                clamped.append(who)
                continue
            raise LcpError(f"no progress while driving row {d}", pivots)
        else:
            raise LcpError(f"cycling while driving row {d}", pivots)

    # polish: exact solve on the clamped set
    if clamped:
        others = [j for j in range(n) if state[j] != CLAMPED]
        rhs = -(b[clamped] + (A[np.ix_(clamped, others)] @ z[others]
                              if others else 0.0))
        z_c = _solve_sub(A, clamped, rhs)
        zc_clipped = np.clip(z_c, lo[clamped], hi[clamped])
        if np.abs(z_c - zc_clipped).max(initial=0.0) < 1e-7:
            z[clamped] = zc_clipped
    if complementarity_residual(problem, z) > 1e-7:
        raise LcpError("complementarity check failed after pivoting", pivots)
    return z


def solve_lcp_pgs(problem, sweeps=200, z0=None):
    """Projected Gauss-Seidel fallback (robust, lower accuracy)."""
    A, b, lo, hi = problem.A, problem.b, problem.lo, problem.hi
    n = problem.n
    z = np.zeros(n) if z0 is None else np.array(z0, dtype=float)
    z = np.clip(z, lo, hi)
    diag = np.diag(A).copy()
    diag[diag < 1e-12] = 1.0
    for _ in range(sweeps):
        for i in range(n):
            w_i = A[i] @ z + b[i]
            z[i] = np.clip(z[i] - w_i / diag[i], lo[i], hi[i])
    return z

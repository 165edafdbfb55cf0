"""Bounded-variable primal simplex on A x + s = b with duals and reduced costs.

Column layout of the working matrix: ``n`` structural columns, ``q`` slacks
(identity, bounds [0, inf)) and one artificial (negative unit column, phase one
only) per row whose initial slack would be negative.

The pivoting rules are written so that the pivot sequence is unchanged when a
variable is reflected or shifted (x -> -x + t): the initial nonbasic position is
chosen from the sign of the column sum, and every tie is resolved
within a tolerance window by variable index. Equivalent instances therefore end
in corresponding bases, which the graph features rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .milp import FEAS_TOL, OPT_TOL

MAX_PIVOTS = 50_000
DEGENERATE_SWITCH = 50

BASIC, AT_LOWER, AT_UPPER, FREE = 0, 1, 2, 3
_BASIS_NAMES = {BASIC: "basic", AT_LOWER: "at-lower", AT_UPPER: "at-upper", FREE: "nonbasic-free"}

_OK, _UNBOUNDED, _ITER_LIMIT = 0, 1, 2

_PIV_TOL = 1e-9
_TIE_REL = 1e-9
_PIV_RATIO = 0.1
_REFRESH = 100


@dataclass(frozen=True, eq=False)
class LpResult:
    status: str
    x: np.ndarray
    obj: float
    duals: np.ndarray
    reduced_costs: np.ndarray
    basis: np.ndarray
    iterations: int
    slack: np.ndarray | None = None

    @property
    def ok(self):
        return self.status == "optimal"

    def basis_names(self):
        return [_BASIS_NAMES[int(b)] for b in self.basis]

    def same_as(self, other):
        arrays = ("x", "duals", "reduced_costs", "basis")
        return (self.status == other.status and self.iterations == other.iterations
                and np.float64(self.obj).tobytes() == np.float64(other.obj).tobytes()
                and all(getattr(self, a).tobytes() == getattr(other, a).tobytes() for a in arrays))


@njit(cache=True)
def _run_phase(tab, beta, basis, x, where, lo, hi, cost, max_pivots, pivots):
    m, N = tab.shape
    degenerate = 0
    bland = False
    d = np.empty(N)
    since_refresh = _REFRESH
    while True:
        if pivots >= max_pivots:
            return _ITER_LIMIT, pivots
        if since_refresh >= _REFRESH:
            # reduced costs d = cost - cost_B^T tab, recomputed periodically
            for j in range(N):
                d[j] = cost[j]
            for i in range(m):
                cb = cost[basis[i]]
                if cb != 0.0:
                    for j in range(N):
                        d[j] -= cb * tab[i, j]
            since_refresh = 0
        # pricing
        q = -1
        best = 0.0
        for j in range(N):
            w = where[j]
            if w == BASIC:
                continue
            v = 0.0
            if w == AT_LOWER:
                if d[j] < -OPT_TOL and hi[j] > lo[j]:
                    v = -d[j]
            elif w == AT_UPPER:
                if d[j] > OPT_TOL and hi[j] > lo[j]:
                    v = d[j]
            elif abs(d[j]) > OPT_TOL:
                v = abs(d[j])
            if v > 0.0:
                if bland:
                    q = j
                    break
                if v > best:
                    best = v
        if q < 0 and best == 0.0:
            if since_refresh > 0:
                since_refresh = _REFRESH
                continue
            return _OK, pivots
        if not bland:
            thresh = best * (1.0 - _TIE_REL)
            for j in range(N):
                w = where[j]
                if w == BASIC:
                    continue
                v = 0.0
                if w == AT_LOWER:
                    if d[j] < -OPT_TOL and hi[j] > lo[j]:
                        v = -d[j]
                elif w == AT_UPPER:
                    if d[j] > OPT_TOL and hi[j] > lo[j]:
                        v = d[j]
                elif abs(d[j]) > OPT_TOL:
                    v = abs(d[j])
                if v >= thresh and v > 0.0:
                    q = j
                    break
        direction = 1.0 if d[q] < 0.0 else -1.0
        # ratio test
        theta = np.inf
        for i in range(m):
            a = tab[i, q]
            if abs(a) <= _PIV_TOL:
                continue
            delta = -direction * a
            k = basis[i]
            if delta < 0.0:
                if lo[k] == -np.inf:
                    continue
                r = (beta[i] - lo[k]) / (-delta)
            else:
                if hi[k] == np.inf:
                    continue
                r = (hi[k] - beta[i]) / delta
            if r < 0.0:
                r = 0.0
            if r < theta:
                theta = r
        span = hi[q] - lo[q]
        if theta == np.inf and span == np.inf:
            return _UNBOUNDED, pivots
        window = theta + 1e-12 + _TIE_REL * theta
        if span <= window:
            # bound flip, no basis change
            for i in range(m):
                beta[i] -= direction * span * tab[i, q]
            if direction > 0:
                x[q] = hi[q]
                where[q] = AT_UPPER
            else:
                x[q] = lo[q]
                where[q] = AT_LOWER
            pivots += 1
            degenerate = 0
            bland = False
            continue
        # leaving row: lowest basic index among tied rows whose pivot is within
        # _PIV_RATIO of the largest, so a redundant row never displaces its sources
        tied = np.zeros(m, dtype=np.bool_)
        amax = 0.0
        for i in range(m):
            a = tab[i, q]
            if abs(a) <= _PIV_TOL:
                continue
            delta = -direction * a
            k = basis[i]
            if delta < 0.0:
                if lo[k] == -np.inf:
                    continue
                r = (beta[i] - lo[k]) / (-delta)
            else:
                if hi[k] == np.inf:
                    continue
                r = (hi[k] - beta[i]) / delta
            if r < 0.0:
                r = 0.0
            if r > window:
                continue
            tied[i] = True
            amax = max(amax, abs(a))
        floor = 0.0 if bland else amax * _PIV_RATIO
        p = -1
        pk = 0
        for i in range(m):
            if tied[i] and abs(tab[i, q]) >= floor and (p < 0 or basis[i] < pk):
                p, pk = i, basis[i]
        step = theta
        for i in range(m):
            beta[i] -= direction * step * tab[i, q]
        leaving = basis[p]
        if -direction * tab[p, q] < 0.0:
            x[leaving] = lo[leaving]
            where[leaving] = AT_LOWER
        else:
            x[leaving] = hi[leaving]
            where[leaving] = AT_UPPER
        entering_val = x[q] + direction * step
        piv = tab[p, q]
        for j in range(N):
            tab[p, j] /= piv
        for i in range(m):
            if i != p:
                f = tab[i, q]
                if f != 0.0:
                    for j in range(N):
                        tab[i, j] -= f * tab[p, j]
        dq = d[q]
        if dq != 0.0:
            for j in range(N):
                d[j] -= dq * tab[p, j]
        d[q] = 0.0
        since_refresh += 1
        basis[p] = q
        where[q] = BASIC
        beta[p] = entering_val
        x[q] = entering_val
        pivots += 1
        if step <= 1e-12:
            degenerate += 1
            if degenerate >= DEGENERATE_SWITCH:
                bland = True
        else:
            degenerate = 0
            bland = False


def _initial_position(c, col_sum, lo, hi):
    """Starting nonbasic status per structural column, reflection invariant.

    Each bounded column starts at the bound that lowers total row activity
    (objective sign breaks the tie), which keeps the slack basis feasible for
    covering- and packing-type rows.
    """
    n = len(c)
    where = np.empty(n, dtype=np.int8)
    for j in range(n):
        has_lo, has_hi = np.isfinite(lo[j]), np.isfinite(hi[j])
        if has_lo and has_hi:
            key = col_sum[j] if col_sum[j] != 0 else c[j]
            where[j] = AT_UPPER if key < 0 else AT_LOWER
        elif has_lo:
            where[j] = AT_LOWER
        elif has_hi:
            where[j] = AT_UPPER
        else:
            where[j] = FREE
    return where


def lp_solve(inst, lb=None, ub=None, max_pivots=MAX_PIVOTS):
    """Solve the LP relaxation of ``inst`` (optionally with overriding bounds).

    Returns an :class:`LpResult`. Duals are the nonnegative multipliers of the
    ``<=`` rows, so reduced costs satisfy ``r = c + A^T duals``.
    """
    A = inst.dense
    b = inst.rhs
    c = inst.obj
    lb = inst.lb if lb is None else np.asarray(lb, dtype=np.float64)
    ub = inst.ub if ub is None else np.asarray(ub, dtype=np.float64)
    q, n = A.shape
    empty = LpResult("infeasible", np.full(n, np.nan), np.inf, np.zeros(q), np.zeros(n),
                     np.zeros(n, dtype=np.int8), 0)
    if np.any(lb > ub + FEAS_TOL):
        return empty

    where_s = _initial_position(c, A.sum(axis=0), lb, ub)
    xs = np.where(where_s == AT_LOWER, lb, np.where(where_s == AT_UPPER, ub, 0.0))
    resid = b - A @ xs if q else np.zeros(0)
    need_art = resid < -1e-9 * (1.0 + np.abs(b))

    art_rows = np.flatnonzero(need_art)
    k = len(art_rows)
    N = n + q + k
    M = np.zeros((q, N))
    M[:, :n] = A
    M[:, n:n + q] = np.eye(q)
    M[art_rows, n + q + np.arange(k)] = -1.0
    lo = np.concatenate([lb, np.zeros(q + k)])
    hi = np.concatenate([ub, np.full(q + k, np.inf)])
    x = np.concatenate([xs, np.zeros(q + k)])
    where = np.concatenate([where_s, np.full(q + k, AT_LOWER, dtype=np.int8)])
    basis = n + np.arange(q, dtype=np.int64)
    basis[art_rows] = n + q + np.arange(k)
    where[basis] = BASIC
    sign = np.where(need_art, -1.0, 1.0)
    tab = M * sign[:, None]
    beta = resid * sign
    x[basis] = beta

    pivots = 0
    if k:
        cost1 = np.zeros(N)
        cost1[n + q:] = 1.0
        code, pivots = _run_phase(tab, beta, basis, x, where, lo, hi, cost1, max_pivots, pivots)
        if code == _ITER_LIMIT:
            return LpResult("iteration-limit", np.full(n, np.nan), np.nan, np.zeros(q), np.zeros(n),
                            np.zeros(n, dtype=np.int8), pivots)
        art_basic = basis >= n + q
        infeas = beta[art_basic].sum() + x[n + q:][where[n + q:] != BASIC].sum()
        if infeas > FEAS_TOL * (1.0 + np.abs(b).max()):
            return LpResult("infeasible", np.full(n, np.nan), np.inf, np.zeros(q), np.zeros(n),
                            np.zeros(n, dtype=np.int8), pivots)
        hi[n + q:] = 0.0
        nb_art = np.flatnonzero(where[n + q:] != BASIC) + n + q
        x[nb_art] = 0.0
        where[nb_art] = AT_LOWER

    cost = np.zeros(N)
    cost[:n] = c
    code, pivots = _run_phase(tab, beta, basis, x, where, lo, hi, cost, max_pivots, pivots)
    if code == _ITER_LIMIT:
        return LpResult("iteration-limit", np.full(n, np.nan), np.nan, np.zeros(q), np.zeros(n),
                        np.zeros(n, dtype=np.int8), pivots)
    if code == _UNBOUNDED:
        return LpResult("unbounded", np.full(n, np.nan), -np.inf, np.zeros(q), np.zeros(n),
                        np.zeros(n, dtype=np.int8), pivots)

    # refactor from the final basis for clean values
    if q:
        nonbasic = np.flatnonzero(where != BASIC)
        B = M[:, basis]
        xB = np.linalg.solve(B, b - M[:, nonbasic] @ x[nonbasic])
        x[basis] = xB
        y = np.linalg.solve(B.T, cost[basis])
        d = cost - M.T @ y
    else:
        y = np.zeros(0)
        d = cost.copy()
    d[basis] = 0.0
    xs = x[:n].copy()
    duals = np.maximum(-y, 0.0) if q else y
    status = where[:n].copy()
    status[(status == AT_LOWER) & ~np.isfinite(lb)] = FREE
    obj = float(c @ xs)
    slack = b - A @ xs if q else np.zeros(0)
    return LpResult("optimal", xs, obj, duals, d[:n].copy(), status, pivots, slack)

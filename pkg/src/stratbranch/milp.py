"""MILP data model: min c^T x  s.t.  A x <= b,  l <= x <= u,  x_j integer for j in I."""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
INT_TOL = 1e-6
ORACLE_CAP = 2 ** 20


class VarKind(enum.IntEnum):
    BINARY = 0
    INTEGER = 1
    IMPLICIT = 2
    CONTINUOUS = 3

    @property
    def is_integral(self):
        return self is not VarKind.CONTINUOUS


class InstanceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MilpInstance:
    """A minimization MILP with ``<=`` rows stored in CSR form.

    ``row_ptr``/``col_idx``/``vals`` hold the sparse constraint matrix. Infinite
    bounds are ``-inf``/``inf``. Instances are immutable; derived dense views are
    cached on first use.
    """

    obj: np.ndarray
    row_ptr: np.ndarray
    col_idx: np.ndarray
    vals: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    kinds: np.ndarray
    name: str = "milp"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = len(self.obj)
        q = len(self.rhs)
        for arr in (self.obj, self.vals, self.rhs, self.lb, self.ub):
            arr.setflags(write=False)
        if not (len(self.lb) == len(self.ub) == len(self.kinds) == n):
            raise InstanceError("bounds/kinds length does not match objective")
        if len(self.row_ptr) != q + 1 or self.row_ptr[0] != 0 or self.row_ptr[-1] != len(self.col_idx):
            raise InstanceError("malformed row pointer")
        for i in range(q):
            cols = self.col_idx[self.row_ptr[i]:self.row_ptr[i + 1]]
            if len(cols) == 0:
                raise InstanceError(f"row {i} has no nonzero coefficient")
            if cols.min() < 0 or cols.max() >= n:
                raise InstanceError(f"row {i} has an out-of-range column")
            if len(np.unique(cols)) != len(cols):
                raise InstanceError(f"row {i} repeats a column")
        if np.any(self.vals == 0):
            raise InstanceError("explicit zero coefficient")
        if np.any(self.lb > self.ub):
            raise InstanceError("lb > ub")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise InstanceError("NaN bound")
        binary = self.kinds == VarKind.BINARY
        if np.any((self.lb[binary] != 0) | (self.ub[binary] != 1)):
            raise InstanceError("binary variable without [0, 1] bounds")

    @classmethod
    def from_dense(cls, obj, A, rhs, lb=None, ub=None, kinds=None, name="milp", meta=None):
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        obj = np.asarray(obj, dtype=np.float64).copy()
        n = len(obj)
        if A.size == 0:
            A = np.zeros((0, n))
        rows = [(np.flatnonzero(r), r[r != 0]) for r in A]
        return cls.from_rows(obj, rows, rhs, lb, ub, kinds, name, meta)

    @classmethod
    def from_rows(cls, obj, rows, rhs, lb=None, ub=None, kinds=None, name="milp", meta=None):
        obj = np.asarray(obj, dtype=np.float64).copy()
        n = len(obj)
        lb = np.zeros(n) if lb is None else np.asarray(lb, dtype=np.float64).copy()
        ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=np.float64).copy()
        if kinds is None:
            kinds = np.full(n, VarKind.CONTINUOUS, dtype=np.int8)
        kinds = np.asarray([int(k) for k in kinds], dtype=np.int8)
        ptr = [0]
        cols, vals = [], []
        for idx, coef in rows:
            idx = np.asarray(idx, dtype=np.int64)
            coef = np.asarray(coef, dtype=np.float64)
            order = np.argsort(idx, kind="stable")
            cols.append(idx[order])
            vals.append(coef[order])
            ptr.append(ptr[-1] + len(idx))
        col_idx = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
        vals_arr = np.concatenate(vals) if vals else np.zeros(0)
        return cls(obj, np.asarray(ptr, dtype=np.int64), col_idx, vals_arr,
                   np.asarray(rhs, dtype=np.float64).copy(), lb, ub, kinds, name, dict(meta or {}))

    @property
    def n_vars(self):
        return len(self.obj)

    @property
    def n_cons(self):
        return len(self.rhs)

    @cached_property
    def int_mask(self):
        return self.kinds != VarKind.CONTINUOUS

    @cached_property
    def dense(self):
        A = np.zeros((self.n_cons, self.n_vars))
        for i in range(self.n_cons):
            s, e = self.row_ptr[i], self.row_ptr[i + 1]
            A[i, self.col_idx[s:e]] = self.vals[s:e]
        A.setflags(write=False)
        return A

    @cached_property
    def row_norms(self):
        return np.linalg.norm(self.dense, axis=1)

    def row(self, i):
        s, e = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[s:e], self.vals[s:e]

    def rows(self):
        return [self.row(i) for i in range(self.n_cons)]

    def with_bounds(self, lb, ub):
        """Same instance with replaced bounds (kinds are kept)."""
        return MilpInstance(self.obj, self.row_ptr, self.col_idx, self.vals, self.rhs,
                            np.asarray(lb, dtype=np.float64).copy(),
                            np.asarray(ub, dtype=np.float64).copy(),
                            self.kinds, self.name, dict(self.meta))

    def relaxed(self):
        kinds = np.full(self.n_vars, VarKind.CONTINUOUS, dtype=np.int8)
        return MilpInstance(self.obj, self.row_ptr, self.col_idx, self.vals, self.rhs,
                            self.lb, self.ub, kinds, self.name, dict(self.meta))

    def to_dict(self):
        return {
            "name": self.name,
            "n_vars": self.n_vars,
            "obj": [float(v) for v in self.obj],
            "bounds": [[_enc(l), _enc(u)] for l, u in zip(self.lb, self.ub)],
            "kinds": [VarKind(k).name.lower() for k in self.kinds],
            "rows": [{"coefs": [[int(j), float(a)] for j, a in zip(*self.row(i))],
                      "rhs": _enc(self.rhs[i])} for i in range(self.n_cons)],
        }

    @classmethod
    def from_dict(cls, d):
        n = int(d["n_vars"])
        lb = np.array([_dec(b[0]) for b in d["bounds"]])
        ub = np.array([_dec(b[1]) for b in d["bounds"]])
        kinds = [VarKind[k.upper()] for k in d["kinds"]]
        rows = [([c[0] for c in r["coefs"]], [c[1] for c in r["coefs"]]) for r in d["rows"]]
        rhs = [_dec(r["rhs"]) for r in d["rows"]]
        obj = np.array(d["obj"], dtype=np.float64)
        if len(obj) != n:
            raise InstanceError("n_vars does not match objective length")
        return cls.from_rows(obj, rows, rhs, lb, ub, kinds, d.get("name", "milp"))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def same_as(self, other):
        """Bit-exact equality of all numeric data."""
        pairs = [(self.obj, other.obj), (self.row_ptr, other.row_ptr), (self.col_idx, other.col_idx),
                 (self.vals, other.vals), (self.rhs, other.rhs), (self.lb, other.lb),
                 (self.ub, other.ub), (self.kinds, other.kinds)]
        return all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in pairs)


def _enc(v):
    if np.isposinf(v):
        return "inf"
    if np.isneginf(v):
        return "-inf"
    return float(v)


def _dec(v):
    if isinstance(v, str):
        return float(v)
    return float(v)


@dataclass(frozen=True)
class AffineMap:
    """x_hat = signs * x + shift, with integral shifts on integer variables."""

    signs: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        if not np.all(np.abs(self.signs) == 1):
            raise ValueError("signs must be +1 or -1")
        if len(self.signs) != len(self.shift):
            raise ValueError("signs and shift differ in length")

    @classmethod
    def identity(cls, n):
        return cls(np.ones(n), np.zeros(n))

    def check_integral(self, int_mask):
        s = self.shift[int_mask]
        if np.any(s != np.round(s)):
            raise ValueError("non-integral shift on an integer variable")

    def apply(self, x):
        return self.signs * np.asarray(x) + self.shift

    def inverse(self, x_hat):
        return self.signs * (np.asarray(x_hat) - self.shift)

    def offset(self, obj):
        """Constant gamma with c^T x = c_hat^T x_hat + gamma."""
        return -float(obj @ (self.signs * self.shift))


def check_feasible(inst, x, tol=INT_TOL):
    x = np.asarray(x, dtype=np.float64)
    if len(x) != inst.n_vars:
        raise ValueError("x has wrong length")
    if np.any(x < inst.lb - tol) or np.any(x > inst.ub + tol):
        return False
    if inst.n_cons and np.any(inst.dense @ x > inst.rhs + tol):
        return False
    xi = x[inst.int_mask]
    return bool(np.all(np.abs(xi - np.round(xi)) <= tol))


def brute_force_opt(inst, oracle_cap=ORACLE_CAP):
    """Exact optimum by enumerating every integer assignment.

    Each assignment fixes the integer variables and LP-solves the continuous
    remainder. Returns ``(x, obj)`` or ``None`` when infeasible.
    """
    from .simplex import lp_solve

    idx = np.flatnonzero(inst.int_mask)
    lo, hi = inst.lb[idx], inst.ub[idx]
    if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)):
        raise InstanceError("brute force needs finite bounds on integer variables")
    lo_i = np.ceil(lo - INT_TOL).astype(np.int64)
    hi_i = np.floor(hi + INT_TOL).astype(np.int64)
    sizes = np.maximum(hi_i - lo_i + 1, 0)
    grid = int(np.prod(sizes.astype(object))) if len(sizes) else 1
    if grid > oracle_cap:
        raise InstanceError(f"integer grid of {grid} points exceeds oracle cap {oracle_cap}")
    if grid == 0:
        return None
    if len(idx) == inst.n_vars:
        return _enumerate_pure(inst, lo_i, hi_i)
    best = None
    for combo in itertools.product(*[range(a, b + 1) for a, b in zip(lo_i, hi_i)]):
        vals = np.asarray(combo, dtype=np.float64)
        lb, ub = inst.lb.copy(), inst.ub.copy()
        lb[idx] = vals
        ub[idx] = vals
        res = lp_solve(inst, lb, ub)
        if res.status != "optimal":
            continue
        x = res.x.copy()
        x[idx] = vals
        if best is None or res.obj < best[1] - 1e-12:
            best = (x, res.obj)
    return best


def _enumerate_pure(inst, lo_i, hi_i, chunk=1 << 16):
    A = inst.dense
    best = None
    it = itertools.product(*[range(a, b + 1) for a, b in zip(lo_i, hi_i)])
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=np.float64)
        if block.size == 0:
            return best
        block = block.reshape(len(block), inst.n_vars)
        ok = np.all(block @ A.T <= inst.rhs + FEAS_TOL, axis=1) if inst.n_cons else np.ones(len(block), bool)
        if not ok.any():
            continue
        objs = block[ok] @ inst.obj
        k = int(np.argmin(objs))
        if best is None or objs[k] < best[1] - 1e-12:
            best = (block[ok][k].copy(), float(objs[k]))

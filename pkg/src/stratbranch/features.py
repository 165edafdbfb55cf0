"""Bipartite constraint/variable graph of a branch-and-bound node.

Column order is frozen; see ``CONS_FEATURES``/``VAR_FEATURES``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .milp import INT_TOL, VarKind
from .simplex import AT_LOWER, AT_UPPER, BASIC, FREE

CONS_FEATURES = ("obj_cos_sim", "bias", "is_tight", "dualsol_val", "age")
VAR_FEATURES = (
    "type_binary", "type_integer", "type_implicit", "type_continuous",
    "coef", "has_lb", "has_ub", "sol_is_at_lb", "sol_is_at_ub", "sol_frac",
    "basis_basic", "basis_upper", "basis_lower", "basis_zero",
    "reduced_cost", "age", "sol_val", "inc_val", "avg_inc_val",
)
EDGE_FEATURES = ("coef",)

C_OBJ_COS, C_BIAS, C_TIGHT, C_DUAL, C_AGE = range(5)
(V_TYPE, V_COEF, V_HAS_LB, V_HAS_UB, V_AT_LB, V_AT_UB, V_FRAC, V_BASIS,
 V_RC, V_AGE, V_SOL, V_INC, V_AVG_INC) = (0, 4, 5, 6, 7, 8, 9, 10, 14, 15, 16, 17, 18)
N_CONS_FEATS = len(CONS_FEATURES)
N_VAR_FEATS = len(VAR_FEATURES)

# basis one-hot order: basic, upper, lower, zero
_BASIS_SLOT = {BASIC: 0, AT_UPPER: 1, AT_LOWER: 2, FREE: 3}

BOUND_TOL = 1e-6
DUAL_EPS = 1e-8
STD_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    C: np.ndarray
    edge_index: np.ndarray
    edge_attr: np.ndarray
    V: np.ndarray
    cand_mask: np.ndarray
    row_norms: np.ndarray
    obj_norm: float = 1.0
    n_incumbents: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_cons(self):
        return self.C.shape[0]

    @property
    def n_vars(self):
        return self.V.shape[0]

    @property
    def n_edges(self):
        return self.edge_attr.shape[0]

    @property
    def candidates(self):
        return np.flatnonzero(self.cand_mask)

    @property
    def int_mask(self):
        return self.V[:, V_TYPE + VarKind.CONTINUOUS] == 0

    def replace(self, **kw):
        return replace(self, **kw)

    def same_as(self, other):
        names = ("C", "edge_index", "edge_attr", "V", "cand_mask", "row_norms")
        return all(getattr(self, a).shape == getattr(other, a).shape
                   and getattr(self, a).tobytes() == getattr(other, a).tobytes() for a in names) \
            and np.float64(self.obj_norm) == np.float64(other.obj_norm) \
            and self.n_incumbents == other.n_incumbents


def fractionality(x, int_mask):
    """Fractional part in [0, 1) for integer variables, 0 elsewhere and near integers."""
    f = x - np.floor(x)
    f = np.where((f <= INT_TOL) | (f >= 1.0 - INT_TOL), 0.0, f)
    return np.where(int_mask, f, 0.0)


def edges_of(inst):
    rows = np.repeat(np.arange(inst.n_cons), np.diff(inst.row_ptr))
    return np.vstack([rows, inst.col_idx]).astype(np.int64)


def constraint_static(rows_cols_vals, rhs, obj):
    """obj_cos_sim, bias, normalized edge coefficients and row norms for raw rows."""
    cnorm = np.linalg.norm(obj)
    cos, bias, norms, coefs = [], [], [], []
    for (cols, vals), b in zip(rows_cols_vals, rhs):
        nrm = float(np.linalg.norm(vals))
        norms.append(nrm)
        bias.append(b / nrm)
        cos.append(float(vals @ obj[cols]) / (nrm * cnorm) if cnorm > 0 else 0.0)
        coefs.append(vals / nrm)
    return np.asarray(cos), np.asarray(bias), np.asarray(norms), coefs


def build_graph(inst, lp, lb=None, ub=None, state=None, depth=0, cand_mask=None):
    """Features of the node whose LP relaxation (under bounds ``lb``/``ub``) is ``lp``.

    ``state`` supplies incumbents and LP ages; without it those features are 0.
    """
    if not lp.ok:
        raise ValueError("graph features need an optimal LP")
    lb = inst.lb if lb is None else lb
    ub = inst.ub if ub is None else ub
    q, n = inst.n_cons, inst.n_vars
    x = lp.x
    c = inst.obj
    cnorm = float(np.linalg.norm(c))
    cscale = cnorm if cnorm > 0 else 1.0
    A = inst.dense
    norms = inst.row_norms
    age_scale = 1.0 / (1.0 + depth * q)

    C = np.zeros((q, N_CONS_FEATS))
    if q:
        C[:, C_OBJ_COS] = (A @ c) / (norms * cnorm) if cnorm > 0 else 0.0
        C[:, C_BIAS] = inst.rhs / norms
        act = A @ x
        C[:, C_TIGHT] = np.abs(act - inst.rhs) <= 1e-6 * (1.0 + np.abs(inst.rhs))
        C[:, C_DUAL] = lp.duals / (norms * cnorm + DUAL_EPS)
        if state is not None:
            C[:, C_AGE] = state.cons_age * age_scale

    ei = edges_of(inst)
    ea = inst.vals / norms[ei[0]] if q else np.zeros(0)

    V = np.zeros((n, N_VAR_FEATS))
    V[np.arange(n), V_TYPE + inst.kinds.astype(np.int64)] = 1.0
    V[:, V_COEF] = c / cscale
    has_lb, has_ub = np.isfinite(lb), np.isfinite(ub)
    V[:, V_HAS_LB] = has_lb
    V[:, V_HAS_UB] = has_ub
    V[:, V_AT_LB] = has_lb & (np.abs(x - np.where(has_lb, lb, 0.0)) <= BOUND_TOL)
    V[:, V_AT_UB] = has_ub & (np.abs(x - np.where(has_ub, ub, 0.0)) <= BOUND_TOL)
    V[:, V_FRAC] = fractionality(x, inst.int_mask)
    slots = np.array([_BASIS_SLOT[int(s)] for s in lp.basis], dtype=np.int64)
    V[np.arange(n), V_BASIS + slots] = 1.0
    V[:, V_RC] = lp.reduced_costs / cscale
    V[:, V_SOL] = x
    if state is not None:
        V[:, V_AGE] = state.var_age * age_scale
        if state.incumbents:
            V[:, V_INC] = state.incumbents[-1]
            V[:, V_AVG_INC] = np.mean(state.incumbents, axis=0)

    if cand_mask is None:
        cand_mask = V[:, V_FRAC] > 0
    n_inc = len(state.incumbents) if state is not None else 0
    return BipartiteGraph(C, ei, ea, V, np.asarray(cand_mask, dtype=bool),
                          np.asarray(norms, dtype=np.float64).copy(), cnorm, n_inc)


@dataclass(frozen=True)
class FeatureStats:
    c_mean: np.ndarray
    c_std: np.ndarray
    v_mean: np.ndarray
    v_std: np.ndarray
    e_mean: np.ndarray
    e_std: np.ndarray

    def apply(self, graph):
        """Standardized (C, E, V) arrays in float64."""
        C = (graph.C - self.c_mean) / self.c_std
        V = (graph.V - self.v_mean) / self.v_std
        E = (graph.edge_attr[:, None] - self.e_mean) / self.e_std
        return C, E, V

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in
                ("c_mean", "c_std", "v_mean", "v_std", "e_mean", "e_std")}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})

    def same_as(self, other):
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in
                   ("c_mean", "c_std", "v_mean", "v_std", "e_mean", "e_std"))


def normalize_dataset_stats(graphs):
    """Per-column mean/std of C, V and edge features pooled over ``graphs``."""
    graphs = list(graphs)
    if len(graphs) < 2:
        raise ValueError("feature statistics need at least two samples")

    def stats(mats):
        M = np.concatenate([np.asarray(m, dtype=np.float64) for m in mats], axis=0)
        if M.shape[0] == 0:
            return np.zeros(M.shape[1]), np.ones(M.shape[1])
        return M.mean(axis=0), np.maximum(M.std(axis=0), STD_FLOOR)

    cm, cs = stats([g.C for g in graphs])
    vm, vs = stats([g.V for g in graphs])
    em, es = stats([g.edge_attr[:, None] for g in graphs])
    return FeatureStats(cm, cs, vm, vs, em, es)

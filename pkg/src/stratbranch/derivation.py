"""Equivalent and perturbed derivations of MILPs and their node graphs.

Equivalent derivations:

* LT: variable map ``x = T xh - T t`` with ``T`` a diagonal of signs and ``t``
  integral on the integer block, i.e. ``xh = T x + t``.
* RC: appended redundant rows ``a_i + a_j <= b_i + b_j``.

Perturbed derivations add Gaussian noise to graph features directly.
Both kinds are available on instances (for re-solving) and on graphs (for
cheap augmentation without new LP solves).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .features import (C_AGE, C_BIAS, C_DUAL, C_OBJ_COS, C_TIGHT, STD_FLOOR, V_AT_LB, V_AT_UB,
                       V_AVG_INC, V_BASIS, V_COEF, V_FRAC, V_HAS_LB, V_HAS_UB, V_INC, V_RC, V_SOL,
                       V_TYPE)
from .milp import AffineMap, MilpInstance, VarKind

log = logging.getLogger(__name__)

METHODS = ("lt", "rc", "objective", "constraint", "dual")
_PROV = {"lt": 1, "rc": 2, "objective": 3, "constraint": 4, "dual": 5}


@dataclass(frozen=True)
class DerivationConfig:
    p_equivalent: float = 0.35
    p_perturbed: float = 0.10
    sigma_c: float = 0.01
    sigma_A: float = 0.01
    sigma_b: float = 0.01
    sigma_y: float = 0.01
    t_range: int = 5
    rc_fraction: float = 0.03
    seed: int = 0
    max_rounds: int = 100

    def __post_init__(self):
        for p in (self.p_equivalent, self.p_perturbed):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if min(self.sigma_c, self.sigma_A, self.sigma_b, self.sigma_y) < 0:
            raise ValueError("sigmas must be nonnegative")
        if self.t_range < 0 or self.rc_fraction < 0:
            raise ValueError("t_range and rc_fraction must be nonnegative")

    def probability(self, method):
        return self.p_equivalent if method in ("lt", "rc") else self.p_perturbed


def sample_affine_map(inst, cfg=DerivationConfig(), seed=0):
    """Random signs everywhere, integer shifts on integer variables only.

    ``inst`` may be a :class:`MilpInstance` or a graph; only ``n_vars`` and
    ``int_mask`` are read.
    """
    rng = np.random.default_rng(seed)
    n = inst.n_vars
    signs = rng.choice(np.array([-1.0, 1.0]), size=n)
    shift = rng.integers(-cfg.t_range, cfg.t_range + 1, size=n).astype(np.float64)
    shift = np.where(inst.int_mask, shift, 0.0)
    return AffineMap(signs, shift)


def _new_kinds(kinds, amap):
    """Binary survives only when [0, 1] maps onto itself; otherwise it becomes integer."""
    kinds = np.asarray(kinds).copy()
    keeps = ((amap.signs > 0) & (amap.shift == 0)) | ((amap.signs < 0) & (amap.shift == 1))
    kinds[(kinds == VarKind.BINARY) & ~keeps] = VarKind.INTEGER
    return kinds


def lt_transform_instance(inst: MilpInstance, amap: AffineMap) -> MilpInstance:
    if len(amap.signs) != inst.n_vars:
        raise ValueError("map dimension does not match the instance")
    s, t = amap.signs, amap.shift
    vals = inst.vals * s[inst.col_idx]
    shift_act = inst.dense @ (s * t) if inst.n_cons else np.zeros(0)
    lo = s * inst.lb + t
    hi = s * inst.ub + t
    return MilpInstance(
        obj=inst.obj * s, row_ptr=inst.row_ptr.copy(), col_idx=inst.col_idx.copy(), vals=vals,
        rhs=inst.rhs + shift_act, lb=np.minimum(lo, hi), ub=np.maximum(lo, hi),
        kinds=_new_kinds(inst.kinds, amap), name=inst.name + "-lt", meta=dict(inst.meta))


def map_bounds(amap, lb, ub):
    """Node bounds after the map, reordered so lower <= upper."""
    lo = amap.signs * lb + amap.shift
    hi = amap.signs * ub + amap.shift
    return np.minimum(lo, hi), np.maximum(lo, hi)


def lt_transform_graph(graph, amap):
    """Feature-level image of ``graph`` under the LT map (no LP re-solve)."""
    s, t = amap.signs, amap.shift
    if len(s) != graph.n_vars:
        raise ValueError("map dimension does not match the graph")
    flip = s < 0
    rows, cols = graph.edge_index

    C = graph.C.copy()
    if graph.n_cons and np.any(t != 0):
        C[:, C_BIAS] += np.bincount(rows, weights=graph.edge_attr * s[cols] * t[cols],
                                    minlength=graph.n_cons)
    ea = graph.edge_attr * s[cols]

    V = graph.V.copy()
    kinds = np.argmax(graph.V[:, V_TYPE:V_TYPE + 4], axis=1)
    V[:, V_TYPE:V_TYPE + 4] = 0.0
    V[np.arange(graph.n_vars), V_TYPE + _new_kinds(kinds, amap)] = 1.0
    V[:, V_COEF] *= s
    V[:, V_RC] *= s
    for a, b in ((V_HAS_LB, V_HAS_UB), (V_AT_LB, V_AT_UB), (V_BASIS + 1, V_BASIS + 2)):
        V[flip, a], V[flip, b] = graph.V[flip, b], graph.V[flip, a]
    frac = graph.V[:, V_FRAC]
    V[:, V_FRAC] = np.where(flip & (frac > 0), 1.0 - frac, frac)
    cols_v = (V_SOL, V_INC, V_AVG_INC) if graph.n_incumbents else (V_SOL,)
    for k in cols_v:
        # adding a zero shift would turn -0.0 into 0.0
        V[:, k] = np.where(t != 0, s * graph.V[:, k] + t, s * graph.V[:, k])
    return graph.replace(C=C, edge_attr=ea, V=V)


def _parallel(cols_a, vals_a, cols_b, vals_b):
    if len(cols_a) != len(cols_b) or not np.array_equal(np.sort(cols_a), np.sort(cols_b)):
        return False
    va = vals_a[np.argsort(cols_a)]
    vb = vals_b[np.argsort(cols_b)]
    cos = abs(va @ vb) / (np.linalg.norm(va) * np.linalg.norm(vb))
    return cos >= 1.0 - 1e-12


def _draw_pairs(get_row, q, count, rng, max_draws=100):
    pairs = []
    for _ in range(count):
        for _attempt in range(max_draws):
            i, j = sorted(rng.choice(q, size=2, replace=False).tolist())
            if not _parallel(*get_row(i), *get_row(j)):
                pairs.append((i, j))
                break
        else:
            log.info("no linearly independent row pair after %d draws, skipping", max_draws)
    return pairs


def _sum_rows(cols_a, vals_a, cols_b, vals_b):
    cols = np.concatenate([cols_a, cols_b])
    vals = np.concatenate([vals_a, vals_b])
    uc, inv = np.unique(cols, return_inverse=True)
    summed = np.bincount(inv, weights=vals, minlength=len(uc))
    keep = summed != 0.0
    return uc[keep], summed[keep]


def rc_count(q, cfg):
    return math.ceil(cfg.rc_fraction * q)


def rc_augment_instance(inst: MilpInstance, cfg=DerivationConfig(), seed=0, pairs=None):
    """Append redundant summed rows; the chosen pairs go to ``meta["rc_pairs"]``."""
    if pairs is None:
        if inst.n_cons < 2:
            log.info("fewer than two rows, no redundant constraints added")
            pairs = []
        else:
            rng = np.random.default_rng(seed)
            pairs = _draw_pairs(inst.row, inst.n_cons, rc_count(inst.n_cons, cfg), rng)
    rows = [inst.row(i) for i in range(inst.n_cons)]
    rhs = list(inst.rhs)
    for i, j in pairs:
        rows.append(_sum_rows(*rows[i], *rows[j]))
        rhs.append(inst.rhs[i] + inst.rhs[j])
    meta = dict(inst.meta)
    meta["rc_pairs"] = [list(map(int, p)) for p in pairs]
    return MilpInstance.from_rows(inst.obj, rows, rhs, inst.lb, inst.ub, inst.kinds,
                                  name=inst.name + "-rc", meta=meta)


def _graph_rows(graph):
    """Raw (unnormalized) rows and rhs recovered from a graph."""
    rows, cols = graph.edge_index
    order = np.argsort(rows, kind="stable")
    bounds = np.searchsorted(rows[order], np.arange(graph.n_cons + 1))
    norms = graph.row_norms
    out = []
    for i in range(graph.n_cons):
        sel = order[bounds[i]:bounds[i + 1]]
        out.append((cols[sel], graph.edge_attr[sel] * norms[i]))
    return out, graph.C[:, C_BIAS] * norms


def rc_pairs_for_graph(graph, cfg=DerivationConfig(), seed=0):
    if graph.n_cons < 2:
        return []
    rows, _ = _graph_rows(graph)
    rng = np.random.default_rng(seed)
    return _draw_pairs(lambda i: rows[i], graph.n_cons, rc_count(graph.n_cons, cfg), rng)


def rc_augment_graph(graph, pairs):
    """Add one constraint vertex per redundant row; existing vertices are untouched."""
    if not pairs:
        return graph
    rows, rhs = _graph_rows(graph)
    cdir = graph.V[:, V_COEF]
    new_c, new_ei, new_ea, new_norms = [], [], [], []
    for k, (i, j) in enumerate(pairs):
        cols, vals = _sum_rows(*rows[i], *rows[j])
        nrm = float(np.linalg.norm(vals))
        feat = np.zeros(graph.C.shape[1])
        cnorm = float(np.linalg.norm(cdir))
        feat[C_OBJ_COS] = float(vals @ cdir[cols]) / (nrm * cnorm) if cnorm > 0 else 0.0
        feat[C_BIAS] = (rhs[i] + rhs[j]) / nrm
        feat[C_TIGHT] = feat[C_DUAL] = feat[C_AGE] = 0.0
        new_c.append(feat)
        new_ei.append(np.vstack([np.full(len(cols), graph.n_cons + k), cols]))
        new_ea.append(vals / nrm)
        new_norms.append(nrm)
    return graph.replace(
        C=np.vstack([graph.C, np.array(new_c)]),
        edge_index=np.hstack([graph.edge_index] + new_ei).astype(np.int64),
        edge_attr=np.concatenate([graph.edge_attr] + new_ea),
        row_norms=np.concatenate([graph.row_norms, new_norms]))


def _noise(values, sigma, rng):
    scale = sigma * max(float(np.std(values)), STD_FLOOR) if len(values) else 0.0
    return rng.normal(0.0, 1.0, size=len(values)) * scale


def perturb_objective(graph, sigma_c, seed=0):
    if sigma_c == 0:
        return graph
    rng = np.random.default_rng(seed)
    V = graph.V.copy()
    V[:, V_COEF] += _noise(V[:, V_COEF], sigma_c, rng)
    return graph.replace(V=V)


def perturb_constraints(graph, sigma_A, sigma_b, seed=0):
    if sigma_A == 0 and sigma_b == 0:
        return graph
    rng = np.random.default_rng(seed)
    ea = graph.edge_attr + _noise(graph.edge_attr, sigma_A, rng)
    C = graph.C.copy()
    C[:, C_BIAS] += _noise(C[:, C_BIAS], sigma_b, rng)
    return graph.replace(C=C, edge_attr=ea)


def perturb_duals(graph, sigma_y, seed=0):
    if sigma_y == 0:
        return graph
    rng = np.random.default_rng(seed)
    C = graph.C.copy()
    C[:, C_DUAL] += _noise(C[:, C_DUAL], sigma_y, rng)
    return graph.replace(C=C)


def derive_graph(graph, method, cfg, seed):
    """One derivation of ``graph``; returns None when the method does not apply."""
    if method == "lt":
        return lt_transform_graph(graph, sample_affine_map(graph, cfg, seed))
    if method == "rc":
        pairs = rc_pairs_for_graph(graph, cfg, seed)
        return rc_augment_graph(graph, pairs) if pairs else None
    if method == "objective":
        return perturb_objective(graph, cfg.sigma_c, seed)
    if method == "constraint":
        return perturb_constraints(graph, cfg.sigma_A, cfg.sigma_b, seed)
    if method == "dual":
        return perturb_duals(graph, cfg.sigma_y, seed)
    raise ValueError(f"unknown derivation {method!r}")


def augment_dataset(samples, cfg=DerivationConfig(), groups=None):
    """Grow every group toward the largest group size with derived samples.

    Sources are the original samples of each group, visited in order, each
    method applied independently with its probability. Derived samples
    inherit the group id of their source. Returns originals followed by the
    new samples.
    """
    samples = list(samples)
    if groups is not None:
        for s, g in zip(samples, groups):
            s.group = int(g)
    rng = np.random.default_rng(cfg.seed)
    ids = sorted({s.group for s in samples})
    sizes = {g: sum(1 for s in samples if s.group == g) for g in ids}
    if not sizes:
        return samples
    target = max(sizes.values())
    added = []
    for g in ids:
        sources = [s for s in samples if s.group == g and s.provenance == 0]
        size = sizes[g]
        for _ in range(cfg.max_rounds):
            if size >= target or not sources:
                break
            for src in sources:
                for method in METHODS:
                    if size >= target:
                        break
                    if rng.random() >= cfg.probability(method):
                        continue
                    seed = int(rng.integers(2**63))
                    graph = derive_graph(src.graph, method, cfg, seed)
                    if graph is None:
                        continue
                    added.append(src.derived(graph, _PROV[method]))
                    size += 1
                if size >= target:
                    break
    return samples + added

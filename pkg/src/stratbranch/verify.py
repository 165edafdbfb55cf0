"""Property checks shared by the ``verify`` command and the acceptance tests.

Every check returns a :class:`Check` with a pass flag and the worst observed
deviation. Oracles are independent of the code under test: brute-force
enumeration for MILP optima, re-solving transformed LPs, finite differences
for gradients and a loop-based evaluation of the contrastive loss.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .bnb import BnbNode, Limits, SolverState, StrongBranching, candidates, full_strong_branch, solve
from .derivation import (DerivationConfig, lt_transform_graph, lt_transform_instance, map_bounds,
                         rc_augment_instance, sample_affine_map)
from .features import build_graph, normalize_dataset_stats
from .generators import GenSpec, generate
from .milp import FEAS_TOL, MilpInstance, VarKind, brute_force_opt, check_feasible
from .model import alphas, init_params, loss_and_grad, pack, sigmoid
from .samples import TrainingSample
from .simplex import lp_solve
from .stratify import elbow_select, kmeans_path

FAMILIES = ("set-covering", "combinatorial-auction", "capacitated-facility-location",
            "maximum-independent-set")

# sizes with nontrivial roots that keep a full strong-branching pass cheap
SMALL = {
    "set-covering": dict(rows=30, cols=50, density=0.1),
    "combinatorial-auction": dict(items=15, bids=30),
    "capacitated-facility-location": dict(customers=6, facilities=5),
    "maximum-independent-set": dict(nodes=20),
}
# at most 12 integer variables, for brute-force enumeration
TINY = {
    "set-covering": dict(rows=10, cols=12, density=0.3),
    "combinatorial-auction": dict(items=8, bids=12),
    "capacitated-facility-location": dict(customers=4, facilities=5),
    "maximum-independent-set": dict(nodes=12, edge_prob=0.5),
}
# at most 10 integer variables
TINY10 = {
    "set-covering": dict(rows=7, cols=10, density=0.3),
    "combinatorial-auction": dict(items=5, bids=8),
    "capacitated-facility-location": dict(customers=2, facilities=3),
    "maximum-independent-set": dict(nodes=9, edge_prob=0.35),
}


@dataclass
class Check:
    name: str
    passed: bool
    worst: float = 0.0
    count: int = 0
    seconds: float = 0.0
    detail: dict = field(default_factory=dict)

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name}: n={self.count} worst={self.worst:.3g} ({self.seconds:.1f}s)"


def _instances(sizes, count, seed):
    for k in range(count):
        fam = FAMILIES[k % len(FAMILIES)]
        yield generate(GenSpec(fam, seed=seed + k, **sizes[fam]))


def _root(inst):
    lp = lp_solve(inst)
    node = BnbNode(0, None, 0, inst.lb.copy(), inst.ub.copy(), lp)
    if lp.ok:
        node.cands = candidates(node, inst)
    return node


def _sb_vector(inst):
    node = _root(inst)
    if not node.lp.ok or len(node.cands) == 0:
        return node, None, np.zeros(0)
    best, scores = full_strong_branch(inst, node)
    return node, best, np.array([s.score for s in scores])


def _rel(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))))


# ---------------------------------------------------------------- LT maps

def check_lt(n_pairs=100, seed=0):
    """Strong-branching equivalence and the objective-offset identity under LT maps.

    Returns two checks: SB vectors/argmax agreement, and
    ``f(x*) = c_hat^T x_hat* + gamma`` with ``phi(x*)`` feasible.
    """
    t0 = time.perf_counter()
    worst_sb = worst_off = 0.0
    argmax_ok = feas_ok = True
    for k, inst in enumerate(_instances(SMALL, n_pairs, seed)):
        amap = sample_affine_map(inst, DerivationConfig(), seed + 7919 * (k + 1))
        tinst = lt_transform_instance(inst, amap)
        node, best, s = _sb_vector(inst)
        tnode, tbest, ts = _sb_vector(tinst)
        # the index map of a diagonal LT map is the identity
        if not np.array_equal(node.cands, tnode.cands) or best != tbest:
            argmax_ok = False
        worst_sb = max(worst_sb, _rel(s, ts) if len(s) == len(ts) else math.inf)
        gamma = amap.offset(inst.obj)
        worst_off = max(worst_off, abs(node.lp.obj - (tnode.lp.obj + gamma)) / (1 + abs(node.lp.obj)))
        xh = amap.apply(node.lp.x)
        if not check_feasible(tinst.relaxed(), xh, FEAS_TOL):
            feas_ok = False
    dt = time.perf_counter() - t0
    return (Check("LT strong-branching equivalence", argmax_ok and worst_sb <= 1e-6, worst_sb,
                  n_pairs, dt, {"argmax_agree": argmax_ok}),
            Check("LT objective offset", feas_ok and worst_off <= 1e-6, worst_off, n_pairs, dt,
                  {"image_feasible": feas_ok}))


# ---------------------------------------------------------------- block maps

@dataclass
class BlockMap:
    """phi(x) = T x + t in block order (integer block first)."""

    order: np.ndarray
    k: int
    T: np.ndarray
    t: np.ndarray

    def apply(self, x):
        return self.T @ np.asarray(x)[self.order] + self.t

    def inverse(self, xh):
        x = np.empty(len(self.order))
        x[self.order] = np.linalg.solve(self.T, np.asarray(xh) - self.t)
        return x


def random_block_map(inst, rng, t_range=3):
    I = np.flatnonzero(inst.int_mask)
    F = np.flatnonzero(~inst.int_mask)
    k, r = len(I), len(F)
    B = np.zeros((k, k))
    B[np.arange(k), rng.permutation(k)] = rng.choice([-1.0, 1.0], size=k)
    D = rng.normal(size=(r, r)) + 2.0 * np.eye(r) * np.sqrt(max(r, 1))
    Fm = rng.normal(size=(r, k))
    T = np.block([[B, np.zeros((k, r))], [Fm, D]])
    t = np.concatenate([rng.integers(-t_range, t_range + 1, size=k).astype(np.float64),
                        rng.normal(size=r)])
    return BlockMap(np.concatenate([I, F]), k, T, t)


def block_transform(inst, bm):
    """Transformed MILP; continuous bounds become rows since D and F mix columns."""
    A = inst.dense[:, bm.order]
    c = inst.obj[bm.order]
    lb, ub = inst.lb[bm.order], inst.ub[bm.order]
    Tinv = np.linalg.inv(bm.T)
    Ah = A @ Tinv
    bh = inst.rhs + A @ Tinv @ bm.t
    ch = Tinv.T @ c
    k = bm.k
    n = len(c)
    B = bm.T[:k, :k]
    src = np.argmax(np.abs(B), axis=1)
    sgn = B[np.arange(k), src]
    lo = sgn * lb[:k][src] + bm.t[:k]
    hi = sgn * ub[:k][src] + bm.t[:k]
    rows, rhs = [r for r in Ah], list(bh)
    R = Tinv[k:]
    Rt = R @ bm.t
    for i in range(n - k):
        if np.isfinite(ub[k + i]):
            rows.append(R[i])
            rhs.append(ub[k + i] + Rt[i])
        if np.isfinite(lb[k + i]):
            rows.append(-R[i])
            rhs.append(-lb[k + i] - Rt[i])
    kinds = [VarKind.INTEGER] * k + [VarKind.CONTINUOUS] * (n - k)
    new_lb = np.concatenate([np.minimum(lo, hi), np.full(n - k, -np.inf)])
    new_ub = np.concatenate([np.maximum(lo, hi), np.full(n - k, np.inf)])
    inst_h = MilpInstance.from_dense(ch, np.array(rows), rhs, new_lb, new_ub, kinds,
                                     name=inst.name + "-block")
    gamma = -float(c @ Tinv @ bm.t)
    return inst_h, gamma


def check_block_maps(n_maps=50, n_points=100, seed=0):
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    integral_ok = True
    for inst in _instances(TINY10, n_maps, seed):
        bm = random_block_map(inst, rng)
        inst_h, gamma = block_transform(inst, bm)
        k = bm.k
        for _ in range(n_points):
            x = rng.normal(size=inst.n_vars) * 3
            xi = x.copy()
            xi[inst.int_mask] = np.round(xi[inst.int_mask])
            xh = bm.apply(xi)
            back = bm.inverse(np.concatenate([np.round(xh[:k]), xh[k:]]))
            frac = bm.apply(x)
            integral = np.allclose(xh[:k], np.round(xh[:k]), atol=1e-9) \
                and np.allclose(back[inst.int_mask], np.round(back[inst.int_mask]), atol=1e-9)
            # a fractional integer block must stay fractional
            if np.any(np.abs(x[inst.int_mask] - np.round(x[inst.int_mask])) > 1e-6):
                integral &= not np.allclose(frac[:k], np.round(frac[:k]), atol=1e-9)
            integral_ok &= bool(integral)
        orig = brute_force_opt(inst)
        trans = brute_force_opt(inst_h)
        if (orig is None) != (trans is None):
            worst = math.inf
            continue
        if orig is None:
            continue
        x_star, f_star = orig
        xh_star, fh_star = trans
        gap = abs(f_star - (fh_star + gamma)) / (1 + abs(f_star))
        img_ok = check_feasible(inst_h, bm.apply(x_star), 1e-6)
        pre_ok = check_feasible(inst, bm.inverse(xh_star), 1e-6)
        if not (img_ok and pre_ok):
            gap = math.inf
        worst = max(worst, gap)
    return Check("block-map integrality and optimum correspondence",
                 integral_ok and worst <= 1e-6, worst, n_maps, time.perf_counter() - t0,
                 {"integrality_roundtrip": integral_ok})


# ---------------------------------------------------------------- RC rows

def _folded_duals(inst, rc_inst, lam):
    q = inst.n_cons
    folded = lam[:q].copy()
    for r, (i, j) in enumerate(rc_inst.meta["rc_pairs"]):
        folded[i] += lam[q + r]
        folded[j] += lam[q + r]
    return folded


def dual_value(inst, lam, lb=None, ub=None):
    """Lagrangian dual bound of the LP for multipliers ``lam >= 0`` (-inf if unbounded)."""
    lb = inst.lb if lb is None else lb
    ub = inst.ub if ub is None else ub
    r = inst.obj + inst.dense.T @ lam
    tol = 1e-9 * (1 + np.abs(inst.obj))
    val = -float(inst.rhs @ lam)
    for j in range(inst.n_vars):
        if r[j] > tol[j]:
            if not np.isfinite(lb[j]):
                return -math.inf
            val += r[j] * lb[j]
        elif r[j] < -tol[j]:
            if not np.isfinite(ub[j]):
                return -math.inf
            val += r[j] * ub[j]
    return val


def check_rc(n_inst=100, seed=0):
    t0 = time.perf_counter()
    worst_lp = worst_sb = worst_dual = 0.0
    same_cands = True
    cfg = DerivationConfig(rc_fraction=0.1)
    for k, inst in enumerate(_instances(SMALL, n_inst, seed)):
        rc = rc_augment_instance(inst, cfg, seed + k)
        node, best, s = _sb_vector(inst)
        rnode, rbest, rs = _sb_vector(rc)
        worst_lp = max(worst_lp, abs(node.lp.obj - rnode.lp.obj) / (1 + abs(node.lp.obj)))
        if not np.array_equal(node.cands, rnode.cands) or best != rbest:
            same_cands = False
            worst_sb = math.inf
        else:
            worst_sb = max(worst_sb, _rel(s, rs))
        folded = _folded_duals(inst, rc, rnode.lp.duals)
        worst_dual = max(worst_dual, abs(dual_value(inst, folded) - node.lp.obj) / (1 + abs(node.lp.obj)))
    return Check("RC invariance", same_cands and worst_lp <= 1e-9 and worst_sb <= 1e-6
                 and worst_dual <= 1e-6, max(worst_lp, worst_sb), n_inst, time.perf_counter() - t0,
                 {"lp": worst_lp, "sb": worst_sb, "folded_dual_gap": worst_dual})


# ---------------------------------------------------------------- commuting square

def _mapped_state(state, amap):
    mapped = SolverState.__new__(SolverState)
    mapped.incumbents = [amap.apply(x) for x in state.incumbents]
    mapped.var_age = state.var_age.copy()
    mapped.cons_age = state.cons_age.copy()
    return mapped


class _NodeTap:
    """Random branching that snapshots (node, state) pairs along the way."""

    def __init__(self, seed, keep):
        self.rng = np.random.default_rng(seed)
        self.keep = keep
        self.taken = []

    def select(self, inst, node, state):
        if len(self.taken) < self.keep:
            snap = SolverState.__new__(SolverState)
            snap.incumbents = [x.copy() for x in state.incumbents]
            snap.var_age, snap.cons_age = state.var_age.copy(), state.cons_age.copy()
            self.taken.append((node, snap))
        return int(self.rng.choice(node.cands))


def check_commuting_square(n_pairs=200, seed=0, per_instance=8):
    t0 = time.perf_counter()
    worst = 0.0
    count = 0
    k = 0
    while count < n_pairs:
        fam = FAMILIES[k % len(FAMILIES)]
        inst = generate(GenSpec(fam, seed=seed + k, **TINY[fam] if fam != "set-covering"
                                else dict(rows=20, cols=30, density=0.15)))
        k += 1
        tap = _NodeTap(seed + k, per_instance)
        solve(inst, tap, Limits(node_limit=4 * per_instance))
        for node, state in tap.taken:
            if count >= n_pairs:
                break
            amap = sample_affine_map(inst, DerivationConfig(), seed + 104729 * (count + 1))
            g = build_graph(inst, node.lp, node.lb, node.ub, state, node.depth)
            tinst = lt_transform_instance(inst, amap)
            tl, tu = map_bounds(amap, node.lb, node.ub)
            tlp = lp_solve(tinst, tl, tu)
            tg = build_graph(tinst, tlp, tl, tu, _mapped_state(state, amap), node.depth)
            mg = lt_transform_graph(g, amap)
            diffs = [np.max(np.abs(mg.C - tg.C), initial=0.0), np.max(np.abs(mg.V - tg.V), initial=0.0),
                     np.max(np.abs(mg.edge_attr - tg.edge_attr), initial=0.0)]
            if not np.array_equal(mg.cand_mask, tg.cand_mask) or not np.array_equal(mg.edge_index, tg.edge_index):
                diffs.append(math.inf)
            worst = max(worst, max(diffs))
            count += 1
    return Check("LT feature mapping commutes with re-solving", worst <= 1e-6, worst, count,
                 time.perf_counter() - t0)


# ---------------------------------------------------------------- B&B exactness

def check_bnb_exact(n_inst=50, seed=0):
    t0 = time.perf_counter()
    worst = 0.0
    for inst in _instances(TINY, n_inst, seed):
        rep = solve(inst, StrongBranching())
        ref = brute_force_opt(inst)
        if ref is None:
            gap = 0.0 if rep.status == "infeasible" else math.inf
        elif rep.status != "optimal":
            gap = math.inf
        else:
            gap = abs(rep.obj - ref[1]) / (1 + abs(ref[1]))
        worst = max(worst, gap)
    return Check("branch-and-bound matches enumeration", worst <= 1e-6, worst, n_inst,
                 time.perf_counter() - t0)


# ---------------------------------------------------------------- gradients

PROBE_PARAM_SEED = 1


def probe_batch(n=8, m=4):
    """Fixed batch of small independent-set root graphs spread over ``m`` groups."""
    samples = []
    for sd in range(1000):
        inst = generate(GenSpec("maximum-independent-set", seed=sd, nodes=6, edge_prob=0.5))
        g = build_graph(inst, lp_solve(inst))
        c = g.candidates
        if len(c) >= 2:
            k = len(samples)
            samples.append(TrainingSample(g, c, np.zeros(len(c)), int(c[k % len(c)]), depth=k % m,
                                          n_root=len(c), instance_id=sd, group=k % m))
        if len(samples) == n:
            break
    return samples, normalize_dataset_stats([s.graph for s in samples])


def probe_params(h=32, m=4):
    params = init_params(h, m, PROBE_PARAM_SEED)
    params["theta"] = np.linspace(-0.5, 0.5, m - 1)
    return params


def fd_errors(params, batch, eps=1e-4, tau=0.5, contrastive=True):
    """Relative error per tensor between analytic and central-difference gradients."""
    _, _, G = loss_and_grad(params, batch, tau, contrastive)
    errs = {}
    for name, arr in params.items():
        flat = arr.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            lp = loss_and_grad(params, batch, tau, contrastive, need_grad=False)[0]
            flat[i] = old - eps
            lm = loss_and_grad(params, batch, tau, contrastive, need_grad=False)[0]
            flat[i] = old
            fd[i] = (lp - lm) / (2 * eps)
        g = G[name].reshape(-1)
        # floor only matters for tensors whose exact gradient is zero
        errs[name] = float(np.linalg.norm(fd - g) / max(np.linalg.norm(fd), np.linalg.norm(g), 1e-6))
    return errs


def check_gradients(eps=1e-4):
    t0 = time.perf_counter()
    samples, stats = probe_batch()
    errs = fd_errors(probe_params(), pack(samples, stats), eps)
    worst = max(errs.values())
    return Check("gradients match finite differences", worst < 1e-4, worst, len(errs),
                 time.perf_counter() - t0, errs)


# ---------------------------------------------------------------- contrastive oracle

def contrastive_direct(E, groups, weight, tau):
    """Loop evaluation of the contrastive loss with a weight function on group pairs."""
    total = 0.0
    N = len(E)
    for i in range(N):
        pos = [p for p in range(N) if p != i and groups[p] == groups[i]]
        if not pos:
            continue
        sims = [float(np.dot(E[i], E[j])) for j in range(N)]
        den = sum(math.exp(weight(groups[i], groups[j]) * sims[j] / tau) for j in range(N) if j != i)
        total += -sum(math.log(math.exp(sims[p] / tau) / den) for p in pos) / len(pos)
    return total


def check_contrastive_degenerate(n_pools=100, seed=0, tau=0.5):
    from .model import contrastive_loss
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    w0 = float(sigmoid(alphas(np.zeros(0), 0)[0]))
    for _ in range(n_pools):
        N = int(rng.integers(2, 24))
        m = int(rng.integers(1, 6))
        E = rng.normal(size=(N, 8))
        E /= np.linalg.norm(E, axis=1, keepdims=True)
        groups = rng.integers(0, m, size=N)
        theta = np.full(max(m - 1, 0), -1e4)
        got = contrastive_loss(E, groups, theta, tau)
        ref = contrastive_direct(E, groups, lambda a, b: w0, tau)
        worst = max(worst, abs(got - ref) / max(1.0, abs(ref)))
    return Check("contrastive loss with collapsed weights", worst <= 1e-9, worst, n_pools,
                 time.perf_counter() - t0)


# ---------------------------------------------------------------- stratification

def blobs(n_blobs=4, per=50, spread=0.5, seed=0):
    """Gaussian blobs at vertices of a regular simplex (n_blobs <= 4) scaled to side ~14."""
    rng = np.random.default_rng(seed)
    verts = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)[:n_blobs] * 5
    return np.vstack([v + rng.normal(0, spread, size=(per, 3)) for v in verts])


def check_kmeans(n_sets=20, seed=0):
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    mono = True
    worst = 0.0
    for k in range(n_sets):
        X = rng.normal(size=(int(rng.integers(10, 60)), int(rng.integers(1, 6))))
        sse = [r[2] for r in kmeans_path(X, 8, seed + k)]
        worst = max(worst, float(np.max(np.diff(sse))))
        mono &= bool(np.all(np.diff(sse) <= 0))
    m4 = elbow_select(blobs(4, seed=seed), (2, 10), seed)
    return Check("k-means SSE monotone and elbow on four blobs", mono and m4 == 4, worst, n_sets,
                 time.perf_counter() - t0, {"elbow_m": int(m4)})


def run_suite(scale=1.0, seed=0):
    """All fast checks; ``scale`` shrinks the counts for quick runs."""
    def n(x):
        return max(2, int(round(x * scale)))
    checks = list(check_lt(n(100), seed))
    checks.append(check_block_maps(n(50), 100, seed))
    checks.append(check_rc(n(100), seed))
    checks.append(check_commuting_square(n(200), seed))
    checks.append(check_bnb_exact(n(50), seed))
    checks.append(check_gradients())
    checks.append(check_contrastive_degenerate(n(100), seed))
    checks.append(check_kmeans(n(20), seed))
    return checks

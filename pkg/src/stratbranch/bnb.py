"""Best-bound branch and bound, strong branching, and expert sample collection."""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .features import build_graph, fractionality
from .simplex import lp_solve

log = logging.getLogger(__name__)

PRUNE_TOL = 1e-9
TIE_REL = 1e-9


class LpFailure(RuntimeError):
    """An LP hit its pivot limit; the run cannot continue."""


@dataclass
class BnbNode:
    id: int
    parent: int | None
    depth: int
    lb: np.ndarray
    ub: np.ndarray
    lp: object
    cands: np.ndarray = field(default=None)

    @property
    def bound(self):
        return self.lp.obj


@dataclass(frozen=True)
class SbScore:
    var: int
    delta_down: float
    delta_up: float
    score: float
    down_feasible: bool = True
    up_feasible: bool = True


@dataclass(frozen=True)
class Limits:
    node_limit: int | None = None
    time_limit: float | None = None


@dataclass
class SolveReport:
    status: str
    obj: float
    x: np.ndarray | None
    nodes: int
    time: float
    decisions: list = field(default_factory=list)
    tree: list = field(default_factory=list)
    n_lp: int = 0


class SolverState:
    """Per-solve bookkeeping used by the graph features: incumbents and LP ages."""

    def __init__(self, inst):
        self.incumbents = []
        self.var_age = np.zeros(inst.n_vars)
        self.cons_age = np.zeros(inst.n_cons)
        self._last_x = None
        self._last_act = None
        self.n_lp = 0

    def record_lp(self, inst, lp):
        act = inst.dense @ lp.x if inst.n_cons else np.zeros(0)
        if self._last_x is not None:
            same_x = np.abs(lp.x - self._last_x) <= 1e-9
            same_a = np.abs(act - self._last_act) <= 1e-9
            self.var_age = np.where(same_x, self.var_age + 1, 0.0)
            self.cons_age = np.where(same_a, self.cons_age + 1, 0.0)
        self._last_x = lp.x.copy()
        self._last_act = act
        self.n_lp += 1


def solve_node_lp(inst, lb, ub):
    res = lp_solve(inst, lb, ub)
    if res.status == "iteration-limit":
        raise LpFailure(f"LP pivot limit reached on {inst.name}")
    return res


def candidates(node, inst):
    """Integer variables whose LP value is fractional beyond the integrality tolerance."""
    if not node.lp.ok:
        raise ValueError("candidates need an optimal node LP")
    return np.flatnonzero(fractionality(node.lp.x, inst.int_mask) > 0)


def infeasible_cap(inst):
    """Score credited to an infeasible child.

    Depends on ``|c|`` only, so it is unchanged by sign flips, shifts and
    redundant rows (the objective value itself moves under shifts).
    """
    return 1e6 * (1.0 + float(np.abs(inst.obj).sum()))


def sb_score(inst, node, j):
    """Strong branching score of ``j``: summed LP bound gains of the two children."""
    xj = node.lp.x[j]
    z = node.lp.obj
    cap = infeasible_cap(inst)
    ub = node.ub.copy()
    ub[j] = math.floor(xj)
    down = solve_node_lp(inst, node.lb, ub)
    lb = node.lb.copy()
    lb[j] = math.ceil(xj)
    up = solve_node_lp(inst, lb, node.ub)
    d_down = down.obj - z if down.ok else cap
    d_up = up.obj - z if up.ok else cap
    return SbScore(int(j), d_down, d_up, d_down + d_up, down.ok, up.ok)


def argmax_low_index(values, index):
    """Index of the maximum, ties (within a relative window) to the lowest index."""
    values = np.asarray(values, dtype=np.float64)
    top = values.max()
    ok = values >= top - TIE_REL * (1.0 + abs(top))
    return int(np.min(np.asarray(index)[ok]))


def full_strong_branch(inst, node):
    cands = node.cands if node.cands is not None else candidates(node, inst)
    if len(cands) == 0:
        raise ValueError("no branching candidates")
    scores = [sb_score(inst, node, j) for j in cands]
    best = argmax_low_index([s.score for s in scores], cands)
    return best, scores


class StrongBranching:
    name = "strong-branching"

    def select(self, inst, node, state):
        return full_strong_branch(inst, node)[0]


class RandomBranching:
    name = "random"

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)

    def select(self, inst, node, state):
        return int(self.rng.choice(node.cands))


class SampleRecorder:
    """Strong branching that keeps a training sample at every decision."""

    name = "strong-branching"

    def __init__(self, instance_id=0):
        self.instance_id = instance_id
        self.samples = []
        self.n_root = None

    def select(self, inst, node, state):
        from .samples import TrainingSample

        best, scores = full_strong_branch(inst, node)
        if self.n_root is None:
            self.n_root = len(node.cands)
        graph = build_graph(inst, node.lp, node.lb, node.ub, state, node.depth)
        self.samples.append(TrainingSample(
            graph=graph, cands=np.asarray(node.cands, dtype=np.int64),
            scores=np.asarray([s.score for s in scores]), label=best,
            depth=node.depth, n_root=self.n_root, instance_id=self.instance_id))
        return best


def solve(inst, policy, limits=Limits(), record_tree=False):
    """Branch and bound with best-bound node selection.

    ``policy.select(inst, node, state)`` returns the branching variable.
    """
    t0 = time.perf_counter()
    state = SolverState(inst)
    root_lp = solve_node_lp(inst, inst.lb, inst.ub)
    report = SolveReport("infeasible", math.inf, None, 0, 0.0)
    if root_lp.status == "unbounded":
        report.status = "unbounded"
        report.time = time.perf_counter() - t0
        return report
    if not root_lp.ok:
        report.time = time.perf_counter() - t0
        return report
    next_id = 1
    root = BnbNode(0, None, 0, inst.lb.copy(), inst.ub.copy(), root_lp)
    heap = [(root.bound, 0, root)]
    incumbent, inc_x = math.inf, None
    n_lp = 1
    limited = False
    while heap:
        if limits.node_limit is not None and report.nodes >= limits.node_limit:
            limited = True
            break
        if limits.time_limit is not None and time.perf_counter() - t0 > limits.time_limit:
            limited = True
            break
        bound, _, node = heapq.heappop(heap)
        if bound >= incumbent - PRUNE_TOL:
            if record_tree:
                report.tree.append((node.id, node.parent, node.depth, bound, "pruned", node.lb, node.ub))
            continue
        report.nodes += 1
        state.record_lp(inst, node.lp)
        node.cands = candidates(node, inst)
        if len(node.cands) == 0:
            if node.lp.obj < incumbent - PRUNE_TOL:
                incumbent, inc_x = node.lp.obj, node.lp.x.copy()
                state.incumbents.append(inc_x)
            if record_tree:
                report.tree.append((node.id, node.parent, node.depth, bound, "integral", node.lb, node.ub))
            continue
        j = int(policy.select(inst, node, state))
        if j not in set(node.cands.tolist()):
            raise ValueError(f"policy chose non-candidate variable {j}")
        report.decisions.append((node.id, node.depth, len(node.cands), j))
        if record_tree:
            report.tree.append((node.id, node.parent, node.depth, bound, "branched", node.lb, node.ub))
        xj = node.lp.x[j]
        ub = node.ub.copy()
        ub[j] = math.floor(xj)
        lb = node.lb.copy()
        lb[j] = math.ceil(xj)
        for clb, cub in ((node.lb, ub), (lb, node.ub)):
            child_lp = solve_node_lp(inst, clb, cub)
            n_lp += 1
            child = BnbNode(next_id, node.id, node.depth + 1, clb.copy(), cub.copy(), child_lp)
            next_id += 1
            if not child_lp.ok:
                if record_tree:
                    report.tree.append((child.id, node.id, child.depth, math.inf, "infeasible", clb, cub))
                continue
            heapq.heappush(heap, (child.bound, child.id, child))
    report.obj = incumbent
    report.x = inc_x
    if limited:
        report.status = "limit"
    else:
        report.status = "optimal" if inc_x is not None else "infeasible"
    report.n_lp = n_lp
    report.time = time.perf_counter() - t0
    return report


def collect_expert_samples(instances, limits=Limits(), seed=0, skip_errors=False):
    """Roll out strong branching on each instance and return every decision as a sample.

    Strong branching is deterministic, so ``seed`` is recorded for provenance only.
    """
    samples = []
    for k, inst in enumerate(instances):
        rec = SampleRecorder(instance_id=k)
        try:
            solve(inst, rec, limits)
        except LpFailure:
            if not skip_errors:
                raise
            log.warning("skipping instance %s after LP failure", inst.name)
            continue
        for s in rec.samples:
            s.meta["seed"] = seed
        samples.extend(rec.samples)
    return samples

"""Learned and hybrid branching policies for :func:`stratbranch.bnb.solve`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bnb import argmax_low_index, sb_score
from .features import build_graph
from .model import gcnn_forward


@dataclass(frozen=True)
class HybridConfig:
    rho: float = 0.8
    k: int = 5

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if self.k < 1:
            raise ValueError("k must be at least 1")


def is_upstream(n_cand, n_root, rho):
    """A node is upstream while its candidate count exceeds ``rho * n_root``."""
    if n_root < 1:
        raise ValueError("n_root must be at least 1")
    return n_cand > rho * n_root


def top_k(scores, cands, k):
    """The ``k`` highest-scoring candidates, ties to the lower variable index."""
    cands = np.asarray(cands)
    order = np.lexsort((cands, -np.asarray(scores)))
    return cands[order[:min(k, len(cands))]]


def hybrid_decide(inst, node, scores, n_root, cfg=HybridConfig()):
    """Variable chosen at ``node`` from model ``scores`` aligned with ``node.cands``.

    Upstream nodes run strong branching on the model's top-k shortlist;
    downstream nodes take the model argmax. Returns (variable, number of
    strong-branching evaluations).
    """
    cands = np.asarray(node.cands)
    if len(cands) == 1:
        return int(cands[0]), 0
    if not is_upstream(len(cands), n_root, cfg.rho):
        return int(top_k(scores, cands, 1)[0]), 0
    short = np.sort(top_k(scores, cands, cfg.k))
    sb = [sb_score(inst, node, j).score for j in short]
    return argmax_low_index(sb, short), len(short)


class LearnedPolicy:
    """Pure model argmax over the candidates."""

    name = "learned"

    def __init__(self, params, stats):
        self.params, self.stats = params, stats

    def scores(self, inst, node, state):
        graph = build_graph(inst, node.lp, node.lb, node.ub, state, node.depth)
        return gcnn_forward(graph, self.params, self.stats)[1]

    def select(self, inst, node, state):
        return int(top_k(self.scores(inst, node, state), node.cands, 1)[0])


class HybridPolicy(LearnedPolicy):
    """Model-shortlisted strong branching upstream, model argmax downstream."""

    name = "hybrid"

    def __init__(self, params, stats, cfg=HybridConfig()):
        super().__init__(params, stats)
        self.cfg = cfg
        self.n_root = None
        self.sb_calls = 0

    def select(self, inst, node, state):
        if self.n_root is None:
            self.n_root = len(node.cands)
        j, calls = hybrid_decide(inst, node, self.scores(inst, node, state), self.n_root, self.cfg)
        self.sb_calls += calls
        return j

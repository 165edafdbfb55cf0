"""Equivalent reformulations: affine variable maps and redundant rows.

An affine map x_hat = s * x + t (signs s = +-1, integer shifts on integer
variables) and appended sums of existing rows both leave strong-branching
decisions unchanged. This script shows it on one instance and then checks
that transforming node features agrees with rebuilding them.
"""

import numpy as np

from stratbranch.bnb import BnbNode, candidates, full_strong_branch
from stratbranch.derivation import (DerivationConfig, lt_transform_graph, lt_transform_instance,
                                    rc_augment_instance, sample_affine_map)
from stratbranch.features import VAR_FEATURES, build_graph
from stratbranch.generators import GenSpec, generate
from stratbranch.simplex import lp_solve


def root_scores(inst):
    lp = lp_solve(inst)
    node = BnbNode(0, None, 0, inst.lb.copy(), inst.ub.copy(), lp)
    node.cands = candidates(node, inst)
    best, scores = full_strong_branch(inst, node)
    return lp, best, np.array([s.score for s in scores])


inst = generate(GenSpec("combinatorial-auction", seed=6, items=15, bids=30))
amap = sample_affine_map(inst, DerivationConfig(), seed=11)
lt = lt_transform_instance(inst, amap)
print("flipped variables:", int(np.sum(amap.signs < 0)), "shifts in", amap.shift.min(), "..", amap.shift.max())

lp, best, scores = root_scores(inst)
lp_t, best_t, scores_t = root_scores(lt)
print("root LP", lp.obj, "vs transformed", lp_t.obj, "+ offset", amap.offset(inst.obj), "=",
      lp_t.obj + amap.offset(inst.obj))
print("SB choice", best, "vs", best_t, "; largest score gap", np.max(np.abs(scores - scores_t)))

# redundant rows: sums of two existing constraints
rc = rc_augment_instance(inst, DerivationConfig(rc_fraction=0.1), seed=4)
lp_r, best_r, scores_r = root_scores(rc)
print(f"{rc.n_cons - inst.n_cons} redundant rows; LP gap {abs(lp_r.obj - lp.obj):.2e}, SB choice {best_r}")

# the feature-level map agrees with building features on the transformed instance
g = build_graph(inst, lp)
mapped = lt_transform_graph(g, amap)
rebuilt = build_graph(lt, lp_t)
gap = np.abs(mapped.V - rebuilt.V).max(axis=0)
for name, v in zip(VAR_FEATURES, gap):
    if v > 0:
        print(f"  {name}: max gap {v:.1e}")
print("largest variable-feature gap", gap.max(), "constraint-feature gap", np.abs(mapped.C - rebuilt.C).max())

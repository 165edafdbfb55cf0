"""Solving small MILPs with the in-repo simplex and branch and bound.

Walks from a single LP relaxation to strong-branching scores and full tree
searches under two branching rules.
"""

import numpy as np

from stratbranch.bnb import BnbNode, RandomBranching, StrongBranching, candidates, full_strong_branch, solve
from stratbranch.generators import GenSpec, generate
from stratbranch.milp import MilpInstance, VarKind, brute_force_opt
from stratbranch.simplex import lp_solve

# a 0-1 knapsack written as a minimization with one <= row
knap = MilpInstance.from_dense([-5, -4, -3], [[2, 3, 1]], [5], np.zeros(3), np.ones(3), [VarKind.BINARY] * 3)
lp = lp_solve(knap)
print("root LP value", lp.obj, "at x =", lp.x)
print("row duals", lp.duals, "reduced costs", lp.reduced_costs)

# candidates are the integer variables with a fractional LP value
root = BnbNode(0, None, 0, knap.lb.copy(), knap.ub.copy(), lp)
root.cands = candidates(root, knap)
best, scores = full_strong_branch(knap, root)
for s in scores:
    print(f"  x{s.var}: down gain {s.delta_down:.3f}, up gain {s.delta_up:.3f}, score {s.score:.3f}")
print("strong branching picks x%d" % best)

rep = solve(knap, StrongBranching())
print("B&B optimum", rep.obj, "in", rep.nodes, "nodes; enumeration says", brute_force_opt(knap)[1])

# a desk-scale set-covering instance: strong branching against random branching
inst = generate(GenSpec("set-covering", seed=3, rows=30, cols=50, density=0.1))
sb = solve(inst, StrongBranching())
rnd = solve(inst, RandomBranching(seed=0))
print(f"set cover {inst.n_cons}x{inst.n_vars}: optimum {sb.obj:.0f}")
print(f"  strong branching {sb.nodes} nodes, random branching {rnd.nodes} nodes")

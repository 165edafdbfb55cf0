"""Training a small policy and branching with it.

Fits the GCNN with the stratified contrastive term on a few hundred samples,
reports top-k imitation accuracy on held-out instances, then compares pure
model branching with the hybrid rule (strong branching on the model's top-k
while the node still has many candidates).
"""

import numpy as np

from stratbranch.bnb import Limits, StrongBranching, collect_expert_samples, solve
from stratbranch.derivation import DerivationConfig, augment_dataset
from stratbranch.generators import GenSpec, generate
from stratbranch.hybrid import HybridConfig, HybridPolicy, LearnedPolicy
from stratbranch.stratify import assign_groups, fit_groups
from stratbranch.train import TrainConfig, evaluate_acc, split_by_instance, train

insts = [generate(GenSpec("set-covering", seed=s)) for s in range(20)]
samples = collect_expert_samples(insts, Limits(node_limit=80))
train_s, test_s = split_by_instance(samples, 0.25, seed=0)
fit_s, stop_s = split_by_instance(train_s, 0.2, seed=1)
model = fit_groups(fit_s, (2, 4), seed=0)
for part in (fit_s, stop_s, test_s):
    for s, g in zip(part, assign_groups(part, model)):
        s.group = int(g)
fit_s = augment_dataset(fit_s, DerivationConfig(seed=0))
print(f"{len(fit_s)} training samples in {model.m} groups, {len(test_s)} held-out samples")

params, history, stats = train(fit_s, stop_s, model.m, TrainConfig(epochs=30, lr=3e-3, hidden=16),
                               log_fn=lambda r: print(f"  epoch {r['epoch']:2d} loss {r['loss']:.3f} "
                                                      f"acc@1 {r['acc@1']:.3f}"))
acc = evaluate_acc(test_s, params, stats)
cbar = np.mean([len(s.cands) for s in test_s])
print(f"held-out acc@1 {acc['acc@1']:.3f} (uniform guess {1 / cbar:.3f}), acc@5 {acc['acc@5']:.3f}")

print("nodes on fresh instances: strong branching / learned / hybrid")
for seed in range(100, 104):
    inst = generate(GenSpec("set-covering", seed=seed))
    sb = solve(inst, StrongBranching())
    ln = solve(inst, LearnedPolicy(params, stats))
    hy_policy = HybridPolicy(params, stats, HybridConfig(rho=0.8, k=5))
    hy = solve(inst, hy_policy)
    print(f"  seed {seed}: {sb.nodes:4d} {ln.nodes:4d} {hy.nodes:4d}  ({hy_policy.sb_calls} SB evaluations)")

"""From expert rollouts to depth-ordered groups and a balanced training set.

Collects strong-branching samples, clusters node summaries with k-means
(number of groups from the elbow rule), then tops up the smaller groups with
equivalent and perturbed derived samples.
"""

import numpy as np

from stratbranch.bnb import Limits, collect_expert_samples
from stratbranch.derivation import DerivationConfig, augment_dataset
from stratbranch.generators import GenSpec, generate
from stratbranch.samples import PROVENANCE
from stratbranch.stratify import assign_groups, fit_groups, kmeans_path, summary_vector

# desk-scale set covering (60 rows, 120 columns), 40 branched nodes per instance
insts = [generate(GenSpec("set-covering", seed=s)) for s in range(8)]
samples = collect_expert_samples(insts, Limits(node_limit=40))
print(len(samples), "samples; depths", min(s.depth for s in samples), "to", max(s.depth for s in samples))

# SSE along m: adding clusters never increases it
X = np.array([summary_vector(s) for s in samples])
Z = (X - X.mean(axis=0)) / np.maximum(X.std(axis=0), 1e-8)
print("SSE by m:", [round(r[2], 1) for r in kmeans_path(Z, 6)])

model = fit_groups(samples, (2, 5), seed=0)
groups = assign_groups(samples, model)
depth = np.array([s.depth for s in samples])
for g in range(model.m):
    print(f"group {g}: {np.sum(groups == g)} samples, mean depth {depth[groups == g].mean():.2f}")

aug = augment_dataset(samples, DerivationConfig(seed=0), groups)
print("after augmentation:", np.bincount([s.group for s in aug]).tolist())
counts = np.bincount([s.provenance for s in aug], minlength=len(PROVENANCE))
print({PROVENANCE[k]: int(c) for k, c in enumerate(counts)})

"""How per-image head scores become one label per region.

Each head sums its raw scores over every image of a region, takes a softmax
and votes for its argmax.  A label wins only with strictly more than half of
the votes; anything else is declared a false detection.
"""
import numpy as np

from hydra_ensemble.fusion import fuse_dataset, majority_vote

FD = 3
rng = np.random.default_rng(0)

print("votes -> fused label (3 means false detection)")
for ballot in [(0, 0, 1), (0, 1, 2), (1, 1, 0, 0), (2, 2, 2, 0, 1)]:
    print(f"  {ballot} -> {majority_vote(ballot, len(ballot), FD)}")

# Two regions, the second photographed twice; three heads.
index = {"r1": ["r1-t0"], "r2": ["r2-t0", "r2-t1"]}
heads = []
for _ in range(3):
    heads.append({(rid, iid): rng.normal(size=3) for rid, imgs in index.items() for iid in imgs})
# make every head lean towards class 1 on the first image of r2
for h in heads:
    h[("r2", "r2-t0")][1] += 3.0

result = fuse_dataset(heads, index, FD)
for rid in index:
    print(f"{rid}: head votes {result.ballots[rid].labels} -> {result.labels[rid]}")

"""Scoring regions with the class-weighted F-measure.

Walks through a five-region example by hand, then shows why declaring a
region a false detection is never free even though that class weighs 0.
"""
import numpy as np

from hydra_ensemble.metrics import ClassWeights, build_confusion, class_prf, score_labels, weighted_fmeasure

# three land-use classes plus false detection (index 3)
weights = ClassWeights(np.array([0.6, 1.0, 1.4, 0.0]), false_detection_index=3)
truth = [0, 0, 1, 1, 2]
pred = [0, 1, 1, 1, 2]

C = build_confusion(pred, truth, 4)
print("confusion (rows = truth, cols = prediction)")
print(C.counts)
for c in range(3):
    p, r, f = class_prf(C, c)
    print(f"class {c}: precision {p:.3f} recall {r:.3f} F {f:.3f}")
print(f"weighted F-measure {weighted_fmeasure(C, weights):.4f}")

# Giving up on region 4 (a correct class-2 answer) by calling it a false
# detection removes a true positive from class 2, so the score drops.
hedged = pred[:4] + [3]
print(f"same predictions with region 4 sent to false detection: "
      f"{weighted_fmeasure(build_confusion(hedged, truth, 4), weights):.4f}")

# The dictionary form used for submissions matches by region id.  Classes
# with no regions at all still count in the average with F = 0.
report = score_labels({"a": 0, "b": 2}, {"b": 2, "a": 0}, weights)
print(report.to_table())

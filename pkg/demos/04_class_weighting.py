"""The four training class-weight schemes on an unbalanced class count."""
import numpy as np

from hydra_ensemble.weighting import WeightScheme, WeightTable, training_weights

counts = np.array([120, 40, 10, 0])  # the last class is false detection, absent from training
table = WeightTable(np.array([0.6, 1.0, 1.4, 0.0]))
multipliers = np.array([1.0, 1.0, 1.5, 1.0])

for scheme in WeightScheme:
    w = training_weights(scheme, counts, table=table, multipliers=multipliers)
    print(f"{scheme.value:20s} {np.round(w, 3)}")

# the scoring view of the same table keeps false detection at 0
print("scoring weights", table.metrics_view().w, "training weights", table.training_view())

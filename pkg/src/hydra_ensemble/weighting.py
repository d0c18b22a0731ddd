"""Per-class loss weights for head training.

Four schemes are supported: unweighted, a fixed challenge weight table,
frequency-balanced (``w_i = N / (m * n_i)``) and frequency-balanced times a
user-supplied multiplier table ("manual adjustment").  Training weights are
always strictly positive; the scoring view of a weight table is a separate
object (:class:`~hydra_ensemble.metrics.ClassWeights`) whose false-detection
entry is 0.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from ._io import atomic_write_text
from .errors import ConfigError, DataError
from .metrics import ClassWeights


class WeightScheme(enum.Enum):
    UNWEIGHTED = "unweighted"
    FMOW = "fmow"
    FREQUENCY_BALANCED = "frequency-balanced"
    FREQUENCY_MANUAL = "frequency-manual"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "-").replace(" ", "")
        aliases = {
            "none": cls.UNWEIGHTED,
            "fmow-weights": cls.FMOW,
            "fmowweights": cls.FMOW,
            "balanced": cls.FREQUENCY_BALANCED,
            # head-table names: #2 is the balanced heuristic before the
            # manual adjustment, #1 after it
            "frequency#2": cls.FREQUENCY_BALANCED,
            "frequency#1": cls.FREQUENCY_MANUAL,
            "manual": cls.FREQUENCY_MANUAL,
        }
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown weighting scheme {name!r}") from None


@dataclass(frozen=True)
class WeightTable:
    """Per-class weights as listed in a table file; the last class is false detection."""

    values: np.ndarray

    @property
    def m(self):
        return len(self.values)

    @property
    def false_detection_index(self):
        return self.m - 1

    def training_view(self):
        w = np.array(self.values, dtype=np.float64)
        w[self.false_detection_index] = 1.0
        return w

    def metrics_view(self):
        w = np.array(self.values, dtype=np.float64)
        w[self.false_detection_index] = 0.0
        return ClassWeights(w, self.false_detection_index)


def read_index_value_csv(path, m=None):
    """Read a ``label_index,<value>`` CSV into a dense vector.

    Every index in ``0..m-1`` must appear exactly once; ``m`` defaults to the
    number of rows.
    """
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != 2 or header[0].strip() != "label_index":
            raise DataError(f"{path}: expected header 'label_index,<value>', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                idx, val = int(row[0]), float(row[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: cannot parse {row}") from None
            if idx in rows:
                raise DataError(f"{path}:{lineno}: class {idx} listed twice")
            if not np.isfinite(val):
                raise DataError(f"{path}:{lineno}: non-finite value")
            rows[idx] = val
    m = len(rows) if m is None else m
    missing = sorted(set(range(m)) - set(rows))
    extra = sorted(set(rows) - set(range(m)))
    if missing or extra:
        raise DataError(f"{path}: missing classes {missing}, out-of-range classes {extra}")
    return np.array([rows[i] for i in range(m)], dtype=np.float64)


def load_weight_table(path, m=None):
    values = read_index_value_csv(path, m)
    if values.size < 2:
        raise DataError(f"{path}: a weight table needs at least one class plus false detection")
    if np.any(values[:-1] <= 0) or values[-1] < 0:
        raise DataError(f"{path}: class weights must be positive (false detection may be 0)")
    return WeightTable(values)


# the paper-facing name for the same loader
load_fmow_weight_table = load_weight_table


def load_multiplier_table(path, m=None):
    values = read_index_value_csv(path, m)
    if np.any(values <= 0):
        raise DataError(f"{path}: multipliers must be positive")
    return values


def write_index_value_csv(path, values, value_name="weight"):
    lines = [f"label_index,{value_name}"] + [f"{i},{float(v)!r}" for i, v in enumerate(values)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def balanced_weights(class_counts, m=None):
    counts = np.asarray(class_counts, dtype=np.float64)
    m = len(counts) if m is None else m
    if counts.shape != (m,):
        raise ConfigError(f"expected {m} class counts, got {counts.shape}")
    if np.any(counts < 0):
        raise ConfigError("class counts must be nonnegative")
    total = counts.sum()
    if total <= 0:
        raise ConfigError("frequency weighting needs a nonempty training set")
    w = np.zeros(m)
    present = counts > 0
    w[present] = total / (m * counts[present])
    w[~present] = w[present].max()
    return w


def training_weights(scheme, class_counts, m=None, table=None, multipliers=None):
    """Per-class training loss weights under ``scheme``."""
    scheme = WeightScheme.parse(scheme)
    counts = np.asarray(class_counts)
    m = len(counts) if m is None else m
    if scheme is WeightScheme.UNWEIGHTED:
        return np.ones(m)
    if scheme is WeightScheme.FMOW:
        if table is None:
            raise ConfigError("the fmow scheme needs a weight table")
        if table.m != m:
            raise ConfigError(f"weight table has {table.m} classes, expected {m}")
        return table.training_view()
    w = balanced_weights(counts, m)
    if scheme is WeightScheme.FREQUENCY_MANUAL:
        mult = np.ones(m) if multipliers is None else np.asarray(multipliers, dtype=np.float64)
        if mult.shape != (m,) or np.any(mult <= 0):
            raise ConfigError(f"multipliers must be {m} positive values")
        w = w * mult
    return w

"""Challenge scoring: confusion matrix, per-class P/R/F and the weighted F-measure.

Degenerate ratios are defined as 0: precision when ``tp + fp == 0``, recall
when ``tp + fn == 0`` and F when ``P + R == 0``.  Such a class still counts
its weight in the denominator of the weighted mean, so predicting nothing
for a weighted class costs score.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[g, e]``: regions of true class ``g`` predicted as ``e``."""

    counts: np.ndarray

    @property
    def m(self):
        return self.counts.shape[0]

    @property
    def n(self):
        return int(self.counts.sum())

    def tp(self):
        return np.diag(self.counts).copy()

    def fp(self):
        return self.counts.sum(axis=0) - np.diag(self.counts)

    def fn(self):
        return self.counts.sum(axis=1) - np.diag(self.counts)


@dataclass(frozen=True)
class ClassWeights:
    w: np.ndarray
    false_detection_index: int

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        object.__setattr__(self, "w", w)
        if w.ndim != 1 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ConfigError("class weights must be a finite nonnegative vector")
        if not 0 <= self.false_detection_index < len(w):
            raise ConfigError(f"false_detection_index {self.false_detection_index} out of range")
        if w[self.false_detection_index] != 0:
            raise ConfigError("the false-detection class must have scoring weight 0")
        if not np.any(w > 0):
            raise ConfigError("at least one class weight must be positive")

    @classmethod
    def uniform(cls, m, false_detection_index=None):
        fd = m - 1 if false_detection_index is None else false_detection_index
        w = np.ones(m)
        w[fd] = 0.0
        return cls(w, fd)


@dataclass(frozen=True)
class ClassReport:
    label: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f_measure: float
    weight: float = float("nan")

    def to_dict(self):
        return {
            "label": self.label,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f_measure": self.f_measure,
            "weight": self.weight,
        }


def build_confusion(pred, truth, m):
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    if pred.shape != truth.shape:
        raise DataError(f"prediction and truth lengths differ ({len(pred)} vs {len(truth)})")
    for name, labels in (("pred", pred), ("truth", truth)):
        bad = np.flatnonzero((labels < 0) | (labels >= m))
        if bad.size:
            i = int(bad[0])
            raise DataError(f"{name}[{i}] = {labels[i]} is outside [0, {m})")
    counts = np.zeros((m, m), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    return ConfusionMatrix(counts)


def _ratio(num, den):
    return num / den if den > 0 else 0.0


def class_prf(C, i):
    """``(P_i, R_i, F_i)`` for class ``i``."""
    tp = int(C.counts[i, i])
    fp = int(C.counts[:, i].sum()) - tp
    fn = int(C.counts[i, :].sum()) - tp
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    f = _ratio(2.0 * p * r, p + r)
    return p, r, f


def class_reports(C, weights=None):
    w = None if weights is None else _weight_vector(weights)
    out = []
    for i in range(C.m):
        p, r, f = class_prf(C, i)
        tp = int(C.counts[i, i])
        out.append(
            ClassReport(
                label=i,
                tp=tp,
                fp=int(C.counts[:, i].sum()) - tp,
                fn=int(C.counts[i, :].sum()) - tp,
                precision=p,
                recall=r,
                f_measure=f,
                weight=float("nan") if w is None else float(w[i]),
            )
        )
    return out


def _weight_vector(weights):
    return weights.w if isinstance(weights, ClassWeights) else np.asarray(weights, dtype=np.float64)


def weighted_fmeasure(C, weights):
    """``sum_i F_i w_i / sum_i w_i``."""
    w = _weight_vector(weights)
    if w.shape != (C.m,):
        raise ConfigError(f"expected {C.m} class weights, got {w.shape}")
    total = float(w.sum())
    if total <= 0:
        raise ConfigError("class weights sum to zero")
    f = np.array([class_prf(C, i)[2] for i in range(C.m)])
    return float((f * w).sum() / total)


# ---------------------------------------------------------------------------
# submission files
# ---------------------------------------------------------------------------


@dataclass
class SubmissionReport:
    fbar: float
    classes: list
    n_regions: int

    def to_dict(self):
        return {
            "fbar": self.fbar,
            "n_regions": self.n_regions,
            "classes": [c.to_dict() for c in self.classes],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self, class_names=None):
        lines = [f"{'class':<24}{'w':>6}{'tp':>6}{'fp':>6}{'fn':>6}{'P':>8}{'R':>8}{'F':>8}"]
        for c in self.classes:
            name = class_names[c.label] if class_names else str(c.label)
            lines.append(
                f"{name:<24}{c.weight:>6.2f}{c.tp:>6d}{c.fp:>6d}{c.fn:>6d}"
                f"{c.precision:>8.4f}{c.recall:>8.4f}{c.f_measure:>8.4f}"
            )
        lines.append(f"weighted F-measure: {self.fbar:.6f} over {self.n_regions} regions")
        return "\n".join(lines)


def read_label_csv(path):
    """``region_id,label`` CSV -> dict, rejecting duplicates and bad rows."""
    labels = {}
    dupes = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["region_id", "label"]:
            raise DataError(f"{path}: expected header 'region_id,label', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            rid = row[0].strip()
            try:
                label = int(row[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: label {row[1]!r} is not an integer") from None
            if rid in labels:
                dupes.append(rid)
            labels[rid] = label
    if dupes:
        raise DataError(f"{path}: duplicate region ids {sorted(set(dupes))}")
    return labels


def write_label_csv(path, labels):
    lines = ["region_id,label"] + [f"{rid},{int(labels[rid])}" for rid in sorted(labels)]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def score_labels(pred, truth, weights):
    """Score ``{region_id: label}`` predictions against truth, matched by id."""
    missing = sorted(set(truth) - set(pred))
    extra = sorted(set(pred) - set(truth))
    if missing or extra:
        raise DataError(f"region ids missing from predictions: {missing}; unknown region ids: {extra}")
    ids = sorted(truth)
    m = len(_weight_vector(weights))
    C = build_confusion([pred[r] for r in ids], [truth[r] for r in ids], m)
    return SubmissionReport(weighted_fmeasure(C, weights), class_reports(C, weights), len(ids))


def score_submission(pred_file, truth_file, weights_file):
    """Score prediction/truth CSV files with a ``label_index,weight`` table.

    The weights file's last label is the false-detection class; its scoring
    weight is forced to 0.
    """
    from .weighting import load_weight_table

    table = load_weight_table(weights_file)
    return score_labels(read_label_csv(pred_file), read_label_csv(truth_file), table.metrics_view())


def write_report(report, json_path=None):
    if json_path is not None:
        atomic_write_bytes(Path(json_path), report.to_json().encode())
    return report.to_table()

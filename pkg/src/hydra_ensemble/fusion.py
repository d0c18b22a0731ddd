"""Turning per-head, per-image scores into one label per region.

For every head, the raw score vectors of a region's images are summed,
converted to probabilities with a softmax, and the most probable class is
that head's vote.  A region's final label is the modal vote if it was cast
by strictly more than half of the heads; otherwise the region is declared a
false detection.
"""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass

import numpy as np

from ._io import atomic_write_text
from .errors import ConfigError, DataError


def aggregate_region_scores(per_image_scores):
    """Elementwise sum of a region's score vectors."""
    vecs = [np.asarray(v, dtype=np.float64) for v in per_image_scores]
    if not vecs:
        raise DataError("cannot aggregate an empty list of score vectors")
    m = vecs[0].shape
    if any(v.shape != m or v.ndim != 1 for v in vecs):
        raise DataError("score vectors must be 1-D and of equal length")
    total = np.zeros(m)
    for v in vecs:
        total += v
    return total


def softmax(v):
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DataError("softmax input contains non-finite scores")
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def head_decision(summed):
    """Most probable class; ties go to the lowest class index."""
    return int(np.argmax(softmax(summed)))


@dataclass(frozen=True)
class RegionBallot:
    region_id: str
    labels: tuple


def majority_vote(ballot, head_count, false_detection_label):
    labels = ballot.labels if isinstance(ballot, RegionBallot) else tuple(ballot)
    if len(labels) != head_count:
        raise ConfigError(f"ballot has {len(labels)} votes for {head_count} heads")
    if head_count == 0:
        return false_detection_label
    counts = Counter(labels)
    top = max(counts.values())
    modal = min(label for label, c in counts.items() if c == top)
    return modal if 2 * top > head_count else false_detection_label


@dataclass
class FusionResult:
    labels: dict
    ballots: dict
    probabilities: dict  # region_id -> (heads, m) array

    def head_labels(self, head_index):
        return {rid: b.labels[head_index] for rid, b in self.ballots.items()}


def fuse_region(region_id, per_head_image_scores, false_detection_label):
    """``per_head_image_scores[h]`` lists head ``h``'s score vectors for the region's images."""
    probs = [softmax(aggregate_region_scores(s)) for s in per_head_image_scores]
    ballot = RegionBallot(region_id, tuple(int(np.argmax(p)) for p in probs))
    label = majority_vote(ballot, len(probs), false_detection_label)
    return label, ballot, np.array(probs)


def fuse_dataset(head_scores, region_index, false_detection_label):
    """Fuse every region.

    ``head_scores`` holds one mapping per head from ``(region_id, image_id)``
    to a raw score vector; ``region_index`` maps each region id to its image
    ids.
    """
    if not head_scores:
        raise ConfigError("fusion needs at least one head")
    labels, ballots, probabilities = {}, {}, {}
    for rid in sorted(region_index):
        images = region_index[rid]
        if not images:
            raise DataError(f"region {rid} has no images")
        per_head = []
        for h, scores in enumerate(head_scores):
            try:
                per_head.append([scores[(rid, iid)] for iid in images])
            except KeyError as exc:
                raise DataError(f"head {h} has no scores for image {exc.args[0]}") from None
        labels[rid], ballots[rid], probabilities[rid] = fuse_region(rid, per_head, false_detection_label)
    return FusionResult(labels, ballots, probabilities)


def write_score_dump(path, scores):
    """``region_id,image_id,score_0..score_{m-1}``; floats round-trip exactly."""
    keys = sorted(scores)
    m = len(scores[keys[0]]) if keys else 0
    lines = ["region_id,image_id," + ",".join(f"score_{i}" for i in range(m))]
    for rid, iid in keys:
        v = scores[(rid, iid)]
        lines.append(f"{rid},{iid}," + ",".join(repr(float(x)) for x in v))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_score_dump(path):
    scores = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["region_id", "image_id"]:
            raise DataError(f"{path}: expected header 'region_id,image_id,score_0,...', got {header}")
        m = len(header) - 2
        if header[2:] != [f"score_{i}" for i in range(m)]:
            raise DataError(f"{path}: score columns must be score_0..score_{m - 1}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != m + 2:
                raise DataError(f"{path}:{lineno}: expected {m + 2} fields, got {len(row)}")
            key = (row[0], row[1])
            if key in scores:
                raise DataError(f"{path}:{lineno}: duplicate entry {key}")
            try:
                scores[key] = np.array([float(x) for x in row[2:]])
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparseable score") from None
    return scores

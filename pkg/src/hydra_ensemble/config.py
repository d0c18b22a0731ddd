"""Run configuration: synthetic data, model, plan and head roster in one JSON file.

A config is a JSON object with any of these sections (missing sections take
their defaults)::

    {
      "seed": 0,
      "synthetic": {...},          # SyntheticSpec fields, used by `gen`
      "model": {...},              # ModelConfig fields
      "plan": {...},               # TrainPlan fields except the seed
      "lr_scale": 1.0,             # multiplies every learning rate of the plan
      "crops": {"expansion_factor": 2.0, "min_size": 96},
      "augment": {"zoom_range": [0.8, 1.25], "shift_frac": 0.1},
      "multipliers": null,         # optional path of a manual-weighting table
      "heads": [{"id": "1", "cnn": "dense", "crop": "EXT-PAN",
                 "augment": "flip", "weighting": "unweighted"}, ...]
    }

The head list mirrors the columns of the head table (CNN, Crop, Augment,
Class weighting).  Instead of a file path, ``paper``, ``reference`` and
``tiny`` name built-in presets.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .architectures import ModelConfig
from .dataset import SyntheticSpec
from .errors import ConfigError
from .trainer import PAPER_ROSTER, TrainPlan, make_head

SECTIONS = ("seed", "synthetic", "model", "plan", "lr_scale", "crops", "augment", "multipliers", "heads")
HEAD_FIELDS = ("id", "cnn", "crop", "augment", "weighting", "seed")


def _roster_rows(indices=None):
    rows = PAPER_ROSTER if indices is None else [PAPER_ROSTER[i] for i in indices]
    keys = ("cnn", "crop", "augment", "weighting")
    return [{"id": str(i + 1), **dict(zip(keys, row))} for i, row in enumerate(rows)]


PRESETS = {
    # the twelve heads and the default schedule, for full-size imagery
    "paper": {"heads": _roster_rows()},
    # six heads tuned to train in well under a minute per seed on the
    # default synthetic dataset
    "reference": {
        "model": {"dropout": 0.0, "metadata_gain": 0.05},
        "plan": {"batch_size": 8},
        "lr_scale": 30.0,
        "crops": {"min_size": 12},
        "heads": _roster_rows([0, 1, 3, 8, 9, 10]),
    },
    "tiny": {
        "synthetic": {"num_classes": 4, "train_regions": 40, "eval_regions": 20, "test_regions": 20,
                      "image_size": 32, "box_range": [10, 14]},
        "model": {"input_size": 12, "width": 4, "blocks": 1, "fc_width": 16, "fc_layers": 1,
                  "dropout": 0.0, "metadata_gain": 0.05},
        "plan": {"body_epochs": 2, "head_epochs": 1, "head_lr_schedule": [[1, 1e-4]], "batch_size": 8},
        "lr_scale": 30.0,
        "crops": {"min_size": 8},
        "heads": [
            {"id": "1", "cnn": "residual", "crop": "EXT-PAN", "augment": "flip", "weighting": "unweighted"},
            {"id": "2", "cnn": "residual", "crop": "ORIG-PAN", "augment": "shift", "weighting": "frequency#2"},
        ],
    },
}


def head_seed(run_seed, index):
    return int(run_seed) * 1000 + 100 + int(index)


@dataclass(frozen=True)
class RunConfig:
    raw: dict

    @property
    def seed(self):
        return int(self.raw.get("seed", 0))

    @property
    def synthetic(self):
        return SyntheticSpec.from_dict(self.raw.get("synthetic", {}))

    @property
    def model(self):
        return ModelConfig.from_dict(self.raw.get("model", {}))

    @property
    def plan(self):
        plan = self.raw.get("plan", {})
        if "seed" in plan:
            raise ConfigError("set the seed at the top level of the config, not in 'plan'")
        return TrainPlan.from_dict({**plan, "seed": self.seed}).scaled(float(self.raw.get("lr_scale", 1.0)))

    @property
    def crops(self):
        c = {"expansion_factor": 2.0, "min_size": 96, **self.raw.get("crops", {})}
        unknown = set(c) - {"expansion_factor", "min_size"}
        if unknown:
            raise ConfigError(f"unknown crop options {sorted(unknown)}")
        return c

    @property
    def augment(self):
        a = {"zoom_range": [0.8, 1.25], "shift_frac": 0.1, **self.raw.get("augment", {})}
        unknown = set(a) - {"zoom_range", "shift_frac"}
        if unknown:
            raise ConfigError(f"unknown augment options {sorted(unknown)}")
        return a

    def roster(self):
        rows = self.raw.get("heads")
        if not rows:
            raise ConfigError("config has no heads")
        crops, aug = self.crops, self.augment
        heads, seen = [], set()
        for i, row in enumerate(rows):
            unknown = set(row) - set(HEAD_FIELDS)
            missing = {"cnn", "crop", "augment", "weighting"} - set(row)
            if unknown or missing:
                raise ConfigError(f"head {i}: unknown fields {sorted(unknown)}, missing {sorted(missing)}")
            hid = str(row.get("id", i + 1))
            if hid in seen:
                raise ConfigError(f"duplicate head id {hid!r}")
            seen.add(hid)
            heads.append(
                make_head(hid, row["cnn"], row["crop"], row["augment"], row["weighting"],
                          seed=int(row.get("seed", head_seed(self.seed, i))),
                          expansion_factor=float(crops["expansion_factor"]), min_size=int(crops["min_size"]),
                          zoom_range=tuple(aug["zoom_range"]), shift_frac=float(aug["shift_frac"]))
            )
        return heads

    def validate(self):
        unknown = set(self.raw) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        self.synthetic.validate()
        self.model, self.plan, self.roster()
        return self

    def with_seed(self, seed):
        raw = copy.deepcopy(self.raw)
        raw["seed"] = int(seed)
        return RunConfig(raw)

    def to_json(self):
        return json.dumps(self.raw, indent=1, sort_keys=True) + "\n"

    def training_hash(self):
        """Digest of everything that shapes trained weights (not the synthetic section)."""
        keys = [k for k in SECTIONS if k != "synthetic"]
        blob = json.dumps({k: self.raw.get(k) for k in keys}, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(source=None):
    """Config from a JSON file, a preset name, or ``None`` for the reference preset."""
    if source is None:
        raw = PRESETS["reference"]
    elif isinstance(source, dict):
        raw = source
    elif str(source) in PRESETS and not Path(source).exists():
        raw = PRESETS[str(source)]
    else:
        path = Path(source)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config {source!r} is neither a file nor one of {sorted(PRESETS)}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    return RunConfig(copy.deepcopy(raw)).validate()

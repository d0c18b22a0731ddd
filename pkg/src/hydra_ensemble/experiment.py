"""One-call helpers that run a whole config in memory.

The CLI does the same work with checkpoints and a run directory; these
helpers are for scripts and tests that only need the numbers.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .dataset import generate_synthetic, group_by_region, metadata_means
from .trainer import TrainingData, evaluate_ensemble, predict_scores, spawn_heads, train_body, train_heads
from .weighting import load_weight_table


@dataclass
class FittedEnsemble:
    roster: list
    bodies: dict
    heads: list
    logs: dict

    def scores(self, manifest, data):
        return {h.head_id: predict_scores(net, manifest, h.crop, data) for h, net in zip(self.roster, self.heads)}


def synthetic_training_data(cfg, out_dir):
    """Generate the config's synthetic dataset and wrap its train/eval splits."""
    manifests = generate_synthetic(cfg.synthetic, cfg.seed, out_dir)
    weights = load_weight_table(Path(out_dir) / "weights.csv")
    data = TrainingData(manifests["train"], metadata_means(manifests["train"]), manifests["eval"], cfg.model,
                        weights, expansion_factor=cfg.crops["expansion_factor"])
    return data, manifests


def fit_ensemble(cfg, data, n_jobs=1):
    plan, roster = cfg.plan, cfg.roster()
    bodies, logs = {}, {}
    for arch in sorted({h.architecture for h in roster}):
        bodies[arch], logs[f"{arch}-body"] = train_body(data, arch, plan)
    trained = train_heads(spawn_heads(bodies, roster), plan, data, n_jobs)
    for h, (_, rows) in zip(roster, trained):
        logs[f"head-{h.head_id}"] = rows
    return FittedEnsemble(roster, bodies, [net for net, _ in trained], logs)


def evaluate_split(ensemble, manifest, data):
    """Per-head and fused region accuracy on ``manifest``."""
    return evaluate_ensemble(ensemble.scores(manifest, data), group_by_region(manifest), manifest.region_labels(),
                             manifest.false_detection_index)


def ensemble_gain_trial(cfg, out_dir, n_jobs=1):
    """Generate, train and evaluate one seed of a config on its eval split."""
    data, manifests = synthetic_training_data(cfg, out_dir)
    return evaluate_split(fit_ensemble(cfg, data, n_jobs), manifests["eval"], data)

"""Train a small body/head ensemble in memory and compare it with its heads.

Uses the six-head ``reference`` preset (about half a minute on one core);
pass ``tiny`` as the first argument for a two-head run of a few seconds.
"""
import sys
import tempfile

from hydra_ensemble.config import load_config
from hydra_ensemble.experiment import evaluate_split, fit_ensemble, synthetic_training_data
from hydra_ensemble.trainer import cost_report

preset = sys.argv[1] if len(sys.argv) > 1 else "reference"
cfg = load_config(preset)
with tempfile.TemporaryDirectory() as tmp:
    data, manifests = synthetic_training_data(cfg, tmp)
    ens = fit_ensemble(cfg, data)
    for arch, net in ens.bodies.items():
        final = [r for r in ens.logs[f"{arch}-body"] if r["split"] == "eval"][-1:]
        print(f"{arch} body: {net.num_parameters()} parameters, final eval accuracy "
              f"{final[0]['accuracy'] if final else float('nan'):.3f}")
    ev = evaluate_split(ens, manifests["eval"], data)
    for h in ens.roster:
        print(f"head {h.head_id}: {h.architecture:8s} {h.crop.style.value:9s} {h.augment_name:5s} "
              f"{h.weighting.value:18s} accuracy {ev.head_accuracy[h.head_id]:.3f}")
    print(f"fused accuracy {ev.fused_accuracy:.3f}, best head {ev.best_head_accuracy:.3f}, gain {ev.gain:+.3f}")
    cost = cost_report(cfg.plan, ens.roster)
    print(f"epochs: {cost.hydra_epochs} shared-body vs {cost.independent_epochs} independent (x{cost.ratio:.2f})")

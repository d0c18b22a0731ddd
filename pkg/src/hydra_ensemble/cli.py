"""Command-line driver: ``hydra gen|train|predict|score|report|cost``.

A run directory holds everything one experiment produced::

    run.json                     summary: config hash, data digest, checksums
    config.json                  the resolved config
    cost.json                    epoch accounting of the roster
    checkpoints/<arch>-body.ckpt, checkpoints/head-<id>.ckpt
    logs/<arch>-body.csv, logs/head-<id>.csv
    scores/<split>/head-<id>.csv per-image raw scores of every head
    predictions/<split>.csv      fused label per region
    report.json                  written by `hydra report`

Every checkpoint records the config hash of the run that produced it;
artifacts with a different hash are never combined.  Exit codes: 0 success,
1 usage or config error, 2 data error, 3 numeric divergence.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_write_text
from .checkpoint import load_network, save_network
from .config import PRESETS, load_config
from .dataset import generate_synthetic, group_by_region, load_manifest, metadata_means
from .errors import ConfigError, DataError, HydraError, NumericError
from .fusion import fuse_dataset, read_score_dump, write_score_dump
from .metrics import score_submission, write_label_csv, write_report
from .trainer import (
    TrainingData,
    cost_report,
    evaluate_ensemble,
    log_csv,
    predict_scores,
    spawn_heads,
    train_body,
    train_heads,
)
from .weighting import load_multiplier_table, load_weight_table

log = logging.getLogger("hydra_ensemble")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _dump(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _run_config(args):
    cfg = load_config(args.config)
    return cfg.with_seed(args.seed) if args.seed is not None else cfg


def _need(value, flag):
    if value is None:
        raise ConfigError(f"{flag} is required for this command")
    return value


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def cmd_gen(args):
    cfg = _run_config(args)
    out = Path(_need(args.out, "--out"))
    manifests = generate_synthetic(cfg.synthetic, cfg.seed, out)
    for split, man in manifests.items():
        print(f"{split}: {len(man.region_labels())} regions, {len(man.records)} images -> {out / (split + '.json')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _training_data(cfg, data_dir):
    data_dir = Path(data_dir)
    train = load_manifest(data_dir / "train.json")
    if train.split != "train":
        raise DataError(f"{data_dir / 'train.json'} holds split {train.split!r}, expected 'train'")
    ev = load_manifest(data_dir / "eval.json") if (data_dir / "eval.json").exists() else None
    weights = load_weight_table(data_dir / "weights.csv", train.m) if (data_dir / "weights.csv").exists() else None
    mult = cfg.raw.get("multipliers")
    mult = load_multiplier_table(mult, train.m) if mult else None
    data = TrainingData(train, metadata_means(train), ev, cfg.model, weights, mult, cfg.crops["expansion_factor"])
    return data


def _run_hash(cfg, data_dir):
    h = hashlib.sha256(cfg.training_hash().encode())
    h.update(_file_digest(Path(data_dir) / "train.json").encode())
    return h.hexdigest()[:16]


def _resume(path, run_hash, what):
    """Load a finished checkpoint of this run, refuse one from another run."""
    if not path.exists():
        return None
    net, extra = load_network(path)
    if extra.get("config_hash") != run_hash:
        raise ConfigError(
            f"{path} was produced by config {extra.get('config_hash')!r}, this run is {run_hash!r}; "
            f"refusing to combine {what} from different configs (use a fresh --out)"
        )
    log.info("resuming: %s already trained", what)
    return net


def cmd_train(args):
    cfg = _run_config(args)
    data_dir = Path(_need(args.data, "--data"))
    out = Path(_need(args.out, "--out"))
    data = _training_data(cfg, data_dir)
    plan, roster = cfg.plan, cfg.roster()
    run_hash = _run_hash(cfg, data_dir)
    ckpt_dir, log_dir = out / "checkpoints", out / "logs"
    atomic_write_text(out / "config.json", cfg.to_json())
    common = {"config_hash": run_hash, "metadata_means": [float(v) for v in data.means]}

    bodies = {}
    for arch in sorted({h.architecture for h in roster}):
        path = ckpt_dir / f"{arch}-body.ckpt"
        net = _resume(path, run_hash, f"{arch} body")
        if net is None:
            net, rows = train_body(data, arch, plan)
            atomic_write_text(log_dir / f"{arch}-body.csv", log_csv(rows))
            save_network(net, path, {**common, "role": "body", "architecture": arch})
        bodies[arch] = net
        print(f"body {arch}: checksum {net.checksum()[:16]}")

    heads, todo = {}, []
    for job in spawn_heads(bodies, roster):
        net = _resume(ckpt_dir / f"head-{job.config.head_id}.ckpt", run_hash, f"head {job.config.head_id}")
        if net is None:
            todo.append(job)
        else:
            heads[job.config.head_id] = net
    for job, (net, rows) in zip(todo, train_heads(todo, plan, data, args.jobs)):
        hid = job.config.head_id
        atomic_write_text(log_dir / f"head-{hid}.csv", log_csv(rows))
        save_network(net, ckpt_dir / f"head-{hid}.ckpt",
                     {**common, "role": "head", "head": job.config.describe(),
                      "body_checksum": bodies[job.config.architecture].checksum()})
        heads[hid] = net
    for h in roster:
        print(f"head {h.head_id} ({h.architecture}, {h.crop.style.value}, {h.augment_name}, "
              f"{h.weighting.value}): checksum {heads[h.head_id].checksum()[:16]}")

    cost = cost_report(plan, roster)
    atomic_write_text(out / "cost.json", _dump(cost.to_dict()))
    summary = {
        "version": __version__,
        "config_hash": run_hash,
        "seed": cfg.seed,
        "data": {"dir": str(data_dir), "train_sha256": _file_digest(data_dir / "train.json")},
        "metadata_means": common["metadata_means"],
        "plan": plan.to_dict(),
        "bodies": {a: {"checkpoint": f"checkpoints/{a}-body.ckpt", "checksum": n.checksum()} for a, n in bodies.items()},
        "heads": {h.head_id: {**h.describe(), "checkpoint": f"checkpoints/head-{h.head_id}.ckpt",
                              "checksum": heads[h.head_id].checksum()} for h in roster},
        "cost": cost.to_dict(),
    }
    atomic_write_text(out / "run.json", _dump(summary))
    print(f"cost: hydra {cost.hydra_epochs} epochs vs independent {cost.independent_epochs} (x{cost.ratio:.2f})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict / report
# ---------------------------------------------------------------------------


def _load_run(out):
    path = Path(out) / "run.json"
    if not path.exists():
        raise DataError(f"{path} not found; run `hydra train` first")
    return json.loads(path.read_text())


def _load_heads(out, run):
    cfg = load_config(str(Path(out) / "config.json"))
    heads = []
    for h in cfg.roster():
        path = Path(out) / "checkpoints" / f"head-{h.head_id}.ckpt"
        if not path.exists():
            raise DataError(f"missing head checkpoint {path}")
        net, extra = load_network(path)
        if extra.get("config_hash") != run["config_hash"]:
            raise ConfigError(f"{path} belongs to config {extra.get('config_hash')!r}, run is {run['config_hash']!r}")
        heads.append((h, net))
    return cfg, heads


def _predict_manifest(args):
    if args.manifest:
        return Path(args.manifest)
    return Path(_need(args.data, "--data or --manifest")) / f"{args.split}.json"


def cmd_predict(args):
    out = Path(_need(args.out, "--out"))
    run = _load_run(out)
    cfg, heads = _load_heads(out, run)
    manifest = load_manifest(_predict_manifest(args))
    data = TrainingData(None, np.asarray(run["metadata_means"]), model=cfg.model,
                        expansion_factor=cfg.crops["expansion_factor"])
    split = manifest.split
    head_scores = []
    for h, net in heads:
        scores = predict_scores(net, manifest, h.crop, data)
        write_score_dump(out / "scores" / split / f"head-{h.head_id}.csv", scores)
        head_scores.append(scores)
    fused = fuse_dataset(head_scores, group_by_region(manifest), manifest.false_detection_index)
    pred_path = out / "predictions" / f"{split}.csv"
    write_label_csv(pred_path, fused.labels)
    print(f"{len(fused.labels)} regions from {len(manifest.records)} images, {len(heads)} heads -> {pred_path}")
    return EXIT_OK


def cmd_report(args):
    out = Path(_need(args.out, "--out"))
    run = _load_run(out)
    cfg, heads = _load_heads(out, run)
    report = {"config_hash": run["config_hash"], "cost": run["cost"], "splits": {}, "training": {}}
    for h, _ in heads:
        rows = (out / "logs" / f"head-{h.head_id}.csv").read_text().splitlines()[1:]
        last = {r.split(",")[1]: float(r.split(",")[3]) for r in rows}
        report["training"][h.head_id] = {"final_" + k: v for k, v in sorted(last.items())}
    data_dir = Path(args.data or run["data"]["dir"])
    for split_dir in sorted((out / "scores").glob("*")) if (out / "scores").exists() else []:
        split = split_dir.name
        manifest = load_manifest(data_dir / f"{split}.json", check_files=False)
        scores = {h.head_id: read_score_dump(split_dir / f"head-{h.head_id}.csv") for h, _ in heads}
        ev = evaluate_ensemble(scores, group_by_region(manifest), manifest.region_labels(),
                               manifest.false_detection_index)
        report["splits"][split] = {"head_accuracy": ev.head_accuracy, "fused_accuracy": ev.fused_accuracy,
                                   "best_head_accuracy": ev.best_head_accuracy, "gain": ev.gain}
        accs = " ".join(f"{k}={v:.3f}" for k, v in ev.head_accuracy.items())
        print(f"{split}: heads {accs} | fused {ev.fused_accuracy:.3f} (gain {ev.gain:+.3f})")
    atomic_write_text(out / "report.json", _dump(report))
    return EXIT_OK


# ---------------------------------------------------------------------------
# score / cost
# ---------------------------------------------------------------------------


def cmd_score(args):
    pred, truth = _need(args.pred, "--pred"), _need(args.truth, "--truth")
    report = score_submission(pred, truth, _need(args.weights, "--weights"))
    print(report.to_table())
    if args.out:
        write_report(report, args.out)
    return EXIT_OK


def cmd_cost(args):
    cfg = _run_config(args)
    cost = cost_report(cfg.plan, cfg.roster())
    print(f"architectures {cost.architectures}, heads {cost.heads}")
    print(f"hydra epochs       {cost.hydra_epochs}")
    print(f"independent epochs {cost.independent_epochs}")
    print(f"ratio              {cost.ratio:.4f}")
    if args.out:
        atomic_write_text(args.out, _dump(cost.to_dict()))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "predict": cmd_predict, "score": cmd_score,
            "report": cmd_report, "cost": cmd_cost}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON config file or preset ({', '.join(sorted(PRESETS))}); "
                                         "default: reference")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory (run directory for train/predict/report, file for score/cost)")
    common.add_argument("--jobs", type=int, default=1, help="parallel head-training processes")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="hydra", description="Body/head CNN ensembles with strict-majority fusion.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    p = sub.add_parser("train", parents=[common], help="train bodies, then heads")
    p.add_argument("--data", help="dataset directory with train.json [, eval.json, weights.csv]")
    p = sub.add_parser("predict", parents=[common], help="per-head score dumps and fused predictions")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--split", default="test", help="manifest <split>.json inside --data (default test)")
    p.add_argument("--manifest", help="explicit manifest path (overrides --data/--split)")
    p = sub.add_parser("score", parents=[common], help="weighted F-measure of a prediction CSV")
    p.add_argument("--pred", help="region_id,label predictions")
    p.add_argument("--truth", help="region_id,label ground truth")
    p.add_argument("--weights", help="label_index,weight table; the last index is the false-detection class")
    p = sub.add_parser("report", parents=[common], help="summarise a run directory")
    p.add_argument("--data", help="dataset directory (default: the one used for training)")
    sub.add_parser("cost", parents=[common], help="epoch accounting for the config's roster")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"hydra {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"hydra {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"hydra {args.command}: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except HydraError as exc:
        print(f"hydra {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Body/head training lifecycle.

One body per architecture is trained coarsely; each head then starts from
an exact copy of its architecture's body and is fine-tuned with its own
crop style, augmentation policy and class weighting under a stepped
learning-rate schedule.  Every random draw (shuffles, augmentation, dropout)
is seeded from the job's own seed, so jobs give identical results whether
they run sequentially or in parallel.
"""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .architectures import ARCHITECTURES, ModelConfig, build_architecture
from .augmentation import AugmentPolicy, CropSpec, CropStyle, augment_sample, crop_region, resize
from .dataset import METADATA_FIELDS, RegionSample, load_image, metadata_vector
from .errors import ConfigError, DivergenceError, NumericError
from .fusion import fuse_dataset, head_decision, aggregate_region_scores
from .micronet import AdamState, adam_step, backward, forward, weighted_cross_entropy
from .weighting import WeightScheme, training_weights

log = logging.getLogger(__name__)

DEFAULT_HEAD_SCHEDULE = ((1, 1e-4), (3, 1e-5), (1, 1e-6))
LOG_COLUMNS = ("epoch", "split", "loss", "accuracy", "lr")


@dataclass(frozen=True)
class TrainPlan:
    body_epochs: int = 6
    head_epochs: int = 5
    body_lr: float = 1e-4
    head_lr_schedule: tuple = DEFAULT_HEAD_SCHEDULE
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        sched = tuple((int(n), float(lr)) for n, lr in self.head_lr_schedule)
        object.__setattr__(self, "head_lr_schedule", sched)
        if self.body_epochs < 0 or self.head_epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if sum(n for n, _ in sched) != self.head_epochs:
            raise ConfigError(
                f"head schedule covers {sum(n for n, _ in sched)} epochs but head_epochs = {self.head_epochs}"
            )
        if any(n < 0 for n, _ in sched) or any(not lr > 0 for _, lr in sched) or not self.body_lr > 0:
            raise ConfigError("learning rates must be positive and phase lengths nonnegative")

    def scaled(self, factor):
        """Same schedule shape with every learning rate multiplied by ``factor``."""
        return replace(
            self,
            body_lr=self.body_lr * factor,
            head_lr_schedule=tuple((n, lr * factor) for n, lr in self.head_lr_schedule),
        )

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown plan fields {sorted(unknown)}")
        d = dict(d)
        if "head_lr_schedule" in d:
            d["head_lr_schedule"] = tuple(tuple(p) for p in d["head_lr_schedule"])
        return cls(**d)

    def to_dict(self):
        return {
            "body_epochs": self.body_epochs,
            "head_epochs": self.head_epochs,
            "body_lr": self.body_lr,
            "head_lr_schedule": [list(p) for p in self.head_lr_schedule],
            "batch_size": self.batch_size,
            "seed": self.seed,
        }


def lr_at(plan, head_epoch_index):
    """Head learning rate for a 0-based head epoch."""
    if not 0 <= head_epoch_index < plan.head_epochs:
        raise ConfigError(f"head epoch {head_epoch_index} outside [0, {plan.head_epochs})")
    end = 0
    for n, lr in plan.head_lr_schedule:
        end += n
        if head_epoch_index < end:
            return lr
    raise AssertionError("unreachable: schedule validated in TrainPlan")


@dataclass(frozen=True)
class HeadConfig:
    head_id: str
    architecture: str
    crop: CropSpec = CropSpec()
    augment: AugmentPolicy = AugmentPolicy()
    weighting: WeightScheme = WeightScheme.UNWEIGHTED
    seed: int = 0
    augment_name: str = "none"

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"head {self.head_id}: unknown architecture {self.architecture!r}")
        object.__setattr__(self, "weighting", WeightScheme.parse(self.weighting))
        object.__setattr__(self, "head_id", str(self.head_id))

    def describe(self):
        return {
            "id": self.head_id,
            "cnn": self.architecture,
            "crop": self.crop.style.value,
            "augment": self.augment_name,
            "weighting": self.weighting.value,
            "seed": self.seed,
        }


# head table: CNN, crop, augment, class weighting ("frequency#1" is the
# manually adjusted variant, "frequency#2" the plain balanced heuristic)
PAPER_ROSTER = (
    ("dense", "EXT-PAN", "flip", "unweighted"),
    ("dense", "ORIG-PAN", "flip", "frequency#1"),
    ("dense", "EXT-MULTI", "flip", "frequency#1"),
    ("dense", "EXT-PAN", "zoom", "frequency#2"),
    ("dense", "EXT-PAN", "shift", "unweighted"),
    ("dense", "EXT-MULTI", "shift", "fmow"),
    ("dense", "EXT-PAN", "flip", "frequency#2"),
    ("dense", "ORIG-PAN", "flip", "frequency#2"),
    ("residual", "EXT-PAN", "flip", "unweighted"),
    ("residual", "EXT-MULTI", "flip", "frequency#1"),
    ("residual", "ORIG-PAN", "flip", "frequency#1"),
    ("residual", "EXT-MULTI", "flip", "frequency#2"),
)


def make_head(head_id, cnn, crop, augment, weighting, seed=0, expansion_factor=2.0, min_size=96,
              zoom_range=(0.8, 1.25), shift_frac=0.1):
    return HeadConfig(
        head_id=str(head_id),
        architecture=cnn,
        crop=CropSpec(CropStyle.parse(crop), expansion_factor, min_size),
        augment=AugmentPolicy.named(augment, zoom_range, shift_frac),
        weighting=WeightScheme.parse(weighting),
        seed=seed,
        augment_name=augment,
    )


def paper_roster(seed=0, **crop_opts):
    """The twelve-head roster (8 dense + 4 residual), seeds ``seed + 1 ..``."""
    return [make_head(i + 1, *row, seed=seed + i + 1, **crop_opts) for i, row in enumerate(PAPER_ROSTER)]


@dataclass(frozen=True)
class CostReport:
    architectures: int
    heads: int
    hydra_epochs: int
    independent_epochs: int
    ratio: float

    def to_dict(self):
        return dict(self.__dict__)


def cost_report(plan, roster):
    """Epoch counts of body/head training versus training every head from scratch."""
    arch = len({h.architecture for h in roster})
    heads = len(roster)
    hydra = arch * plan.body_epochs + heads * plan.head_epochs
    independent = heads * (plan.body_epochs + plan.head_epochs)
    ratio = independent / hydra if hydra else 1.0
    return CostReport(arch, heads, hydra, independent, ratio)


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------


class ImageCache:
    """Loads each pan/multi-spectral raster once."""

    def __init__(self):
        self._store = {}

    def get(self, manifest, record, multispectral):
        key = (str(manifest.resolve(record.ms_path if multispectral else record.path)), multispectral)
        if key not in self._store:
            self._store[key] = load_image(manifest, record, multispectral)
        return self._store[key]


def extract_samples(manifest, crop, means, cache=None, training=True, metadata_gain=1.0):
    """Crop every record of a manifest; rejected crops are dropped when training.

    Multi-spectral crops keep the first three bands so that every head sees
    the same channel count as its body.
    """
    cache = cache or ImageCache()
    samples = []
    for rec in manifest.records:
        if crop.style.multispectral:
            ms = cache.get(manifest, rec, True)
            pan_w = rec.metadata.get("img_w") or cache.get(manifest, rec, False).shape[1]
            pixels = crop_region(ms[..., :3], rec.box, crop, box_scale=pan_w / ms.shape[1],
                                 enforce_min_size=training)
        else:
            pixels = crop_region(cache.get(manifest, rec, False), rec.box, crop)
        if pixels is None:
            continue
        samples.append(
            RegionSample(rec.region_id, rec.image_id, pixels, rec.box, rec.label,
                         metadata_gain * metadata_vector(rec.metadata, means))
        )
    return samples


def _stack(samples, input_hw, policy=None, epoch=0, seed=0):
    if policy is None:
        pix = [resize(s.pixels, input_hw) for s in samples]
    else:
        pix = [augment_sample(s, policy, epoch, seed, input_hw).pixels for s in samples]
    return (
        np.stack(pix),
        np.stack([s.metadata for s in samples]),
        np.array([s.label for s in samples], dtype=np.int64),
    )


def predict_samples(net, samples, input_hw, batch_size=64):
    """Eval-mode raw scores, ``(len(samples), m)``."""
    out = []
    for start in range(0, len(samples), batch_size):
        x, md, _ = _stack(samples[start : start + batch_size], input_hw)
        out.append(forward(net, x, md if net.metadata_width else None))
    return np.concatenate(out) if out else np.zeros((0, net.num_classes))


def _evaluate(net, samples, input_hw):
    if not samples:
        return float("nan"), float("nan")
    scores = predict_samples(net, samples, input_hw)
    labels = np.array([s.label for s in samples])
    loss, _ = weighted_cross_entropy(scores, labels)
    return loss, float(np.mean(scores.argmax(axis=1) == labels))


def _fit(net, samples, class_weights, lrs, policy, seed, batch_size, input_hw, eval_samples, stage):
    """Adam over ``len(lrs)`` epochs, mutating ``net``; returns log rows."""
    if not samples:
        raise ConfigError(f"{stage}: no training samples")
    state = AdamState.for_params(net.params)
    rows = []
    n = len(samples)
    for epoch, lr in enumerate(lrs):
        order = np.random.default_rng([seed, 1, epoch]).permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, batch_size)):
            batch = [samples[i] for i in order[start : start + batch_size]]
            x, md, y = _stack(batch, input_hw, policy, epoch, seed)
            try:
                # overflow shows up as non-finite values, which are checked below
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads = backward(net, x, md if net.metadata_width else None, y, class_weights,
                                           train_mode=True, rng_seed=[seed, 2, epoch, b])
            except NumericError as exc:
                raise DivergenceError(f"{stage}: diverged in epoch {epoch}: {exc}", epoch) from None
            if not np.isfinite(loss):
                raise DivergenceError(f"{stage}: non-finite loss in epoch {epoch}", epoch)
            adam_step(net.params, grads, state, lr)
            total += loss * len(batch)
        for p in net.params:
            for a in p.values():
                if not np.all(np.isfinite(a)):
                    raise DivergenceError(f"{stage}: non-finite parameters after epoch {epoch}", epoch)
        _, train_acc = _evaluate(net, samples, input_hw)
        rows.append({"epoch": epoch, "split": "train", "loss": total / n, "accuracy": train_acc, "lr": lr})
        if eval_samples:
            eval_loss, eval_acc = _evaluate(net, eval_samples, input_hw)
            rows.append({"epoch": epoch, "split": "eval", "loss": eval_loss, "accuracy": eval_acc, "lr": lr})
        log.info("%s epoch %d lr %.1e train loss %.4f acc %.3f", stage, epoch, lr, total / n, train_acc)
    return rows


def log_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=LOG_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "loss": repr(float(r["loss"])), "accuracy": repr(float(r["accuracy"])), "lr": repr(float(r["lr"]))})
    return buf.getvalue()


BODY_CROP = CropStyle.EXT_PAN
BODY_POLICY = AugmentPolicy(flip_h=True, flip_v=True)


@dataclass
class TrainingData:
    """Everything a job needs besides its own config."""

    train: object
    means: np.ndarray
    eval: object = None
    model: ModelConfig = ModelConfig()
    weight_table: object = None
    multipliers: object = None
    expansion_factor: float = 2.0
    cache: ImageCache = field(default_factory=ImageCache)

    def samples(self, manifest, crop, training):
        return extract_samples(manifest, crop, self.means, self.cache, training, self.model.metadata_gain)


def body_seed(plan, architecture):
    return plan.seed * 1000 + ARCHITECTURES.index(architecture)


def train_body(data, architecture, plan, seed=None):
    """Returns ``(network, log_rows)``; 0 body epochs gives the seeded initialisation."""
    seed = body_seed(plan, architecture) if seed is None else seed
    if not data.train.records:
        raise ConfigError("body training needs a nonempty train manifest")
    crop = CropSpec(BODY_CROP, data.expansion_factor)
    net = build_architecture(architecture, data.train.m, len(METADATA_FIELDS), data.model, seed)
    samples = data.samples(data.train, crop, True)
    eval_samples = data.samples(data.eval, crop, False) if data.eval is not None else None
    rows = []
    if plan.body_epochs:
        rows = _fit(net, samples, None, [plan.body_lr] * plan.body_epochs, BODY_POLICY, seed,
                    plan.batch_size, data.model.input_hw, eval_samples, f"{architecture} body")
    return net, rows


@dataclass
class HeadJob:
    config: HeadConfig
    net: object


def spawn_heads(bodies, roster):
    """One job per head, each holding an exact copy of its architecture's body."""
    missing = sorted({h.architecture for h in roster} - set(bodies))
    if missing:
        raise ConfigError(f"no body for architectures {missing}")
    return [HeadJob(h, bodies[h.architecture].copy()) for h in roster]


def head_class_weights(data, config):
    return training_weights(config.weighting, data.train.class_counts(), data.train.m,
                            table=data.weight_table, multipliers=data.multipliers)


def train_head(body, config, plan, data):
    """Fine-tune a copy of ``body``; returns ``(network, log_rows)``."""
    net = body.copy()
    if plan.head_epochs == 0:
        return net, []
    samples = data.samples(data.train, config.crop, True)
    eval_samples = data.samples(data.eval, config.crop, False) if data.eval is not None else None
    lrs = [lr_at(plan, e) for e in range(plan.head_epochs)]
    rows = _fit(net, samples, head_class_weights(data, config), lrs, config.augment, config.seed,
                plan.batch_size, data.model.input_hw, eval_samples, f"head {config.head_id}")
    return net, rows


def _train_head_job(args):
    body, config, plan, data = args
    return train_head(body, config, plan, data)


def train_heads(jobs, plan, data, n_jobs=1):
    """Train every spawned head; results do not depend on ``n_jobs``."""
    args = [(job.net, job.config, plan, data) for job in jobs]
    if n_jobs <= 1 or len(jobs) <= 1:
        return [_train_head_job(a) for a in args]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_train_head_job, args))


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def predict_scores(net, manifest, crop, data):
    """``(region_id, image_id) -> raw scores`` for every record of ``manifest``."""
    samples = data.samples(manifest, crop, False)
    scores = predict_samples(net, samples, data.model.input_hw)
    return {(s.region_id, s.image_id): scores[i] for i, s in enumerate(samples)}


def region_accuracy(pred, truth):
    ids = sorted(truth)
    return float(np.mean([pred[r] == truth[r] for r in ids])) if ids else float("nan")


def single_head_labels(scores, region_index):
    """Per-region labels of one head: argmax of the summed image scores."""
    return {rid: head_decision(aggregate_region_scores([scores[(rid, i)] for i in imgs]))
            for rid, imgs in region_index.items()}


@dataclass
class EnsembleEvaluation:
    head_accuracy: dict
    fused_accuracy: float
    fused_labels: dict

    @property
    def best_head_accuracy(self):
        return max(self.head_accuracy.values())

    @property
    def gain(self):
        return self.fused_accuracy - self.best_head_accuracy


def evaluate_ensemble(head_scores, region_index, truth, false_detection_label):
    """Region accuracy of every head alone and of the fused vote."""
    head_acc = {hid: region_accuracy(single_head_labels(s, region_index), truth) for hid, s in head_scores.items()}
    fused = fuse_dataset(list(head_scores.values()), region_index, false_detection_label)
    return EnsembleEvaluation(head_acc, region_accuracy(fused.labels, truth), fused.labels)

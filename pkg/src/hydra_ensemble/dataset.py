"""Region manifests, metadata vectors and a synthetic desk-scale dataset.

A manifest is a JSON file::

    {
      "schema": 1,
      "split": "train" | "eval" | "test",
      "classes": ["class_0", ..., "false_detection"],
      "records": [
        {"region_id": "...", "image_id": "...", "path": "images/...png",
         "ms_path": "images/...rft",            # optional
         "box": [x, y, w, h], "label": 3,
         "metadata": {"gsd": 0.31, "sun_elevation": 54.2, ...}}
      ]
    }

Paths are relative to the manifest's directory.  The last class is always
false detection.  One record is one box in one image; a region seen in
several images has several records sharing a ``region_id``.

Metadata vectors use a fixed field order (:data:`METADATA_FIELDS`).  A field
that is missing or ``null`` is imputed with the training mean, so it maps to
0 after mean subtraction.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image

from ._io import atomic_write_bytes, atomic_write_text, encode_tensor, load_tensor
from .errors import ConfigError, DataError
from .metrics import write_label_csv
from .weighting import write_index_value_csv

SCHEMA_VERSION = 1
SPLITS = ("train", "eval", "test")
FALSE_DETECTION = "false_detection"
METADATA_FIELDS = ("gsd", "sun_elevation", "month", "day_of_week", "box_w", "box_h", "img_w", "img_h")


@dataclass(frozen=True)
class RegionRecord:
    region_id: str
    image_id: str
    path: str
    box: tuple
    label: int
    metadata: dict = field(default_factory=dict)
    ms_path: str = None

    def to_dict(self):
        d = asdict(self)
        d["box"] = list(self.box)
        if self.ms_path is None:
            del d["ms_path"]
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                region_id=str(d["region_id"]),
                image_id=str(d["image_id"]),
                path=str(d["path"]),
                box=tuple(int(v) for v in d["box"]),
                label=int(d["label"]),
                metadata=dict(d.get("metadata") or {}),
                ms_path=d.get("ms_path"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed manifest record {d!r}: {exc}") from None


@dataclass
class RegionSample:
    """One box in one image, loaded: the crop pixels plus its annotations."""

    region_id: str
    image_id: str
    pixels: np.ndarray
    box: tuple
    label: int
    metadata: object = None


@dataclass
class Manifest:
    classes: list
    split: str
    records: list
    root: Path = field(default=Path("."), compare=False, repr=False)

    @property
    def m(self):
        return len(self.classes)

    @property
    def false_detection_index(self):
        return len(self.classes) - 1

    def class_counts(self):
        counts = np.zeros(self.m, dtype=np.int64)
        for r in self.records:
            counts[r.label] += 1
        return counts

    def region_labels(self):
        return {r.region_id: r.label for r in self.records}

    def resolve(self, rel):
        return Path(self.root) / rel

    def to_dict(self):
        return {
            "schema": SCHEMA_VERSION,
            "split": self.split,
            "classes": list(self.classes),
            "records": [r.to_dict() for r in self.records],
        }


def validate_manifest(manifest, check_files=True):
    if manifest.split not in SPLITS:
        raise DataError(f"unknown split {manifest.split!r}")
    if not manifest.classes:
        raise DataError("manifest needs at least the false-detection class")
    fd = manifest.false_detection_index
    seen = set()
    region_label = {}
    for r in manifest.records:
        key = (r.region_id, r.image_id)
        if key in seen:
            raise DataError(f"duplicate record for region {r.region_id} in image {r.image_id}")
        seen.add(key)
        if not 0 <= r.label < manifest.m:
            raise DataError(f"region {r.region_id}: label {r.label} outside [0, {manifest.m})")
        if manifest.split == "train" and r.label == fd:
            raise DataError(f"region {r.region_id}: training manifests cannot contain false detections")
        prev = region_label.setdefault(r.region_id, r.label)
        if prev != r.label:
            raise DataError(f"region {r.region_id}: conflicting labels {prev} and {r.label} across images")
        x, y, w, h = r.box
        if w <= 0 or h <= 0 or x < 0 or y < 0:
            raise DataError(f"region {r.region_id} image {r.image_id}: invalid box {r.box}")
        iw, ih = r.metadata.get("img_w"), r.metadata.get("img_h")
        if iw is not None and ih is not None and (x + w > iw or y + h > ih):
            raise DataError(f"region {r.region_id} image {r.image_id}: box {r.box} exceeds {iw}x{ih} image")
        if check_files:
            for rel in (r.path, r.ms_path):
                if rel is not None and not manifest.resolve(rel).is_file():
                    raise DataError(f"region {r.region_id}: missing image file {rel}")
    return manifest


def load_manifest(path, check_files=True):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported manifest schema {doc.get('schema') if isinstance(doc, dict) else None!r}")
    records = [RegionRecord.from_dict(d) for d in doc.get("records", [])]
    manifest = Manifest(list(doc.get("classes", [])), doc.get("split"), records, path.parent)
    return validate_manifest(manifest, check_files)


def save_manifest(manifest, path):
    atomic_write_text(path, json.dumps(manifest.to_dict(), indent=1, sort_keys=True) + "\n")


def check_split_hygiene(*manifests):
    """Raise if any region id occurs in more than one split."""
    owner = {}
    for man in manifests:
        for rid in {r.region_id for r in man.records}:
            if rid in owner and owner[rid] != man.split:
                raise DataError(f"region {rid} appears in both {owner[rid]} and {man.split}")
            owner[rid] = man.split


def group_by_region(manifest):
    """``region_id -> sorted image ids``, in region-id order."""
    groups = {}
    for r in manifest.records:
        groups.setdefault(r.region_id, []).append(r.image_id)
    return {rid: sorted(groups[rid]) for rid in sorted(groups)}


def _metadata_row(meta):
    row = np.full(len(METADATA_FIELDS), np.nan)
    for i, name in enumerate(METADATA_FIELDS):
        v = meta.get(name)
        if v is not None:
            row[i] = float(v)
    return row


def metadata_means(manifest):
    """Per-field means over a training manifest, ignoring missing values."""
    if manifest.split != "train":
        raise ConfigError(f"metadata means must come from the train split, not {manifest.split!r}")
    if not manifest.records:
        return np.zeros(len(METADATA_FIELDS))
    rows = np.array([_metadata_row(r.metadata) for r in manifest.records])
    present = ~np.isnan(rows)
    sums = np.where(present, rows, 0.0).sum(axis=0)
    n = present.sum(axis=0)
    return np.where(n > 0, sums / np.maximum(n, 1), 0.0)


def metadata_vector(metadata, train_means):
    """Mean-subtracted metadata in :data:`METADATA_FIELDS` order; missing -> 0."""
    means = np.asarray(train_means, dtype=np.float64)
    if means.shape != (len(METADATA_FIELDS),):
        raise DataError(f"expected {len(METADATA_FIELDS)} metadata means, got shape {means.shape}")
    row = _metadata_row(metadata)
    row = np.where(np.isnan(row), means, row)
    return row - means


# ---------------------------------------------------------------------------
# image files
# ---------------------------------------------------------------------------


def encode_png(pixels):
    """Quantise a float ``[0, 1]`` RGB image to 8-bit PNG bytes."""
    arr = np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
    buf = BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def load_image(manifest, record, multispectral=False):
    """Pixels in ``[0, 1]`` as ``(H, W, C)`` float64.

    Multi-spectral rasters are raw tensor files and are returned with all
    their bands.
    """
    if multispectral:
        if record.ms_path is None:
            raise DataError(f"region {record.region_id} image {record.image_id} has no multi-spectral raster")
        return load_tensor(manifest.resolve(record.ms_path))
    with Image.open(manifest.resolve(record.path)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Parameters of a procedurally drawn region-classification dataset.

    Region counts are either a total (spread evenly over the classes) or an
    explicit per-class list.  ``multiplicity[k]`` is the fraction of regions
    seen in ``k + 1`` images.  ``false_detection_fraction`` adds that share
    of background-only regions to eval and test splits.
    """

    num_classes: int = 8
    train_regions: object = 200
    eval_regions: object = 100
    test_regions: object = 100
    image_size: int = 48
    box_range: tuple = (14, 22)
    multiplicity: tuple = (0.7, 0.15, 0.1, 0.05)
    false_detection_fraction: float = 0.0
    noise: float = 0.08
    nuisance: float = 1.0
    ms_scale: int = 2
    ms_bands: int = 4

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec fields {sorted(unknown)}")
        d = dict(d)
        for key in ("box_range", "multiplicity"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["box_range"] = list(self.box_range)
        d["multiplicity"] = list(self.multiplicity)
        return d

    def per_class(self, split):
        n = getattr(self, f"{split}_regions")
        if isinstance(n, (list, tuple)):
            counts = [int(c) for c in n]
            if len(counts) != self.num_classes:
                raise ConfigError(f"{split}_regions lists {len(counts)} classes, expected {self.num_classes}")
        else:
            n = int(n)
            counts = [n // self.num_classes + (1 if i < n % self.num_classes else 0) for i in range(self.num_classes)]
        if any(c < 0 for c in counts):
            raise ConfigError(f"{split}_regions must be nonnegative")
        return counts

    def validate(self):
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        lo, hi = self.box_range
        if not 2 <= lo <= hi:
            raise ConfigError(f"box_range must satisfy 2 <= lo <= hi, got {self.box_range}")
        if hi > self.image_size:
            raise ConfigError(f"boxes up to {hi} px do not fit {self.image_size} px images")
        mult = np.asarray(self.multiplicity, dtype=np.float64)
        if mult.size == 0 or np.any(mult < 0) or not np.isclose(mult.sum(), 1.0):
            raise ConfigError(f"multiplicity fractions must be nonnegative and sum to 1, got {self.multiplicity}")
        if not 0 <= self.false_detection_fraction < 1:
            raise ConfigError("false_detection_fraction must lie in [0, 1)")
        if self.noise < 0 or self.nuisance < 0:
            raise ConfigError("noise and nuisance must be nonnegative")
        if self.ms_scale < 1 or self.image_size % self.ms_scale:
            raise ConfigError(f"ms_scale {self.ms_scale} must divide image_size {self.image_size}")
        if self.ms_bands < 3:
            raise ConfigError("multi-spectral rasters need at least 3 bands")
        for split in SPLITS:
            self.per_class(split)
        return self


def multiplicity_allocation(n_regions, fractions):
    """Exact per-multiplicity region counts by largest remainder."""
    f = np.asarray(fractions, dtype=np.float64)
    raw = f * n_regions
    counts = np.floor(raw).astype(int)
    short = n_regions - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


_SHAPES = ("disk", "square", "diamond", "ring")


def _hue(h):
    """Saturated RGB colour for hue ``h`` in [0, 1)."""
    k = (np.array([5.0, 3.0, 1.0]) + 6.0 * (h % 1.0)) % 6.0
    return 0.95 - 0.7 * np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0)


def _class_prototypes(m, rng):
    """Class cues are flip invariant: shape, stripe frequency and base colour."""
    protos = []
    for c in range(m):
        protos.append(
            {
                "shape": _SHAPES[c % len(_SHAPES)],
                "freq": (1.0, 2.5)[(c // len(_SHAPES)) % 2],
                "color": _hue(c / m + rng.uniform(-0.02, 0.02)),
                # what typically surrounds the object; only visible in expanded crops
                "surround": _hue((3 * c) / m + 0.5 + rng.uniform(-0.02, 0.02)),
            }
        )
    return protos


def _shape_mask(shape, u, v):
    r2 = u * u + v * v
    if shape == "disk":
        return r2 < 0.85**2
    if shape == "square":
        return np.maximum(np.abs(u), np.abs(v)) < 0.75
    if shape == "diamond":
        return np.abs(u) + np.abs(v) < 0.95
    return (r2 > 0.4**2) & (r2 < 0.9**2)


def _background(size, rng):
    c0, c1 = rng.uniform(0.1, 0.7, size=3), rng.uniform(0.1, 0.7, size=3)
    g = np.linspace(0.0, 1.0, size)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(theta) * g[None, :] + np.sin(theta) * g[:, None] + 1.0) / 2.0
    coarse = rng.uniform(-0.08, 0.08, size=(size // 8 + 2, size // 8 + 2))
    idx = np.arange(size) // 8
    texture = coarse[idx][:, idx]
    return np.clip(c0 + (c1 - c0) * ramp[..., None] + texture[..., None], 0.0, 1.0)


def _add_surround(background, box, color, strength=0.4):
    """Blend ``color`` into the ring between the box and its 2x expansion."""
    size = background.shape[0]
    x, y, w, h = box
    yy, xx = np.mgrid[0:size, 0:size]
    du = np.abs(xx + 0.5 - (x + w / 2.0)) / (w / 2.0)
    dv = np.abs(yy + 0.5 - (y + h / 2.0)) / (h / 2.0)
    d = np.maximum(du, dv)
    ring = ((d > 1.0) & (d < 2.0))[..., None]
    return np.where(ring, background + (color - background) * strength, background)


def _render(spec, proto, location, shot_rng):
    """One image of a region: background, optional object, nuisances."""
    size = spec.image_size
    img = location["background"].copy()
    x, y, w, h = location["box"]
    jx, jy = (int(v) for v in shot_rng.integers(-1, 2, size=2))
    x = int(np.clip(x + jx, 0, size - w))
    y = int(np.clip(y + jy, 0, size - h))
    yy, xx = np.mgrid[y : y + h, x : x + w]
    u = (xx + 0.5 - (x + w / 2.0)) / (w / 2.0)
    v = (yy + 0.5 - (y + h / 2.0)) / (h / 2.0)
    nz = spec.nuisance
    rot = shot_rng.uniform(-0.25, 0.25) * nz
    ur = np.cos(rot) * u + np.sin(rot) * v
    vr = -np.sin(rot) * u + np.cos(rot) * v
    patch = img[y : y + h, x : x + w]
    if proto is not None:
        mask = _shape_mask(proto["shape"], ur, vr)
        angle = location["angle"]
        phase = 2 * np.pi * proto["freq"] * (np.cos(angle) * ur + np.sin(angle) * vr)
        stripes = 0.5 + 0.5 * np.sin(phase + location["phase"])
        color = 0.8 * proto["color"] + 0.2 * location["tint"]
        obj = color[None, None, :] * (0.45 + 0.55 * stripes[..., None])
        patch[mask] = obj[mask]
    else:
        blobs = shot_rng.uniform(0.1, 0.8, size=3)
        mask = (ur - location["phase"] / 10) ** 2 + vr**2 < 0.3
        patch[mask] = 0.5 * patch[mask] + 0.5 * blobs
    if shot_rng.random() < 0.5 * nz:
        ow = max(1, int(w * shot_rng.uniform(0.2, 0.45)))
        oh = max(1, int(h * shot_rng.uniform(0.2, 0.45)))
        ox = int(shot_rng.integers(0, w - ow + 1))
        oy = int(shot_rng.integers(0, h - oh + 1))
        patch[oy : oy + oh, ox : ox + ow] = location["background"][y + oy, x + ox]
    img[y : y + h, x : x + w] = patch
    img = img * (1.0 + shot_rng.uniform(-0.3, 0.3) * nz)
    img = img + shot_rng.normal(0.0, spec.noise, size=img.shape) if spec.noise > 0 else img
    return np.clip(img, 0.0, 1.0), (x, y, w, h)


def _multispectral(pan, scale, bands):
    h, w, _ = pan.shape
    low = pan.reshape(h // scale, scale, w // scale, scale, 3).mean(axis=(1, 3))
    extra = [np.clip(0.6 * low[..., 1] + 0.4 * low[..., 0] + 0.05 * k, 0, 1) for k in range(bands - 3)]
    return np.concatenate([low] + [e[..., None] for e in extra], axis=2)


def _fmow_style_weights(m, rng):
    """0.6 / 1.0 / 1.4 per class, false detection 0."""
    w = rng.choice([0.6, 1.0, 1.4], size=m)
    return np.append(w, 0.0)


def generate_synthetic(spec, seed, out_dir):
    """Draw train/eval/test manifests plus image files under ``out_dir``.

    Also writes ``weights.csv`` (challenge-style class weights),
    ``truth_<split>.csv`` files and ``synthetic_spec.json``.  The output is
    byte-identical for equal ``(spec, seed)``.
    """
    spec = spec.validate()
    out = Path(out_dir)
    world = np.random.default_rng([int(seed), 0])
    protos = _class_prototypes(spec.num_classes, world)
    classes = [f"class_{c}" for c in range(spec.num_classes)] + [FALSE_DETECTION]
    fd = spec.num_classes
    manifests = {}
    for s_idx, split in enumerate(SPLITS):
        split_rng = np.random.default_rng([int(seed), 1, s_idx])
        labels = [c for c, n in enumerate(spec.per_class(split)) for _ in range(n)]
        if split != "train" and spec.false_detection_fraction > 0:
            n_fd = int(round(spec.false_detection_fraction * len(labels) / (1 - spec.false_detection_fraction)))
            labels += [fd] * n_fd
        labels = [labels[i] for i in split_rng.permutation(len(labels))]
        alloc = multiplicity_allocation(len(labels), spec.multiplicity)
        shots = np.repeat(np.arange(1, len(alloc) + 1), alloc)
        shots = shots[split_rng.permutation(len(shots))]
        records = []
        for r_idx, (label, k) in enumerate(zip(labels, shots)):
            rid = f"{split}-{r_idx:05d}"
            loc_rng = np.random.default_rng([int(seed), 2, s_idx, r_idx])
            bw, bh = (int(v) for v in loc_rng.integers(spec.box_range[0], spec.box_range[1] + 1, size=2))
            location = {
                "background": _background(spec.image_size, loc_rng),
                "box": (
                    int(loc_rng.integers(0, spec.image_size - bw + 1)),
                    int(loc_rng.integers(0, spec.image_size - bh + 1)),
                    bw,
                    bh,
                ),
                "tint": loc_rng.uniform(0.2, 0.9, size=3),
                "phase": float(loc_rng.uniform(0, 2 * np.pi)),
                "angle": float(loc_rng.uniform(0, np.pi)),
                "gsd": float(loc_rng.uniform(0.3, 0.6)),
            }
            if label != fd:
                location["background"] = _add_surround(location["background"], location["box"], protos[label]["surround"])
            for t in range(int(k)):
                shot_rng = np.random.default_rng([int(seed), 3, s_idx, r_idx, t])
                proto = None if label == fd else protos[label]
                pan, box = _render(spec, proto, location, shot_rng)
                iid = f"{rid}-t{t}"
                rel = f"images/{split}/{iid}.png"
                atomic_write_bytes(out / rel, encode_png(pan))
                pan_q = np.asarray(Image.open(out / rel).convert("RGB"), dtype=np.float64) / 255.0
                ms_rel = f"images/{split}/{iid}.ms.rft"
                atomic_write_bytes(out / ms_rel, encode_tensor(_multispectral(pan_q, spec.ms_scale, spec.ms_bands)))
                meta = {
                    "gsd": round(location["gsd"] + float(shot_rng.uniform(-0.02, 0.02)), 4),
                    "sun_elevation": round(float(shot_rng.uniform(20.0, 80.0)), 2),
                    "month": int(shot_rng.integers(1, 13)),
                    "day_of_week": int(shot_rng.integers(0, 7)),
                    "box_w": box[2],
                    "box_h": box[3],
                    "img_w": spec.image_size,
                    "img_h": spec.image_size,
                }
                records.append(RegionRecord(rid, iid, rel, box, int(label), meta, ms_rel))
        man = Manifest(classes, split, records, out)
        save_manifest(man, out / f"{split}.json")
        write_label_csv(out / f"truth_{split}.csv", man.region_labels())
        manifests[split] = man
    write_index_value_csv(out / "weights.csv", _fmow_style_weights(spec.num_classes, world))
    atomic_write_text(out / "synthetic_spec.json", json.dumps({"seed": int(seed), **spec.to_dict()}, indent=1, sort_keys=True) + "\n")
    return manifests

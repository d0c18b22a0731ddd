"""Geometric, label-preserving augmentation and region crop extraction.

Images are ``(H, W, C)`` float arrays.  Only flips, zoom and shifts are
provided; no operation changes pixel intensities beyond interpolating
between existing values.  Bilinear interpolation is written as
``a + (b - a) * t`` so constant images stay bit-exactly constant.
"""
from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError

DEFAULT_ZOOM_RANGE = (0.8, 1.25)
DEFAULT_SHIFT_FRAC = 0.1
DEFAULT_EXPANSION = 2.0
DEFAULT_MIN_SIZE = 96


class CropStyle(enum.Enum):
    ORIG_PAN = "ORIG-PAN"
    EXT_PAN = "EXT-PAN"
    EXT_MULTI = "EXT-MULTI"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper().replace("_", "-")
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown crop style {name!r}") from None

    @property
    def multispectral(self):
        return self is CropStyle.EXT_MULTI


@dataclass(frozen=True)
class CropSpec:
    """Crop style plus its expansion factor and the multi-spectral size floor."""

    style: CropStyle = CropStyle.ORIG_PAN
    expansion_factor: float = DEFAULT_EXPANSION
    min_size: int = DEFAULT_MIN_SIZE

    def __post_init__(self):
        object.__setattr__(self, "style", CropStyle.parse(self.style))
        if self.expansion_factor < 1.0:
            raise ConfigError(f"expansion factor must be >= 1, got {self.expansion_factor}")
        if self.min_size < 1:
            raise ConfigError("min_size must be positive")


@dataclass(frozen=True)
class AugmentPolicy:
    flip_h: bool = False
    flip_v: bool = False
    zoom_range: tuple = (1.0, 1.0)
    shift_frac: float = 0.0

    def __post_init__(self):
        lo, hi = (float(z) for z in self.zoom_range)
        object.__setattr__(self, "zoom_range", (lo, hi))
        if not 0 < lo <= 1 <= hi:
            raise ConfigError(f"zoom range must satisfy 0 < lo <= 1 <= hi, got {self.zoom_range}")
        if not 0 <= self.shift_frac < 0.5:
            raise ConfigError(f"shift_frac must lie in [0, 0.5), got {self.shift_frac}")

    @classmethod
    def named(cls, name, zoom_range=DEFAULT_ZOOM_RANGE, shift_frac=DEFAULT_SHIFT_FRAC):
        """Policies named after the head-table augment column."""
        key = str(name).strip().lower()
        if key in ("none", "identity", ""):
            return cls()
        if key == "flip":
            return cls(flip_h=True, flip_v=True)
        if key == "zoom":
            return cls(zoom_range=zoom_range)
        if key == "shift":
            return cls(shift_frac=shift_frac)
        raise ConfigError(f"unknown augmentation {name!r}")


def _check_image(t):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3:
        raise DataError(f"expected an (H, W, C) image, got shape {t.shape}")
    return t


def flip(t, axis):
    """Mirror an image: ``horizontal`` reverses columns, ``vertical`` reverses rows."""
    t = _check_image(t)
    if axis == "horizontal":
        return t[:, ::-1, :].copy()
    if axis == "vertical":
        return t[::-1, :, :].copy()
    raise ConfigError(f"flip axis must be 'horizontal' or 'vertical', got {axis!r}")


def _sample_bilinear(t, ys, xs):
    """Sample ``t`` at row coords ``ys`` and column coords ``xs`` (separable grid)."""
    h, w, _ = t.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    a = t[y0][:, x0]
    b = t[y0][:, x1]
    c = t[y1][:, x0]
    d = t[y1][:, x1]
    top = a + (b - a) * fx
    bot = c + (d - c) * fx
    return top + (bot - top) * fy


def resize(t, out_hw):
    """Bilinear resize with pixel-centre alignment."""
    t = _check_image(t)
    h, w, _ = t.shape
    oh, ow = out_hw
    if (oh, ow) == (h, w):
        return t.copy()
    ys = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    return _sample_bilinear(t, ys, xs)


def zoom(t, factor):
    """Scale about the image centre by ``factor``, keeping the shape.

    ``factor > 1`` magnifies (centre crop); ``factor < 1`` shrinks, with the
    border filled by edge replication.
    """
    t = _check_image(t)
    if factor <= 0:
        raise ConfigError("zoom factor must be positive")
    if factor == 1.0:
        return t.copy()
    h, w, _ = t.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys = cy + (np.arange(h) - cy) / factor
    xs = cx + (np.arange(w) - cx) / factor
    return _sample_bilinear(t, ys, xs)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def random_zoom(t, zoom_range, seed):
    lo, hi = zoom_range
    if not 0 < lo <= hi:
        raise ConfigError(f"invalid zoom range {zoom_range}")
    factor = lo if lo == hi else _rng(seed).uniform(lo, hi)
    return zoom(t, factor)


def shift(t, dx, dy):
    """Translate by whole pixels (``dx`` right, ``dy`` down), replicating edges."""
    t = _check_image(t)
    h, w, _ = t.shape
    rows = np.clip(np.arange(h) - int(dy), 0, h - 1)
    cols = np.clip(np.arange(w) - int(dx), 0, w - 1)
    return t[rows][:, cols]


def _max_shift(frac, size):
    return int(np.floor(frac * size))


def random_shift(t, shift_frac, seed):
    if not 0 <= shift_frac < 0.5:
        raise ConfigError(f"shift_frac must lie in [0, 0.5), got {shift_frac}")
    t = _check_image(t)
    h, w, _ = t.shape
    mx, my = _max_shift(shift_frac, w), _max_shift(shift_frac, h)
    if mx == 0 and my == 0:
        return t.copy()
    rng = _rng(seed)
    dx = int(rng.integers(-mx, mx + 1))
    dy = int(rng.integers(-my, my + 1))
    return shift(t, dx, dy)


def crop_box(box, image_hw, spec, box_scale=1.0):
    """Pixel window ``(x0, y0, x1, y1)`` a crop spec extracts, clipped to the image.

    ``box`` is ``(x, y, w, h)`` in units of ``box_scale`` image pixels (a
    multi-spectral image at half resolution uses ``box_scale=2``).
    """
    x, y, w, h = (float(v) / box_scale for v in box)
    if w <= 0 or h <= 0:
        raise DataError(f"degenerate box {tuple(box)}")
    if spec.style is not CropStyle.ORIG_PAN:
        cx, cy = x + w / 2.0, y + h / 2.0
        w, h = w * spec.expansion_factor, h * spec.expansion_factor
        x, y = cx - w / 2.0, cy - h / 2.0
    H, W = image_hw
    x0, y0 = max(0, int(np.floor(x + 1e-9))), max(0, int(np.floor(y + 1e-9)))
    x1, y1 = min(W, int(np.ceil(x + w - 1e-9))), min(H, int(np.ceil(y + h - 1e-9)))
    if x1 <= x0 or y1 <= y0:
        raise DataError(f"box {tuple(box)} lies outside the {W}x{H} image")
    return x0, y0, x1, y1


def crop_region(image, box, spec, box_scale=1.0, enforce_min_size=True):
    """Extract a region crop, or ``None`` if the crop is rejected.

    Only EXT-MULTI crops are subject to the ``min_size`` floor on width and
    height.
    """
    image = _check_image(image)
    x0, y0, x1, y1 = crop_box(box, image.shape[:2], spec, box_scale)
    if (
        enforce_min_size
        and spec.style is CropStyle.EXT_MULTI
        and min(x1 - x0, y1 - y0) < spec.min_size
    ):
        return None
    return image[y0:y1, x0:x1].copy()


@dataclass(frozen=True)
class Transform:
    flip_h: bool = False
    flip_v: bool = False
    zoom: float = 1.0
    dx: int = 0
    dy: int = 0


def sample_key(sample):
    return zlib.crc32(f"{sample.region_id}/{sample.image_id}".encode())


def transform_rng(seed, epoch, sample):
    return np.random.default_rng([int(seed), int(epoch), sample_key(sample)])


def draw_transform(policy, rng, hw):
    h, w = hw
    flip_h = bool(rng.random() < 0.5) if policy.flip_h else False
    flip_v = bool(rng.random() < 0.5) if policy.flip_v else False
    lo, hi = policy.zoom_range
    factor = float(rng.uniform(lo, hi)) if hi > lo else lo
    mx, my = _max_shift(policy.shift_frac, w), _max_shift(policy.shift_frac, h)
    dx = int(rng.integers(-mx, mx + 1)) if mx else 0
    dy = int(rng.integers(-my, my + 1)) if my else 0
    return Transform(flip_h, flip_v, factor, dx, dy)


def apply_transform(t, tr):
    if tr.flip_h:
        t = flip(t, "horizontal")
    if tr.flip_v:
        t = flip(t, "vertical")
    if tr.zoom != 1.0:
        t = zoom(t, tr.zoom)
    if tr.dx or tr.dy:
        t = shift(t, tr.dx, tr.dy)
    return t


def augment_sample(sample, policy, epoch, seed, out_hw=None):
    """Apply a fresh random transform, then resize to ``out_hw``.

    The draw is a pure function of ``(seed, epoch, region_id, image_id)``.
    Label, ids and metadata are carried over untouched.
    """
    pixels = _check_image(sample.pixels)
    tr = draw_transform(policy, transform_rng(seed, epoch, sample), pixels.shape[:2])
    out = apply_transform(pixels, tr)
    if out_hw is not None:
        out = resize(out, out_hw)
    return replace(sample, pixels=out)

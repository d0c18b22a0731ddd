"""Crop styles and the on-line augmentation draws of a head.

A region's box is cut three ways: the exact box, a box expanded around its
centre, and the expanded box on the coarser multi-spectral raster.  Every
epoch a fresh, seeded transform (flip, zoom or shift) is drawn per sample.
"""
import numpy as np

from hydra_ensemble.augmentation import (
    AugmentPolicy,
    CropSpec,
    CropStyle,
    augment_sample,
    crop_box,
    crop_region,
    draw_transform,
    transform_rng,
)
from hydra_ensemble.dataset import RegionSample

image = np.random.default_rng(1).random((64, 64, 3))
box = (20, 24, 14, 10)  # x, y, w, h

for style in CropStyle:
    spec = CropSpec(style, expansion_factor=2.0, min_size=8)
    scale = 2.0 if style.multispectral else 1.0  # multi-spectral raster at half resolution
    print(f"{style.value:9s} corners (x0, y0, x1, y1) {crop_box(box, (64 / scale, 64 / scale), spec, box_scale=scale)}")

# the multi-spectral size filter, with the full-size threshold
spec96 = CropSpec(CropStyle.EXT_MULTI, expansion_factor=1.0, min_size=96)
big = np.zeros((256, 256, 4))
print("95-px crop kept:", crop_region(big, (0, 0, 95, 120), spec96) is not None)
print("96-px crop kept:", crop_region(big, (0, 0, 96, 96), spec96) is not None)

sample = RegionSample("r7", "r7-t0", crop_region(image, box, CropSpec()), box, 2)
policy = AugmentPolicy(flip_h=True, flip_v=True, zoom_range=(0.8, 1.25), shift_frac=0.1)
for epoch in range(3):
    t = draw_transform(policy, transform_rng(seed=5, epoch=epoch, sample=sample), sample.pixels.shape[:2])
    out = augment_sample(sample, policy, epoch, seed=5, out_hw=(16, 16))
    print(f"epoch {epoch}: {t} -> {out.pixels.shape}, label {out.label}")

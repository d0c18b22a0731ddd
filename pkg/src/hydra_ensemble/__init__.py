"""Body/head CNN ensembles with strict-majority fusion and weighted F-measure scoring.

The pieces, bottom up:

- :mod:`.micronet`: float64 numpy layers, backprop and Adam
- :mod:`.metrics`: confusion matrices and the class-weighted F-measure
- :mod:`.fusion`: per-head score aggregation and strict-majority voting
- :mod:`.augmentation`: region crops, flips, zoom and shifts
- :mod:`.weighting`: training class-weight schemes
- :mod:`.dataset`: manifests, metadata vectors and a synthetic generator
- :mod:`.trainer`: body training, head forking and fine-tuning
- :mod:`.config`: JSON run configs and presets
- :mod:`.experiment`: whole-config runs in memory
- :mod:`.cli`: the ``hydra`` command
"""
__version__ = "0.1.0"

from .errors import ConfigError, DataError, DivergenceError, HydraError, NumericError, ShapeError
from .micronet import LayerSpec, Network, adam_step, backward, build_network, forward
from .metrics import ClassWeights, ConfusionMatrix, build_confusion, score_submission, weighted_fmeasure
from .fusion import fuse_dataset, majority_vote
from .augmentation import AugmentPolicy, CropSpec, CropStyle, augment_sample, crop_region
from .weighting import WeightScheme, WeightTable, balanced_weights, training_weights
from .dataset import Manifest, RegionRecord, SyntheticSpec, generate_synthetic, load_manifest
from .architectures import ModelConfig, build_architecture
from .trainer import (
    HeadConfig,
    TrainPlan,
    cost_report,
    evaluate_ensemble,
    lr_at,
    spawn_heads,
    train_body,
    train_head,
    train_heads,
)
from .checkpoint import load_network, save_network
from .config import RunConfig, load_config
from .experiment import ensemble_gain_trial, evaluate_split, fit_ensemble

"""Desk-scale residual and densely connected CNNs.

Both end in the same classifier stack: flatten, metadata concatenation,
``fc_layers`` x (dense -> relu -> dropout), then a dense layer of class
scores.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

from .errors import ConfigError
from .micronet import build_network, conv2d, dense, dense_block, dropout, flatten, relu, residual_block

ARCHITECTURES = ("residual", "dense")


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 16
    width: int = 8
    blocks: int = 2
    growth: int = 8
    block_depth: int = 2
    fc_width: int = 64
    fc_layers: int = 3
    dropout: float = 0.5
    # multiplies the mean-subtracted metadata before it joins the classifier
    metadata_gain: float = 1.0

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model fields {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    @property
    def input_hw(self):
        return (self.input_size, self.input_size)


def _classifier(num_classes, cfg):
    layers = [flatten()]
    for _ in range(cfg.fc_layers):
        layers += [dense(cfg.fc_width), relu()]
        if cfg.dropout > 0:
            layers.append(dropout(cfg.dropout))
    layers.append(dense(num_classes))
    return layers


def residual_layers(num_classes, cfg=ModelConfig()):
    layers = [conv2d(cfg.width), relu()]
    for _ in range(cfg.blocks):
        layers += [residual_block(), conv2d(cfg.width, kernel=3, stride=2), relu()]
    return layers + _classifier(num_classes, cfg)


def dense_layers(num_classes, cfg=ModelConfig()):
    layers = [conv2d(cfg.width), relu()]
    channels = cfg.width
    for _ in range(cfg.blocks):
        channels += cfg.block_depth * cfg.growth
        # 1x1 strided transition halves both the grid and the channel count
        channels = max(cfg.width, channels // 2)
        layers += [dense_block(cfg.block_depth, cfg.growth), conv2d(channels, kernel=1, stride=2), relu()]
    return layers + _classifier(num_classes, cfg)


def architecture_layers(name, num_classes, cfg=ModelConfig()):
    if name == "residual":
        return residual_layers(num_classes, cfg)
    if name == "dense":
        return dense_layers(num_classes, cfg)
    raise ConfigError(f"unknown architecture {name!r}; expected one of {ARCHITECTURES}")


def build_architecture(name, num_classes, metadata_width=0, cfg=ModelConfig(), seed=0, channels=3):
    layers = architecture_layers(name, num_classes, cfg)
    return build_network((cfg.input_size, cfg.input_size, channels), layers, metadata_width, seed)

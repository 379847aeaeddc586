"""Model/training configuration and its flat ``key = value`` text form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    input_hw: tuple[int, int] = (96, 96)
    scale_strides: tuple[int, int, int] = (2, 4, 8)
    channels: tuple[int, int, int] = (16, 32, 32)
    fusion_channels: int = 32
    n_classes: int = 6
    n_angle_bins: int = 19
    anchors: tuple[tuple[int, int], ...] = ((12, 6), (24, 10), (40, 16))
    alpha: float = 5.0
    beta: float = 5.0
    # optimisation: paper batch/lr/decay; Adam by default for desk-scale runs
    lr: float = 0.001
    batch: int = 8
    lr_decay_every: int = 10000
    lr_decay_factor: float = 10.0
    optimizer: str = "adam"
    momentum: float = 0.9
    iterations: int = 500
    seed: int = 0
    augment: bool = True
    # architecture switches
    msfa: bool = True
    fusion_rounds: int = 1
    short_circuit: bool = True
    relation_pool: int = 7
    relation_channels: int = 32
    relation_hidden: int = 64
    # box edges move by up to this fraction during augmented relation training
    relation_jitter: float = 0.1
    # "sum" adds up every per-entry term; "mean" divides each term by its entry count
    loss_reduction: str = "sum"
    det_score_thresh: float = 0.3
    nms_iou: float = 0.3
    grasp_conf_thresh: float = 0.5
    det_pos_radius: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        h, w = self.input_hw
        if len(self.scale_strides) != 3 or len(self.channels) != 3:
            raise ConfigError("scale_strides and channels need exactly 3 entries")
        for s in self.scale_strides:
            if s <= 0 or h % s or w % s:
                raise ConfigError(f"input {h}x{w} not divisible by stride {s}")
        if list(self.scale_strides) != sorted(self.scale_strides):
            raise ConfigError("scale_strides must be ordered fine to coarse")
        if len(self.anchors) != 3:
            raise ConfigError("exactly 3 anchors are required")
        if self.n_angle_bins < 1 or self.n_classes < 1:
            raise ConfigError("n_angle_bins and n_classes must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.loss_reduction not in ("mean", "sum"):
            raise ConfigError(f"unknown loss_reduction {self.loss_reduction!r}")
        if not 0.0 <= self.relation_jitter < 0.5:
            raise ConfigError("relation_jitter must lie in [0, 0.5)")
        if self.fusion_rounds < 1:
            raise ConfigError("fusion_rounds must be >= 1")

    @property
    def grasp_stride(self) -> int:
        return self.scale_strides[1]

    @property
    def det_stride(self) -> int:
        return self.scale_strides[1]

    @property
    def relation_stride(self) -> int:
        return self.scale_strides[0] if self.msfa else self.scale_strides[1]

    @property
    def grasp_channels_per_anchor(self) -> int:
        return 4 + 1 + self.n_angle_bins + self.n_classes

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)


def paper_config(**kw) -> ModelConfig:
    """Paper-scale geometry: 600x600 input with 300/100/40 feature maps."""
    base = dict(input_hw=(600, 600), scale_strides=(2, 6, 15))
    base.update(kw)
    return ModelConfig(**base)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ",".join("x".join(str(x) for x in p) for p in v)
        return ",".join(str(x) for x in v)
    return str(v)


def dump_config(cfg: ModelConfig) -> str:
    return "".join(f"{f.name} = {_fmt(getattr(cfg, f.name))}\n" for f in dataclasses.fields(cfg))


def _parse_value(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, str):
            return raw
        if isinstance(default, tuple):
            if default and isinstance(default[0], tuple):
                return tuple(tuple(int(x) for x in p.split("x")) for p in raw.split(","))
            return tuple(int(x) for x in raw.split(","))
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    raise ConfigError(f"{name}: unsupported field type")


def parse_config(text: str, base: ModelConfig | None = None) -> ModelConfig:
    base = base or ModelConfig()
    names = {f.name for f in dataclasses.fields(base)}
    changes = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in names:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        changes[key] = _parse_value(key, raw, getattr(base, key))
    return dataclasses.replace(base, **changes)


def load_config(path) -> ModelConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))

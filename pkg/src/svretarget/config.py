"""Run configuration: nested dataclasses mirrored one-to-one by INI sections and keys."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from io import StringIO
from pathlib import Path

from .losses import LossWeights
from .shiftwarp import ShiftParams
from .svt import SVTConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    root: str = ""
    left_dir: str = "image_2"
    right_dir: str = "image_3"
    disparity_dir: str = "disp_occ_0"
    saliency_dir: str = ""
    boxes_dir: str = ""
    window: int = 4
    crop_height: int = 96
    crop_width: int = 160
    synthetic: bool = False
    synthetic_frames: int = 8
    synthetic_height: int = 24
    synthetic_width: int = 32
    train_fraction: float = 0.8


@dataclass
class RetargetConfig:
    target_ratio: float = 0.5
    alpha: float = 1.9
    beta: float = 1.0
    min_confidence: float = 0.25
    blur_sigma: float = 3.0
    dilate_kernel: int = 11

    def shift_params(self) -> ShiftParams:
        return ShiftParams(self.alpha, self.beta, self.target_ratio)


@dataclass
class ModelConfig:
    feature_channels: int = 16
    tau: float = 1.0


@dataclass
class OptimConfig:
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 200
    seed: int = 0
    lr_scaling: str = "fan_in"   # or "none": one step size for every tensor


@dataclass
class OutputConfig:
    weights: str = "weights.svrw"
    loss_curve: str = "loss_curve.csv"
    out_dir: str = "out"
    vgg_weights: str = ""


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    retarget: RetargetConfig = field(default_factory=RetargetConfig)
    svt: SVTConfig = field(default_factory=SVTConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.retarget.target_ratio <= 0:
            raise ConfigError("target_ratio must be positive")
        if self.optim.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.optim.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.optim.lr_scaling not in ("fan_in", "none"):
            raise ConfigError(f"unknown lr_scaling {self.optim.lr_scaling!r}")
        if self.data.window < 1:
            raise ConfigError("window must be >= 1")

    @classmethod
    def paper(cls) -> "RunConfig":
        """Optimizer settings reported for the full-scale model (4000 ADAM steps at 0.05)."""
        cfg = cls()
        cfg.optim.iterations = 4000
        cfg.optim.lr = 0.05
        return cfg

    @classmethod
    def toy(cls) -> "RunConfig":
        """Seconds-scale settings for the synthetic stereo clip."""
        cfg = cls()
        cfg.data.synthetic = True
        cfg.data.crop_height, cfg.data.crop_width = 24, 32
        cfg.retarget.target_ratio = 0.75
        cfg.svt = SVTConfig(t=2, h=8, w=8, d=24, layers=1, heads=3, mlp_dim=48, pos_grid=(3, 4))
        cfg.model.feature_channels = 8
        return cfg

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for f in dataclasses.fields(self):
            section = getattr(self, f.name)
            parser[f.name] = {k.name: _format(getattr(section, k.name)) for k in dataclasses.fields(section)}
        buf = StringIO()
        parser.write(buf)
        return buf.getvalue()


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _coerce(raw: str, current, name: str):
    try:
        if isinstance(current, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(v) for v in raw.split(","))
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def apply_overrides(cfg: RunConfig, values: dict[str, dict[str, str]]) -> RunConfig:
    for section_name, items in values.items():
        if not hasattr(cfg, section_name):
            raise ConfigError(f"unknown section [{section_name}]")
        section = getattr(cfg, section_name)
        known = {f.name for f in dataclasses.fields(section)}
        updates = {}
        for key, raw in items.items():
            if key not in known:
                raise ConfigError(f"unknown key {section_name}.{key}")
            updates[key] = _coerce(raw, getattr(section, key), f"{section_name}.{key}")
        try:
            setattr(cfg, section_name, dataclasses.replace(section, **updates))
        except ValueError as err:
            raise ConfigError(str(err)) from None
    cfg.validate()
    return cfg


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read_string(path.read_text())
    except configparser.Error as err:
        raise ConfigError(f"{path}: {err}") from None
    values = {s: dict(parser[s]) for s in parser.sections()}
    preset = values.get("run", {}).pop("preset", None) if "run" in values else None
    values.pop("run", None)
    if base is None:
        base = {"paper": RunConfig.paper, "toy": RunConfig.toy, None: RunConfig, "desk": RunConfig}.get(preset)
        if base is None:
            raise ConfigError(f"unknown preset {preset!r}")
        base = base()
    cfg = apply_overrides(base, values)
    # relative paths are taken relative to the config file
    for section, key in (("data", "root"), ("data", "saliency_dir"), ("data", "boxes_dir")):
        value = getattr(getattr(cfg, section), key)
        if value and not Path(value).is_absolute():
            setattr(getattr(cfg, section), key, str((path.parent / value).resolve()))
    return cfg

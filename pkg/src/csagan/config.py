"""Run configuration: flat dotted key-value text that round-trips
losslessly.  Every field has a default; unknown keys are rejected by name."""
from __future__ import annotations

from dataclasses import dataclass, field, fields

from .discriminator import DiscriminatorConfig
from .generator import GeneratorConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainSection:
    batch_size: int = 8
    stage1_epochs: int = 100
    stage2_epochs: int = 100
    stage3_epochs: int = 50
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    decay_at: float = 0.5
    decay_factor: float = 0.1


@dataclass
class LossSection:
    lambda_l1: float = 100.0
    mu_fm: float = 1.0


@dataclass
class GeneratorSection:
    base_channels: int = 32
    n_down: int = 4
    csam_enabled: bool = True
    channel_cap: int = 256


@dataclass
class DiscriminatorSection:
    n_d: int = 3
    shared_depth: int = 2
    depths: tuple = (3, 4, 5)
    kernel: int = 4
    stride: int = 2
    base_width: int = 32
    width_cap: int = 256


@dataclass
class RunConfig:
    seed: int = 0
    image_side: int = 64
    tau: float = 0.3
    l_min: int = 10
    split_ratio: float = 0.8
    precision: str = "f32"
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    discriminator: DiscriminatorSection = field(default_factory=DiscriminatorSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)

    def generator_config(self) -> GeneratorConfig:
        g = self.generator
        return GeneratorConfig(base_channels=g.base_channels, n_down=g.n_down,
                               image_side=self.image_side, csam_enabled=g.csam_enabled,
                               channel_cap=g.channel_cap)

    def discriminator_config(self) -> DiscriminatorConfig:
        d = self.discriminator
        return DiscriminatorConfig(n_d=d.n_d, shared_depth=d.shared_depth,
                                   depths=tuple(d.depths), kernel=d.kernel,
                                   stride=d.stride, image_side=self.image_side,
                                   base_width=d.base_width, width_cap=d.width_cap)


_SECTIONS = {"generator", "discriminator", "loss", "train"}


def _coerce(value: str, template):
    if isinstance(template, bool):
        v = value.strip().lower()
        if v in ("true", "1", "yes"):
            return True
        if v in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    if isinstance(template, int):
        return int(value)
    if isinstance(template, float):
        return float(value)
    if isinstance(template, tuple):
        return tuple(int(v) for v in value.split(",") if v.strip())
    return value.strip()


def _flat_items(cfg: RunConfig):
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            for sf in fields(v):
                yield f"{f.name}.{sf.name}", getattr(v, sf.name)
        else:
            yield f.name, v


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for key, v in _flat_items(cfg):
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{key} = {v!r}" if isinstance(v, str) and " " in v else f"{key} = {v}")
    return "\n".join(lines) + "\n"


def apply_overrides(cfg: RunConfig, items: dict[str, str]) -> RunConfig:
    for key, raw in items.items():
        parts = key.split(".")
        if len(parts) == 1:
            target, attr = cfg, parts[0]
        elif len(parts) == 2 and parts[0] in _SECTIONS:
            target, attr = getattr(cfg, parts[0]), parts[1]
        else:
            raise ConfigError(f"unknown config key: {key!r}")
        if not hasattr(target, attr) or attr in _SECTIONS:
            raise ConfigError(f"unknown config key: {key!r}")
        setattr(target, attr, _coerce(raw, getattr(target, attr)))
    return cfg


def parse_config(text: str) -> RunConfig:
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        items[key.strip()] = value.strip().strip("'\"")
    return apply_overrides(RunConfig(), items)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())

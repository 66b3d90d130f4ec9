"""INI run configuration: one section per stage plus a seed block.

Unknown sections or keys are rejected. Unset seeds are derived from
``[seeds] global`` so every randomized stage is reproducible on its own.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .dataio import SynthSpec
from .dsp import PipelineConfig
from .errors import ConfigError, EegError
from .nn import ArchConfig
from .seeding import SEED_NAMES, seed_block
from .train import TrainConfig

# seed fields live in [seeds], not in the stage sections
_PIPELINE_SEEDS = {"balance_seed": "balance", "augment_seed": "augment", "split_seed": "split"}
_TRAIN_SEEDS = {"init_seed": "init", "shuffle_seed": "shuffle", "dropout_seed": "dropout", "fold_seed": "folds"}


@dataclass
class EvalConfig:
    batch_size: int = 256


@dataclass
class RunConfig:
    global_seed: int = 0
    seed_overrides: dict = field(default_factory=dict)
    synth: SynthSpec = field(default_factory=SynthSpec)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def seeds(self) -> dict:
        return seed_block(self.global_seed, self.seed_overrides)

    def resolved(self) -> "RunConfig":
        """Copy with every stage seed filled in from the seed block."""
        s = self.seeds
        pipe = dataclasses.replace(self.pipeline, **{f: s[n] for f, n in _PIPELINE_SEEDS.items()})
        tr = dataclasses.replace(self.train, **{f: s[n] for f, n in _TRAIN_SEEDS.items()})
        return dataclasses.replace(self, seed_overrides=dict(s), pipeline=pipe, train=tr)

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, global_seed=int(seed))

    def validate(self):
        try:
            self.synth.validate()
            self.pipeline.validate()
            self.arch.validate()
            self.train.validate()
        except ConfigError:
            raise
        except (EegError, ValueError) as e:
            raise ConfigError(str(e)) from e
        if self.arch.dropout >= 1 or self.arch.dropout < 0:
            raise ConfigError("arch.dropout must be in [0, 1)")
        if self.eval.batch_size < 1:
            raise ConfigError("eval.batch_size must be positive")


def _parse_value(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else int
            return tuple(kind(v) for v in raw.split(",") if v.strip())
        if default is None:
            return None if raw.lower() in ("", "none") else int(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def _section_fields(obj, skip=()):
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj) if f.name not in skip}


_SECTIONS = {
    "synth": ("synth", ()),
    "pipeline": ("pipeline", tuple(_PIPELINE_SEEDS)),
    "arch": ("arch", ()),
    "train": ("train", tuple(_TRAIN_SEEDS)),
    "eval": ("eval", ()),
}


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    cfg = RunConfig()
    unknown = set(cp.sections()) - set(_SECTIONS) - {"seeds"}
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) {sorted(unknown)}")

    if cp.has_section("seeds"):
        for key, raw in cp.items("seeds"):
            if key == "global":
                cfg.global_seed = _parse_value(raw, 0, "seeds.global")
            elif key in SEED_NAMES:
                cfg.seed_overrides[key] = _parse_value(raw, 0, f"seeds.{key}")
            else:
                raise ConfigError(f"{source}: unknown key seeds.{key}")

    for section, (attr, skip) in _SECTIONS.items():
        if not cp.has_section(section):
            continue
        current = getattr(cfg, attr)
        defaults = _section_fields(current, skip)
        updates = {}
        for key, raw in cp.items(section):
            if key not in defaults:
                raise ConfigError(f"{source}: unknown key {section}.{key}")
            updates[key] = _parse_value(raw, defaults[key], f"{section}.{key}")
        setattr(cfg, attr, dataclasses.replace(current, **updates))
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config(text, str(path))


def dump_config(cfg: RunConfig) -> str:
    """Every setting written out explicitly, seeds included."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["seeds"] = {"global": str(cfg.global_seed), **{k: str(v) for k, v in cfg.seeds.items()}}
    for section, (attr, skip) in _SECTIONS.items():
        cp[section] = {k: _format_value(v) for k, v in _section_fields(getattr(cfg, attr), skip).items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()

"""Run configuration: defaults, then the YAML file, then ``--set`` overrides."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .augment import AugmentConfig, ConfigError


@dataclass
class DataConfig:
    source: str | None = None
    target: str | None = None
    mono_source: str | None = None  # language-model text, defaults to the bitext side
    mono_target: str | None = None
    alignments: str | None = None  # Pharaoh file; IBM Model 1 runs when unset
    records: str | None = None  # input for oversample, defaults to <out>/records.jsonl


@dataclass
class VocabConfig:
    size: int = 30000


@dataclass
class AugmentSection:
    rare_threshold: int = 100
    top_k: int = 1000
    max_per_word: int = 500
    lm_floor: float = 1e-4
    mode: str = "r1"
    min_distance: int = 5
    max_passes: int = 20


@dataclass
class LMConfig:
    order: int = 4


@dataclass
class AlignConfig:
    iterations: int = 5
    links: str = "direct"  # direct | inverse | union | intersection


@dataclass
class BPEConfig:
    merges: int = 30000
    joint: bool = False
    source_input: str | None = None  # default: data.source
    target_input: str | None = None  # default: data.target


@dataclass
class AnalyzeConfig:
    references: str | None = None
    hypotheses: dict[str, str] = field(default_factory=dict)  # system name -> file
    augmented: str | None = None  # augmented corpus side matching the references
    side: str | None = None  # bitext side in the references' language, default substitution side


@dataclass
class RunConfig:
    seed: int = 1
    lowercase: bool = False
    substitution_side: str = "source"
    output_dir: str = "out"
    data: DataConfig = field(default_factory=DataConfig)
    vocab: VocabConfig = field(default_factory=VocabConfig)
    augment: AugmentSection = field(default_factory=AugmentSection)
    lm: LMConfig = field(default_factory=LMConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    bpe: BPEConfig = field(default_factory=BPEConfig)
    analyze: AnalyzeConfig = field(default_factory=AnalyzeConfig)
    base_dir: str = field(default=".", repr=False, compare=False)

    def augment_config(self) -> AugmentConfig:
        a = self.augment
        return AugmentConfig(a.rare_threshold, a.top_k, a.max_per_word, a.lm_floor, a.mode,
                             a.min_distance, a.max_passes, self.seed)

    def path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value).expanduser()
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def fingerprint(self) -> str:
        """Hash of everything except the output location."""
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def validate(self) -> "RunConfig":
        self.augment_config().validate()
        if self.substitution_side not in ("source", "target"):
            raise ConfigError(f"substitution_side must be 'source' or 'target', got {self.substitution_side!r}")
        if not 1 <= self.lm.order <= 5:
            raise ConfigError(f"lm.order must be in [1, 5], got {self.lm.order}")
        if self.vocab.size < 1:
            raise ConfigError("vocab.size must be >= 1")
        if self.align.iterations < 1:
            raise ConfigError("align.iterations must be >= 1")
        if self.align.links not in ("direct", "inverse", "union", "intersection"):
            raise ConfigError(f"align.links: unknown value {self.align.links!r}")
        if self.bpe.merges < 0:
            raise ConfigError("bpe.merges must be >= 0")
        if self.analyze.side not in (None, "source", "target"):
            raise ConfigError(f"analyze.side must be 'source' or 'target', got {self.analyze.side!r}")
        for name, value in self.input_paths().items():
            if not self.path(value).exists():
                raise ConfigError(f"{name}: file not found: {value}")
        return self

    def input_paths(self) -> dict[str, str]:
        """Every configured input file, keyed by dotted config name."""
        out = {}
        for section in ("data", "bpe", "analyze"):
            for f in fields(getattr(self, section)):
                value = getattr(getattr(self, section), f.name)
                if isinstance(value, str) and f.name not in ("side",):
                    out[f"{section}.{f.name}"] = value
                elif isinstance(value, dict):
                    for k, v in sorted(value.items()):
                        out[f"{section}.{f.name}.{k}"] = v
        return out


def _coerce(name: str, value, current, annotation):
    if is_dataclass(current):
        if not isinstance(value, dict):
            raise ConfigError(f"{name}: expected a mapping")
        return _apply(current, value, name + ".")
    if isinstance(current, dict) or annotation.startswith("dict"):
        if not isinstance(value, dict):
            raise ConfigError(f"{name}: expected a mapping")
        return {str(k): str(v) for k, v in value.items()}
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, str):  # PyYAML reads 1e-4 as a string
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if value is None:
        return None
    if isinstance(value, (dict, list)):
        raise ConfigError(f"{name}: expected a scalar")
    return str(value)


def _apply(obj, values: dict, prefix: str = ""):
    known = {f.name: f for f in fields(obj) if f.name != "base_dir"}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {prefix + str(key)!r}")
        f = known[key]
        setattr(obj, key, _coerce(prefix + key, value, getattr(obj, key), str(f.type)))
    return obj


def _nest(dotted: str, value) -> dict:
    out = value
    for part in reversed(dotted.split(".")):
        out = {part: out}
    return out


def parse_config(path: str | os.PathLike | None = None, overrides: list[str] = ()) -> RunConfig:
    """Build a validated :class:`RunConfig`.

    ``overrides`` are ``key=value`` strings with dotted keys
    (``augment.top_k=10``); values are parsed as YAML scalars.
    Relative paths resolve against the config file's directory.
    """
    cfg = RunConfig()
    if path is not None:
        with open(path, encoding="utf-8") as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _apply(cfg, loaded)
        cfg.base_dir = str(Path(path).resolve().parent)
    else:
        cfg.base_dir = str(Path.cwd())
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        _apply(cfg, _nest(key.strip(), yaml.safe_load(raw) if raw else None))
    return cfg.validate()

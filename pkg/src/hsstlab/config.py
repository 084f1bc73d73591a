"""Run configuration: one file (JSON or TOML) with a section per module.

Example (TOML)::

    seed = 7
    output_dir = "runs/hsst"

    [data]
    root = "corpus"

    [train]
    mode = "hsst"
    steps = 2000

    [loss]
    head = "am_softmax"

Unknown sections and keys are rejected.  Any field can be overridden on the
command line with ``--set section.key=value`` (``--set seed=3`` for the
top-level fields); values are parsed as JSON when possible, else taken as
strings.  Every command writes the fully resolved configuration next to its
outputs so the run can be repeated from that file alone.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .data import DataConfig
from .errors import ConfigError
from .evaluation import DEFAULT_FARS
from .losses import LossConfig
from .model import Arch
from .training import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUT_ENV = "HSST_OUT"


@dataclass
class EvalConfig:
    checkpoint: str = ""
    folds: list | None = None  # None: the training fold only
    probe_masked: bool = True
    fars: list = field(default_factory=lambda: list(DEFAULT_FARS))
    gallery_per_identity: int = 1

    def __post_init__(self):
        if self.gallery_per_identity <= 0:
            raise ConfigError("eval.gallery_per_identity must be positive")
        for f in self.fars:
            if not 0.0 < float(f) <= 1.0:
                raise ConfigError(f"eval.fars entries must lie in (0, 1], got {f}")


@dataclass
class MaskSynthConfig:
    texture: str = ""
    posmap: str = ""  # empty: identity position map
    template: str = "surgical"  # procedural kind or path to a .uva template
    out: str = ""
    background: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    out_size: list | None = None  # [H, W]; default: texture size

    def __post_init__(self):
        if len(self.background) != 3:
            raise ConfigError("masksynth.background needs three components")
        if self.out_size is not None and len(self.out_size) != 2:
            raise ConfigError("masksynth.out_size must be [H, W]")


SECTIONS = {
    "data": DataConfig,
    "train": TrainConfig,
    "loss": LossConfig,
    "arch": Arch,
    "eval": EvalConfig,
    "masksynth": MaskSynthConfig,
}
TOP_LEVEL = {"seed": int, "output_dir": str}


@dataclass
class RunConfig:
    seed: int = 7
    output_dir: str = ""
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    arch: Arch = field(default_factory=Arch)
    eval: EvalConfig = field(default_factory=EvalConfig)
    masksynth: MaskSynthConfig = field(default_factory=MaskSynthConfig)

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "output_dir": self.output_dir}
        for name in SECTIONS:
            section = getattr(self, name)
            out[name] = section.to_dict() if name == "loss" else dataclasses.asdict(section)
        out["arch"]["channels"] = list(out["arch"]["channels"])
        return out

    def resolve_output(self, command: str) -> Path:
        """``output_dir`` if set, else ``$HSST_OUT/<command>`` (``runs/<command>``)."""
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get(OUT_ENV) or "runs") / command

    def write_resolved(self, directory, command: str) -> Path:
        """Write ``resolved_<command>.json`` into ``directory``."""
        path = Path(directory) / f"resolved_{command}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


# ------------------------------------------------------------------ parsing

def _coerce(where: str, value, default):
    """Light type check against the default value's type."""
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{where} must be a boolean, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        return list(value)
    return value


def _build_section(name: str, values: dict):
    cls = SECTIONS[name]
    if not isinstance(values, dict):
        raise ConfigError(f"section [{name}] must be a table of key = value pairs")
    defaults = cls()
    fields = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {name}.{key}")
        kwargs[key] = _coerce(f"{name}.{key}", value, getattr(defaults, key))
    try:
        section = cls(**kwargs)
    except TypeError as exc:  # defensive: malformed value types
        raise ConfigError(f"[{name}]: {exc}") from exc
    if isinstance(section, DataConfig):
        section.validate()
    return section


def from_dict(raw: dict) -> RunConfig:
    raw = dict(raw or {})
    kwargs = {}
    for key in list(raw):
        if key in TOP_LEVEL:
            kwargs[key] = _coerce(key, raw.pop(key), TOP_LEVEL[key]())
    for key in raw:
        if key not in SECTIONS:
            raise ConfigError(f"unknown config section or key {key!r}")
    for name in SECTIONS:
        kwargs[name] = _build_section(name, raw.get(name, {}))
    return RunConfig(**kwargs)


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text()
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(text)
        return json.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def parse_override(item: str):
    """``"train.lr=0.1"`` -> (["train", "lr"], 0.1)."""
    if "=" not in item:
        raise ConfigError(f"--set expects section.key=value, got {item!r}")
    key, text = item.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) > 2 or not all(parts):
        raise ConfigError(f"--set key must be 'key' or 'section.key', got {key!r}")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    return parts, value


def apply_overrides(raw: dict, overrides) -> dict:
    raw = json.loads(json.dumps(raw or {}))  # deep copy
    for item in overrides or ():
        parts, value = parse_override(item)
        if len(parts) == 1:
            raw[parts[0]] = value
        else:
            section = raw.setdefault(parts[0], {})
            if not isinstance(section, dict):
                raise ConfigError(f"{parts[0]} is not a section")
            section[parts[1]] = value
    return raw


def load_config(path=None, overrides=()) -> RunConfig:
    raw = read_config_file(path) if path else {}
    return from_dict(apply_overrides(raw, overrides))

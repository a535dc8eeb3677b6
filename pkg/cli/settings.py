"""Run configuration: dataclass defaults, then settings.json, then flags

The settings file is a JSON object with flat dotted keys, for example
``{"model.variant": "no_tab", "train.steps": 200, "log.level": "DEBUG"}``.
Unknown keys are rejected. A top-level ``seed`` seeds both training and
phantom generation unless ``train.seed`` or ``phantom.seed`` is given.
"""

import json
import logging
import os
from dataclasses import dataclass, field, fields, replace

from errors import ValidationError
from network.config import ModelConfig
from services.inference import InferenceSpec
from services.trainer import TrainConfig
from volumes.augment import PatchSpec
from volumes.phantom import PhantomSpec

logger = logging.getLogger(__name__)

DEFAULT_SETTINGS_FILE = "settings.json"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass(frozen=True)
class PathsConfig:
    data: str = "data"
    checkpoint: str = "runs/model.ckpt"
    output: str = "out"


@dataclass(frozen=True)
class RunConfig:
    """Every setting a command may need, validated as a whole"""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferenceSpec = field(default_factory=InferenceSpec)
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    paths: PathsConfig = field(default_factory=PathsConfig)
    log_level: str = "INFO"
    seed: int = 0

    def validate(self):
        self.model.validate()
        self.train.validate()
        self.infer.validate()
        self.phantom.validate()
        if self.log_level not in LOG_LEVELS:
            raise ValidationError(f"log.level must be one of {', '.join(LOG_LEVELS)}, got {self.log_level!r}")
        return self


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "infer": InferenceSpec,
    "phantom": PhantomSpec,
    "paths": PathsConfig,
}
_PATCH_KEYS = {"train.patch_depth": "depth", "train.patch_height": "height", "train.patch_width": "width"}


def default_values():
    """Ordered dotted key -> built-in default"""
    values = {}
    for section, cls in _SECTIONS.items():
        instance = cls()
        for f in fields(cls):
            if f.name in ("patch", "shapes"):
                continue
            values[f"{section}.{f.name}"] = getattr(instance, f.name)
    patch = PatchSpec()
    for key, attr in _PATCH_KEYS.items():
        values[key] = getattr(patch, attr)
    values["log.level"] = RunConfig.log_level
    values["seed"] = RunConfig.seed
    return values


_DEFAULTS = default_values()


def _coerce(key, value, default):
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered in ("1", "true", "yes", "on"):
                    return True
                if lowered in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            if not isinstance(value, (bool, int)):
                raise ValueError(value)
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if isinstance(default, tuple):
            items = value.split(",") if isinstance(value, str) else list(value)
            if len(items) != len(default):
                raise ValueError(value)
            return tuple(_coerce(key, item, d) for item, d in zip(items, default))
        return str(value)
    except (TypeError, ValueError):
        raise ValidationError(f"bad value {value!r} for {key} (expected {type(default).__name__})") from None


def check_keys(values, source):
    unknown = sorted(set(values) - set(_DEFAULTS))
    if unknown:
        raise ValidationError(f"unknown setting(s) in {source}: {', '.join(unknown)}")


class Settings:
    """Dotted-key settings backed by a JSON file"""

    def __init__(self, settings_file=DEFAULT_SETTINGS_FILE):
        """
        Initialize the settings

        Args:
            settings_file: Path of the JSON settings file; a missing file
                means no settings
        """
        self.settings_file = settings_file
        self.settings = self.load_settings()

    def load_settings(self):
        """Load settings from file"""
        if not self.settings_file or not os.path.exists(self.settings_file):
            return {}
        with open(self.settings_file, "r", encoding="utf-8") as f:
            try:
                values = json.load(f)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{self.settings_file}: not valid JSON ({e})") from e
        if not isinstance(values, dict):
            raise ValidationError(f"{self.settings_file}: settings must be a JSON object")
        check_keys(values, self.settings_file)
        logger.debug("Loaded %d setting(s) from %s", len(values), self.settings_file)
        return values


def build_run_config(values):
    """Turn dotted key -> value pairs (already merged) into a validated RunConfig"""
    check_keys(values, "settings")
    merged = dict(_DEFAULTS)
    for key, value in values.items():
        merged[key] = _coerce(key, value, _DEFAULTS[key])
    seed = merged["seed"]
    for key in ("train.seed", "phantom.seed"):
        if key not in values and "seed" in values:
            merged[key] = seed

    sections = {}
    for section, cls in _SECTIONS.items():
        prefix = f"{section}."
        kwargs = {k[len(prefix):]: v for k, v in merged.items() if k.startswith(prefix) and k not in _PATCH_KEYS}
        sections[section] = cls(**kwargs)
    patch = PatchSpec(**{attr: merged[key] for key, attr in _PATCH_KEYS.items()})
    sections["train"] = replace(sections["train"], patch=patch)
    return RunConfig(log_level=merged["log.level"].upper(), seed=seed, **sections).validate()


def load_run_config(settings_file=None, overrides=None):
    """
    Merge defaults, the settings file and flag overrides

    Args:
        settings_file: Explicit settings path; None uses ./settings.json when
            it exists
        overrides: Dotted key -> value from the command line; None values are
            ignored

    Raises:
        ValidationError: Unknown keys or unusable values
    """
    if settings_file is not None and not os.path.exists(settings_file):
        raise ValidationError(f"settings file {settings_file} does not exist")
    values = dict(Settings(settings_file or DEFAULT_SETTINGS_FILE).settings)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return build_run_config(values)


def add_setting(parser, flag, key, help, **kwargs):
    """
    Add a flag that overrides the dotted setting ``key``

    The flag's value lands in ``args`` under the dotted key and stays None
    unless given, so the file value survives when the flag is absent.
    """
    if key not in _DEFAULTS:
        raise KeyError(key)
    default = _DEFAULTS[key]
    shown = ",".join(str(v) for v in default) if isinstance(default, tuple) else default
    parser.add_argument(flag, dest=key, default=None, help=f"{help} (default: {shown})", **kwargs)


def overrides_from(args):
    """Dotted-key flag values given on the command line"""
    return {k: v for k, v in vars(args).items() if k in _DEFAULTS and v is not None}

"""
Run configuration for LilNetX.
Flat UTF-8 "key = value" files with typed parsing and unknown-key rejection;
.yaml/.yml files are accepted too and go through the same validation.
"""
import os
import hashlib
import logging
import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Any, Tuple, Optional, get_type_hints

import yaml

from sparsity.penalties import SparsityConfig
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

DATASETS = ("mnist", "cifar10-subset", "synthetic")
AUGMENT_MODES = ("auto", "on", "off")

# Keys that locate a run but do not change its result
_LOCATION_KEYS = ("output_dir", "run_name", "workers", "data_dir")


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "mnist"
    data_dir: str = ""
    architecture: str = "miniconv"
    width: int = 16
    epochs: int = 10
    batch_size: int = 128
    eval_batch_size: int = 500
    seed: int = 0
    lr_main: float = 0.01
    lr_entropy: float = 1e-4
    lambda_i: float = 1e-4
    lambda_u: float = 0.0
    lambda_s: float = 0.0
    unstructured_norm: str = "l2"
    group_norm: str = "l2"
    rho_rule: str = "slice"
    b_min: float = 2.0
    weight_decay: float = 0.0
    bn_momentum: float = 0.1
    density_filters: Tuple[int, ...] = (3, 3, 3)
    density_init_scale: float = 10.0
    density_warm_start: bool = True
    train_limit: int = 0
    subset_fraction: float = 0.1
    augment: str = "auto"
    output_dir: str = ""
    run_name: str = ""
    workers: int = 1
    checkpoint_every: int = 1

    def validate(self) -> "RunConfig":
        """
        Check value ranges. Returns self so calls can be chained.

        Raises:
            ConfigError: on the first invalid value
        """
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.augment not in AUGMENT_MODES:
            raise ConfigError(f"augment must be one of {AUGMENT_MODES}, got {self.augment!r}")
        for name in ("epochs", "batch_size", "eval_batch_size", "width", "workers", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.train_limit < 0:
            raise ConfigError(f"train_limit must be >= 0, got {self.train_limit}")
        for name in ("lr_main", "lr_entropy", "lambda_i", "weight_decay"):
            value = getattr(self, name)
            if not (value >= 0 and value != float("inf")):
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")
        if not 0.0 < self.subset_fraction <= 1.0:
            raise ConfigError(f"subset_fraction must be in (0, 1], got {self.subset_fraction}")
        if not 0.0 < self.bn_momentum <= 1.0:
            raise ConfigError(f"bn_momentum must be in (0, 1], got {self.bn_momentum}")
        if self.b_min <= 0.5:
            raise ConfigError(f"b_min must be > 0.5, got {self.b_min}")
        if not self.density_filters or min(self.density_filters) < 1:
            raise ConfigError(f"density_filters must be positive widths, got {self.density_filters}")
        # Sparsity knobs are checked by their own config type
        self.sparsity
        return self

    @property
    def sparsity(self) -> SparsityConfig:
        try:
            return SparsityConfig(
                lambda_u=self.lambda_u,
                lambda_s=self.lambda_s,
                unstructured_norm=self.unstructured_norm,
                group_norm=self.group_norm,
                rho_rule=self.rho_rule,
            ).validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    @property
    def use_augmentation(self) -> bool:
        if self.augment == "auto":
            return self.dataset == "cifar10-subset"
        return self.augment == "on"

    def resolved_output_dir(self) -> str:
        return self.output_dir or os.getenv("LILNETX_OUTPUT_DIR", "./runs")

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Return a copy with the given (already typed or string) values replaced"""
        hints = get_type_hints(RunConfig)
        typed = {}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in hints:
                raise ConfigError(f"unknown config key: {key}")
            typed[key] = _coerce(key, value, hints[key])
        return dataclasses.replace(self, **typed)

    def to_text(self) -> str:
        """Render as a key = value file that parse_config_text reads back"""
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def cell_hash(self) -> str:
        """Stable short hash over every key that affects the result of a run"""
        parts = []
        for f in dataclasses.fields(self):
            if f.name in _LOCATION_KEYS:
                continue
            parts.append(f"{f.name}={getattr(self, f.name)!r}")
        return hashlib.sha256("\n".join(parts).encode("utf-8")).hexdigest()[:16]


def _coerce(key: str, value: Any, target: Any) -> Any:
    """Convert a raw value to the declared field type"""
    try:
        if target is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if target is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(str(value).strip()) if isinstance(value, str) else int(value)
        if target is float:
            return float(value)
        if target is str:
            return str(value).strip()
        if getattr(target, "__origin__", None) is tuple:
            if isinstance(value, (list, tuple)):
                items = list(value)
            else:
                items = [v for v in str(value).split(",") if v.strip()]
            return tuple(int(str(v).strip()) for v in items)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value for {key}: {value!r} ({e})") from e
    raise ConfigError(f"unsupported type for {key}: {target}")


def config_from_mapping(values: Dict[str, Any], base: Optional[RunConfig] = None) -> RunConfig:
    """
    Build a RunConfig from a flat mapping of raw values.

    Raises:
        ConfigError: on unknown keys or values that fail typed parsing
    """
    hints = get_type_hints(RunConfig)
    unknown = sorted(set(values) - set(hints))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    base = base or RunConfig()
    return base.with_overrides(**values).validate()


def parse_config_text(text: str) -> RunConfig:
    """
    Parse a flat "key = value" document.

    Args:
        text: File contents; blank lines and '#' comments are ignored

    Returns:
        Validated RunConfig
    """
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        values[key] = value
    return config_from_mapping(values)


def load_config(path: Optional[str]) -> RunConfig:
    """
    Load a config file, or the defaults when path is None.

    Args:
        path: Path to a key=value file, or a .yaml/.yml mapping

    Returns:
        Validated RunConfig
    """
    if not path:
        return RunConfig().validate()
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if path.endswith((".yaml", ".yml")):
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = config_from_mapping(data)
    else:
        cfg = parse_config_text(text)
    logger.info(f"Loaded config from {path}")
    return cfg

"""Pipeline configuration: a UTF-8 ``key = value`` file plus overrides.

Schema (every key optional; defaults are the desk preset)::

    preset            desk | full          base values before the file applies
    height, width     image size m, n      both divisible by 64
    width_multiplier  generator channel scale (1.0 = full size)
    perception_width  perception-net channel scale
    perception_weights  optional checkpoint with real perception weights
    refine_filters    refinement conv width
    contour_points    K, points per contour for shape-context matching
    tps_lambda        TPS regularization in normalized coordinates
    lambda_warp       reward on mean alpha
    lambda_tv         total-variation weight on alpha
    level_weights     six comma-separated perceptual level weights, stage 1
    refine_level_weights  the same for stage 2 (only levels 3-5 are used)
    coarse_steps      training steps, stage 1
    refine_steps      training steps, stage 2
    batch_size
    seed
    pairing           matched | shuffled (evaluation product pairing)
    data_dir, work_dir  paths, relative to the current directory

Lines starting with ``#`` or ``;`` are comments.  A ``[section]`` header is
optional.  Log verbosity comes from the ``VITON_LOG_LEVEL`` environment
variable (DEBUG, INFO, WARNING, ERROR; default INFO).
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
import os
from dataclasses import dataclass
from pathlib import Path

from .coarse import DIVISOR
from .refine import LAMBDA_TV, LAMBDA_WARP, REFINE_FILTERS
from .warp import DEFAULT_LAMBDA, DEFAULT_POINTS

LOG_ENV = "VITON_LOG_LEVEL"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    height: int = 64
    width: int = 64
    width_multiplier: float = 0.125
    perception_width: float = 0.125
    perception_weights: str = ""
    refine_filters: int = REFINE_FILTERS
    contour_points: int = 48
    tps_lambda: float = DEFAULT_LAMBDA
    lambda_warp: float = LAMBDA_WARP
    lambda_tv: float = LAMBDA_TV
    # Levels 1-5 at full weight keep the desk-scale mask from ever crossing
    # 0.5, so stage 1 down-weights them.  Stage 2 keeps them at 1 so the
    # feature term outweighs the reward on mean alpha.
    level_weights: tuple = (1.0,) + (1.0 / 32,) * 5
    refine_level_weights: tuple = (1.0,) * 6
    coarse_steps: int = 500
    refine_steps: int = 300
    batch_size: int = 4
    seed: int = 0
    pairing: str = "matched"
    data_dir: str = "fixtures"
    work_dir: str = "work"

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ConfigError("image size must be positive")
        if self.height % DIVISOR or self.width % DIVISOR:
            raise ConfigError(
                f"image size {self.height}×{self.width} must be divisible by {DIVISOR}"
            )
        for key in ("coarse_steps", "refine_steps", "batch_size", "refine_filters"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        if self.contour_points < 4:
            raise ConfigError("contour_points must be at least 4")
        if self.width_multiplier <= 0 or self.perception_width <= 0:
            raise ConfigError("width multipliers must be positive")
        if min(self.tps_lambda, self.lambda_warp, self.lambda_tv) < 0:
            raise ConfigError("regularization weights must be nonnegative")
        for key in ("level_weights", "refine_level_weights"):
            w = getattr(self, key)
            if len(w) != 6:
                raise ConfigError(f"{key} needs six values")
            if min(w) < 0 or max(w) <= 0:
                raise ConfigError(f"{key} must be nonnegative with at least one positive")
        if self.pairing not in ("matched", "shuffled"):
            raise ConfigError(f"pairing must be matched or shuffled, got {self.pairing!r}")

    @property
    def size(self):
        return (self.height, self.width)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


DESK = PipelineConfig()
FULL = PipelineConfig(
    height=256, width=192, width_multiplier=1.0, perception_width=1.0,
    contour_points=DEFAULT_POINTS, level_weights=(1.0,) * 6, coarse_steps=15000,
    refine_steps=6000, batch_size=16,
)
PRESETS = {"desk": DESK, "full": FULL}

_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _convert(key, raw):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = getattr(DESK, key)
    raw = str(raw).strip()
    try:
        if isinstance(default, tuple):
            return tuple(float(x) for x in raw.replace(",", " ").split())
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_text(text):
    """Parse ``key = value`` text into a raw dict (no validation of values)."""
    if not any(line.lstrip().startswith("[") for line in text.splitlines()):
        text = "[viton]\n" + text
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    values = {}
    for section in parser.sections():
        values.update(parser[section])
    return values


def load_config(path=None, overrides=None):
    """Preset, then file values, then ``overrides`` (strings or typed values)."""
    raw = {}
    if path is not None:
        raw.update(parse_text(Path(path).read_text(encoding="utf-8")))
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    preset = str(raw.pop("preset", "desk")).strip()
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    values = {}
    for k, v in raw.items():
        values[k] = v if not isinstance(v, str) else _convert(k, v)
        if k not in _FIELDS:
            raise ConfigError(f"unknown config key {k!r}")
    return PRESETS[preset].replace(**values)


def parse_assignments(items):
    """``["k=v", ...]`` from repeated ``--set`` flags into a dict."""
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"expected KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def configure_logging(stream=None):
    level = os.environ.get(LOG_ENV, "INFO").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        level = "INFO"
    logging.basicConfig(level=level, stream=stream, format="%(levelname)s %(name)s: %(message)s",
                        force=True)
    return level

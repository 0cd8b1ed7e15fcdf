"""Line-based run configuration: ``section.key = value`` with ``#`` comments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import IoFailure, ParseError, UnknownKey

DEFAULTS: dict[str, object] = {
    "run.seed": 0,
    "corpus.n_ids": 50,
    "corpus.n_impr": 4,
    "corpus.side": 64,
    "corpus.seed": 0,
    "preprocess.variant": "fp",
    "preprocess.crop_mean_threshold": 0.75,
    "preprocess.ink_threshold": 0.5,
    "preprocess.min_quality": 40.0,
    "preprocess.output_side": 64,
    "diffusion.T": 1000,
    "diffusion.beta_start": 1e-4,
    "diffusion.beta_end": 0.02,
    "diffusion.branch_d": 400,
    "diffusion.branch_k": 4,
    "denoiser.init_features": 32,
    "denoiser.depth": 2,
    "denoiser.time_embed_dim": 128,
    "train.batch_size": 16,
    "train.steps": 500,
    "train.learning_rate": 1e-4,
    "train.checkpoint_every": 100,
    "sample.count": 64,
    "sample.batch": 64,
    "minutiae.border_margin": 10.0,
    "matcher.d_max": 75.0,
    "matcher.dist_tol": 6.0,
    "matcher.angle_tol_deg": 11.25,
    "matcher.rotation_spread_deg": 11.25,
    "matcher.position_tol": 8.0,
    "matcher.threshold": 40,
    "evaluate.max_inter_pairs": 2000,
}


def _coerce(key: str, raw: str, line: int):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            value = float(raw) if any(ch in raw for ch in ".eE") else int(raw)
            if isinstance(value, float):
                if not value.is_integer():
                    raise ValueError(raw)
                value = int(value)
            return value
        if isinstance(default, float):
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
            return value
    except ValueError:
        kind = type(default).__name__
        raise ParseError(f"{key} expects {kind}, got {raw!r}", line) from None
    return raw


@dataclass
class RunConfig:
    """Resolved settings; every key in :data:`DEFAULTS` has a value."""

    values: dict = field(default_factory=lambda: dict(DEFAULTS))
    explicit: set = field(default_factory=set)

    def __getitem__(self, key: str):
        if key not in self.values:
            raise UnknownKey(key)
        return self.values[key]

    def get(self, key: str):
        return self[key]

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise UnknownKey(key)
        self.values[key] = _coerce(key, str(value), None) if isinstance(value, str) else value
        self.explicit.add(key)

    @property
    def seed(self) -> int:
        return int(self.values["run.seed"])

    def section(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}


def parse_config_text(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'section.key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if "." not in key or not value or any(ch.isspace() for ch in key):
            raise ParseError(f"expected 'section.key = value', got {raw.strip()!r}", lineno)
        if key not in DEFAULTS:
            raise UnknownKey(f"line {lineno}: unknown key {key!r}")
        cfg.values[key] = _coerce(key, value, lineno)
        cfg.explicit.add(key)
    return cfg


def parse_config(path) -> RunConfig:
    """Read a config file; later duplicates of a key override earlier ones."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)

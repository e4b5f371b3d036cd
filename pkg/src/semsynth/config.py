"""Plain-text experiment configuration (INI syntax).

The whole file parses and validates before any command runs; unknown
sections or keys are rejected. Flag overrides are applied by the CLI
after parsing.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

# section -> {key: (type, default)}
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "seed": (int, 0),
        "output_root": (str, "runs"),
    },
    "schedule": {
        "kind": (str, "cosine"),
        "t": (int, 1000),
        "s": (float, 0.008),
        "beta_clip": (float, 0.999),
    },
    "fixture": {
        "contexts": ("strlist", ["ls-p16", "ls-p8"]),
        "canvas": (int, 256),
        "images_per_context": (int, 8),
        "defects_per_image": ("countlist", [("bridge-like", 2), ("gap-like", 2)]),
        "noise_sigma": (float, 0.04),
    },
    "patchset": {
        "patch_size": (int, 32),
        "containment_min": (float, 1.0),
        "background_per_image": (int, 4),
        "defect_patches_per_annotation": (int, 1),
        "size_ladder": ("intlist", [32]),
    },
    "model": {
        "image_size": (int, 32),
        "time_embedding_dim": (int, 128),
    },
    "train": {
        "learning_rate": (float, 1e-4),
        "batch_size": (int, 32),
        "max_steps": (int, 2000),
        "checkpoint_every": (int, 0),
        "class_balance": (bool, False),
    },
    "archetype": {
        "tile_size": (int, 32),
        "overlap": (int, 8),
        "target_height": (int, 104),
        "target_width": (int, 104),
    },
    "inject": {
        "requests": ("countlist", [("bridge-like", 2), ("gap-like", 1)]),
    },
    "eval": {
        "iou_min": (float, 0.5),
        "conf_min": (float, 0.25),
        "split": ("floatlist", [0.6, 0.2, 0.2]),
    },
}


def _convert(kind, raw: str):
    if kind is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is str:
        return raw
    if kind == "strlist":
        return raw.split()
    if kind == "intlist":
        return [int(v) for v in raw.split()]
    if kind == "floatlist":
        return [float(v) for v in raw.split()]
    if kind == "countlist":
        out = []
        for item in raw.split():
            name, _, count = item.partition(":")
            if not count:
                raise ValueError(f"expected name:count, got {item!r}")
            out.append((name, int(count)))
        return out
    raise ValueError(f"unknown schema kind {kind}")


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, object]] = field(default_factory=dict)

    def get(self, section: str, key: str):
        return self.values[section][key]

    def set(self, section: str, key: str, raw: str) -> None:
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key [{section}] {key}")
        kind, _ = SCHEMA[section][key]
        try:
            self.values[section][key] = _convert(kind, raw)
        except ValueError as e:
            raise ConfigError(f"bad value for [{section}] {key}: {e}") from None

    def describe(self) -> str:
        lines = []
        for section in sorted(self.values):
            lines.append(f"[{section}]")
            for key in sorted(self.values[section]):
                lines.append(f"{key} = {self.values[section][key]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def defaults(cls) -> "ExperimentConfig":
        return cls(
            values={
                section: {key: default for key, (_, default) in keys.items()}
                for section, keys in SCHEMA.items()
            }
        )

    @classmethod
    def load(cls, path: str | Path | None) -> "ExperimentConfig":
        cfg = cls.defaults()
        if path is None:
            return cfg
        parser = configparser.ConfigParser()
        try:
            read = parser.read(path)
        except configparser.Error as e:
            raise ConfigError(f"config parse failure: {e}") from None
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                cfg.set(section, key, raw)
        return cfg

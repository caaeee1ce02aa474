"""Flat key=value configuration over every tunable default.

A config file is plain text, one `key=value` per line, `#` comments allowed.
Unknown keys are rejected by name. Values parse according to the default's
type; comma-separated lists map onto tuple-valued defaults. Every CLI run
writes the fully resolved configuration to `run.meta` so it can be replayed.
"""
from __future__ import annotations

import math
from pathlib import Path

from .corruptions import SeverityTable
from .dataio import SHAPES, SyntheticConfig
from .imitator import ImitatorConfig
from .models import ClassifierConfig
from .simulator import FusionConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, object] = {
    "data.classes": SHAPES,
    "data.per_class": 100,
    "data.n_points": 256,
    "data.rotation_max_deg": 180.0,
    "data.scale_min": 0.8,
    "data.scale_max": 1.2,
    "imitator.n_sampled": 64,
    "imitator.n_anchors": 4,
    "imitator.feat_dim": 32,
    "imitator.k_neighbors": 8,
    "imitator.heads": 4,
    "imitator.tau": 1.0,
    "imitator.s_max": 2.0,
    "imitator.theta_max_deg": 30.0,
    "imitator.t_max": 0.25,
    "imitator.mask_budget": 0.5,
    "fusion.bandwidth": 0.5,
    "classifier.centers": (128, 32),
    "classifier.widths": (32, 64),
    "classifier.k_neighbors": 8,
    "classifier.head_hidden": 32,
    "train.epochs": 30,
    "train.batch_size": 16,
    "train.lam": 1.0,
    "train.beta_start": 1.0,
    "train.beta_end": 2.0,
    "train.lr_imitator": 1e-4,
    "train.lr_discriminator": 4e-4,
    "train.lr_classifier": 2e-3,
    "train.use_feedback": True,
    "train.use_adversarial": True,
    "train.use_deformation": True,
    "train.use_mask": True,
    "severity.scale_bound": tuple(1.0 + 0.2 * l for l in range(1, 6)),
    "severity.jitter_sigma": tuple(0.01 * l for l in range(1, 6)),
    "severity.rotate_bound_deg": tuple(10.0 * l for l in range(1, 6)),
    "severity.drop_global_fraction": tuple(0.125 + 0.125 * l for l in range(1, 6)),
    "severity.drop_local_fraction": tuple(0.075 * l for l in range(1, 6)),
    "severity.add_fraction": tuple(0.1 * l for l in range(1, 6)),
    "severity.cluster_count": tuple(min(8, l + 1) for l in range(1, 6)),
    "severity.add_local_sigma": 0.075,
    "severity.add_local_clip": 1.1,
    "eval.resample_seed": 0,
}


def _parse_value(key: str, raw: str, default: object) -> object:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [v.strip() for v in raw.split(",") if v.strip()]
            if all(isinstance(d, str) for d in default):
                return tuple(items)
            if all(isinstance(d, int) and not isinstance(d, bool) for d in default):
                return tuple(int(v) for v in items)
            return tuple(float(v) for v in items)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


class Config:
    """Resolved configuration: defaults overridden by file and/or set() calls."""

    def __init__(self, values: dict[str, object] | None = None):
        self.values = dict(DEFAULTS)
        for key, value in (values or {}).items():
            self.set(key, value)

    def set(self, key: str, value: object) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown configuration key {key!r}")
        self.values[key] = value

    def __getitem__(self, key: str) -> object:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown configuration key {key!r}")
        return self.values[key]

    @classmethod
    def from_file(cls, path) -> "Config":
        cfg = cls()
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = stripped.split("=", 1)
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown configuration key {key!r}")
            cfg.values[key] = _parse_value(key, raw, DEFAULTS[key])
        return cfg

    # -- typed views -----------------------------------------------------------

    def synthetic(self) -> SyntheticConfig:
        return SyntheticConfig(
            classes=tuple(self["data.classes"]),
            per_class=self["data.per_class"],
            n_points=self["data.n_points"],
            rotation_max=math.radians(self["data.rotation_max_deg"]),
            scale_range=(self["data.scale_min"], self["data.scale_max"]),
        )

    def imitator(self, n_points: int | None = None) -> ImitatorConfig:
        return ImitatorConfig(
            n_points=n_points if n_points is not None else self["data.n_points"],
            n_sampled=self["imitator.n_sampled"],
            n_anchors=self["imitator.n_anchors"],
            feat_dim=self["imitator.feat_dim"],
            k_neighbors=self["imitator.k_neighbors"],
            heads=self["imitator.heads"],
            tau=self["imitator.tau"],
            s_max=self["imitator.s_max"],
            theta_max=math.radians(self["imitator.theta_max_deg"]),
            t_max=self["imitator.t_max"],
            mask_budget=self["imitator.mask_budget"],
        )

    def fusion(self) -> FusionConfig:
        return FusionConfig(bandwidth=self["fusion.bandwidth"])

    def classifier(self, n_points: int | None = None, n_classes: int | None = None
                   ) -> ClassifierConfig:
        return ClassifierConfig(
            n_points=n_points if n_points is not None else self["data.n_points"],
            centers=tuple(self["classifier.centers"]),
            widths=tuple(self["classifier.widths"]),
            k_neighbors=self["classifier.k_neighbors"],
            n_classes=n_classes if n_classes is not None else len(self["data.classes"]),
            head_hidden=self["classifier.head_hidden"],
        )

    def train(self, seed: int, epochs: int | None = None,
              batch_size: int | None = None,
              ablate: tuple[str, ...] = ()) -> TrainConfig:
        flags = {
            "feedback": self["train.use_feedback"],
            "adv": self["train.use_adversarial"],
            "deform": self["train.use_deformation"],
            "mask": self["train.use_mask"],
        }
        for name in ablate:
            if name not in flags:
                raise ConfigError(f"unknown ablation {name!r}; expected one of {sorted(flags)}")
            flags[name] = False
        return TrainConfig(
            epochs=epochs if epochs is not None else self["train.epochs"],
            batch_size=batch_size if batch_size is not None else self["train.batch_size"],
            seed=seed,
            lam=self["train.lam"],
            beta_start=self["train.beta_start"],
            beta_end=self["train.beta_end"],
            lr_imitator=self["train.lr_imitator"],
            lr_discriminator=self["train.lr_discriminator"],
            lr_classifier=self["train.lr_classifier"],
            use_feedback=flags["feedback"],
            use_adversarial=flags["adv"],
            use_deformation=flags["deform"],
            use_mask=flags["mask"],
        )

    def severity_table(self) -> SeverityTable:
        return SeverityTable(
            scale_bound=tuple(self["severity.scale_bound"]),
            jitter_sigma=tuple(self["severity.jitter_sigma"]),
            rotate_bound_deg=tuple(self["severity.rotate_bound_deg"]),
            drop_global_fraction=tuple(self["severity.drop_global_fraction"]),
            drop_local_fraction=tuple(self["severity.drop_local_fraction"]),
            add_fraction=tuple(self["severity.add_fraction"]),
            cluster_count=tuple(int(c) for c in self["severity.cluster_count"]),
            add_local_sigma=self["severity.add_local_sigma"],
            add_local_clip=self["severity.add_local_clip"],
        )

    def write_meta(self, path, extra: dict[str, object] | None = None) -> None:
        lines = []
        merged = dict(self.values)
        for key, value in (extra or {}).items():
            merged[f"run.{key}"] = value
        for key in sorted(merged):
            value = merged[key]
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key}={value}")
        Path(path).write_text("\n".join(lines) + "\n")

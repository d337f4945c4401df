"""Flat plain-text run configuration: `section.key = value` lines.

No external parser; '#' starts a comment. Unknown keys are rejected and all
values are type-checked up front, so a resolved snapshot reproduces a run
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_tuple(s: str) -> tuple:
    return tuple(int(v) for v in s.split(","))


# key → (parser, default)
SCHEMA: dict[str, tuple] = {
    "model.arch": (str, "v1"),                    # v1 | v2 | resnet
    "model.mode": (str, "dynamic"),               # manual | dynamic | static | off
    "model.kind": (str, "static_dynamic"),        # resnet expansion kind
    "model.groups": (int, 3),
    "model.widths": (_int_tuple, (24, 48, 96)),
    "model.repeats": (_int_tuple, (2, 2, 2)),
    "model.classes": (int, 10),
    "model.stem": (int, 12),
    "model.final_channels": (int, 128),
    "model.width_scale": (float, 1.0),
    "model.in_channels": (int, 3),
    "model.full_channel": (_bool, False),
    "model.binarize": (_bool, True),
    "model.published_variant": (str, ""),             # g3 | g8 | 1x | 1.5x (published aux dims)
    "trainer.lr0": (float, 0.1),
    "trainer.momentum": (float, 0.9),
    "trainer.weight_decay": (float, 5e-4),
    "trainer.clip_norm": (float, 1.0),
    "trainer.lambda": (float, 0.5),
    "trainer.warmup_epochs": (int, 5),
    "trainer.epochs": (int, 30),
    "trainer.batch_size": (int, 128),
    "trainer.schedule": (str, "linear"),
    "trainer.lr_warmup_epochs": (int, 0),
    "trainer.no_orth_reg": (_bool, False),
    "trainer.seed": (int, 0),
    "data.format": (str, "cifar10"),
    "data.root": (str, ""),
    "data.augment": (_bool, True),
    "data.limit_train": (int, 0),
    "data.limit_test": (int, 0),
}

_VALID = {
    "model.arch": ("v1", "v2", "resnet"),
    "model.mode": ("manual", "dynamic", "static", "off"),
    "model.kind": ("conv", "duplicate", "static", "dynamic", "static_dynamic"),
    "trainer.schedule": ("linear", "step"),
    "data.format": ("cifar10", "mnist"),
}


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def snapshot(self) -> str:
        lines = []
        for key in sorted(self.values):
            val = self.values[key]
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            elif isinstance(val, bool):
                val = "true" if val else "false"
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse config text plus overrides; every key checked against the schema."""
    values = {k: d for k, (_, d) in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'section.key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in SCHEMA:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: bad value for {key}: {exc}")
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown override {key!r}")
        values[key] = SCHEMA[key][0](val) if isinstance(val, str) else val
    for key, allowed in _VALID.items():
        if values[key] not in allowed:
            raise ConfigurationError(f"{key} must be one of {allowed}, "
                                     f"got {values[key]!r}")
    return RunConfig(values)


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    text = ""
    if path:
        with open(path) as fh:
            text = fh.read()
    return parse_config(text, overrides)


def build_model_from_config(cfg: RunConfig, rng: np.random.Generator):
    from .models import (ModelConfig, build_resnet_bottleneck_variant,
                         build_shufflenet, published_shufflenet)

    arch = cfg["model.arch"]
    if arch == "resnet":
        return build_resnet_bottleneck_variant(
            cfg["model.kind"], rng=rng, classes=cfg["model.classes"],
            binarize=cfg["model.binarize"], in_channels=cfg["model.in_channels"])
    variant = cfg["model.published_variant"]
    if variant:
        return published_shufflenet(arch, variant, cfg["model.mode"], rng=rng,
                                classes=cfg["model.classes"],
                                full_channel=cfg["model.full_channel"])
    mc = ModelConfig(widths=cfg["model.widths"], repeats=cfg["model.repeats"],
                     classes=cfg["model.classes"], groups=cfg["model.groups"],
                     stem_channels=cfg["model.stem"],
                     final_channels=cfg["model.final_channels"],
                     width_scale=cfg["model.width_scale"],
                     in_channels=cfg["model.in_channels"])
    return build_shufflenet(1 if arch == "v1" else 2, mc, cfg["model.mode"],
                            rng=rng, binarize=cfg["model.binarize"],
                            full_channel=cfg["model.full_channel"])


def train_config_from(cfg: RunConfig):
    from .training import TrainConfig

    return TrainConfig(
        lr0=cfg["trainer.lr0"], momentum=cfg["trainer.momentum"],
        weight_decay=cfg["trainer.weight_decay"], clip_norm=cfg["trainer.clip_norm"],
        lam=cfg["trainer.lambda"], warmup_epochs=cfg["trainer.warmup_epochs"],
        epochs=cfg["trainer.epochs"], batch_size=cfg["trainer.batch_size"],
        schedule=cfg["trainer.schedule"],
        lr_warmup_epochs=cfg["trainer.lr_warmup_epochs"],
        no_orth_reg=cfg["trainer.no_orth_reg"], seed=cfg["trainer.seed"])

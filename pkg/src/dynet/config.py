"""One YAML run-config schema shared by every subcommand.

Top level keys: ``seed``, ``model`` and one section per command
(``pretrain``, ``finetune``, ``eval``, ``curate``). Relative paths resolve
against ``$DYNET_DATA_ROOT`` when set, else against the config file's directory.
"""

import os
from pathlib import Path

import yaml

from dynet.arch import ArchConfig, VariantConfig, resolve_variant
from dynet.blocks import ConfigurationError
from dynet.curation import QualityThresholds
from dynet.degradations import CorruptionRecipe

DATA_ROOT_ENV = "DYNET_DATA_ROOT"

SECTIONS = {"seed", "model", "pretrain", "finetune", "eval", "curate"}
MODEL_KEYS = set(ArchConfig.__dataclass_fields__) | {"reuse_freqs", "variant"}
PRETRAIN_KEYS = {
    "patches", "iterations", "batch_size", "crop_size", "lr", "variant_probability",
    "checkpoint_every", "out_dir", "log", "resume", "recipe", "grad_clip",
}
FINETUNE_KEYS = {
    "mode", "manifest", "tasks", "epochs", "batch_size", "crop_size", "lr", "variant",
    "variant_probability", "init", "out_dir", "log", "checkpoint_every", "grad_clip",
}
EVAL_KEYS = {"manifest", "gwa_tasks", "out", "checkpoint", "variant"}
CURATE_KEYS = {
    "thresholds", "quality_model", "pristine", "patch_size", "flat_cell", "flat_tau",
}


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


def _check_keys(section, d, allowed):
    if not isinstance(d, dict):
        raise ConfigError(section, f"expected a mapping, got {type(d).__name__}")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{section}.{sorted(unknown)[0]}", "unknown key")


class RunConfig:
    def __init__(self, data, base_dir="."):
        if data is None:
            data = {}
        _check_keys("<root>", data, SECTIONS)
        self.data = data
        self.base_dir = Path(os.environ.get(DATA_ROOT_ENV) or base_dir)
        self.seed = int(data.get("seed", 0))
        self.model = data.get("model") or {}
        _check_keys("model", self.model, MODEL_KEYS)
        for name, keys in (("pretrain", PRETRAIN_KEYS), ("finetune", FINETUNE_KEYS),
                           ("eval", EVAL_KEYS), ("curate", CURATE_KEYS)):
            _check_keys(name, self.section(name), keys)
        self.arch()  # validate early
        if "reuse_freqs" in self.model:
            self.variant("custom")

    @classmethod
    def load(cls, path):
        path = Path(path)
        with open(path) as fh:
            data = yaml.safe_load(fh)
        return cls(data, path.parent)

    def section(self, name):
        return self.data.get(name) or {}

    def path(self, value):
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def arch(self):
        kwargs = {k: v for k, v in self.model.items() if k not in ("reuse_freqs", "variant")}
        try:
            return ArchConfig(**kwargs)
        except ConfigurationError as exc:
            key = "model.presets" if "reuse_freqs" in str(exc) else "model"
            raise ConfigError(key, str(exc)) from None
        except TypeError as exc:
            raise ConfigError("model", str(exc)) from None

    def variant(self, name=None):
        """Resolve ``L`` / ``S`` / any preset, or ``custom`` from ``model.reuse_freqs``."""
        name = name or self.model.get("variant", "L")
        arch = self.arch()
        if name == "custom":
            if "reuse_freqs" not in self.model:
                raise ConfigError("model.reuse_freqs", "required for --variant custom")
            try:
                return VariantConfig("custom", self.model["reuse_freqs"], arch.base_channels)
            except ConfigurationError as exc:
                raise ConfigError("model.reuse_freqs", str(exc)) from None
        try:
            return resolve_variant(arch, name)
        except ConfigurationError as exc:
            raise ConfigError("model.variant", str(exc)) from None

    def recipe(self):
        d = dict(self.section("pretrain").get("recipe") or {})
        d.setdefault("crop_size", self.section("pretrain").get("crop_size", 128))
        try:
            return CorruptionRecipe.from_dict(d)
        except (ValueError, TypeError) as exc:
            raise ConfigError("pretrain.recipe", str(exc)) from None

    def thresholds(self):
        try:
            return QualityThresholds.from_dict(self.section("curate").get("thresholds") or {})
        except (ValueError, TypeError) as exc:
            raise ConfigError("curate.thresholds", str(exc)) from None

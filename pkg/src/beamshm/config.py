"""Run configuration: defaults < JSON config file < command-line flags."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .errors import ArtifactIOError, ConfigError

DEFAULTS = {
    "preset": "desk",
    "seed": 0,
    "out_dir": "beamshm-out",
    "dataset": None,  # defaults to <out_dir>/datasets/<preset>
    "model": "cnn",
    "element": None,  # cnn only; None trains all four
    "sample_id": 0,
    "top_k": 10,
    "generate": {
        "normalization": "maxabs",
        "loss_factor": 0.01,
        "youngs_modulus": 2.1e11,
        "density": 7850.0,
        "n_levels": None,
        "n_points": None,
    },
    "preprocess": {"input_transform": "log", "target_scaling": "zscore"},
    "split": {"test_fraction": 0.30, "validation_fraction": 0.30},
    "train": {"lr": 1e-3, "batch_size": 8, "max_epochs": 200, "patience": 10},
    "pbp": {"epochs": 10, "hidden": 64, "test_fraction": 0.5, "refine_prior": True,
            "max_cavity_ratio": 10.0},
}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if key not in base:
            raise ConfigError(f"unknown config field {where}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config field {where}{key} must be an object")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ArtifactIOError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        cfg = _merge(cfg, data)
    if overrides:
        cfg = _merge(cfg, {k: v for k, v in overrides.items() if v is not None})
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    if cfg["model"] not in ("pbp", "lstm", "cnn"):
        raise ConfigError(f"model: expected pbp, lstm or cnn, got {cfg['model']!r}")
    if cfg["element"] is not None and cfg["element"] not in ("E1", "E2", "E3", "E4"):
        raise ConfigError(f"element: expected E1..E4, got {cfg['element']!r}")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {cfg['seed']!r}")
    if not isinstance(cfg["top_k"], int) or cfg["top_k"] < 1:
        raise ConfigError(f"top_k: expected a positive integer, got {cfg['top_k']!r}")


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(*parts) -> str:
    return hashlib.sha256(canonical(list(parts)).encode()).hexdigest()[:12]


def dataset_dir(cfg: dict) -> Path:
    if cfg["dataset"]:
        return Path(cfg["dataset"])
    return Path(cfg["out_dir"]) / "datasets" / cfg["preset"]


def training_section(cfg: dict, model: str | None = None) -> dict:
    """The fields that determine a trained model."""
    model = model or cfg["model"]
    sec = {"model": model, "seed": cfg["seed"], "preprocess": cfg["preprocess"]}
    if model == "pbp":
        sec["pbp"] = cfg["pbp"]
    else:
        sec["split"] = cfg["split"]
        sec["train"] = cfg["train"]
    if model == "cnn":
        sec["element"] = cfg["element"]
    return sec

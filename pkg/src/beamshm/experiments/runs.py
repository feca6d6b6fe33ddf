"""Training and evaluation pipelines for the three model kinds, plus report files."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import pbp
from ..errors import ArtifactIOError, ConfigError
from .architectures import ELEMENTS, build_cnn, build_lstm
from .metrics import RSquared, r_squared
from .preprocess import FeatureScaler, TargetScaler
from .regressors import NetRegressor, PbpRegressor
from .splits import SplitIndices, SplitSpec, split_indices
from .training import TrainConfig, train_model

log = logging.getLogger(__name__)

MODEL_KINDS = ("pbp", "lstm", "cnn")


@dataclass(frozen=True)
class PbpConfig:
    epochs: int = 10
    hidden: int = 64
    refine_prior: bool = True
    max_cavity_ratio: float = 10.0


@dataclass
class TrainedModel:
    kind: str
    regressor: object
    split: SplitIndices
    histories: dict = field(default_factory=dict)  # name -> TrainingReport or logZ trace
    elements: tuple = ELEMENTS


def _fit_scalers(dataset, train_idx, input_transform, target_scaling):
    fs = FeatureScaler.fit(dataset.features[train_idx], input_transform)
    ts = TargetScaler.fit(dataset.targets[train_idx], target_scaling)
    return fs, ts


def train_net(kind: str, dataset, split: SplitSpec = SplitSpec(),
              train_cfg: TrainConfig = TrainConfig(), elements=ELEMENTS,
              input_transform: str = "log", target_scaling: str = "zscore") -> TrainedModel:
    """CNN: one network per requested element. LSTM: one network for all four."""
    if kind not in ("cnn", "lstm"):
        raise ConfigError(f"train_net handles cnn and lstm, not {kind!r}")
    idx = split_indices(len(dataset), split)
    fs, ts = _fit_scalers(dataset, idx.train, input_transform, target_scaling)
    Z = fs(dataset.features)
    T = ts(dataset.targets)
    models, histories = {}, {}
    if kind == "lstm":
        model = build_lstm(dataset.feature_length).build(seed=train_cfg.seed)
        histories["all"] = train_model(model, Z[idx.train], T[idx.train],
                                       Z[idx.validation], T[idx.validation], train_cfg)
        models["all"] = model
        elements = ELEMENTS
    else:
        grid = dataset.manifest["reshape"]["cnn"]
        for e in elements:
            j = ELEMENTS.index(e)
            model = build_cnn(e, grid, dataset.feature_length).build(seed=(train_cfg.seed, j))
            histories[e] = train_model(model, Z[idx.train], T[idx.train, j:j + 1],
                                       Z[idx.validation], T[idx.validation, j:j + 1], train_cfg)
            models[e] = model
            log.info("cnn %s trained: best epoch %d", e, histories[e].best_epoch)
    return TrainedModel(kind, NetRegressor(kind, models, fs, ts), idx, histories, tuple(elements))


def train_pbp(dataset, split: SplitSpec = SplitSpec(0.5, 0.0), cfg: PbpConfig = PbpConfig(),
              seed: int = 0, input_transform: str = "log",
              target_scaling: str = "zscore") -> TrainedModel:
    """Four independent single-output PBP networks on a shared split."""
    idx = split_indices(len(dataset), split)
    train = np.concatenate([idx.train, idx.validation])
    fs, ts = _fit_scalers(dataset, train, input_transform, target_scaling)
    Z = fs(dataset.features[train])
    T = ts(dataset.targets[train])
    nets, traces = {}, {}
    for j, e in enumerate(ELEMENTS):
        net = pbp.PbpNetwork.create([dataset.feature_length, cfg.hidden, 1], seed=(seed, j))
        net, trace = pbp.fit(net, Z, T[:, j], epochs=cfg.epochs, seed=(seed, j),
                             refine=cfg.refine_prior, max_cavity_ratio=cfg.max_cavity_ratio)
        nets[e], traces[e] = net, trace
        log.info("pbp %s trained: final mean logZ %.4f", e, trace[-1] if trace else float("nan"))
    return TrainedModel("pbp", PbpRegressor(nets, fs, ts), idx, traces)


def held_out_r2(trained: TrainedModel, dataset) -> RSquared:
    test = trained.split.test
    cols = [ELEMENTS.index(e) for e in trained.elements]
    pred = trained.regressor.predict(dataset.features[test])
    return r_squared(pred[:, cols], dataset.targets[test][:, cols].astype(float))


def evaluate_all(results: dict, dataset) -> list[dict]:
    """One row per model kind, sorted by mean held-out R², best first.

    ``results`` maps a model kind to a TrainedModel or to (regressor, test indices).
    """
    rows = []
    for kind, res in results.items():
        if isinstance(res, TrainedModel):
            score = held_out_r2(res, dataset)
            elements = res.elements
        else:
            regressor, test = res
            elements = getattr(regressor, "elements", ELEMENTS)
            cols = [ELEMENTS.index(e) for e in elements]
            pred = regressor.predict(dataset.features[test])
            score = r_squared(pred[:, cols], dataset.targets[test][:, cols].astype(float))
        rows.append({"model": kind, "r2_mean": score.mean,
                     "r2_per_element": dict(zip(elements, score.per_output))})
    return sorted(rows, key=lambda r: (-r["r2_mean"], r["model"]))


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc
    return path


def write_loss_csv(path, history) -> Path:
    """epoch, train_loss, val_loss; epoch 0 holds the untrained losses."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        w.writerow([0, repr(history.initial_train_loss), repr(history.initial_val_loss)])
        for i, (tl, vl) in enumerate(zip(history.train_loss, history.val_loss), start=1):
            w.writerow([i, repr(tl), repr(vl)])
    return path


def write_trace_csv(path, trace) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_log_z"])
        for i, v in enumerate(trace, start=1):
            w.writerow([i, repr(float(v))])
    return path


def write_summary_csv(path, rows: list[dict]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "r2_mean", *ELEMENTS])
        for r in rows:
            per = r["r2_per_element"]
            w.writerow([r["model"], repr(r["r2_mean"]),
                        *(repr(per[e]) if e in per else "" for e in ELEMENTS)])
    return path


def training_payload(trained: TrainedModel, score: RSquared) -> dict:
    hist = {}
    for name, h in trained.histories.items():
        hist[name] = h.to_dict() if hasattr(h, "to_dict") else {"mean_log_z": list(map(float, h))}
    return {"model": trained.kind,
            "elements": list(trained.elements),
            "split_sizes": dict(zip(("train", "validation", "test"), trained.split.sizes())),
            "training": hist,
            "r2_per_element": dict(zip(trained.elements, score.per_output)),
            "r2_mean": score.mean}

"""Command-line entry point: generate, train, evaluate, saliency, inspect."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as C
from . import dataset as ds
from . import fem
from .errors import ArtifactIOError, BeamShmError, ConfigError, NumericError
from .experiments.architectures import ELEMENTS
from .experiments.regressors import load_regressor
from .experiments.runs import (
    MODEL_KINDS, PbpConfig, evaluate_all, held_out_r2, train_net, train_pbp, training_payload,
    write_json, write_loss_csv, write_summary_csv, write_trace_csv)
from .experiments.saliency import saliency, write_saliency
from .experiments.splits import SplitSpec, split_indices
from .experiments.training import TrainConfig

log = logging.getLogger("beamshm")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OTHER = 0, 2, 3, 4, 1

# manifest keys that depend on where and when a dataset was written, not on its content
_VOLATILE = ("sha256",)


def expected_manifest(cfg: dict) -> dict:
    g = cfg["generate"]
    material = fem.Material(youngs_modulus=g["youngs_modulus"], density=g["density"],
                            loss_factor=g["loss_factor"])
    return ds.preset_manifest(cfg["preset"], seed=cfg["seed"], material=material,
                              normalization=g["normalization"], n_levels=g["n_levels"],
                              n_points=g["n_points"])


def manifest_diff(expected: dict, found: dict, prefix: str = "") -> list[str]:
    lines = []
    for key in sorted(set(expected) | set(found)):
        if key in _VOLATILE or (not prefix and key == "seed"):
            continue
        a, b = expected.get(key), found.get(key)
        if isinstance(a, dict) and isinstance(b, dict):
            lines += manifest_diff(a, b, f"{prefix}{key}.")
        elif a != b:
            lines.append(f"  {prefix}{key}: config gives {a!r}, dataset has {b!r}")
    return lines


def _load_checked_dataset(cfg: dict):
    path = C.dataset_dir(cfg)
    try:
        manifest = ds.read_manifest(path)
    except ArtifactIOError:
        raise ArtifactIOError(f"no dataset at {path}; create it with "
                              f"`beamshm generate --preset {cfg['preset']}`") from None
    diff = manifest_diff(expected_manifest(cfg), manifest)
    if diff:
        raise ConfigError(f"dataset at {path} does not match the config:\n" + "\n".join(diff))
    return ds.load_dataset(path, mmap=False)


def run_hash(cfg: dict, manifest: dict, model: str | None = None) -> str:
    return C.config_hash(C.training_section(cfg, model), manifest.get("sha256"))


def run_dir(cfg: dict, manifest: dict, model: str | None = None) -> Path:
    model = model or cfg["model"]
    return Path(cfg["out_dir"]) / "runs" / f"{model}-{run_hash(cfg, manifest, model)}"


def _header(cfg: dict, manifest: dict, model: str | None = None) -> dict:
    return {"config": cfg, "config_hash": run_hash(cfg, manifest, model),
            "seed": cfg["seed"], "dataset_sha256": manifest.get("sha256")}


def _log_to(path: Path, message: str) -> None:
    with open(path, "a") as fh:
        fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {message}\n")


def cmd_generate(cfg: dict, force: bool) -> int:
    manifest = expected_manifest(cfg)
    out = C.dataset_dir(cfg)
    if (out / ds.MANIFEST_FILE).exists() and not force:
        raise ArtifactIOError(f"{out} already holds a dataset; pass --force to overwrite")
    print(f"{manifest['n_samples']} samples × {manifest['feature_length']} features -> {out}")
    start = time.perf_counter()
    step = max(manifest["n_samples"] // 20, 1)

    def progress(i, n):
        if i % step == 0 or i == n:
            print(f"  {i}/{n}", file=sys.stderr)

    ds.write_dataset(out, manifest, force=force, progress=progress)
    _log_to(out / "generate.log", f"generated in {time.perf_counter() - start:.1f} s")
    return EXIT_OK


def cmd_train(cfg: dict, force: bool) -> int:
    data = _load_checked_dataset(cfg)
    model = cfg["model"]
    out = run_dir(cfg, data.manifest)
    ckpt = out / "model.json"
    if ckpt.exists() and not force:
        raise ArtifactIOError(f"{out} already holds this run; pass --force to retrain")
    out.mkdir(parents=True, exist_ok=True)
    pre = cfg["preprocess"]
    start = time.perf_counter()
    if model == "pbp":
        p = cfg["pbp"]
        trained = train_pbp(data, SplitSpec(p["test_fraction"], 0.0, cfg["seed"]),
                            PbpConfig(p["epochs"], p["hidden"], p["refine_prior"],
                                      p["max_cavity_ratio"]),
                            seed=cfg["seed"], input_transform=pre["input_transform"],
                            target_scaling=pre["target_scaling"])
    else:
        s, t = cfg["split"], cfg["train"]
        elements = ELEMENTS if cfg["element"] is None else (cfg["element"],)
        trained = train_net(model, data,
                            SplitSpec(s["test_fraction"], s["validation_fraction"], cfg["seed"]),
                            TrainConfig(t["lr"], t["batch_size"], t["max_epochs"], t["patience"],
                                        cfg["seed"]),
                            elements=elements, input_transform=pre["input_transform"],
                            target_scaling=pre["target_scaling"])
    elapsed = time.perf_counter() - start
    score = held_out_r2(trained, data)
    header = _header(cfg, data.manifest)
    trained.regressor.save(ckpt, extra=header)
    payload = dict(header)
    payload.update(training_payload(trained, score))
    write_json(out / "report.json", payload)
    for name, hist in trained.histories.items():
        if model == "pbp":
            write_trace_csv(out / f"trace_{name}.csv", hist)
        else:
            write_loss_csv(out / f"loss_{name}.csv", hist)
    _log_to(out / "run.log", f"trained {model} in {elapsed:.1f} s")
    per = ", ".join(f"{e} {v:.4f}" for e, v in zip(trained.elements, score.per_output))
    print(f"{model}: held-out R² {score.mean:.4f} ({per}) -> {out}")
    return EXIT_OK


def _load_run(cfg: dict, manifest: dict, model: str):
    out = run_dir(cfg, manifest, model)
    ckpt = out / "model.json"
    if not ckpt.exists():
        raise ArtifactIOError(f"no {model} checkpoint at {out}; run "
                              f"`beamshm train --model {model}` with the same config first")
    return out, load_regressor(ckpt)


def _test_indices(cfg: dict, n: int, model: str) -> np.ndarray:
    if model == "pbp":
        spec = SplitSpec(cfg["pbp"]["test_fraction"], 0.0, cfg["seed"])
    else:
        spec = SplitSpec(cfg["split"]["test_fraction"], cfg["split"]["validation_fraction"],
                         cfg["seed"])
    return split_indices(n, spec).test


def cmd_evaluate(cfg: dict) -> int:
    data = _load_checked_dataset(cfg)
    results = {}
    for model in MODEL_KINDS:
        _, reg = _load_run(cfg, data.manifest, model)
        results[model] = (reg, _test_indices(cfg, len(data), model))
    rows = evaluate_all(results, data)
    h = C.config_hash(*(C.training_section(cfg, m) for m in MODEL_KINDS),
                      data.manifest.get("sha256"))
    out = Path(cfg["out_dir"]) / "evaluation" / h
    write_json(out / "summary.json", {"config": cfg, "config_hash": h, "seed": cfg["seed"],
                                      "dataset_sha256": data.manifest.get("sha256"),
                                      "rows": rows})
    write_summary_csv(out / "summary.csv", rows)
    for r in rows:
        print(f"{r['model']:5s} R² {r['r2_mean']:.4f}")
    print(f"-> {out}")
    return EXIT_OK


def cmd_saliency(cfg: dict) -> int:
    data = _load_checked_dataset(cfg)
    model = cfg["model"]
    wanted = cfg["element"]
    if model == "cnn" and wanted is not None:
        # prefer the run covering all elements, then a single-element run
        every = dict(cfg, element=None)
        if (run_dir(every, data.manifest) / "model.json").exists():
            cfg = every
    out, reg = _load_run(cfg, data.manifest, model)
    i = cfg["sample_id"]
    if not 0 <= i < len(data):
        raise ConfigError(f"sample-id {i} is out of range [0, {len(data)})")
    elements = (wanted,) if wanted else reg.elements
    header = _header(cfg, data.manifest, model)
    for e in elements:
        rep = saliency(reg, data.features[i], data.targets[i], e, k=cfg["top_k"], sample_id=i)
        csv_path, _ = write_saliency(rep, out / "saliency", header)
        print(f"{e}: top-{rep.k} features -> {csv_path}")
    print(rep.table_block())
    return EXIT_OK


def cmd_inspect(cfg: dict) -> int:
    manifest = ds.read_manifest(C.dataset_dir(cfg))
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--preset", choices=sorted(ds.PRESETS))
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--dataset", help="dataset directory (default <out-dir>/datasets/<preset>)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--model", choices=MODEL_KINDS)
    common.add_argument("--element", choices=ELEMENTS)
    common.add_argument("--sample-id", type=int)
    common.add_argument("--top-k", type=int)
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="beamshm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="simulate and store the FRF dataset")
    sub.add_parser("train", parents=[common], help="train one model kind")
    sub.add_parser("evaluate", parents=[common], help="held-out R² of pbp, lstm and cnn")
    sub.add_parser("saliency", parents=[common], help="input-gradient report for one sample")
    sub.add_parser("inspect", parents=[common], help="print a dataset manifest")
    return parser


def dispatch(command: str, cfg: dict, force: bool) -> int:
    if command == "generate":
        return cmd_generate(cfg, force)
    if command == "train":
        return cmd_train(cfg, force)
    if command == "evaluate":
        return cmd_evaluate(cfg)
    if command == "saliency":
        return cmd_saliency(cfg)
    return cmd_inspect(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = C.load_config(args.config, {
            "preset": args.preset, "seed": args.seed, "out_dir": args.out_dir,
            "dataset": args.dataset, "model": args.model, "element": args.element,
            "sample_id": args.sample_id, "top_k": args.top_k})
        return dispatch(args.command, cfg, args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArtifactIOError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BeamShmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())

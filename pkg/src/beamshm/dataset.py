"""Damage dataset: Cartesian sweep over element diameters, stored as raw blobs.

On-disk layout of a dataset directory::

    manifest.json   grids, sweep, material, node order, normalization, checksums
    features.f32    little-endian float32, row-major, one sample per row
    targets.f32     little-endian float32, (n_samples, 4) diameters in metres

Rows are ordered lexicographically in the per-element level indices, with E1
varying slowest.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import fem
from .errors import ArtifactIOError, ConfigError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
FEATURES_FILE = "features.f32"
TARGETS_FILE = "targets.f32"
MANIFEST_FILE = "manifest.json"
WORKERS_ENV = "BEAMSHM_WORKERS"

PRESETS = {
    "full-paper": dict(n_levels=11, d_min=0.005, d_max=0.015, n_points=10_000,
                       cnn_grid=(200, 200)),
    # 2000 features do not fold into a grid on which every element chain is
    # integral; the smallest square that works is 72x72 (zero-filled tail).
    "desk": dict(n_levels=5, d_min=0.005, d_max=0.015, n_points=500, cnn_grid=(72, 72)),
}


def uniform_levels(d_min: float, d_max: float, n_levels: int) -> tuple[float, ...]:
    if n_levels < 2:
        raise ConfigError(f"need at least 2 diameter levels, got {n_levels}")
    if not (0 < d_min < d_max):
        raise ConfigError(f"need 0 < d_min < d_max, got {d_min}, {d_max}")
    # round so that 0.005 + 6*0.001 is stored as 0.011, not 0.011000000000000001
    return tuple(round(float(v), 12) for v in np.linspace(d_min, d_max, n_levels))


@dataclass
class FrfDataset:
    features: np.ndarray  # (n_samples, feature_length) float32
    targets: np.ndarray  # (n_samples, 4) float32
    manifest: dict

    def __len__(self):
        return self.features.shape[0]

    def __getitem__(self, i) -> fem.FrfSample:
        if not -len(self) <= i < len(self):
            raise IndexError(f"sample id {i} out of range [0, {len(self)})")
        return fem.FrfSample(features=np.asarray(self.features[i]),
                             targets=tuple(float(t) for t in self.targets[i]))

    @property
    def feature_length(self) -> int:
        return self.features.shape[1]


def _combinations(grid):
    return list(itertools.product(*grid))


def _row(args):
    diameters, sweep, material, length_total, normalization = args
    model = fem.BeamModel(diameters=diameters, length_total=length_total, material=material)
    sample = fem.build_sample(model, sweep, normalization=normalization)
    return sample.features.astype("<f4")


def _worker_count(workers):
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, int(workers))


def _iter_rows(grid, sweep, material, length_total, normalization, workers):
    jobs = ((d, sweep, material, length_total, normalization) for d in _combinations(grid))
    if workers == 1:
        yield from map(_row, jobs)
        return
    # map() preserves submission order, so rows land in lexicographic order
    # regardless of which worker finishes first.
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_row, jobs, chunksize=32)


def make_manifest(grid, sweep: fem.SweepConfig, material: fem.Material, seed: int,
                  normalization: str = "maxabs", length_total: float = 1.0,
                  cnn_grid=None, preset=None) -> dict:
    grid = [list(map(float, levels)) for levels in grid]
    if len(grid) != fem.N_ELEMENTS:
        raise ConfigError(f"grid must list levels for {fem.N_ELEMENTS} elements")
    for levels in grid:
        if len(levels) < 2 or min(levels) <= 0:
            raise ConfigError("each element needs >= 2 positive diameter levels")
    feature_length = sweep.n_points * len(sweep.response_nodes)
    n_samples = int(np.prod([len(levels) for levels in grid]))
    if cnn_grid is None:
        side = int(np.ceil(np.sqrt(feature_length)))
        cnn_grid = (side, side)
    if cnn_grid[0] * cnn_grid[1] < feature_length:
        raise ConfigError(f"cnn_grid {cnn_grid} cannot hold {feature_length} features")
    return {
        "format_version": FORMAT_VERSION,
        "preset": preset,
        "n_samples": n_samples,
        "feature_length": feature_length,
        "n_targets": fem.N_ELEMENTS,
        "dtype": "<f4",
        "layout": "row-major, one sample per row",
        "files": {"features": FEATURES_FILE, "targets": TARGETS_FILE},
        "grids": {
            "diameter_levels": grid,
            "ordering": "cartesian product, lexicographic in level index, E1 slowest",
        },
        "frequency_grid": {"omega_min": sweep.omega_min, "omega_max": sweep.omega_max,
                           "n_points": sweep.n_points, "spacing": "linear, endpoints included",
                           "units": "rad/s"},
        "excitation": {"node": sweep.excitation_node, "amplitude": sweep.excitation_amplitude},
        "node_order": list(sweep.response_nodes),
        "response_quantity": "abs(acceleration), translational DOF",
        "normalization": normalization,
        "material": asdict(material),
        "length_total": length_total,
        "n_elements": fem.N_ELEMENTS,
        "reshape": {"cnn": list(cnn_grid),
                    "lstm": [len(sweep.response_nodes), sweep.n_points]},
        "seed": int(seed),
    }


def sweep_from_manifest(manifest) -> fem.SweepConfig:
    fg = manifest["frequency_grid"]
    return fem.SweepConfig(omega_min=fg["omega_min"], omega_max=fg["omega_max"],
                           n_points=fg["n_points"],
                           excitation_node=manifest["excitation"]["node"],
                           excitation_amplitude=manifest["excitation"]["amplitude"],
                           response_nodes=tuple(manifest["node_order"]))


def material_from_manifest(manifest) -> fem.Material:
    return fem.Material(**manifest["material"])


def preset_manifest(preset: str, seed: int = 0, **overrides) -> dict:
    try:
        p = dict(PRESETS[preset])
    except KeyError:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}") from None
    p.update({k: v for k, v in overrides.items() if v is not None and k in p})
    levels = uniform_levels(p["d_min"], p["d_max"], p["n_levels"])
    sweep = fem.SweepConfig(n_points=p["n_points"])
    material = overrides.get("material") or fem.Material()
    return make_manifest([levels] * fem.N_ELEMENTS, sweep, material, seed,
                         normalization=overrides.get("normalization") or "maxabs",
                         cnn_grid=p["cnn_grid"], preset=preset)


def generate_dataset(grid, sweep: fem.SweepConfig, material: fem.Material, seed: int = 0,
                     normalization: str = "maxabs", length_total: float = 1.0,
                     workers=None, cnn_grid=None) -> FrfDataset:
    """Build the whole dataset in memory. Use :func:`write_dataset` for large grids."""
    manifest = make_manifest(grid, sweep, material, seed, normalization, length_total, cnn_grid)
    return dataset_from_manifest(manifest, workers)


def dataset_from_manifest(manifest: dict, workers=None) -> FrfDataset:
    grid = manifest["grids"]["diameter_levels"]
    rows = _iter_rows(grid, sweep_from_manifest(manifest), material_from_manifest(manifest),
                      manifest["length_total"], manifest["normalization"], _worker_count(workers))
    features = np.empty((manifest["n_samples"], manifest["feature_length"]), dtype="<f4")
    for i, row in enumerate(rows):
        features[i] = row
    targets = np.asarray(_combinations(grid), dtype="<f4")
    return FrfDataset(features=features, targets=targets, manifest=manifest)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 22), b""):
            h.update(chunk)
    return h.hexdigest()


def write_dataset(out_dir, manifest: dict, force: bool = False, workers=None,
                  progress=None) -> dict:
    """Stream a dataset to ``out_dir`` row by row and return the final manifest.

    Only one row is held in memory at a time, so the full 14,641 x 40,000
    grid (2.3 GB) can be produced on a small machine.
    """
    out = Path(out_dir)
    if out.joinpath(MANIFEST_FILE).exists() and not force:
        raise ArtifactIOError(f"{out} already holds a dataset; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    grid = manifest["grids"]["diameter_levels"]
    rows = _iter_rows(grid, sweep_from_manifest(manifest), material_from_manifest(manifest),
                      manifest["length_total"], manifest["normalization"], _worker_count(workers))
    n = 0
    with open(out / FEATURES_FILE, "wb") as fh:
        for row in rows:
            if row.shape[0] != manifest["feature_length"]:
                raise ConfigError("row length disagrees with manifest feature_length")
            fh.write(row.tobytes())
            n += 1
            if progress is not None:
                progress(n, manifest["n_samples"])
    np.asarray(_combinations(grid), dtype="<f4").tofile(out / TARGETS_FILE)
    manifest = dict(manifest)
    manifest["sha256"] = {"features": _sha256(out / FEATURES_FILE),
                          "targets": _sha256(out / TARGETS_FILE)}
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d samples x %d features to %s", n, manifest["feature_length"], out)
    return manifest


def save_dataset(dataset: FrfDataset, out_dir, force: bool = False) -> dict:
    out = Path(out_dir)
    if out.joinpath(MANIFEST_FILE).exists() and not force:
        raise ArtifactIOError(f"{out} already holds a dataset; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(dataset.features, dtype="<f4").tofile(out / FEATURES_FILE)
    np.ascontiguousarray(dataset.targets, dtype="<f4").tofile(out / TARGETS_FILE)
    manifest = dict(dataset.manifest)
    manifest["sha256"] = {"features": _sha256(out / FEATURES_FILE),
                          "targets": _sha256(out / TARGETS_FILE)}
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_FILE
    if not p.exists():
        raise ArtifactIOError(f"no dataset manifest at {p}; run `beamshm generate` first")
    return json.loads(p.read_text())


def load_dataset(path, mmap: bool = True) -> FrfDataset:
    root = Path(path)
    manifest = read_manifest(root)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported dataset format {manifest.get('format_version')}")
    shape = (manifest["n_samples"], manifest["feature_length"])
    fpath = root / manifest["files"]["features"]
    tpath = root / manifest["files"]["targets"]
    for p in (fpath, tpath):
        if not p.exists():
            raise ArtifactIOError(f"dataset blob missing: {p}")
    if mmap:
        features = np.memmap(fpath, dtype="<f4", mode="r", shape=shape)
    else:
        features = np.fromfile(fpath, dtype="<f4").reshape(shape)
    targets = np.fromfile(tpath, dtype="<f4").reshape(shape[0], manifest["n_targets"])
    return FrfDataset(features=features, targets=targets, manifest=manifest)


def verify_dataset(path) -> bool:
    manifest = read_manifest(path)
    root = Path(path)
    sums = manifest.get("sha256", {})
    return (sums.get("features") == _sha256(root / FEATURES_FILE)
            and sums.get("targets") == _sha256(root / TARGETS_FILE))


def export_csv(dataset: FrfDataset, path, limit=None):
    """Human-readable dump: four diameter columns followed by the features."""
    n = len(dataset) if limit is None else min(limit, len(dataset))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"d_E{i + 1}" for i in range(dataset.targets.shape[1])]
                   + [f"x{j}" for j in range(dataset.feature_length)])
        for i in range(n):
            w.writerow([f"{t:.6g}" for t in dataset.targets[i]]
                       + [f"{v:.7g}" for v in dataset.features[i]])

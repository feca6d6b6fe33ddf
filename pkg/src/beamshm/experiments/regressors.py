"""Trained models bundled with their scalers, mapping raw features to diameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import pbp
from ..checkpoint import read_checkpoint, write_checkpoint
from ..errors import ArtifactIOError, ConfigError, ShapeError
from ..nn.model import Sequential
from .architectures import ELEMENTS
from .preprocess import FeatureScaler, TargetScaler
from .training import predict_batches

NET_FORMAT = "beamshm-net-regressor"
PBP_FORMAT = "beamshm-pbp-regressor"


def _scaler_arrays(fs: FeatureScaler, ts: TargetScaler) -> dict:
    return {"feature_mean": fs.mean, "feature_std": fs.std,
            "target_mean": ts.mean, "target_std": ts.std}


def _scalers_from(header: dict, arrays: dict):
    fs = FeatureScaler(header["input_transform"], arrays["feature_mean"], arrays["feature_std"])
    ts = TargetScaler(arrays["target_mean"], arrays["target_std"])
    return fs, ts


@dataclass
class NetRegressor:
    """Either one 4-output network (LSTM) or one 1-output network per element (CNN).

    ``models`` maps an element name, or "all" for the joint model, to its
    network.
    """

    kind: str
    models: dict
    features: FeatureScaler
    targets: TargetScaler

    @property
    def elements(self) -> tuple:
        if "all" in self.models:
            return ELEMENTS
        return tuple(e for e in ELEMENTS if e in self.models)

    def predict(self, X) -> np.ndarray:
        """(n, 4) diameters; columns of elements without a network are NaN."""
        Z = self.features(X)
        if "all" in self.models:
            T = predict_batches(self.models["all"], Z)
        else:
            T = np.full((Z.shape[0], len(ELEMENTS)), np.nan)
            for j, e in enumerate(ELEMENTS):
                if e in self.models:
                    T[:, j] = predict_batches(self.models[e], Z)[:, 0]
        return self.targets.inverse(T)

    def input_gradient(self, x, element: str) -> np.ndarray:
        """d(predicted diameter of ``element``) / d(raw input features) at one sample."""
        if element not in ELEMENTS:
            raise ConfigError(f"element must be one of {ELEMENTS}, got {element!r}")
        j = ELEMENTS.index(element)
        x = np.asarray(x, dtype=float).reshape(1, -1)
        if "all" in self.models:
            model, col = self.models["all"], j
        elif element in self.models:
            model, col = self.models[element], 0
        else:
            raise ConfigError(f"no network was trained for {element}")
        out = model.forward(self.features(x))
        seed = np.zeros_like(out)
        seed[0, col] = self.targets.std[j]
        return self.features.backward(model.backward(seed), x)[0]

    def save(self, path, extra: dict | None = None):
        header = {"format": NET_FORMAT, "kind": self.kind,
                  "input_transform": self.features.transform,
                  "networks": {name: m.config() for name, m in self.models.items()},
                  "extra": extra or {}}
        arrays = _scaler_arrays(self.features, self.targets)
        for name, m in self.models.items():
            for key, arr in m.named_params().items():
                arrays[f"{name}/{key}"] = arr
        return write_checkpoint(path, header, arrays)

    @classmethod
    def load(cls, path) -> "NetRegressor":
        header, arrays = read_checkpoint(path)
        if header.get("format") != NET_FORMAT:
            raise ArtifactIOError(f"{path}: not a network regressor checkpoint")
        models = {}
        for name, cfg in header["networks"].items():
            m = Sequential.from_config(cfg)
            for key, arr in m.named_params().items():
                src = arrays.get(f"{name}/{key}")
                if src is None or src.shape != arr.shape:
                    raise ArtifactIOError(f"{path}: parameter {name}/{key} missing or misshapen")
                arr[...] = src
            models[name] = m
        fs, ts = _scalers_from(header, arrays)
        return cls(header["kind"], models, fs, ts)


@dataclass
class PbpRegressor:
    """One single-output PBP network per element."""

    networks: dict  # element -> PbpNetwork
    features: FeatureScaler
    targets: TargetScaler
    kind: str = "pbp"
    elements: tuple = ELEMENTS

    def predict_distribution(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Predictive means and variances in diameter units, each (n, 4)."""
        Z = self.features(X)
        means = np.empty((Z.shape[0], len(ELEMENTS)))
        variances = np.empty_like(means)
        for j, e in enumerate(ELEMENTS):
            for i, z in enumerate(Z):
                p = pbp.predict(self.networks[e], z)
                means[i, j], variances[i, j] = p.mean, p.variance
        return self.targets.inverse(means), variances * self.targets.std**2

    def predict(self, X) -> np.ndarray:
        return self.predict_distribution(X)[0]

    def input_gradient(self, x, element: str) -> np.ndarray:
        raise ConfigError("saliency is available for the cnn and lstm models only")

    def save(self, path, extra: dict | None = None):
        nets = {}
        arrays = _scaler_arrays(self.features, self.targets)
        for e, net in self.networks.items():
            nets[e] = {"layer_sizes": net.layer_sizes,
                       "noise": [net.noise_a, net.noise_b],
                       "prior": [net.prior_a, net.prior_b],
                       "n_rejected": net.n_rejected}
            for i, layer in enumerate(net.layers):
                arrays[f"{e}/M{i}"] = layer.mean
                arrays[f"{e}/V{i}"] = layer.variance
            if net.sites is not None:
                for field_name in ("prec", "mprec", "a", "b"):
                    for i, arr in enumerate(getattr(net.sites, field_name)):
                        arrays[f"{e}/site_{field_name}{i}"] = arr
        header = {"format": PBP_FORMAT, "kind": "pbp",
                  "input_transform": self.features.transform,
                  "networks": nets, "extra": extra or {}}
        return write_checkpoint(path, header, arrays)

    @classmethod
    def load(cls, path) -> "PbpRegressor":
        header, arrays = read_checkpoint(path)
        if header.get("format") != PBP_FORMAT:
            raise ArtifactIOError(f"{path}: not a PBP regressor checkpoint")
        networks = {}
        try:
            for e, meta in header["networks"].items():
                n_layers = len(meta["layer_sizes"]) - 1
                layers = [pbp.GaussianLayer(arrays[f"{e}/M{i}"], arrays[f"{e}/V{i}"])
                          for i in range(n_layers)]
                sites = None
                if f"{e}/site_prec0" in arrays:
                    sites = pbp.PriorSites(*([arrays[f"{e}/site_{name}{i}"]
                                              for i in range(n_layers)]
                                             for name in ("prec", "mprec", "a", "b")))
                networks[e] = pbp.PbpNetwork(layers, *meta["noise"], *meta["prior"],
                                             sites=sites, n_rejected=meta["n_rejected"])
        except (KeyError, ShapeError) as exc:
            raise ArtifactIOError(f"{path}: incomplete PBP checkpoint ({exc})") from exc
        fs, ts = _scalers_from(header, arrays)
        return cls(networks, fs, ts)


def load_regressor(path):
    header, _ = read_checkpoint(path)
    fmt = header.get("format")
    if fmt == NET_FORMAT:
        return NetRegressor.load(path)
    if fmt == PBP_FORMAT:
        return PbpRegressor.load(path)
    raise ArtifactIOError(f"{path}: unknown checkpoint format {fmt!r}")

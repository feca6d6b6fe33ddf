"""Feature and target scaling fitted on the training split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

INPUT_TRANSFORMS = ("log", "identity")
TARGET_SCALINGS = ("zscore", "x100")
LOG_FLOOR = 1e-30


@dataclass
class FeatureScaler:
    """Optional elementwise log, then a per-feature z-score.

    Response magnitudes span several decades around resonances, so the log
    keeps the peaks from dominating the standardized inputs.
    """

    transform: str
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X, transform: str = "log") -> "FeatureScaler":
        if transform not in INPUT_TRANSFORMS:
            raise ConfigError(f"input transform must be one of {INPUT_TRANSFORMS}")
        T = _forward(np.asarray(X, dtype=float), transform)
        std = T.std(axis=0)
        std[std == 0] = 1.0
        return cls(transform, T.mean(axis=0), std)

    def __call__(self, X):
        return (_forward(np.asarray(X, dtype=float), self.transform) - self.mean) / self.std

    def backward(self, grad, X):
        """Chain a gradient w.r.t. scaled features back to raw features."""
        g = grad / self.std
        if self.transform == "log":
            g = g / np.maximum(np.asarray(X, dtype=float), LOG_FLOOR)
        return g


def _forward(X, transform):
    return np.log(np.maximum(X, LOG_FLOOR)) if transform == "log" else X


@dataclass
class TargetScaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, Y, scaling: str = "zscore") -> "TargetScaler":
        Y = np.asarray(Y, dtype=float)
        if scaling == "zscore":
            std = Y.std(axis=0)
            std[std == 0] = 1.0
            return cls(Y.mean(axis=0), std)
        if scaling == "x100":
            return cls(np.zeros(Y.shape[1]), np.full(Y.shape[1], 0.01))
        raise ConfigError(f"target scaling must be one of {TARGET_SCALINGS}")

    def __call__(self, Y):
        return (np.asarray(Y, dtype=float) - self.mean) / self.std

    def inverse(self, T):
        return np.asarray(T, dtype=float) * self.std + self.mean

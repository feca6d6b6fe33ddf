"""Seeded train/validation/test partitions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class SplitSpec:
    """``test_fraction`` of all samples is held out; ``validation_fraction`` of
    the remainder is used for early stopping. A validation fraction of 0 gives a
    plain two-way split."""

    test_fraction: float = 0.30
    validation_fraction: float = 0.30
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(
                f"validation_fraction must lie in [0, 1), got {self.validation_fraction}")


PBP_SPLIT = SplitSpec(test_fraction=0.5, validation_fraction=0.0)


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    """(train, validation, test) counts; test and validation are floored."""
    n_test = math.floor(spec.test_fraction * n)
    n_val = math.floor(spec.validation_fraction * (n - n_test))
    return n - n_test - n_val, n_val, n_test


def split_indices(n: int, spec: SplitSpec) -> SplitIndices:
    if n < 1:
        raise ConfigError("cannot split an empty dataset")
    n_train, n_val, n_test = split_sizes(n, spec)
    if n_test == 0 or n_train == 0 or (spec.validation_fraction > 0 and n_val == 0):
        raise ConfigError(f"split of {n} samples leaves an empty part "
                          f"(train {n_train}, validation {n_val}, test {n_test})")
    perm = np.random.default_rng(spec.seed).permutation(n)
    return SplitIndices(train=np.sort(perm[n_test + n_val:]),
                        validation=np.sort(perm[n_test:n_test + n_val]),
                        test=np.sort(perm[:n_test]))


def split_dataset(dataset, spec: SplitSpec):
    """Returns ((X, y) train, (X, y) validation, (X, y) test) for an FrfDataset."""
    idx = split_indices(len(dataset), spec)
    return tuple((dataset.features[i], dataset.targets[i])
                 for i in (idx.train, idx.validation, idx.test))

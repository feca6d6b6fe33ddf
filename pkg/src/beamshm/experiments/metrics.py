"""Coefficient of determination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError, ShapeError


class UndefinedMetricError(NumericError):
    """R² is undefined when the actual values have no spread."""


@dataclass(frozen=True)
class RSquared:
    per_output: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_output))


def r_squared(predictions, actuals) -> RSquared:
    """1 - SSE/SST per output column; 1-D inputs count as a single output."""
    p = np.asarray(predictions, dtype=float)
    a = np.asarray(actuals, dtype=float)
    if p.shape != a.shape:
        raise ShapeError(f"predictions {p.shape} and actuals {a.shape} differ")
    if p.ndim == 1:
        p, a = p[:, None], a[:, None]
    if a.shape[0] < 2:
        raise ShapeError("R² needs at least two samples")
    sse = np.sum((a - p) ** 2, axis=0)
    sst = np.sum((a - a.mean(axis=0)) ** 2, axis=0)
    if np.any(sst == 0):
        raise UndefinedMetricError(
            f"actual values are constant in output(s) {np.flatnonzero(sst == 0).tolist()}")
    return RSquared(tuple(float(v) for v in 1.0 - sse / sst))

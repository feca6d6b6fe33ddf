"""Adam with bias-corrected moments."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidParameterError, ShapeError

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    n_rejected: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidParameterError(f"learning rate must be > 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidParameterError("Adam betas must lie in [0, 1)")
        if not self.eps > 0:
            raise InvalidParameterError("Adam eps must be > 0")


def adam_step(params: dict, grads: dict, state: AdamState) -> bool:
    """Update ``params`` in place. Returns False (and changes nothing) when any
    gradient is non-finite."""
    for key, g in grads.items():
        if key not in params:
            raise ShapeError(f"gradient for unknown parameter {key!r}")
        if g.shape != params[key].shape:
            raise ShapeError(f"{key}: gradient {g.shape} vs parameter {params[key].shape}")
        if not np.all(np.isfinite(g)):
            state.n_rejected += 1
            log.warning("adam step %d rejected: non-finite gradient in %s", state.step + 1, key)
            return False
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for key, g in grads.items():
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(g)
            state.v[key] = np.zeros_like(g)
        v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[key] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return True

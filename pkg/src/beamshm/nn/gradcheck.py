"""Central-difference gradient checks for layer stacks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidParameterError
from .model import Sequential

MAX_CHECK_PARAMS = 10_000


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    n_checked: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error <= tolerance


def _rel_error(a, b, floor):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def finite_difference_check(model: Sequential, x, h: float = 1e-5, seed: int = 0,
                            check_input: bool = True, floor: float | None = None) -> GradCheckReport:
    """Compare backprop against central differences of L = sum(r * model(x)).

    The two perturbed outputs are subtracted before projecting onto ``r``, so
    outputs the perturbed entry does not reach cancel exactly and contribute
    no rounding noise. The default step h = 1e-5 sits near eps**(1/3), which
    balances truncation against rounding error in float64.

    ``r`` is a fixed random projection so every output contributes. Relative
    errors are measured against max(|analytic|, |numeric|, floor); the default
    floor is 1e-6 of the largest analytic gradient, so entries that are zero up
    to rounding do not dominate the report.
    """
    n_params = model.n_params()
    if n_params > MAX_CHECK_PARAMS:
        raise InvalidParameterError(
            f"gradient check limited to {MAX_CHECK_PARAMS} parameters, model has {n_params}")
    x = np.array(x, dtype=float)
    out = model.forward(x)
    r = np.random.default_rng(seed).standard_normal(out.shape)
    model.forward(x)
    dx = model.backward(r)
    analytic = {k: np.array(v) for k, v in model.named_grads().items()}
    if floor is None:
        scale = max((float(np.abs(g).max()) for g in analytic.values() if g.size), default=0.0)
        floor = max(1e-6 * scale, 1e-12)
    worst, worst_name, count = 0.0, "", 0
    targets = list(model.named_params().items())
    if check_input:
        targets.append(("input", x))
        analytic["input"] = dx
    for name, arr in targets:
        if not arr.flags.c_contiguous:
            raise InvalidParameterError(f"{name} is not contiguous; cannot perturb in place")
        numeric = np.empty_like(arr)
        flat = arr.reshape(-1)
        num_flat = numeric.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            up = model.forward(x).copy()
            flat[j] = old - h
            down = model.forward(x)
            flat[j] = old
            num_flat[j] = float(np.sum(r * (up - down))) / (2 * h)
        err = _rel_error(analytic[name], numeric, floor)
        count += err.size
        if err.size and err.max() > worst:
            worst, worst_name = float(err.max()), name
    return GradCheckReport(worst, worst_name, count)

"""Input-gradient saliency for one sample and one element."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .architectures import ELEMENTS

EPS = 1e-12
THRESHOLD_QUANTILE = 25.0
CATEGORIES = ("increase", "decrease", "maintain")


@dataclass
class SaliencyReport:
    element: str
    sample_id: int
    k: int
    threshold: float
    indices: list
    raw_grad: list
    score: list
    category: list
    actual: list  # diameters E1..E4
    predicted: list

    def rows(self):
        return list(zip(self.indices, self.raw_grad, self.score, self.category))

    def table_block(self) -> str:
        """Actual and predicted diameters laid out one column per element."""
        head = "\t" + "\t".join(ELEMENTS)
        act = "Actual diameter\t" + "\t".join(f"{v:.3f}" for v in self.actual)
        pred = "Predicted diameter\t" + "\t".join(f"{v:.8f}" for v in self.predicted)
        return "\n".join([head, act, pred])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["table"] = self.table_block()
        return d


def transformed_score(g) -> np.ndarray:
    """abs(1/g), with |g| < EPS mapped to the cap 1/EPS."""
    g = np.abs(np.asarray(g, dtype=float))
    return 1.0 / np.maximum(g, EPS)


def top_k(g, k: int = 10) -> np.ndarray:
    """Indices of the k largest transformed scores; ties go to the lower index."""
    g = np.asarray(g, dtype=float)
    if not 1 <= k <= g.size:
        raise ConfigError(f"k must lie in [1, {g.size}], got {k}")
    return np.argsort(-transformed_score(g), kind="stable")[:k]


def categorize(g_top) -> tuple[list, float]:
    """increase / decrease / maintain by sign against a threshold theta, the
    25th percentile of |g| over the selected features."""
    g_top = np.asarray(g_top, dtype=float)
    theta = float(np.percentile(np.abs(g_top), THRESHOLD_QUANTILE))
    cats = ["increase" if v > theta else "decrease" if v < -theta else "maintain" for v in g_top]
    return cats, theta


def saliency(regressor, x, actual, element: str, k: int = 10, sample_id: int = -1) -> SaliencyReport:
    x = np.asarray(x, dtype=float)
    g = regressor.input_gradient(x, element)
    idx = top_k(g, k)
    cats, theta = categorize(g[idx])
    predicted = regressor.predict(x[None, :])[0]
    return SaliencyReport(element=element, sample_id=int(sample_id), k=int(k), threshold=theta,
                          indices=[int(i) for i in idx], raw_grad=[float(v) for v in g[idx]],
                          score=[float(v) for v in transformed_score(g[idx])], category=cats,
                          actual=[float(v) for v in actual],
                          predicted=[float(v) for v in predicted])


def write_saliency(report: SaliencyReport, out_dir, header: dict | None = None) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"saliency_{report.element}_sample{report.sample_id}"
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "raw_grad", "score", "category"])
        for i, g, s, c in report.rows():
            w.writerow([i, repr(g), repr(s), c])
    json_path = out_dir / f"{stem}.json"
    payload = dict(header or {})
    payload["saliency"] = report.to_dict()
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path

"""PCC, SRCC, RMSE and MAE, and a report that bundles them."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import DataError, UndefinedCorrelationError

METRIC_ORDER = ("pcc", "srcc", "rmse", "mae")


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DataError(f"length mismatch: {x.size} vs {y.size}")
    if x.size == 0:
        raise DataError("empty input")
    return x, y


def pcc(x, y) -> float:
    x, y = _pair(x, y)
    if x.size < 2:
        raise UndefinedCorrelationError("correlation needs at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation undefined: zero variance")
    return float(np.clip(np.dot(dx, dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    return _kernels.average_ranks(np.asarray(x, dtype=np.float64).ravel())


def srcc(x, y) -> float:
    x, y = _pair(x, y)
    return pcc(average_ranks(x), average_ranks(y))


def rmse(x, y) -> float:
    x, y = _pair(x, y)
    d = np.abs(x - y)
    m = d.max()
    if m == 0.0 or not np.isfinite(m):
        return float(m)
    # scale first so tiny or huge errors do not under/overflow when squared
    return float(m * np.sqrt(np.mean((d / m) ** 2)))


def mae(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.mean(np.abs(x - y)))


@dataclass
class EvalReport:
    pcc: float | None
    srcc: float | None
    rmse: float
    mae: float
    n: int
    dataset: str = ""
    checkpoint: str = ""
    errors: dict[str, str] = field(default_factory=dict)

    def summary_line(self) -> str:
        def fmt(v):
            return "undefined" if v is None else f"{v:.4f}"

        return " ".join(f"{k.upper()}={fmt(getattr(self, k))}" for k in METRIC_ORDER) + f" n={self.n}"

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "EvalReport":
        return cls(**json.loads(Path(path).read_text()))


def evaluate_predictions(pred: Sequence[float], target: Sequence[float], dataset: str = "",
                         checkpoint: str = "") -> EvalReport:
    """All four metrics; undefined correlations are recorded, not coerced to 0 or NaN."""
    pred_a, target_a = _pair(pred, target)
    errors = {}
    corr = {}
    for name, fn in (("pcc", pcc), ("srcc", srcc)):
        try:
            corr[name] = fn(pred_a, target_a)
        except UndefinedCorrelationError as exc:
            corr[name] = None
            errors[name] = str(exc)
    return EvalReport(corr["pcc"], corr["srcc"], rmse(pred_a, target_a), mae(pred_a, target_a),
                      int(pred_a.size), dataset, checkpoint, errors)


def evaluate_model(predict: Callable[[object], float], dataset: Iterable[tuple[str, object, float]],
                   dataset_id: str = "", checkpoint_id: str = "") -> EvalReport:
    """Score ``(key, clip, mos)`` items with ``predict``.

    Items are processed in key order so the report does not depend on the
    order the dataset is supplied in.
    """
    items = sorted(dataset, key=lambda t: t[0])
    if len(items) < 2:
        raise DataError("evaluation needs at least 2 labelled samples")
    pred = [float(predict(clip)) for _, clip, _ in items]
    target = [float(m) for _, _, m in items]
    return evaluate_predictions(pred, target, dataset_id, checkpoint_id)

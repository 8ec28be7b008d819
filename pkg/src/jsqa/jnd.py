"""Within-JND checks for generated pairs: SI-SDR, external PESQ, and a linear SVM.

The louder-SNR member of a pair is always the reference. PESQ is never computed
here; it comes from an external command (see :class:`CommandPesqScorer`).
"""

from __future__ import annotations

import json
import math
import re
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .audio import AudioClip, save_audio
from .corpus import Corpus
from .errors import ConfigError, DataError, LengthMismatchError, ZeroPowerError
from .pairgen import PairManifest, realize_pair

SI_SDR_CAP_DB = 100.0
FEATURE_COLUMNS = {"pesq": ("pesq",), "si_sdr": ("si_sdr",), "both": ("pesq", "si_sdr")}

PesqScorer = Callable[[AudioClip, AudioClip], float]


def si_sdr(reference, estimate) -> float:
    """Scale-invariant SDR in dB; ``inf`` when the estimate is an exact multiple of the reference."""
    ref = reference.samples if isinstance(reference, AudioClip) else np.asarray(reference, dtype=np.float64)
    est = estimate.samples if isinstance(estimate, AudioClip) else np.asarray(estimate, dtype=np.float64)
    if ref.shape != est.shape:
        raise LengthMismatchError(f"reference {ref.shape} and estimate {est.shape} differ")
    if not np.any(ref):
        raise ZeroPowerError("SI-SDR reference has zero energy")
    target, residual = _kernels.si_sdr_energies(ref.ravel(), est.ravel())
    if residual == 0.0:
        return math.inf
    if target == 0.0:
        return -math.inf
    return 10.0 * math.log10(target / residual)


class CommandPesqScorer:
    """PESQ via an external program.

    ``template`` is a command line containing ``{ref}`` and ``{deg}``; the
    program must print the score as a decimal number on stdout (the last number
    printed is used).
    """

    _number = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?")

    def __init__(self, template: str, timeout: float = 120.0):
        if "{ref}" not in template or "{deg}" not in template:
            raise ConfigError("PESQ command template needs {ref} and {deg} placeholders")
        self.template = template
        self.timeout = timeout

    def __call__(self, reference: AudioClip, degraded: AudioClip) -> float:
        with tempfile.TemporaryDirectory(prefix="jsqa-pesq-") as tmp:
            ref_path, deg_path = Path(tmp) / "ref.wav", Path(tmp) / "deg.wav"
            save_audio(reference, ref_path)
            save_audio(degraded, deg_path)
            argv = [a.format(ref=ref_path, deg=deg_path) for a in shlex.split(self.template)]
            try:
                proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout, check=False)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise DataError(f"PESQ command failed: {exc}") from exc
        if proc.returncode != 0:
            raise DataError(f"PESQ command exited {proc.returncode}: {proc.stderr.strip()[:200]}")
        found = self._number.findall(proc.stdout)
        if not found:
            raise DataError(f"PESQ command printed no score: {proc.stdout.strip()[:200]!r}")
        return float(found[-1])


@dataclass(frozen=True)
class PairFeature:
    kind: str
    values: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in FEATURE_COLUMNS:
            raise ConfigError(f"unknown feature kind {self.kind!r}")
        if len(self.values) != len(FEATURE_COLUMNS[self.kind]):
            raise DataError(f"{self.kind} feature needs {len(FEATURE_COLUMNS[self.kind])} values")
        if not all(math.isfinite(v) for v in self.values):
            raise DataError(f"non-finite feature values {self.values}")


def extract_pair_feature(clip_hi: AudioClip, clip_lo: AudioClip, kind: str = "pesq",
                         pesq_extractor: PesqScorer | None = None, cap_db: float = SI_SDR_CAP_DB) -> PairFeature:
    if kind not in FEATURE_COLUMNS:
        raise ConfigError(f"unknown feature kind {kind!r}")
    values = []
    if "pesq" in FEATURE_COLUMNS[kind]:
        if pesq_extractor is None:
            raise ConfigError(f"feature kind {kind!r} needs a PESQ extractor")
        values.append(float(pesq_extractor(clip_hi, clip_lo)))
    if "si_sdr" in FEATURE_COLUMNS[kind]:
        values.append(float(np.clip(si_sdr(clip_hi, clip_lo), -cap_db, cap_db)))
    return PairFeature(kind, tuple(values))


# ---------------------------------------------------------------------------
# linear SVM
# ---------------------------------------------------------------------------


@dataclass
class SvmModel:
    weights: np.ndarray
    bias: float
    feature_kind: str
    C: float = 1.0
    seed: int = 0
    epochs: int = 0
    train_accuracy: float = float("nan")
    degenerate: bool = False
    objective_history: list[float] = field(default_factory=list)

    def decision(self, x) -> float:
        return float(np.dot(self.weights, np.asarray(x, dtype=np.float64)) + self.bias)

    def to_dict(self) -> dict:
        return {
            "kernel": "linear",
            "feature_kind": self.feature_kind,
            "weights": [float(v) for v in self.weights],
            "bias": float(self.bias),
            "C": self.C,
            "seed": self.seed,
            "epochs": self.epochs,
            "train_accuracy": self.train_accuracy,
            "degenerate": self.degenerate,
            "objective_history": [float(v) for v in self.objective_history],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        if d.get("kernel", "linear") != "linear":
            raise ConfigError(f"unsupported kernel {d.get('kernel')!r}")
        return cls(np.asarray(d["weights"], dtype=np.float64), float(d["bias"]), d["feature_kind"],
                   d.get("C", 1.0), d.get("seed", 0), d.get("epochs", 0), d.get("train_accuracy", float("nan")),
                   d.get("degenerate", False), list(d.get("objective_history", [])))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "SvmModel":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"cannot read SVM model {path}: {exc}") from exc


def _label_sign(label) -> float:
    if isinstance(label, str):
        key = label.strip().lower()
        if key in {"within", "1", "+1", "true", "yes"}:
            return 1.0
        if key in {"beyond", "0", "-1", "false", "no"}:
            return -1.0
        raise DataError(f"unrecognised JND label {label!r}")
    return 1.0 if bool(label) and label != -1 else -1.0


def hinge_objective(X, y, w, b, C) -> float:
    margins = y * (X @ w + b)
    n = X.shape[0]
    return float(0.5 * np.dot(w, w) / n + C * np.mean(np.maximum(0.0, 1.0 - margins)))


def train_svm(features: Sequence[PairFeature], labels: Sequence, C: float = 1.0, seed: int = 0,
              epochs: int = 200, lr: float = 0.5) -> SvmModel:
    """Soft-margin linear SVM by epoch-wise stochastic subgradient descent.

    Features are standardised internally and the solution folded back into
    raw feature space. The step decays as ``lr / sqrt(1 + epoch)``. After every
    epoch both the current iterate and the running average of iterates are
    scored, and the best seen so far is kept, so ``objective_history`` (the
    objective of the kept solution) never increases.
    """
    if len(features) == 0:
        raise DataError("no training examples")
    if len(features) != len(labels):
        raise DataError("features and labels differ in length")
    kind = features[0].kind
    if any(f.kind != kind for f in features):
        raise DataError("mixed feature kinds in training data")
    X = np.array([f.values for f in features], dtype=np.float64)
    y = np.array([_label_sign(v) for v in labels], dtype=np.float64)
    n, d = X.shape

    if np.all(y == y[0]):
        return SvmModel(np.zeros(d), float(y[0]), kind, C, seed, 0, 1.0, degenerate=True)

    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd

    rng = np.random.default_rng(seed)
    w, b = np.zeros(d), 0.0
    w_avg, b_avg = w.copy(), 0.0
    best_obj, best_w, best_b = hinge_objective(Z, y, w, b, C), w.copy(), b
    history = [best_obj]
    for epoch in range(epochs):
        order = rng.permutation(n)
        w, b = _kernels.svm_epoch(Z, y, w, b, order, lr / math.sqrt(1.0 + epoch), C)
        b = float(b)
        w_avg += (w - w_avg) / (epoch + 1)
        b_avg += (b - b_avg) / (epoch + 1)
        for cw, cb in ((w, b), (w_avg, b_avg)):
            obj = hinge_objective(Z, y, cw, cb, C)
            if obj < best_obj:
                best_obj, best_w, best_b = obj, cw.copy(), cb
        history.append(best_obj)

    w_raw = best_w / sd
    b_raw = float(best_b - np.dot(w_raw, mu))
    model = SvmModel(w_raw, b_raw, kind, C, seed, epochs, objective_history=history)
    pred = np.where(X @ w_raw + b_raw >= 0.0, 1.0, -1.0)
    model.train_accuracy = float(np.mean(pred == y))
    return model


def svm_predict(model: SvmModel, feature: PairFeature) -> tuple[bool, float]:
    """``(within_jnd, margin)``; a margin of exactly zero counts as within."""
    if feature.kind != model.feature_kind:
        raise DataError(f"model expects {model.feature_kind!r} features, got {feature.kind!r}")
    margin = model.decision(feature.values)
    return margin >= 0.0, margin


def read_feature_file(path, kind: str | None = None):
    """Read a labelled pair-feature table: feature columns then a label column.

    A header row naming the columns (``pesq``, ``si_sdr``, ``label``) selects
    the feature kind; without one, ``kind`` must be given.
    """
    import csv

    text = Path(path).read_text()
    delimiter = "\t" if "\t" in text.splitlines()[0] else ","
    rows = [r for r in csv.reader(text.splitlines(), delimiter=delimiter) if r]
    if not rows:
        raise DataError(f"{path}: empty feature file")
    first = [c.strip().lower() for c in rows[0]]
    if first[-1] == "label":
        names = tuple(first[:-1])
        matches = [k for k, cols in FEATURE_COLUMNS.items() if cols == names]
        if not matches:
            raise DataError(f"{path}: unrecognised feature columns {names}")
        kind = matches[0]
        rows = rows[1:]
    elif kind is None:
        raise DataError(f"{path}: no header row; pass the feature kind explicitly")
    features, labels = [], []
    for lineno, row in enumerate(rows, 2):
        try:
            values = tuple(float(v) for v in row[:-1])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric feature") from None
        features.append(PairFeature(kind, values))
        labels.append(row[-1].strip())
    return features, labels


# ---------------------------------------------------------------------------
# manifest validation
# ---------------------------------------------------------------------------


@dataclass
class PairVerdict:
    index: int
    snr_hi_db: float
    snr_lo_db: float
    values: tuple[float, ...]
    margin: float
    within: bool


@dataclass
class ValidationReport:
    feature_kind: str
    verdicts: list[PairVerdict]

    @property
    def fraction_within(self) -> float:
        return sum(v.within for v in self.verdicts) / len(self.verdicts)

    def summary_line(self) -> str:
        n = len(self.verdicts)
        k = sum(v.within for v in self.verdicts)
        return f"fraction_within={self.fraction_within:.6f} within={k} pairs={n} kind={self.feature_kind}"

    def to_text(self) -> str:
        cols = FEATURE_COLUMNS[self.feature_kind]
        lines = ["# " + self.summary_line(), "\t".join(["index", "snr_hi_db", "snr_lo_db", *cols, "margin", "within"])]
        for v in sorted(self.verdicts, key=lambda v: v.index):
            lines.append("\t".join([str(v.index), f"{v.snr_hi_db:.6f}", f"{v.snr_lo_db:.6f}",
                                    *(f"{x:.6f}" for x in v.values), f"{v.margin:.6f}", str(int(v.within))]))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())


def validate_manifest(model: SvmModel, manifest: PairManifest, clean_corpus: Corpus, noise_corpus: Corpus,
                      extractor: PesqScorer | None = None, workers: int = 1) -> ValidationReport:
    if len(manifest) == 0:
        raise DataError("manifest has no pairs to validate")

    def judge(recipe):
        a, b = realize_pair(recipe, clean_corpus, noise_corpus)
        if recipe.snr_a_db >= recipe.snr_b_db:
            hi, lo, snr_hi, snr_lo = a, b, recipe.snr_a_db, recipe.snr_b_db
        else:
            hi, lo, snr_hi, snr_lo = b, a, recipe.snr_b_db, recipe.snr_a_db
        feat = extract_pair_feature(hi, lo, model.feature_kind, extractor)
        within, margin = svm_predict(model, feat)
        return PairVerdict(recipe.index, snr_hi, snr_lo, feat.values, margin, within)

    if workers <= 1:
        verdicts = [judge(r) for r in manifest.recipes]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            verdicts = list(pool.map(judge, manifest.recipes))
    return ValidationReport(model.feature_kind, verdicts)

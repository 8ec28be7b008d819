"""Contrastive pretraining over pair manifests and MOS fine-tuning.

All randomness is derived from ``(seed, purpose, step)`` rather than from a
running generator, so a run resumed from a checkpoint draws exactly what the
uninterrupted run would have drawn.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .audio import AudioClip, crop_at, random_offset
from .checkpoint import Checkpoint, save_checkpoint
from .corpus import Corpus
from .errors import ConfigError, DataError, TrainingError
from .losses import mse_loss, nt_xent_loss
from .model import EncoderConfig, JsqaModel, ModelConfig, init_params, _fan_in_uniform_
from .pairgen import PairManifest, realize_pair

log = logging.getLogger(__name__)

# purpose tags mixed into per-step seeds
_ORDER, _CROP, _DROPOUT, _HEAD = 1, 2, 3, 4


@dataclass
class PretrainConfig:
    batch_pairs: int = 8
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 45
    max_steps: int | None = None
    projection_enabled: bool = False
    temperature: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0
    workers: int = 1

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.batch_pairs < 2:
            raise ConfigError("batch_pairs must be at least 2 so every anchor has negatives")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


@dataclass
class FinetuneConfig:
    batch_size: int = 8
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 250
    max_steps: int | None = None
    freeze_encoder: bool = False
    crop_len: int = 32000
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")


@dataclass
class CurveRecord:
    step: int
    epoch: int
    loss: float
    seconds: float = 0.0


@dataclass
class CurveLog:
    """Per-step losses. Wall time goes to a sidecar file so the main file is reproducible."""

    records: list[CurveRecord] = field(default_factory=list)

    def append(self, step: int, epoch: int, loss: float, seconds: float = 0.0) -> None:
        if self.records and step <= self.records[-1].step:
            raise TrainingError(f"curve steps must increase ({step} after {self.records[-1].step})")
        self.records.append(CurveRecord(step, epoch, loss, seconds))

    def extend(self, other: "CurveLog") -> None:
        for r in other.records:
            self.append(r.step, r.epoch, r.loss, r.seconds)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records], dtype=np.float64)

    def to_tsv(self) -> str:
        lines = ["step\tepoch\tloss"] + [f"{r.step}\t{r.epoch}\t{r.loss!r}" for r in self.records]
        return "\n".join(lines) + "\n"

    def timing_tsv(self) -> str:
        lines = ["step\tseconds"] + [f"{r.step}\t{r.seconds:.6f}" for r in self.records]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_tsv())
        timing_path(path).write_text(self.timing_tsv())

    @classmethod
    def read(cls, path) -> "CurveLog":
        path = Path(path)
        try:
            rows = path.read_text().splitlines()[1:]
        except OSError as exc:
            raise DataError(f"cannot read curve log {path}: {exc}") from exc
        seconds = {}
        tp = timing_path(path)
        if tp.exists():
            for ln in tp.read_text().splitlines()[1:]:
                s, t = ln.split("\t")
                seconds[int(s)] = float(t)
        curve = cls()
        for ln in rows:
            if ln.strip():
                s, e, loss = ln.split("\t")
                curve.append(int(s), int(e), float(loss), seconds.get(int(s), 0.0))
        return curve


def timing_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".timing.tsv")


def smooth(values: Sequence[float], window: int = 20) -> np.ndarray:
    """Trailing moving average (only positions with a full window)."""
    v = np.asarray(values, dtype=np.float64)
    if window <= 1:
        return v.copy()
    if v.size < window:
        return v[:0].copy()
    c = np.cumsum(np.r_[0.0, v])
    return (c[window:] - c[:-window]) / window


def epoch_means(curve: CurveLog) -> dict[int, float]:
    out: dict[int, list[float]] = {}
    for r in curve.records:
        out.setdefault(r.epoch, []).append(r.loss)
    return {e: float(np.mean(v)) for e, v in sorted(out.items())}


def select_checkpoint_epoch(curve: CurveLog, span: int = 5, threshold: float = 0.01) -> int:
    """First epoch whose mean loss improved by less than ``threshold`` over the last ``span`` epochs."""
    means = epoch_means(curve)
    if not means:
        raise DataError("empty curve log")
    epochs = list(means)
    for i in range(span, len(epochs)):
        before, now = means[epochs[i - span]], means[epochs[i]]
        if before > 0 and (before - now) / before < threshold:
            return epochs[i]
    return epochs[-1]


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([p & 0xFFFFFFFF for p in parts]).generate_state(1, dtype=np.uint32)[0])


def _generator(*parts: int) -> torch.Generator:
    return torch.Generator().manual_seed(_seed(*parts))


def _adam(params, lr, betas, eps) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=tuple(betas), eps=eps, foreach=False)


def _model_dtype(model: torch.nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------


class _PairCache:
    def __init__(self, manifest: PairManifest, clean: Corpus, noise: Corpus, workers: int = 1):
        self.manifest, self.clean, self.noise = manifest, clean, noise
        self.workers = workers
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def get(self, positions: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
        missing = [p for p in positions if p not in self._cache]
        if missing:
            recipes = [self.manifest.recipes[p] for p in missing]
            if self.workers > 1:
                from concurrent.futures import ThreadPoolExecutor

                with ThreadPoolExecutor(self.workers) as pool:
                    clips = list(pool.map(lambda r: realize_pair(r, self.clean, self.noise), recipes))
            else:
                clips = [realize_pair(r, self.clean, self.noise) for r in recipes]
            for p, (a, b) in zip(missing, clips):
                self._cache[p] = (a.samples.astype(np.float32), b.samples.astype(np.float32))
        return [self._cache[p] for p in positions]


def pair_batch(pairs: Sequence[tuple[np.ndarray, np.ndarray]], dtype=torch.float32) -> torch.Tensor:
    """Stack pairs as rows a0, b0, a1, b1, ... so partners sit at (2k, 2k+1)."""
    rows = [x for pair in pairs for x in pair]
    return torch.from_numpy(np.stack(rows)).to(dtype)


def pretrain(cfg: PretrainConfig, manifest: PairManifest, clean_corpus: Corpus, noise_corpus: Corpus,
             encoder_cfg: EncoderConfig | None = None, resume: Checkpoint | None = None,
             out_dir=None) -> tuple[Checkpoint, CurveLog]:
    n_pairs = len(manifest)
    if n_pairs < cfg.batch_pairs:
        raise DataError(f"manifest has {n_pairs} pairs, fewer than one batch of {cfg.batch_pairs}")
    crop_len = manifest.config.crop_len

    if resume is not None:
        if resume.stage != "pretrain":
            raise ConfigError(f"cannot resume pretraining from a {resume.stage!r} checkpoint")
        model = resume.build_model()
        if model.cfg.projection.enabled != cfg.projection_enabled:
            raise ConfigError("projection setting differs from the checkpoint being resumed")
        step = resume.step
    else:
        model_cfg = ModelConfig.for_encoder(encoder_cfg or EncoderConfig(), cfg.projection_enabled)
        model = init_params(model_cfg, cfg.seed)
        step = 0
    rf = model.cfg.encoder.receptive_field()
    if crop_len < rf:
        raise ConfigError(f"pair crop length {crop_len} is shorter than the encoder receptive field {rf}")

    params = list(model.encoder.parameters())
    if model.projection is not None:
        params += list(model.projection.parameters())
    opt = _adam(params, cfg.learning_rate, cfg.betas, cfg.eps)
    if resume is not None:
        resume.restore_optimizer(opt)

    per_epoch = n_pairs // cfg.batch_pairs
    total = cfg.epochs * per_epoch
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    pairs = _PairCache(manifest, clean_corpus, noise_corpus, cfg.workers)
    dtype = _model_dtype(model)
    curve = CurveLog()
    t0 = time.perf_counter()
    order_epoch, order = -1, None

    model.train()
    while step < total:
        epoch = step // per_epoch
        if epoch != order_epoch:
            order = np.random.default_rng(_seed(cfg.seed, _ORDER, epoch)).permutation(n_pairs)
            order_epoch = epoch
        k = step % per_epoch
        positions = order[k * cfg.batch_pairs:(k + 1) * cfg.batch_pairs].tolist()
        x = pair_batch(pairs.get(positions), dtype)

        opt.zero_grad(set_to_none=True)
        z = model.contrastive_vectors(x, _generator(cfg.seed, _DROPOUT, step))
        loss = nt_xent_loss(z, cfg.temperature)
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite contrastive loss at step {step + 1}")
        loss.backward()
        opt.step()
        step += 1
        curve.append(step, epoch, float(loss.item()), time.perf_counter() - t0)

        if out_dir is not None and cfg.checkpoint_every and step % per_epoch == 0 and (epoch + 1) % cfg.checkpoint_every == 0:
            ck = Checkpoint.from_model(model, "pretrain", asdict(cfg), opt, epoch + 1, step, [cfg.seed])
            save_checkpoint(ck, Path(out_dir) / f"pretrain_epoch{epoch + 1:04d}.ckpt")

    lineage = list(resume.seed_lineage) if resume is not None else [cfg.seed]
    final_epoch = step // per_epoch
    return Checkpoint.from_model(model, "pretrain", asdict(cfg), opt, final_epoch, step, lineage), curve


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------


def attach_regressor(model: JsqaModel, seed: int) -> None:
    """Fresh regression-head weights drawn from ``seed``."""
    gen = _generator(seed, _HEAD)
    slope = model.cfg.regressor.leaky_slope
    for fc in [*model.regressor.hidden, model.regressor.out]:
        _fan_in_uniform_(fc.weight, fc.weight.shape[1], slope, gen)
        torch.nn.init.zeros_(fc.bias)


def _check_labels(samples: Sequence[tuple[str, AudioClip, float]]) -> None:
    if not samples:
        raise DataError("fine-tuning dataset is empty")
    for key, _, mos in samples:
        if not 1.0 <= mos <= 5.0:
            raise DataError(f"{key}: MOS {mos} outside [1, 5]")


def finetune(cfg: FinetuneConfig, samples: Sequence[tuple[str, AudioClip, float]],
             checkpoint: Checkpoint | None = None, encoder_cfg: EncoderConfig | None = None) -> tuple[Checkpoint, CurveLog]:
    """Train encoder + regression head on ``(key, clip, mos)`` samples with MSE.

    Starting from a pretraining checkpoint attaches a fresh head; starting from
    a fine-tuning checkpoint resumes it; no checkpoint trains from scratch.
    """
    _check_labels(samples)
    samples = sorted(samples, key=lambda t: t[0])
    if checkpoint is None:
        model = init_params(ModelConfig.for_encoder(encoder_cfg or EncoderConfig()), cfg.seed)
        attach_regressor(model, cfg.seed)
        step, lineage = 0, [cfg.seed]
    else:
        model = checkpoint.build_model()
        if checkpoint.stage == "finetune":
            step, lineage = checkpoint.step, list(checkpoint.seed_lineage)
        else:
            attach_regressor(model, cfg.seed)
            step, lineage = 0, list(checkpoint.seed_lineage) + [cfg.seed]
    rf = model.cfg.encoder.receptive_field()
    if cfg.crop_len < rf:
        raise ConfigError(f"crop_len {cfg.crop_len} is shorter than the encoder receptive field {rf}")

    for p in model.encoder.parameters():
        p.requires_grad_(not cfg.freeze_encoder)
    params = list(model.regressor.parameters())
    if not cfg.freeze_encoder:
        params = list(model.encoder.parameters()) + params
    opt = _adam(params, cfg.learning_rate, cfg.betas, cfg.eps)
    if checkpoint is not None and checkpoint.stage == "finetune":
        checkpoint.restore_optimizer(opt)

    n = len(samples)
    per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * per_epoch
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    dtype = _model_dtype(model)
    curve = CurveLog()
    t0 = time.perf_counter()
    order_epoch, order = -1, None

    model.train()
    if cfg.freeze_encoder:
        model.encoder.eval()  # keep batch-norm running statistics untouched
    while step < total:
        epoch = step // per_epoch
        if epoch != order_epoch:
            order = np.random.default_rng(_seed(cfg.seed, _ORDER, epoch)).permutation(n)
            order_epoch = epoch
        k = step % per_epoch
        idx = order[k * cfg.batch_size:(k + 1) * cfg.batch_size]
        rows = []
        for j, i in enumerate(idx):
            clip = samples[i][1]
            rng = np.random.default_rng(_seed(cfg.seed, _CROP, step, j))
            rows.append(crop_at(clip, random_offset(len(clip), cfg.crop_len, rng), cfg.crop_len).samples)
        x = torch.from_numpy(np.stack(rows)).to(dtype)
        y = torch.tensor([samples[i][2] for i in idx], dtype=dtype)

        opt.zero_grad(set_to_none=True)
        loss = mse_loss(model(x), y)
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite MSE at step {step + 1}")
        loss.backward()
        opt.step()
        step += 1
        curve.append(step, epoch, float(loss.item()), time.perf_counter() - t0)

    for p in model.encoder.parameters():
        p.requires_grad_(True)
    return Checkpoint.from_model(model, "finetune", asdict(cfg), opt, step // per_epoch, step, lineage), curve


@torch.no_grad()
def predict_mos(model: JsqaModel, clip: AudioClip) -> float:
    """Eval-mode score for one full-length clip (zero-padded up to the receptive field)."""
    model.eval()
    x = clip.samples
    rf = model.cfg.encoder.receptive_field()
    if x.shape[0] < rf:
        x = np.pad(x, (0, rf - x.shape[0]))
    return float(model(torch.from_numpy(x[None, :]).to(_model_dtype(model))).item())


def split_dataset(samples: Sequence, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0):
    """Seeded disjoint train/val/test partition with sizes rounded from ``ratios``."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"ratios must be three non-negative numbers summing to 1, got {tuple(ratios)}")
    n = len(samples)
    n_train = int(round(ratios[0] * n))
    n_val = min(int(round(ratios[1] * n)), n - n_train)
    perm = np.random.default_rng(seed).permutation(n)
    pick = [samples[i] for i in perm]
    return pick[:n_train], pick[n_train:n_train + n_val], pick[n_train + n_val:]

"""JND pair synthesis: one clean utterance, one noise excerpt, two nearby SNRs.

Both members of a pair share the clean segment and the noise segment; they
differ only in the gain applied to the noise. Manifests store recipes, not
audio, and every recipe can be re-realised bit-exactly from the corpora.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip, crop_at, random_offset, save_audio, signal_power
from .corpus import Corpus
from .errors import ConfigError, DataError, LengthMismatchError, ManifestMismatchError, ZeroPowerError

MANIFEST_FORMAT = "jsqa-pair-manifest"
MANIFEST_VERSION = 1
_MAX_DRAWS = 16


@dataclass
class PairGenConfig:
    snr_global_range: tuple[float, float] = (-3.0, 9.0)
    window_width_db: float = 6.0
    pair_count: int = 8
    crop_len: int = 32000
    seed: int = 0

    def __post_init__(self):
        self.snr_global_range = (float(self.snr_global_range[0]), float(self.snr_global_range[1]))
        self.validate()

    def validate(self) -> None:
        lo, hi = self.snr_global_range
        if self.window_width_db < 0:
            raise ConfigError("window_width_db must be non-negative")
        if hi - lo < self.window_width_db:
            raise ConfigError(f"SNR range ({lo}, {hi}) is narrower than the {self.window_width_db} dB window")
        if self.pair_count < 0:
            raise ConfigError("pair_count must be non-negative")
        if self.crop_len <= 0:
            raise ConfigError("crop_len must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["snr_global_range"] = list(self.snr_global_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PairGenConfig":
        return cls(**{**d, "snr_global_range": tuple(d["snr_global_range"])})


@dataclass(frozen=True)
class JndPairRecipe:
    index: int
    clean_id: str
    noise_id: str
    snr_a_db: float
    snr_b_db: float
    scale_m: float
    scale_n: float
    clean_offset: int
    noise_offset: int
    crop_len: int
    seed: int

    @property
    def delta_snr_db(self) -> float:
        return abs(self.snr_a_db - self.snr_b_db)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "JndPairRecipe":
        return cls(**d)


@dataclass
class PairManifest:
    config: PairGenConfig
    recipes: list[JndPairRecipe] = field(default_factory=list)
    corpus_sizes: tuple[int, int] = (0, 0)

    def __len__(self) -> int:
        return len(self.recipes)

    def header(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "config": self.config.to_dict(),
            "clean_clips": self.corpus_sizes[0],
            "noise_clips": self.corpus_sizes[1],
        }

    def dumps(self) -> str:
        lines = [_dump_line(self.header())]
        lines += [_dump_line(r.to_dict()) for r in self.recipes]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "PairManifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise DataError("empty manifest file")
        try:
            header = json.loads(lines[0])
            if header.get("format") != MANIFEST_FORMAT:
                raise DataError(f"not a pair manifest (format={header.get('format')!r})")
            if header.get("version") != MANIFEST_VERSION:
                raise DataError(f"unsupported manifest version {header.get('version')}")
            recipes = [JndPairRecipe.from_dict(json.loads(ln)) for ln in lines[1:]]
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise DataError(f"malformed manifest: {exc}") from exc
        return cls(
            PairGenConfig.from_dict(header["config"]),
            recipes,
            (header.get("clean_clips", 0), header.get("noise_clips", 0)),
        )

    @classmethod
    def read(cls, path) -> "PairManifest":
        try:
            return cls.loads(Path(path).read_text())
        except OSError as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc

    def abs_delta_snr(self) -> np.ndarray:
        return np.array([r.delta_snr_db for r in self.recipes], dtype=np.float64)


def _dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_snr_window(rng: np.random.Generator, cfg: PairGenConfig) -> tuple[float, float]:
    """A window of width ``cfg.window_width_db`` placed uniformly inside the global range."""
    lo, hi = cfg.snr_global_range
    w = cfg.window_width_db
    start = lo + rng.uniform(0.0, 1.0) * (hi - lo - w)
    return start, start + w


def sample_snr_pair(rng: np.random.Generator, window: tuple[float, float]) -> tuple[float, float]:
    w_lo, w_hi = window
    a, b = rng.uniform(0.0, 1.0, size=2)
    return w_lo + a * (w_hi - w_lo), w_lo + b * (w_hi - w_lo)


# ---------------------------------------------------------------------------
# mixing
# ---------------------------------------------------------------------------


def noise_scale_for_snr(clean, noise, snr_db: float) -> float:
    """Gain for ``noise`` so that clean-to-scaled-noise power ratio is ``snr_db``."""
    p_clean = signal_power(clean)
    p_noise = signal_power(noise)
    if p_noise <= 0.0:
        raise ZeroPowerError("noise has zero power")
    if p_clean <= 0.0:
        raise ZeroPowerError("clean signal has zero power")
    return math.sqrt(p_clean / p_noise * 10.0 ** (-snr_db / 10.0))


def mix_with_scale(clean: AudioClip, noise: AudioClip, scale: float) -> AudioClip:
    if len(clean) != len(noise):
        raise LengthMismatchError(f"clean has {len(clean)} samples, noise has {len(noise)}")
    if clean.sample_rate != noise.sample_rate:
        raise DataError("clean and noise sample rates differ")
    return AudioClip(clean.samples + scale * noise.samples, clean.sample_rate)


def mix_at_snr(clean: AudioClip, noise: AudioClip, snr_db: float) -> AudioClip:
    if len(clean) != len(noise):
        raise LengthMismatchError(f"clean has {len(clean)} samples, noise has {len(noise)}")
    return mix_with_scale(clean, noise, noise_scale_for_snr(clean, noise, snr_db))


def noise_excerpt(noise: AudioClip, offset: int, length: int) -> AudioClip:
    """``length`` samples from ``offset``; recordings shorter than that are looped."""
    if len(noise) >= length:
        return crop_at(noise, offset, length)
    return AudioClip(np.resize(noise.samples, length), noise.sample_rate)


# ---------------------------------------------------------------------------
# pairs and manifests
# ---------------------------------------------------------------------------


def build_pair(clean: AudioClip, noise: AudioClip, rng: np.random.Generator, cfg: PairGenConfig,
               clean_id: str = "", noise_id: str = "", index: int = 0):
    """Draw one recipe and realise it. Returns ``(recipe, clip_a, clip_b)``."""
    n = cfg.crop_len
    for _ in range(_MAX_DRAWS):
        clean_offset = random_offset(len(clean), n, rng)
        noise_offset = random_offset(len(noise), n, rng)
        clean_seg = crop_at(clean, clean_offset, n)
        noise_seg = noise_excerpt(noise, noise_offset, n)
        window = sample_snr_window(rng, cfg)
        snr_a, snr_b = sample_snr_pair(rng, window)
        try:
            m = noise_scale_for_snr(clean_seg, noise_seg, snr_a)
            s = noise_scale_for_snr(clean_seg, noise_seg, snr_b)
        except ZeroPowerError:
            continue  # silent excerpt: redraw offsets
        recipe = JndPairRecipe(index, clean_id, noise_id, snr_a, snr_b, m, s,
                               clean_offset, noise_offset, n, cfg.seed)
        return recipe, mix_with_scale(clean_seg, noise_seg, m), mix_with_scale(clean_seg, noise_seg, s)
    raise ZeroPowerError(f"could not find a non-silent excerpt for pair {index} ({clean_id}, {noise_id})")


def pair_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)])


def build_manifest(clean_corpus: Corpus, noise_corpus: Corpus, cfg: PairGenConfig) -> PairManifest:
    clean_corpus.require_nonempty("clean corpus")
    noise_corpus.require_nonempty("noise corpus")
    recipes = []
    for i in range(cfg.pair_count):
        rng = pair_rng(cfg.seed, i)
        cid = clean_corpus.ids[int(rng.integers(len(clean_corpus)))]
        nid = noise_corpus.ids[int(rng.integers(len(noise_corpus)))]
        recipe, _, _ = build_pair(clean_corpus.load(cid), noise_corpus.load(nid), rng, cfg, cid, nid, i)
        recipes.append(recipe)
    return PairManifest(cfg, recipes, (len(clean_corpus), len(noise_corpus)))


def realize_pair(recipe: JndPairRecipe, clean_corpus: Corpus, noise_corpus: Corpus) -> tuple[AudioClip, AudioClip]:
    """Rebuild both clips of a recipe, checking the corpora still match it."""
    if recipe.clean_id not in clean_corpus or recipe.noise_id not in noise_corpus:
        raise ManifestMismatchError(f"pair {recipe.index}: clip ids not found in corpora")
    clean_seg = crop_at(clean_corpus.load(recipe.clean_id), recipe.clean_offset, recipe.crop_len)
    noise_seg = noise_excerpt(noise_corpus.load(recipe.noise_id), recipe.noise_offset, recipe.crop_len)
    m = noise_scale_for_snr(clean_seg, noise_seg, recipe.snr_a_db)
    if not math.isclose(m, recipe.scale_m, rel_tol=1e-9):
        raise ManifestMismatchError(f"pair {recipe.index}: corpus audio differs from the manifest's")
    return (mix_with_scale(clean_seg, noise_seg, recipe.scale_m),
            mix_with_scale(clean_seg, noise_seg, recipe.scale_n))


def realize_manifest(manifest: PairManifest, clean_corpus: Corpus, noise_corpus: Corpus, workers: int = 1):
    """Yield ``(recipe, clip_a, clip_b)`` in manifest order; ``workers`` only affects speed."""
    def job(r):
        return (r, *realize_pair(r, clean_corpus, noise_corpus))

    if workers <= 1:
        yield from map(job, manifest.recipes)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(job, manifest.recipes)


def cache_pairs_to_wav(manifest: PairManifest, clean_corpus: Corpus, noise_corpus: Corpus, out_dir, workers: int = 1) -> int:
    out_dir = Path(out_dir)
    count = 0
    for r, a, b in realize_manifest(manifest, clean_corpus, noise_corpus, workers):
        save_audio(a, out_dir / f"pair_{r.index:06d}_a.wav")
        save_audio(b, out_dir / f"pair_{r.index:06d}_b.wav")
        count += 1
    return count


def delta_snr_summary(manifest: PairManifest) -> dict:
    d = manifest.abs_delta_snr()
    if d.size == 0:
        return {"pairs": 0, "mean": float("nan"), "min": float("nan"), "max": float("nan")}
    return {"pairs": int(d.size), "mean": float(d.mean()), "min": float(d.min()), "max": float(d.max())}

"""Small synthetic corpora standing in for real speech/noise at desk scale.

"Speech" is a harmonic source with a wandering pitch, a few formant-like
resonances and a syllable-rate envelope. Noises are coloured, babble-like, or
hum. None of this is meant to sound natural; it only needs the right kinds of
structure for the pipeline to be exercised end to end.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import signal

from .audio import TARGET_SR, AudioClip, save_audio
from .corpus import MosSample, write_mos_table
from .pairgen import mix_at_snr, noise_excerpt

NOISE_KINDS = ("white", "pink", "brown", "babble", "hum")


def synthetic_speech(rng: np.random.Generator, seconds: float = 2.0, sr: int = TARGET_SR) -> np.ndarray:
    n = int(seconds * sr)
    t = np.arange(n) / sr
    f0 = rng.uniform(90, 240) * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 6.3)))
    phase = 2 * np.pi * np.cumsum(f0) / sr
    src = sum(np.sin(k * phase) / k for k in range(1, 25))
    out = np.zeros(n)
    for fc in rng.uniform([300, 900, 2000], [900, 2000, 3500]):
        b, a = signal.iirpeak(fc, Q=4.0, fs=sr)
        out += signal.lfilter(b, a, src)
    env = np.clip(np.sin(2 * np.pi * rng.uniform(2.5, 5.0) * t + rng.uniform(0, 6.3)), 0, None) ** 0.7
    out *= env
    return 0.25 * out / (np.max(np.abs(out)) + 1e-12)


def synthetic_noise(rng: np.random.Generator, seconds: float = 3.0, kind: str = "pink", sr: int = TARGET_SR) -> np.ndarray:
    n = int(seconds * sr)
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind in ("pink", "brown"):
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.arange(spec.size, dtype=np.float64)
        f[0] = 1.0
        spec /= f ** (0.5 if kind == "pink" else 1.0)
        x = np.fft.irfft(spec, n)
    elif kind == "babble":
        x = sum(synthetic_speech(rng, seconds, sr) for _ in range(6))
    elif kind == "hum":
        t = np.arange(n) / sr
        f = rng.choice([50.0, 60.0])
        x = sum(np.sin(2 * np.pi * f * k * t) / k for k in range(1, 8)) + 0.05 * rng.standard_normal(n)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    return 0.2 * x / (np.max(np.abs(x)) + 1e-12)


def toy_clips(n_clean: int = 8, n_noise: int = 4, seed: int = 0, clean_seconds: float = 1.5,
              noise_seconds: float = 3.0) -> tuple[dict[str, AudioClip], dict[str, AudioClip]]:
    rng = np.random.default_rng(seed)
    clean = {f"spk{i:03d}.wav": AudioClip(synthetic_speech(rng, clean_seconds), TARGET_SR) for i in range(n_clean)}
    noise = {}
    for i in range(n_noise):
        kind = NOISE_KINDS[i % len(NOISE_KINDS)]
        noise[f"{kind}_{i:03d}.wav"] = AudioClip(synthetic_noise(rng, noise_seconds, kind), TARGET_SR)
    return clean, noise


def write_toy_corpora(root, n_clean: int = 8, n_noise: int = 4, seed: int = 0,
                      clean_seconds: float = 1.5, noise_seconds: float = 3.0) -> tuple[Path, Path]:
    root = Path(root)
    clean, noise = toy_clips(n_clean, n_noise, seed, clean_seconds, noise_seconds)
    for name, clip in clean.items():
        save_audio(clip, root / "clean" / name)
    for name, clip in noise.items():
        save_audio(clip, root / "noise" / name)
    return root / "clean", root / "noise"


def snr_to_mos(snr_db) -> np.ndarray:
    """A smooth stand-in for listener ratings: low SNR ~ 1, high SNR ~ 5."""
    return 1.0 + 4.0 / (1.0 + np.exp(-(np.asarray(snr_db, dtype=np.float64) - 6.0) / 4.0))


def toy_mos_set(n: int = 8, seed: int = 0, seconds: float = 1.0, snr_range=(-5.0, 25.0)) -> list[tuple[str, AudioClip, float]]:
    rng = np.random.default_rng(seed)
    out = []
    kinds = NOISE_KINDS[:3]
    snrs = np.linspace(*snr_range, n) if n > 1 else np.array([np.mean(snr_range)])
    for i, snr in enumerate(snrs):
        clean = AudioClip(synthetic_speech(rng, seconds), TARGET_SR)
        noise = AudioClip(synthetic_noise(rng, seconds, kinds[i % len(kinds)]), TARGET_SR)
        mix = mix_at_snr(clean, noise_excerpt(noise, 0, len(clean)), float(snr))
        peak = np.max(np.abs(mix.samples))
        if peak > 0.99:
            mix = AudioClip(mix.samples * 0.99 / peak, mix.sample_rate)
        out.append((f"mos_{i:04d}.wav", mix, round(float(snr_to_mos(snr)), 4)))
    return out


def write_toy_mos_set(root, n: int = 8, seed: int = 0, seconds: float = 1.0) -> Path:
    root = Path(root)
    items = toy_mos_set(n, seed, seconds)
    for name, clip, _ in items:
        save_audio(clip, root / name)
    table = root / "mos.tsv"
    write_mos_table([MosSample(name, mos) for name, _, mos in items], table)
    return table

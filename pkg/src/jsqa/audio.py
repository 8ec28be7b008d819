"""Audio buffers, WAV I/O and the small set of DSP primitives the pipeline needs."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.io import wavfile

from . import _kernels
from .errors import AudioReadError, DataError, UnsupportedEncodingError

TARGET_SR = 16000
KAISER_BETA = 5.0
FILTER_HALF_WIDTH = 10  # taps per side, in units of the slower rate's period

CropPolicy = Literal["random-crop", "center-crop", "zero-pad"]


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Waveform in [-1, 1]. ``samples`` is (frames,) or (frames, channels)."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _samples(x) -> np.ndarray:
    return x.samples if isinstance(x, AudioClip) else np.asarray(x, dtype=np.float64)


def load_audio(path, mono: bool = False) -> AudioClip:
    """Read a 16-bit PCM or 32-bit float WAV file.

    Channels are kept unless ``mono`` is set, in which case they are averaged.
    """
    path = Path(path)
    if not path.is_file():
        raise AudioReadError(f"no such file: {path}")
    try:
        sr, data = wavfile.read(path)
    except ValueError as exc:
        msg = str(exc)
        # scipy says "File format ... not understood" for non-RIFF input; other
        # ValueErrors are about the sample encoding inside a valid container
        if not msg.startswith("File format"):
            raise UnsupportedEncodingError(f"{path}: {msg}") from exc
        raise AudioReadError(f"{path}: {msg}") from exc
    except (OSError, EOFError) as exc:
        raise AudioReadError(f"{path}: {exc}") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedEncodingError(f"{path}: unsupported sample type {data.dtype}")
    if samples.shape[0] == 0:
        raise AudioReadError(f"{path}: no samples")
    clip = AudioClip(samples, sr)
    return downmix(clip) if mono else clip


def save_audio(clip: AudioClip, path) -> None:
    """Write ``clip`` as 16-bit PCM. Out-of-range samples saturate with a warning."""
    x = clip.samples
    if np.any(np.abs(x) > 1.0):
        warnings.warn(f"clipping {int(np.sum(np.abs(x) > 1.0))} samples outside [-1, 1]", RuntimeWarning, stacklevel=2)
    q = np.clip(np.rint(x * 32768.0), -32768, 32767).astype(np.int16)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        wavfile.write(path, clip.sample_rate, q)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def downmix(clip: AudioClip) -> AudioClip:
    if clip.samples.ndim == 1:
        return clip
    return AudioClip(clip.samples.mean(axis=1), clip.sample_rate)


def design_resample_filter(up: int, down: int) -> np.ndarray:
    """Kaiser-windowed sinc low-pass for an up/down polyphase resampler."""
    max_rate = max(up, down)
    half = FILTER_HALF_WIDTH * max_rate
    n = np.arange(-half, half + 1, dtype=np.float64)
    cutoff = 1.0 / max_rate
    h = cutoff * np.sinc(cutoff * n) * np.kaiser(2 * half + 1, KAISER_BETA)
    return h / h.sum() * up


def resample(clip: AudioClip, target_sr: int = TARGET_SR) -> AudioClip:
    if clip.sample_rate == target_sr:
        return clip
    g = math.gcd(target_sr, clip.sample_rate)
    up, down = target_sr // g, clip.sample_rate // g
    h = design_resample_filter(up, down)
    delay = (h.shape[0] - 1) // 2
    n_out = -(-len(clip) * up // down)
    x = clip.samples
    if x.ndim == 1:
        y = _kernels.resample_polyphase(x, h, up, down, delay, n_out)
    else:
        y = np.stack(
            [_kernels.resample_polyphase(x[:, c], h, up, down, delay, n_out) for c in range(x.shape[1])],
            axis=1,
        )
    return AudioClip(y, target_sr)


def resample_to_16k(clip: AudioClip) -> AudioClip:
    if clip.sample_rate < 8000:
        raise DataError(f"sample rate {clip.sample_rate} Hz is below the 8 kHz minimum")
    return resample(clip, TARGET_SR)


def normalize_clip(clip: AudioClip) -> AudioClip:
    """Mono, 16 kHz, finite, non-empty: the form every model input must take."""
    clip = resample_to_16k(downmix(clip))
    if len(clip) == 0:
        raise DataError("empty clip")
    if not np.all(np.isfinite(clip.samples)):
        raise DataError("clip contains NaN or Inf")
    return clip


def signal_power(clip) -> float:
    """Mean squared amplitude."""
    x = _samples(clip)
    if x.size == 0:
        raise DataError("signal power of an empty clip is undefined")
    x = x.ravel()
    return float(np.dot(x, x) / x.shape[0])


def random_offset(length: int, target_len: int, rng: np.random.Generator) -> int:
    if length <= target_len:
        return 0
    return int(rng.integers(0, length - target_len + 1))


def crop_at(clip: AudioClip, offset: int, target_len: int) -> AudioClip:
    """``target_len`` samples starting at ``offset``, zero-padded at the end if short."""
    seg = clip.samples[offset:offset + target_len]
    if seg.shape[0] < target_len:
        pad = [(0, target_len - seg.shape[0])] + [(0, 0)] * (seg.ndim - 1)
        seg = np.pad(seg, pad)
    return AudioClip(seg, clip.sample_rate)


def crop_or_pad(clip: AudioClip, target_len: int, policy: CropPolicy = "random-crop",
                rng: np.random.Generator | None = None) -> AudioClip:
    if target_len <= 0:
        raise DataError(f"target_len must be positive, got {target_len}")
    n = len(clip)
    if n == target_len:
        return clip
    if policy == "random-crop":
        if rng is None:
            raise DataError("random-crop needs a seeded generator")
        offset = random_offset(n, target_len, rng)
    elif policy == "center-crop":
        offset = max(0, (n - target_len) // 2)
    elif policy == "zero-pad":
        offset = 0
    else:
        raise DataError(f"unknown crop policy {policy!r}")
    return crop_at(clip, offset, target_len)

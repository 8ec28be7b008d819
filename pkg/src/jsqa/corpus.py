"""Corpus directories (recursive ``.wav`` scan) and MOS label tables."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .audio import AudioClip, load_audio, normalize_clip, signal_power
from .errors import DataError, EmptyCorpusError

log = logging.getLogger(__name__)

MIN_POWER = 1e-12


def scan_wavs(root) -> list[str]:
    """Relative POSIX paths of every ``.wav`` under ``root``, sorted."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"corpus root is not a directory: {root}")
    return sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.suffix.lower() == ".wav" and p.is_file())


class Corpus:
    """An ordered, power-filtered set of clips addressed by string id.

    Clips are normalised (mono, 16 kHz) on load and cached in memory.
    """

    def __init__(self, clips: Mapping[str, AudioClip] | None = None, root=None, ids: Iterable[str] = ()):
        self.root = Path(root) if root is not None else None
        self._cache: dict[str, AudioClip] = {}
        if clips is not None:
            for k, clip in clips.items():
                self._cache[k] = normalize_clip(clip)
            self.ids = sorted(self._cache)
        else:
            self.ids = list(ids)
        self.rejected: list[str] = []

    @classmethod
    def scan(cls, root, min_power: float = MIN_POWER) -> "Corpus":
        corpus = cls(root=root, ids=scan_wavs(root))
        corpus.filter_power(min_power)
        return corpus

    @classmethod
    def from_clips(cls, clips: Mapping[str, AudioClip], min_power: float = MIN_POWER) -> "Corpus":
        corpus = cls(clips=clips)
        corpus.filter_power(min_power)
        return corpus

    def filter_power(self, min_power: float = MIN_POWER) -> None:
        keep = []
        for cid in self.ids:
            if signal_power(self.load(cid)) < min_power:
                self.rejected.append(cid)
                self._cache.pop(cid, None)
            else:
                keep.append(cid)
        if self.rejected:
            log.info("rejected %d near-silent clips", len(self.rejected))
        self.ids = keep

    def require_nonempty(self, name: str = "corpus") -> None:
        if not self.ids:
            raise EmptyCorpusError(f"{name} has no usable clips")

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, cid: str) -> bool:
        return cid in self.ids

    def load(self, cid: str) -> AudioClip:
        clip = self._cache.get(cid)
        if clip is None:
            if self.root is None:
                raise DataError(f"unknown clip id {cid!r}")
            clip = normalize_clip(load_audio(self.root / cid))
            self._cache[cid] = clip
        return clip


@dataclass(frozen=True)
class MosSample:
    path: str
    mos: float


def read_mos_table(path) -> list[MosSample]:
    """Read ``(relative wav path, mos)`` rows. A non-numeric first row is a header."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read MOS table {path}: {exc}") from exc
    delimiter = "\t" if "\t" in text.splitlines()[0] else ","
    rows = [r for r in csv.reader(text.splitlines(), delimiter=delimiter) if r and any(c.strip() for c in r)]
    samples = []
    for lineno, row in enumerate(rows, 1):
        if len(row) < 2:
            raise DataError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
        try:
            mos = float(row[1])
        except ValueError:
            if lineno == 1:
                continue
            raise DataError(f"{path}:{lineno}: bad MOS value {row[1]!r}") from None
        if not 1.0 <= mos <= 5.0:
            raise DataError(f"{path}:{lineno}: MOS {mos} outside [1, 5]")
        samples.append(MosSample(row[0].strip(), mos))
    if not samples:
        raise DataError(f"{path}: no samples")
    return samples


def write_mos_table(samples: Iterable[MosSample], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["path", "mos"])
        for s in samples:
            w.writerow([s.path, repr(float(s.mos))])

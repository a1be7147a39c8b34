"""Stem-folder ingestion, synthetic corpora, snippet sampling, augmentation.

Disk layout: ``<root>/<track>/mixture.wav`` plus ``vocals.wav`` and
``accompaniment.wav`` per track folder. A root may optionally contain
``train/`` and ``test/`` partition directories in the same per-track
layout; a flat root is treated as a train partition with an empty test
set. Everything is resampled to 22050 Hz on ingestion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .errors import DataError

TARGET_RATE = 22050
STEM_NAMES = ("vocals", "accompaniment")
MIX_TOLERANCE = 1e-4
AUGMENT_RANGE = (0.7, 1.0)


@dataclass
class Track:
    """A mixture with aligned ground-truth stems."""

    name: str
    mixture: np.ndarray                  # [channels, samples] float32
    stems: dict[str, np.ndarray]
    sample_rate: int = TARGET_RATE
    annotations: dict = field(default_factory=dict)

    @property
    def num_samples(self) -> int:
        return self.mixture.shape[1]

    @property
    def channels(self) -> int:
        return self.mixture.shape[0]

    def validate(self) -> None:
        shapes = {self.mixture.shape} | {s.shape for s in self.stems.values()}
        if len(shapes) != 1:
            raise DataError(f"track {self.name}: waveform shapes differ: {shapes}")
        total = sum(self.stems.values())
        if np.max(np.abs(self.mixture - total)) > MIX_TOLERANCE:
            raise DataError(f"track {self.name}: mixture is not the stem sum")


@dataclass
class DatasetSplit:
    train: list[Track]
    validation: list[Track]
    test: list[Track]
    split_seed: int = 0

    def validate(self) -> None:
        names = [t.name for part in (self.train, self.validation, self.test) for t in part]
        if len(names) != len(set(names)):
            raise DataError("split parts share track names")


@dataclass
class Snippet:
    """Aligned slices of a track's mixture and stems."""

    mixture: np.ndarray
    stems: dict[str, np.ndarray]
    offset: int


def split_train_validation(names: list[str], seed: int) -> tuple[list[str], list[str]]:
    """Deterministic 75/25 split of a train partition's track names."""
    ordered = sorted(names)
    rng = np.random.default_rng(seed)
    perm = [ordered[i] for i in rng.permutation(len(ordered))]
    n_val = max(1, round(0.25 * len(ordered)))
    n_val = min(n_val, len(ordered) - 1)
    return sorted(perm[n_val:]), sorted(perm[:n_val])


# ----- synthetic corpus ------------------------------------------------------------


def _vocal_stem(rng: np.random.Generator, seconds: int, sample_rate: int,
                channels: int) -> tuple[np.ndarray, list[int]]:
    n = seconds * sample_rate
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(110.0, 440.0)
    wave = np.zeros(n)
    for h in range(1, 5):
        amp = rng.uniform(0.2, 1.0) / h
        wave += amp * np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
    env = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(0.25, 1.5) * t + rng.uniform(0, 2 * np.pi))
    mono = wave * env
    mono *= 0.55 / np.max(np.abs(mono))

    max_gaps = max(1, seconds // 6)
    n_gaps = int(rng.integers(1, max_gaps + 1))
    gap_seconds = sorted(int(s) for s in rng.choice(seconds, size=n_gaps, replace=False))

    pans = rng.uniform(0.7, 1.0, size=channels)
    stem = np.stack([mono * p for p in pans]).astype(np.float32)
    for s in gap_seconds:
        stem[:, s * sample_rate:(s + 1) * sample_rate] = 0.0
    return stem, gap_seconds


def _accompaniment_stem(rng: np.random.Generator, seconds: int, sample_rate: int,
                        channels: int) -> np.ndarray:
    n = seconds * sample_rate
    t = np.arange(n) / sample_rate
    noise = rng.normal(size=(channels, n))
    cutoff = rng.uniform(1500.0, min(5000.0, 0.45 * sample_rate))
    sos = signal.butter(4, cutoff, fs=sample_rate, output="sos")
    band = signal.sosfilt(sos, noise, axis=-1)
    band /= np.max(np.abs(band))
    bass = np.zeros(n)
    for _ in range(2):
        f = rng.uniform(55.0, 220.0)
        am = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.1, 0.8) * t + rng.uniform(0, 2 * np.pi))
        bass += am * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    bass /= np.max(np.abs(bass))
    pans = rng.uniform(0.7, 1.0, size=channels)
    stem = 0.6 * band + 0.4 * np.stack([bass * p for p in pans])
    stem *= 0.4 / np.max(np.abs(stem))
    return stem.astype(np.float32)


def synth_dataset(seed: int, n_tracks: int = 12, duration: float = 30.0,
                  sample_rate: int = TARGET_RATE, channels: int = 2) -> DatasetSplit:
    """Deterministic synthetic corpus with silent-vocal seconds annotated.

    Vocals are amplitude-modulated harmonic tones with whole-second silent
    gaps; accompaniment is band-limited noise plus low-frequency tones.
    Mixtures are exact stem sums with all values inside [-1, 1].
    """
    if n_tracks < 3:
        raise DataError(f"synthetic corpus needs at least 3 tracks, got {n_tracks}")
    seconds = max(1, int(round(duration)))
    rng = np.random.default_rng(seed)
    tracks = []
    for idx in range(n_tracks):
        vocals, gaps = _vocal_stem(rng, seconds, sample_rate, channels)
        acc = _accompaniment_stem(rng, seconds, sample_rate, channels)
        mixture = vocals + acc
        track = Track(
            name=f"synth_{idx:03d}",
            mixture=mixture,
            stems={"vocals": vocals, "accompaniment": acc},
            sample_rate=sample_rate,
            annotations={"silent_vocal_seconds": gaps},
        )
        track.validate()
        tracks.append(track)

    by_name = {t.name: t for t in tracks}
    names = sorted(by_name)
    n_test = max(1, n_tracks // 3)
    perm = [names[i] for i in np.random.default_rng(seed + 1).permutation(len(names))]
    test_names = sorted(perm[:n_test])
    train_names, val_names = split_train_validation(perm[n_test:], seed)
    split = DatasetSplit(
        train=[by_name[n] for n in train_names],
        validation=[by_name[n] for n in val_names],
        test=[by_name[n] for n in test_names],
        split_seed=seed,
    )
    split.validate()
    return split


# ----- disk ingestion --------------------------------------------------------------


def _read_wav(path: Path) -> tuple[int, np.ndarray]:
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float32) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float32) - 128.0) / 128.0
    else:
        data = data.astype(np.float32)
    if data.ndim == 1:
        data = data[:, None]
    return rate, np.ascontiguousarray(data.T)  # [channels, samples]


def _resample(x: np.ndarray, rate: int, target: int) -> np.ndarray:
    if rate == target:
        return x
    frac = Fraction(target, rate)
    try:
        out = signal.resample_poly(x, frac.numerator, frac.denominator, axis=-1)
    except Exception as exc:
        raise DataError(f"resampling {rate} -> {target} Hz failed: {exc}") from exc
    return out.astype(np.float32)


def _track_dirs(partition: Path) -> list[Path]:
    return sorted(p for p in partition.iterdir() if p.is_dir())


def _load_track(track_dir: Path) -> Track:
    arrays = {}
    rates = {}
    for stem in ("mixture",) + STEM_NAMES:
        path = track_dir / f"{stem}.wav"
        if not path.exists():
            raise DataError(f"track {track_dir.name}: missing {stem}.wav")
        rates[stem], arrays[stem] = _read_wav(path)
    for stem in arrays:
        arrays[stem] = _resample(arrays[stem], rates[stem], TARGET_RATE)
    length = min(a.shape[1] for a in arrays.values())
    arrays = {k: v[:, :length] for k, v in arrays.items()}
    stems = {k: arrays[k] for k in STEM_NAMES}
    mixture = arrays["mixture"]
    total = sum(stems.values())
    if np.max(np.abs(mixture - total)) > MIX_TOLERANCE:
        mixture = total  # difference output and the metric both assume additivity
    track = Track(name=track_dir.name, mixture=mixture, stems=stems, sample_rate=TARGET_RATE)
    track.validate()
    return track


def load_dataset(root: str | Path, split_seed: int = 0) -> DatasetSplit:
    """Ingest a stem-folder dataset and split its train partition 75/25."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    if (root / "train").is_dir():
        train_dirs = _track_dirs(root / "train")
        test_dirs = _track_dirs(root / "test") if (root / "test").is_dir() else []
    else:
        train_dirs = _track_dirs(root)
        test_dirs = []
    if not train_dirs:
        raise DataError(f"dataset root {root} contains no track folders")
    by_name = {d.name: _load_track(d) for d in train_dirs}
    train_names, val_names = split_train_validation(sorted(by_name), split_seed)
    split = DatasetSplit(
        train=[by_name[n] for n in train_names],
        validation=[by_name[n] for n in val_names],
        test=[_load_track(d) for d in test_dirs],
        split_seed=split_seed,
    )
    split.validate()
    return split


def export_dataset(split: DatasetSplit, root: str | Path) -> Path:
    """Write a split back to the stem-folder layout (32-bit float wavs)."""
    root = Path(root)
    partitions = {"train": split.train + split.validation, "test": split.test}
    for partition, tracks in partitions.items():
        for track in tracks:
            d = root / partition / track.name
            d.mkdir(parents=True, exist_ok=True)
            wavfile.write(d / "mixture.wav", track.sample_rate, track.mixture.T)
            for stem, arr in track.stems.items():
                wavfile.write(d / f"{stem}.wav", track.sample_rate, arr.T)
    return root


# ----- sampling and augmentation ---------------------------------------------------


def sample_snippet(track: Track, length: int, rng: np.random.Generator) -> Snippet:
    """Aligned mixture/stem slices at a uniformly random offset."""
    if track.num_samples < length:
        raise DataError(
            f"track {track.name} has {track.num_samples} samples, snippet needs {length}"
        )
    offset = int(rng.integers(0, track.num_samples - length + 1))
    return Snippet(
        mixture=track.mixture[:, offset:offset + length],
        stems={k: v[:, offset:offset + length] for k, v in track.stems.items()},
        offset=offset,
    )


def augment(stems: dict[str, np.ndarray],
            rng: np.random.Generator) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Scale each source independently and remix the mixture as their sum."""
    lo, hi = AUGMENT_RANGE
    scaled = {
        name: stems[name] * np.float32(rng.uniform(lo, hi)) for name in sorted(stems)
    }
    mixture = sum(scaled.values())
    return scaled, mixture

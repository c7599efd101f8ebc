"""WAV I/O, dataset manifests, and synthetic dataset generation.

Only PCM16 mono RIFF/WAVE files are supported; anything else is
rejected rather than converted, because downstream tests rely on
bit-exact round trips.  Multi-channel files are read as channel 0 with
a warning.

Quantization contract (fixed so independent ports match byte for byte):
read maps int16 v to v / 32768.0; write maps x to
round-half-away-from-zero(x * 32768) clamped to [-32768, 32767].
write(read(f)) is the identity on every PCM16 mono file.
"""

from __future__ import annotations

import json
import os
import warnings
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .keyring import DEFAULT_POSITION_BIN

PCM_SCALE = 32768.0


class AudioIOError(Exception):
    """Raised for malformed containers, unsupported codecs, bad manifests."""


@dataclass
class AudioClip:
    """One mono signal with amplitudes in [-1, 1]."""

    samples: np.ndarray  # float64, 1-D
    sample_rate: int
    label: int
    id: str

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise AudioIOError(f"clip {self.id!r}: samples must be 1-D and non-empty")
        if not np.all(np.isfinite(self.samples)):
            raise AudioIOError(f"clip {self.id!r}: non-finite sample values")
        if self.sample_rate <= 0:
            raise AudioIOError(f"clip {self.id!r}: sample_rate must be positive")

    def __len__(self) -> int:
        return self.samples.size


@dataclass
class ManifestEntry:
    id: str
    path: str  # relative to the manifest file
    label: int


@dataclass
class DatasetManifest:
    """Index of one dataset split; clip files live next to the manifest."""

    entries: list[ManifestEntry]
    sample_rate: int
    class_count: int
    split: str
    root: Path  # directory the entry paths are relative to

    def __post_init__(self):
        ids = set()
        for e in self.entries:
            if not 0 <= e.label < self.class_count:
                raise AudioIOError(f"entry {e.id!r}: label {e.label} >= class_count")
            if e.id in ids:
                raise AudioIOError(f"duplicate clip id {e.id!r}")
            ids.add(e.id)

    def __len__(self) -> int:
        return len(self.entries)

    def clip_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def load_clip(self, entry: ManifestEntry) -> AudioClip:
        clip = read_wav(self.clip_path(entry), label=entry.label, clip_id=entry.id)
        if clip.sample_rate != self.sample_rate:
            raise AudioIOError(
                f"clip {entry.id!r}: rate {clip.sample_rate} != manifest {self.sample_rate}"
            )
        return clip

    def iter_clips(self):
        for entry in self.entries:
            yield entry, self.load_clip(entry)


def read_wav(path, label: int = 0, clip_id: str | None = None) -> AudioClip:
    """Read a PCM16 WAV file; multi-channel input yields channel 0."""
    try:
        with wave.open(str(path), "rb") as wav:
            channels = wav.getnchannels()
            width = wav.getsampwidth()
            rate = wav.getframerate()
            n_frames = wav.getnframes()
            if wav.getcomptype() != "NONE":
                raise AudioIOError(f"{path}: unsupported codec {wav.getcomptype()!r}")
            if width != 2:
                raise AudioIOError(f"{path}: unsupported sample width {width * 8} bit")
            if n_frames == 0:
                raise AudioIOError(f"{path}: zero-length data chunk")
            raw = wav.readframes(n_frames)
    except wave.Error as exc:
        raise AudioIOError(f"{path}: malformed WAV header ({exc})") from exc
    except EOFError as exc:
        raise AudioIOError(f"{path}: truncated WAV file") from exc

    pcm = np.frombuffer(raw, dtype="<i2")
    if channels > 1:
        warnings.warn(f"{path}: {channels} channels, keeping channel 0", stacklevel=2)
        pcm = pcm[::channels]
    samples = pcm.astype(np.float64) / PCM_SCALE
    return AudioClip(
        samples=samples,
        sample_rate=rate,
        label=label,
        id=clip_id if clip_id is not None else Path(path).stem,
    )


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Map floats in [-1, 1] to int16 the way write_wav does."""
    scaled = np.asarray(samples, dtype=np.float64) * PCM_SCALE
    # np.round would round half to even; the contract is half away from zero
    quantized = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(quantized, -32768, 32767).astype("<i2")


def write_wav(clip: AudioClip, path) -> None:
    if np.max(np.abs(clip.samples), initial=0.0) > 1.0:
        raise AudioIOError(f"clip {clip.id!r}: samples outside [-1, 1]")
    pcm = quantize_pcm16(clip.samples)
    try:
        with wave.open(str(path), "wb") as wav:
            wav.setnchannels(1)
            wav.setsampwidth(2)
            wav.setframerate(clip.sample_rate)
            wav.writeframes(pcm.tobytes())
    except OSError as exc:
        raise AudioIOError(f"{path}: write failed ({exc})") from exc


def pcm_roundtrip(samples: np.ndarray) -> np.ndarray:
    """The float values a clip will carry after one write/read cycle."""
    return quantize_pcm16(samples).astype(np.float64) / PCM_SCALE


# --------------------------------------------------------------------------
# manifests


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "sample_rate": manifest.sample_rate,
        "class_count": manifest.class_count,
        "split": manifest.split,
        "entries": [{"id": e.id, "path": e.path, "label": e.label} for e in manifest.entries],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        entries = [ManifestEntry(e["id"], e["path"], e["label"]) for e in doc["entries"]]
        return DatasetManifest(
            entries=entries,
            sample_rate=doc["sample_rate"],
            class_count=doc["class_count"],
            split=doc["split"],
            root=path.parent,
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise AudioIOError(f"{path}: malformed manifest ({exc})") from exc


# --------------------------------------------------------------------------
# synthetic datasets


def synth_dataset(
    class_count: int,
    per_class: int,
    duration: float,
    sample_rate: int,
    seed: int,
    out_dir,
) -> tuple[DatasetManifest, DatasetManifest]:
    """Generate a deterministic tone-plus-noise dataset and write it out.

    Class c is a sine at 200*(c+1) Hz with per-clip random phase plus
    Gaussian noise of amplitude 0.05, peak-normalized to 0.9.  The first
    80% of each class's clips go to the train split, the rest to test.
    Returns the (train, test) manifests; WAVs, train.json and test.json
    are written under out_dir.
    """
    if class_count < 2:
        raise AudioIOError("class_count must be >= 2")
    if per_class < 20:
        raise AudioIOError("per_class must be >= 20")
    n_samples = int(round(duration * sample_rate))
    min_required = 240 + class_count * DEFAULT_POSITION_BIN
    if n_samples < min_required:
        raise AudioIOError(
            f"duration too short: {n_samples} samples < {min_required} needed "
            f"to hold the default patch and position bins"
        )

    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / sample_rate
    n_train = int(per_class * 0.8)

    splits = {"train": [], "test": []}
    for c in range(class_count):
        freq = 200.0 * (c + 1)
        for i in range(per_class):
            phase = rng.uniform(0.0, 2.0 * np.pi)
            x = np.sin(2.0 * np.pi * freq * t + phase)
            x = x + 0.05 * rng.standard_normal(n_samples)
            x = x * (0.9 / np.max(np.abs(x)))
            clip_id = f"c{c:02d}_s{i:04d}"
            rel = f"{clip_id}.wav"
            write_wav(
                AudioClip(samples=x, sample_rate=sample_rate, label=c, id=clip_id),
                out_dir / rel,
            )
            splits["train" if i < n_train else "test"].append(
                ManifestEntry(clip_id, rel, c)
            )

    manifests = []
    for split, entries in splits.items():
        m = DatasetManifest(
            entries=entries,
            sample_rate=sample_rate,
            class_count=class_count,
            split=split,
            root=out_dir,
        )
        save_manifest(m, out_dir / f"{split}.json")
        manifests.append(m)
    return manifests[0], manifests[1]

"""Class-conditional positional blurs, dataset protection, attack simulators.

The patch transform replaces samples in [pos, pos+p) with a centered
1-D convolution of the original signal:

    out[t] = sum_j taps[j] * in[t - j + k//2]      t in [pos, pos+p)

Context is always read from the unmodified input (zeros beyond the
signal ends), so the result is a pure function of the input and every
sample outside the patch stays bit-identical.
"""

from __future__ import annotations

import json
import shutil
import warnings
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .audio_io import (
    AudioClip,
    AudioIOError,
    DatasetManifest,
    ManifestEntry,
    save_manifest,
    write_wav,
)
from .keyring import (
    ClassProtection,
    MasterKey,
    ProtectionConfig,
    SplitMix64,
    derive_all,
)

PROTECTION_LOG_NAME = "protection_log.jsonl"


class BlurError(Exception):
    pass


@dataclass
class BlurReport:
    clip_id: str
    modified_start: int
    modified_end: int
    max_abs_delta: float
    patch_snr_db: float
    clamped_samples: int


def _patch_snr_db(clean: np.ndarray, modified: np.ndarray) -> float:
    err = np.sum((clean - modified) ** 2)
    if err == 0.0:
        return 300.0
    sig = np.sum(clean**2)
    if sig == 0.0:
        return -300.0
    return min(300.0, max(-300.0, 10.0 * np.log10(sig / err)))


def convolve_patch(
    samples: np.ndarray,
    taps: np.ndarray,
    position: int,
    patch_len: int,
    clamp: bool = True,
) -> tuple[np.ndarray, int]:
    """Apply the centered patch convolution; returns (output, clamp count).

    clamp=False is a test hook for checking linearity of the raw filter.
    """
    k = len(taps)
    offset = k // 2
    n = len(samples)
    if position < 0 or position + patch_len > n:
        raise BlurError(
            f"patch [{position}, {position + patch_len}) outside clip of length {n}"
        )
    # zero-pad so context reads past either end are well-defined
    ext = np.concatenate([np.zeros(k), samples, np.zeros(k)])
    lo = position + offset + 1
    segment = ext[lo : lo + patch_len + k - 1]
    patch = np.convolve(segment, taps, mode="valid")
    clamped = int(np.sum((patch < -1.0) | (patch > 1.0)))
    if clamp:
        patch = np.clip(patch, -1.0, 1.0)
    out = samples.copy()
    out[position : position + patch_len] = patch
    return out, clamped


def blur_patch(
    clip: AudioClip, prot: ClassProtection, clamp: bool = True
) -> tuple[AudioClip, BlurReport]:
    """Blur the class patch of a clip with its class's protection."""
    if clip.label != prot.class_id:
        raise BlurError(
            f"clip {clip.id!r} has label {clip.label}, protection is for class {prot.class_id}"
        )
    if len(clip) < prot.position + prot.p:
        raise BlurError(
            f"clip {clip.id!r} too short ({len(clip)}) for patch at {prot.position}+{prot.p}"
        )
    taps = np.asarray(prot.taps, dtype=np.float64)
    out, clamped = convolve_patch(clip.samples, taps, prot.position, prot.p, clamp)
    report = BlurReport(
        clip_id=clip.id,
        modified_start=prot.position,
        modified_end=prot.position + prot.p,
        max_abs_delta=float(
            np.max(np.abs(out[prot.position : prot.position + prot.p]
                          - clip.samples[prot.position : prot.position + prot.p]))
        ),
        patch_snr_db=_patch_snr_db(
            clip.samples[prot.position : prot.position + prot.p],
            out[prot.position : prot.position + prot.p],
        ),
        clamped_samples=clamped,
    )
    blurred = AudioClip(out, clip.sample_rate, clip.label, clip.id)
    return blurred, report


def blur_full(
    clip: AudioClip, prot: ClassProtection, clamp: bool = True
) -> tuple[AudioClip, BlurReport]:
    """Baseline variant: the class filter runs over the whole clip."""
    if clip.label != prot.class_id:
        raise BlurError(
            f"clip {clip.id!r} has label {clip.label}, protection is for class {prot.class_id}"
        )
    taps = np.asarray(prot.taps, dtype=np.float64)
    out, clamped = convolve_patch(clip.samples, taps, 0, len(clip), clamp)
    report = BlurReport(
        clip_id=clip.id,
        modified_start=0,
        modified_end=len(clip),
        max_abs_delta=float(np.max(np.abs(out - clip.samples))),
        patch_snr_db=_patch_snr_db(clip.samples, out),
        clamped_samples=clamped,
    )
    return AudioClip(out, clip.sample_rate, clip.label, clip.id), report


def _transform_manifest(
    manifest: DatasetManifest,
    out_dir: Path,
    transform,
    log_path: Path | None = None,
) -> DatasetManifest:
    """Write transform(clip) for every clip into out_dir, manifest order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries, reports, failures = [], [], []
    for entry, clip in manifest.iter_clips():
        try:
            new_clip, report = transform(clip)
        except (BlurError, AudioIOError) as exc:
            failures.append(f"{entry.id}: {exc}")
            continue
        write_wav(new_clip, out_dir / entry.path)
        entries.append(ManifestEntry(entry.id, entry.path, entry.label))
        if report is not None:
            reports.append(report)
    if failures:
        raise BlurError(
            "failed on %d clip(s):\n  %s" % (len(failures), "\n  ".join(failures))
        )
    result = DatasetManifest(
        entries=entries,
        sample_rate=manifest.sample_rate,
        class_count=manifest.class_count,
        split=manifest.split,
        root=out_dir,
    )
    save_manifest(result, out_dir / f"{manifest.split}.json")
    if log_path is not None and reports:
        with open(log_path, "w", encoding="utf-8") as fh:
            for r in reports:
                fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")
    return result


def protect_manifest(
    manifest: DatasetManifest,
    master: MasterKey,
    cfg: ProtectionConfig,
    out_dir,
    normalize_taps: bool = False,
    write_log: bool = True,
) -> DatasetManifest:
    """Blur every clip of one split with its class's protection."""
    protections = derive_all(master, cfg, normalize_taps)
    op = blur_patch if cfg.mode == "positional" else blur_full
    log = Path(out_dir) / PROTECTION_LOG_NAME if write_log else None
    return _transform_manifest(
        manifest, Path(out_dir), lambda clip: op(clip, protections[clip.label]), log
    )


def copy_manifest(manifest: DatasetManifest, out_dir) -> DatasetManifest:
    """Copy a split untouched (used for the test set by default)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for entry in manifest.entries:
        shutil.copyfile(manifest.clip_path(entry), out_dir / entry.path)
    result = DatasetManifest(
        entries=list(manifest.entries),
        sample_rate=manifest.sample_rate,
        class_count=manifest.class_count,
        split=manifest.split,
        root=out_dir,
    )
    save_manifest(result, out_dir / f"{manifest.split}.json")
    return result


def protect_dataset(
    train: DatasetManifest,
    test: DatasetManifest | None,
    master: MasterKey,
    cfg: ProtectionConfig,
    out_dir,
    pollute_test: bool = False,
    normalize_taps: bool = False,
) -> tuple[DatasetManifest, DatasetManifest | None]:
    """Protect a dataset: blur the train split, leave test untouched.

    With pollute_test=True the test split receives the same class-keyed
    blurs as training (for shortcut-mapping experiments).
    """
    out_dir = Path(out_dir)
    new_train = protect_manifest(train, master, cfg, out_dir, normalize_taps)
    new_test = None
    if test is not None:
        if pollute_test:
            protections = derive_all(master, cfg, normalize_taps)
            op = blur_patch if cfg.mode == "positional" else blur_full
            new_test = _transform_manifest(
                test, out_dir, lambda clip: op(clip, protections[clip.label])
            )
        else:
            new_test = copy_manifest(test, out_dir)
    return new_train, new_test


def apply_mixed_keys(
    manifest: DatasetManifest,
    master: MasterKey,
    cfg: ProtectionConfig,
    permutation: list[int],
    out_dir,
) -> DatasetManifest:
    """Blur each class-c clip with the protection of permutation[c]."""
    n = cfg.class_count
    if sorted(permutation) != list(range(n)):
        raise BlurError(f"permutation {permutation} is not a bijection on [0, {n})")
    protections = derive_all(master, cfg)
    op = blur_patch if cfg.mode == "positional" else blur_full

    def transform(clip):
        prot = protections[permutation[clip.label]]
        # patch identity comes from the permuted class; label stays put
        borrowed = ClassProtection(
            class_id=clip.label,
            taps=prot.taps,
            position=prot.position,
            k=prot.k,
            p=prot.p,
        )
        return op(clip, borrowed)

    return _transform_manifest(manifest, Path(out_dir), transform)


def attack_known_location_noise(
    manifest: DatasetManifest,
    positions: dict[int, int],
    patch_len: int,
    amplitude: float,
    seed: int,
    out_dir,
) -> DatasetManifest:
    """Attacker knows the patch locations and adds uniform noise there."""
    if amplitude < 0:
        raise BlurError("amplitude must be >= 0")
    if amplitude == 0:
        warnings.warn("amplitude 0: attack leaves the dataset unchanged", stacklevel=2)
    rng = SplitMix64(seed)

    def transform(clip):
        pos = positions[clip.label]
        if pos + patch_len > len(clip):
            raise BlurError(f"clip {clip.id!r} too short for noise at {pos}+{patch_len}")
        noise = np.array(
            [amplitude * (2.0 * rng.next_unit() - 1.0) for _ in range(patch_len)]
        )
        out = clip.samples.copy()
        out[pos : pos + patch_len] = np.clip(out[pos : pos + patch_len] + noise, -1, 1)
        report = BlurReport(
            clip_id=clip.id,
            modified_start=pos,
            modified_end=pos + patch_len,
            max_abs_delta=float(np.max(np.abs(out - clip.samples))),
            patch_snr_db=_patch_snr_db(
                clip.samples[pos : pos + patch_len], out[pos : pos + patch_len]
            ),
            clamped_samples=0,
        )
        return AudioClip(out, clip.sample_rate, clip.label, clip.id), report

    return _transform_manifest(manifest, Path(out_dir), transform)


def attack_random_blur(
    manifest: DatasetManifest,
    cfg: ProtectionConfig,
    seed: int,
    out_dir,
) -> DatasetManifest:
    """Attacker mimics the protection with unkeyed random blurs.

    Each clip gets a fresh U(0, b) filter at a fresh random position, so
    neither the filter nor the location correlates with the label.
    """
    rng = SplitMix64(seed)

    def transform(clip):
        taps = np.array([cfg.b * rng.next_unit() for _ in range(cfg.k)])
        pos_range = len(clip) - cfg.p + 1
        if pos_range <= 0:
            raise BlurError(f"clip {clip.id!r} shorter than patch length {cfg.p}")
        pos = rng.next_u64() % pos_range
        out, clamped = convolve_patch(clip.samples, taps, pos, cfg.p)
        report = BlurReport(
            clip_id=clip.id,
            modified_start=int(pos),
            modified_end=int(pos + cfg.p),
            max_abs_delta=float(
                np.max(np.abs(out[pos : pos + cfg.p] - clip.samples[pos : pos + cfg.p]))
            ),
            patch_snr_db=_patch_snr_db(
                clip.samples[pos : pos + cfg.p], out[pos : pos + cfg.p]
            ),
            clamped_samples=clamped,
        )
        return AudioClip(out, clip.sample_rate, clip.label, clip.id), report

    return _transform_manifest(manifest, Path(out_dir), transform)

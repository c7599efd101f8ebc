"""Closeness metrics between a protected dataset and its clean original.

Two views: per-clip SNR over the raw waveforms, and a dataset-level
Fréchet distance between Gaussians fitted to pooled MFCC frames.  The
MFCC statistics stand in for embeddings from a pretrained audio model,
so absolute distances are only comparable within one feature config
(the report carries the config hash and says so).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, DatasetManifest
from .blur import PROTECTION_LOG_NAME
from .features import FeatureMatrix, MfccConfig, mfcc
from .parallel import ordered_map

SNR_CAP_DB = 300.0
_COV_REGULARIZER = 1e-10


class QualityError(Exception):
    pass


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    frame_count: int

    def __post_init__(self):
        if not np.allclose(self.cov, self.cov.T, atol=1e-12):
            raise QualityError("covariance not symmetric")


def snr_db(clean: AudioClip, modified: AudioClip) -> float:
    """10*log10 of signal-to-error energy; identical clips cap at 300 dB."""
    if len(clean) != len(modified):
        raise QualityError(
            f"length mismatch: {len(clean)} vs {len(modified)} ({clean.id!r})"
        )
    signal = np.sum(clean.samples**2)
    if signal == 0.0:
        raise QualityError(f"clip {clean.id!r}: all-zero clean signal")
    err = np.sum((clean.samples - modified.samples) ** 2)
    if err == 0.0:
        return SNR_CAP_DB
    return float(min(SNR_CAP_DB, 10.0 * np.log10(signal / err)))


def fit_stats(features: list[FeatureMatrix]) -> GaussianStats:
    """Pool frames from all clips; mean and unbiased covariance."""
    if not features:
        raise QualityError("no feature matrices given")
    hashes = {f.config_hash for f in features}
    if len(hashes) > 1:
        raise QualityError(f"mixed feature configs: {sorted(hashes)}")
    frames = np.vstack([f.values for f in features])
    n, dim = frames.shape
    if n <= dim:
        raise QualityError(f"{n} frames insufficient for {dim}-dim covariance")
    mean = frames.mean(axis=0)
    centered = frames - mean
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2.0
    return GaussianStats(mean=mean, cov=cov, frame_count=n)


# --------------------------------------------------------------------------
# symmetric eigendecomposition (cyclic Jacobi) and the Fréchet distance


def jacobi_eigh(matrix: np.ndarray, max_sweeps: int = 100, tol: float = 1e-14):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with A = V diag(w) V^T.  Raises
    if the off-diagonal mass has not vanished after max_sweeps sweeps.
    """
    a = np.array(matrix, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise QualityError("matrix must be square")
    v = np.eye(n)
    scale = max(1.0, np.max(np.abs(a)))
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            return np.diag(a).copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                a = (a + a.T) / 2.0
                v = v @ rot
    raise QualityError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")


def _sqrtm_psd(matrix: np.ndarray) -> np.ndarray:
    w, v = jacobi_eigh(matrix)
    return v @ np.diag(np.sqrt(np.maximum(w, 0.0))) @ v.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Fréchet distance between two Gaussians, clamped at zero.

    Uses the symmetric sandwich sqrt(sqrt(Ca) Cb sqrt(Ca)) so a plain
    symmetric eigensolver suffices; covariances get a 1e-10 ridge first.
    """
    if a.mean.shape != b.mean.shape:
        raise QualityError(
            f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}"
        )
    dim = a.mean.size
    ridge = _COV_REGULARIZER * np.eye(dim)
    cov_a = a.cov + ridge
    cov_b = b.cov + ridge
    root_a = _sqrtm_psd(cov_a)
    sandwich = root_a @ cov_b @ root_a
    sandwich = (sandwich + sandwich.T) / 2.0
    cross = _sqrtm_psd(sandwich)
    mean_term = float(np.sum((a.mean - b.mean) ** 2))
    value = mean_term + float(np.trace(cov_a + cov_b - 2.0 * cross))
    if value < -1e-6:
        raise QualityError(f"Fréchet distance {value} below numerical tolerance")
    return max(0.0, value)


# --------------------------------------------------------------------------
# dataset-level report


def _read_clamp_total(log_path: Path) -> int | None:
    if not log_path.exists():
        return None
    total = 0
    with open(log_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                total += json.loads(line).get("clamped_samples", 0)
    return total


def dataset_quality_report(
    clean: DatasetManifest,
    protected: DatasetManifest,
    mfcc_config: MfccConfig | None = None,
    protection_log: Path | None = None,
) -> dict:
    """Compare a protected split against its clean original, id-aligned.

    Returns the report dict that also gets serialized to JSON:
    frechet_mfcc, snr {min, median, mean}, clamped_samples, config_hash,
    plus a note that the embedding is MFCC statistics.
    """
    clean_ids = [e.id for e in clean.entries]
    prot_by_id = {e.id: e for e in protected.entries}
    if set(clean_ids) != set(prot_by_id):
        missing = set(clean_ids) ^ set(prot_by_id)
        raise QualityError(f"manifests not id-aligned; {len(missing)} unmatched ids")
    if mfcc_config is None:
        mfcc_config = MfccConfig.for_rate(clean.sample_rate)

    def measure(entry):
        clean_clip = clean.load_clip(entry)
        prot_clip = protected.load_clip(prot_by_id[entry.id])
        return (
            snr_db(clean_clip, prot_clip),
            mfcc(clean_clip, mfcc_config),
            mfcc(prot_clip, mfcc_config),
        )

    measured = ordered_map(measure, clean.entries)
    snrs = [m[0] for m in measured]
    clean_feats = [m[1] for m in measured]
    prot_feats = [m[2] for m in measured]

    frechet = frechet_distance(fit_stats(prot_feats), fit_stats(clean_feats))
    if protection_log is None:
        protection_log = protected.root / PROTECTION_LOG_NAME
    clamped = _read_clamp_total(Path(protection_log))
    snrs_arr = np.asarray(snrs)
    return {
        "frechet_mfcc": frechet,
        "snr": {
            "min": float(snrs_arr.min()),
            "median": float(np.median(snrs_arr)),
            "mean": float(snrs_arr.mean()),
        },
        "clamped_samples": clamped,
        "config_hash": mfcc_config.config_hash(),
        "embedding": "mfcc-statistics (pooled frames; no pretrained embedder)",
        "clip_count": len(clean_ids),
        "snr_per_clip": {e.id: s for e, s in zip(clean.entries, snrs)},
    }


def save_quality_report(report: dict, path) -> None:
    slim = {k: v for k, v in report.items() if k != "snr_per_clip"}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(slim, fh, indent=2, sort_keys=True)
        fh.write("\n")

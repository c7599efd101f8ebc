"""MFCC extraction on top of an in-repo radix-2 FFT.

The same features serve as model input (mean-pooled for the MLP) and as
the embedding behind the dataset-distance metric, so the transform is
kept deliberately plain: Hann window, power spectrum, HTK-scale
triangular mel filterbank over 0..Nyquist, log with a floor, orthonormal
DCT-II.  Parameters are frozen in MfccConfig and hashed; feature
matrices carry the hash so metric values are never compared across
configs by accident.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio_io import AudioClip

FEATURE_MAGIC = b"MFC1"


class FeatureError(Exception):
    pass


# --------------------------------------------------------------------------
# radix-2 FFT (decimation in time, iterative, vectorized over leading axes)


@lru_cache(maxsize=16)
def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


@lru_cache(maxsize=16)
def _twiddles(n: int) -> tuple[np.ndarray, ...]:
    tables = []
    m = 2
    while m <= n:
        tables.append(np.exp(-2j * np.pi * np.arange(m // 2) / m))
        m *= 2
    return tuple(tables)


def fft(x: np.ndarray) -> np.ndarray:
    """Radix-2 DIT transform along the last axis; length must be 2^m."""
    x = np.asarray(x)
    n = x.shape[-1]
    if n == 0 or n & (n - 1):
        raise FeatureError(f"FFT length {n} is not a power of two")
    out = x[..., _bit_reverse_indices(n)].astype(np.complex128)
    for table in _twiddles(n):
        half = table.size
        m = half * 2
        blocks = out.reshape(*out.shape[:-1], n // m, m)
        even = blocks[..., :half]
        odd = blocks[..., half:] * table
        upper = even + odd
        lower = even - odd
        out = np.concatenate([upper, lower], axis=-1).reshape(*x.shape)
    return out


def ifft(spectrum: np.ndarray) -> np.ndarray:
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    n = spectrum.shape[-1]
    return np.conj(fft(np.conj(spectrum))) / n


def fft_real(signal: np.ndarray) -> np.ndarray:
    """Full complex spectrum of a real signal of power-of-two length."""
    return fft(np.asarray(signal, dtype=np.float64))


# --------------------------------------------------------------------------
# MFCC


@dataclass(frozen=True)
class MfccConfig:
    sample_rate: int
    frame_len: int
    hop: int
    fft_size: int
    n_mels: int = 26
    n_coeffs: int = 13
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.fft_size & (self.fft_size - 1) or self.fft_size < self.frame_len:
            raise FeatureError("fft_size must be a power of two >= frame_len")
        if self.n_coeffs > self.n_mels:
            raise FeatureError("n_coeffs must be <= n_mels")

    @classmethod
    def for_rate(cls, sample_rate: int) -> "MfccConfig":
        """Defaults: 25 ms frames, 10 ms hop, FFT at the next power of two."""
        frame_len = int(round(0.025 * sample_rate))
        hop = int(round(0.010 * sample_rate))
        fft_size = 1
        while fft_size < frame_len:
            fft_size *= 2
        return cls(sample_rate=sample_rate, frame_len=frame_len, hop=hop, fft_size=fft_size)

    def config_hash(self) -> str:
        doc = json.dumps(
            {
                "sample_rate": self.sample_rate,
                "frame_len": self.frame_len,
                "hop": self.hop,
                "fft_size": self.fft_size,
                "n_mels": self.n_mels,
                "n_coeffs": self.n_coeffs,
                "log_floor": self.log_floor,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(doc.encode("utf-8")).hexdigest()[:16]


@dataclass
class FeatureMatrix:
    values: np.ndarray  # frames x n_coeffs
    clip_id: str
    config_hash: str


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (np.power(10.0, np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    """Triangular filters, rows = mels, cols = rfft bins (0..fft_size/2)."""
    n_bins = cfg.fft_size // 2 + 1
    freqs = np.arange(n_bins) * cfg.sample_rate / cfg.fft_size
    edges = mel_to_hz(
        np.linspace(hz_to_mel(0.0), hz_to_mel(cfg.sample_rate / 2.0), cfg.n_mels + 2)
    )
    bank = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - lo) / (center - lo)
        falling = (hi - freqs) / (hi - center)
        bank[m] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def dct_matrix(n_coeffs: int, n_mels: int) -> np.ndarray:
    """Orthonormal DCT-II rows; row 0 is the constant basis vector."""
    j = np.arange(n_mels)
    mat = np.cos(np.pi * np.outer(np.arange(n_coeffs), j + 0.5) / n_mels)
    mat *= np.sqrt(2.0 / n_mels)
    mat[0] *= np.sqrt(0.5)
    return mat


@lru_cache(maxsize=8)
def _mfcc_tables(cfg: MfccConfig):
    window = np.hanning(cfg.frame_len)
    bank = mel_filterbank(cfg)
    dct = dct_matrix(cfg.n_coeffs, cfg.n_mels)
    return window, bank, dct


def frame_count(n_samples: int, cfg: MfccConfig) -> int:
    return 1 + (n_samples - cfg.frame_len) // cfg.hop


def mfcc(clip: AudioClip, cfg: MfccConfig | None = None) -> FeatureMatrix:
    """Extract MFCC frames; clip must hold at least one full frame."""
    if cfg is None:
        cfg = MfccConfig.for_rate(clip.sample_rate)
    if len(clip) < cfg.frame_len:
        raise FeatureError(
            f"clip {clip.id!r} shorter ({len(clip)}) than one frame ({cfg.frame_len})"
        )
    window, bank, dct = _mfcc_tables(cfg)
    n_frames = frame_count(len(clip), cfg)
    idx = cfg.hop * np.arange(n_frames)[:, None] + np.arange(cfg.frame_len)
    frames = clip.samples[idx] * window
    padded = np.zeros((n_frames, cfg.fft_size))
    padded[:, : cfg.frame_len] = frames
    spectrum = fft(padded)[:, : cfg.fft_size // 2 + 1]
    power = spectrum.real**2 + spectrum.imag**2
    mel_energy = np.maximum(power @ bank.T, cfg.log_floor)
    coeffs = np.log(mel_energy) @ dct.T
    return FeatureMatrix(values=coeffs, clip_id=clip.id, config_hash=cfg.config_hash())


def mean_pooled(feat: FeatureMatrix) -> np.ndarray:
    return feat.values.mean(axis=0)


# --------------------------------------------------------------------------
# optional binary dump: magic, u32 rows, u32 cols, 16-byte config hash,
# then row-major little-endian float64


def save_features(feat: FeatureMatrix, path) -> None:
    rows, cols = feat.values.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(feat.config_hash.encode("ascii"))
        fh.write(feat.values.astype("<f8").tobytes())


def load_features(path, clip_id: str = "") -> FeatureMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise FeatureError(f"{path}: bad magic {magic!r}")
        rows, cols = struct.unpack("<II", fh.read(8))
        config_hash = fh.read(16).decode("ascii")
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
    if data.size != rows * cols:
        raise FeatureError(f"{path}: truncated feature data")
    return FeatureMatrix(
        values=data.reshape(rows, cols).copy(), clip_id=clip_id, config_hash=config_hash
    )

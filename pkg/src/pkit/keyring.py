"""Per-class secret material: blur filter taps and patch positions.

Every class's protection is derived deterministically from a 32-byte
master secret.  The derivation chain is fixed so that independent
implementations produce identical taps and positions bit for bit:

    seed_i  = first 8 bytes (LE) of SHA-256(secret || class_id as u32 LE)
    taps    = b * u_j,  u_j = (splitmix64 >> 11) * 2^-53,  j = 0..k-1
    pos(i)  = bin_start + (next u64 mod bin_width)

Positions live in disjoint per-class bins so two classes can never
share a patch location.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass

_MASK64 = (1 << 64) - 1

KEYRING_MAGIC = "PKR1"

#: Width of one per-class position bin under the default geometry.
DEFAULT_POSITION_BIN = 64


class KeyringError(Exception):
    """Raised for invalid configs and corrupt/mismatched keyring files."""


class SplitMix64:
    """Minimal splitmix64 stream; 64-bit state, fixed increment."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_unit(self) -> float:
        # 53-bit mantissa draw in [0, 1)
        return (self.next_u64() >> 11) * 2.0**-53


@dataclass(frozen=True)
class MasterKey:
    """32-byte master secret.  Never serialized into protected datasets."""

    secret: bytes

    def __post_init__(self):
        if len(self.secret) != 32:
            raise KeyringError(f"master key must be 32 bytes, got {len(self.secret)}")

    @classmethod
    def generate(cls) -> "MasterKey":
        return cls(os.urandom(32))

    @classmethod
    def from_hex(cls, hex_str: str) -> "MasterKey":
        try:
            raw = bytes.fromhex(hex_str)
        except ValueError as exc:
            raise KeyringError(f"invalid master key hex: {exc}") from exc
        return cls(raw)

    def fingerprint(self) -> str:
        """Short public identifier; safe to log, does not reveal the key."""
        return hashlib.sha256(b"pkit-fingerprint:" + self.secret).hexdigest()[:16]

    def __repr__(self) -> str:  # never leak the secret through repr
        return f"MasterKey(fingerprint={self.fingerprint()})"


@dataclass(frozen=True)
class ProtectionConfig:
    """Global blur-protection parameters.

    min_len is the minimum clip length the position scheme assumes; the
    default places one 64-sample position bin per class after the patch
    itself (min_len = p + 64 * class_count).
    """

    class_count: int
    b: float
    k: int = 80
    p: int = 240
    min_len: int = 0  # 0 -> default geometry
    mode: str = "positional"

    def __post_init__(self):
        if self.min_len == 0:
            object.__setattr__(
                self, "min_len", self.p + DEFAULT_POSITION_BIN * self.class_count
            )
        if self.k < 1:
            raise KeyringError("filter length k must be >= 1")
        if self.p < self.k:
            raise KeyringError("patch length p must be >= filter length k")
        if self.b <= 0:
            raise KeyringError("blur factor b must be > 0")
        if self.class_count < 2:
            raise KeyringError("class_count must be >= 2")
        if self.min_len < self.p + self.class_count:
            raise KeyringError("min_len too small for the per-class position bins")
        if self.mode not in ("positional", "full_sample"):
            raise KeyringError(f"unknown mode {self.mode!r}")

    @property
    def position_bin_width(self) -> int:
        return (self.min_len - self.p) // self.class_count

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "p": self.p,
            "b": self.b,
            "class_count": self.class_count,
            "min_len": self.min_len,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProtectionConfig":
        return cls(
            class_count=d["class_count"],
            b=d["b"],
            k=d["k"],
            p=d["p"],
            min_len=d["min_len"],
            mode=d["mode"],
        )


@dataclass(frozen=True)
class ClassProtection:
    """One class's derived secret: filter taps plus patch position."""

    class_id: int
    taps: tuple[float, ...]
    position: int
    k: int
    p: int

    def __post_init__(self):
        if len(self.taps) != self.k:
            raise KeyringError("tap count does not match k")


def derive_class_seed(master: MasterKey, class_id: int) -> int:
    """Map (master, class) to a 64-bit PRNG seed via SHA-256."""
    digest = hashlib.sha256(master.secret + struct.pack("<I", class_id)).digest()
    return int.from_bytes(digest[:8], "little")


def derive_protection(
    master: MasterKey,
    class_id: int,
    cfg: ProtectionConfig,
    normalize: bool = False,
) -> ClassProtection:
    """Derive one class's taps and patch position.

    Pure function of its arguments.  Draw order is fixed: k unit floats
    for the taps, then one raw u64 for the position.  With
    normalize=True the taps are rescaled to sum to 1 (off by default;
    the raw U(0, b) taps are the intended blur).
    """
    if not 0 <= class_id < cfg.class_count:
        raise KeyringError(f"class_id {class_id} out of range [0, {cfg.class_count})")
    bin_width = cfg.position_bin_width
    if bin_width == 0:
        raise KeyringError("position bin width is zero; min_len too small for class_count")
    rng = SplitMix64(derive_class_seed(master, class_id))
    taps = [cfg.b * rng.next_unit() for _ in range(cfg.k)]
    if normalize:
        total = sum(taps)
        taps = [t / total for t in taps]
    bin_start = class_id * bin_width
    position = bin_start + rng.next_u64() % bin_width
    return ClassProtection(
        class_id=class_id, taps=tuple(taps), position=position, k=cfg.k, p=cfg.p
    )


def derive_all(
    master: MasterKey, cfg: ProtectionConfig, normalize: bool = False
) -> list[ClassProtection]:
    return [derive_protection(master, c, cfg, normalize) for c in range(cfg.class_count)]


def export_keyring(master: MasterKey, cfg: ProtectionConfig, path) -> None:
    """Write key material to a checksummed file.

    Format: one line "PKR1", one line of compact JSON, one line with the
    SHA-256 hex of the JSON line.  The file contains the master secret;
    keep it out of shared storage and chmod it to owner-only (0600) on
    multi-user machines.
    """
    body = json.dumps(
        {"master_hex": master.secret.hex(), **cfg.to_dict()},
        sort_keys=True,
        separators=(",", ":"),
    )
    checksum = hashlib.sha256(body.encode("utf-8")).hexdigest()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{KEYRING_MAGIC}\n{body}\n{checksum}\n")


def import_keyring(path) -> tuple[MasterKey, ProtectionConfig]:
    """Load a keyring file; raises KeyringError on tampering or bad version."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 3:
        raise KeyringError(f"{path}: truncated keyring file")
    magic, body, checksum = lines[0], lines[1], lines[2]
    if magic != KEYRING_MAGIC:
        raise KeyringError(f"{path}: bad magic {magic!r} (expected {KEYRING_MAGIC!r})")
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != checksum:
        raise KeyringError(f"{path}: checksum mismatch, file corrupt or tampered")
    try:
        payload = json.loads(body)
        master = MasterKey.from_hex(payload["master_hex"])
        cfg = ProtectionConfig.from_dict(payload)
    except (KeyError, ValueError, TypeError) as exc:
        raise KeyringError(f"{path}: malformed keyring body: {exc}") from exc
    return master, cfg

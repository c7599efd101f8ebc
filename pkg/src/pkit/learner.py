"""Tiny from-scratch classifiers used to probe dataset learnability.

Two architectures covering the two input representations:

* raw-waveform net: one 1-D conv (8 channels, kernel 64, stride 16),
  ReLU, global average pool over time, dense to class logits;
* feature net: mean-pooled MFCC vector, dense 64, ReLU, dense to logits.

Training is plain SGD on mean-reduced cross-entropy, single-threaded
and bit-deterministic for a fixed (data, config, seed).  Gradients are
analytic and covered by finite-difference tests.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass

import numpy as np

from .audio_io import DatasetManifest
from .features import MfccConfig, mean_pooled, mfcc

CHECKPOINT_MAGIC = b"TNN1"

CONV_CHANNELS = 8
CONV_KERNEL = 64
CONV_STRIDE = 16
MLP_HIDDEN = 64
INPUT_SECONDS = 1.0


class LearnerError(Exception):
    pass


class TrainingDiverged(LearnerError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30  # 100 for a full-length run
    batch_size: int = 128
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise LearnerError("epochs, batch_size and learning_rate must be positive")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


class TinyConvNet:
    """Raw-waveform classifier; accepts any input length >= the kernel."""

    arch = "raw_conv"

    def __init__(self, class_count: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.class_count = class_count
        self.params = {
            "conv_w": _uniform_init(rng, (CONV_CHANNELS, CONV_KERNEL), CONV_KERNEL),
            "conv_b": _uniform_init(rng, (CONV_CHANNELS,), CONV_KERNEL),
            "head_w": _uniform_init(rng, (CONV_CHANNELS, class_count), CONV_CHANNELS),
            "head_b": _uniform_init(rng, (class_count,), CONV_CHANNELS),
        }

    def forward(self, batch: np.ndarray, want_cache: bool = False):
        if batch.ndim != 2 or batch.shape[1] < CONV_KERNEL:
            raise LearnerError("batch must be (B, T) with T >= conv kernel")
        frames = np.lib.stride_tricks.sliding_window_view(batch, CONV_KERNEL, axis=1)[
            :, ::CONV_STRIDE, :
        ]
        pre = frames @ self.params["conv_w"].T + self.params["conv_b"]
        hidden = np.maximum(pre, 0.0)
        pooled = hidden.mean(axis=1)
        logits = pooled @ self.params["head_w"] + self.params["head_b"]
        probs = softmax(logits)
        _check_finite(probs)
        if want_cache:
            return probs, (frames, pre, pooled)
        return probs

    def backward(self, batch: np.ndarray, labels: np.ndarray):
        probs, (frames, pre, pooled) = self.forward(batch, want_cache=True)
        b = len(labels)
        dlogits = probs.copy()
        dlogits[np.arange(b), labels] -= 1.0
        dlogits /= b
        grads = {
            "head_w": pooled.T @ dlogits,
            "head_b": dlogits.sum(axis=0),
        }
        dpooled = dlogits @ self.params["head_w"].T
        n_frames = pre.shape[1]
        dpre = np.where(pre > 0.0, dpooled[:, None, :] / n_frames, 0.0)
        grads["conv_w"] = np.einsum("btc,btk->ck", dpre, frames)
        grads["conv_b"] = dpre.sum(axis=(0, 1))
        loss = cross_entropy(probs, labels)
        return loss, probs, grads


class TinyMlp:
    """Classifier over mean-pooled MFCC vectors."""

    arch = "mfcc_mlp"

    def __init__(self, class_count: int, seed: int = 0, input_dim: int = 13):
        rng = np.random.default_rng(seed)
        self.class_count = class_count
        self.input_dim = input_dim
        self.params = {
            "w1": _uniform_init(rng, (input_dim, MLP_HIDDEN), input_dim),
            "b1": _uniform_init(rng, (MLP_HIDDEN,), input_dim),
            "w2": _uniform_init(rng, (MLP_HIDDEN, class_count), MLP_HIDDEN),
            "b2": _uniform_init(rng, (class_count,), MLP_HIDDEN),
        }

    def forward(self, batch: np.ndarray, want_cache: bool = False):
        pre = batch @ self.params["w1"] + self.params["b1"]
        hidden = np.maximum(pre, 0.0)
        logits = hidden @ self.params["w2"] + self.params["b2"]
        probs = softmax(logits)
        _check_finite(probs)
        if want_cache:
            return probs, (pre, hidden)
        return probs

    def backward(self, batch: np.ndarray, labels: np.ndarray):
        probs, (pre, hidden) = self.forward(batch, want_cache=True)
        b = len(labels)
        dlogits = probs.copy()
        dlogits[np.arange(b), labels] -= 1.0
        dlogits /= b
        dhidden = dlogits @ self.params["w2"].T
        dpre = np.where(pre > 0.0, dhidden, 0.0)
        grads = {
            "w2": hidden.T @ dlogits,
            "b2": dlogits.sum(axis=0),
            "w1": batch.T @ dpre,
            "b1": dpre.sum(axis=0),
        }
        loss = cross_entropy(probs, labels)
        return loss, probs, grads


def _check_finite(arr: np.ndarray):
    if not np.all(np.isfinite(arr)):
        raise TrainingDiverged("non-finite activations; training diverged")


# --------------------------------------------------------------------------
# data loading


def load_waveforms(manifest: DatasetManifest) -> tuple[np.ndarray, np.ndarray]:
    """Stack clips at a fixed one-second length (truncate or zero-pad)."""
    target = int(round(INPUT_SECONDS * manifest.sample_rate))
    data = np.zeros((len(manifest), target))
    labels = np.zeros(len(manifest), dtype=np.int64)
    for i, (entry, clip) in enumerate(manifest.iter_clips()):
        n = min(len(clip), target)
        data[i, :n] = clip.samples[:n]
        labels[i] = entry.label
    return data, labels


def load_pooled_mfcc(
    manifest: DatasetManifest, cfg: MfccConfig | None = None
) -> tuple[np.ndarray, np.ndarray]:
    if cfg is None:
        cfg = MfccConfig.for_rate(manifest.sample_rate)
    data = np.zeros((len(manifest), cfg.n_coeffs))
    labels = np.zeros(len(manifest), dtype=np.int64)
    for i, (entry, clip) in enumerate(manifest.iter_clips()):
        data[i] = mean_pooled(mfcc(clip, cfg))
        labels[i] = entry.label
    return data, labels


def build_model(model_kind: str, class_count: int, seed: int):
    if model_kind == "conv":
        return TinyConvNet(class_count, seed)
    if model_kind == "mlp":
        return TinyMlp(class_count, seed)
    raise LearnerError(f"unknown model kind {model_kind!r} (want 'conv' or 'mlp')")


def load_inputs(model_kind: str, manifest: DatasetManifest):
    if model_kind == "conv":
        return load_waveforms(manifest)
    if model_kind == "mlp":
        return load_pooled_mfcc(manifest)
    raise LearnerError(f"unknown model kind {model_kind!r}")


# --------------------------------------------------------------------------
# training and evaluation


def train_arrays(model, data: np.ndarray, labels: np.ndarray, cfg: TrainConfig):
    """SGD over pre-loaded arrays; returns per-epoch stats."""
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    history: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        hit_sum = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, probs, grads = model.backward(data[idx], labels[idx])
            if not np.isfinite(loss) or loss > 1e3:
                raise TrainingDiverged(f"epoch {epoch}: loss {loss}")
            for name, grad in grads.items():
                model.params[name] -= cfg.learning_rate * grad
            loss_sum += loss * len(idx)
            hit_sum += int(np.sum(probs.argmax(axis=1) == labels[idx]))
        history.append(EpochStats(epoch + 1, loss_sum / n, hit_sum / n))
    return history


def train(model_kind: str, manifest: DatasetManifest, cfg: TrainConfig):
    """Train a fresh model of the given kind on a manifest.

    Returns (model, history).  Deterministic: same dataset bytes and
    config give bit-identical weights.
    """
    data, labels = load_inputs(model_kind, manifest)
    model = build_model(model_kind, manifest.class_count, cfg.seed)
    history = train_arrays(model, data, labels, cfg)
    return model, history


def evaluate_arrays(model, data: np.ndarray, labels: np.ndarray, batch_size: int = 256):
    n_cls = model.class_count
    confusion = np.zeros((n_cls, n_cls), dtype=np.int64)
    for start in range(0, len(data), batch_size):
        probs = model.forward(data[start : start + batch_size])
        pred = probs.argmax(axis=1)
        for t, p in zip(labels[start : start + batch_size], pred):
            confusion[t, p] += 1
    accuracy = float(np.trace(confusion) / max(1, confusion.sum()))
    return accuracy, confusion


def evaluate(model, manifest: DatasetManifest):
    """Top-1 accuracy and confusion matrix over a manifest."""
    if manifest.class_count != model.class_count:
        raise LearnerError(
            f"model has {model.class_count} classes, manifest {manifest.class_count}"
        )
    kind = "conv" if isinstance(model, TinyConvNet) else "mlp"
    data, labels = load_inputs(kind, manifest)
    return evaluate_arrays(model, data, labels)


# --------------------------------------------------------------------------
# persistence


def save_history(history: list[EpochStats], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "acc"])
        for row in history:
            writer.writerow([row.epoch, repr(row.loss), repr(row.accuracy)])


def load_history(path) -> list[EpochStats]:
    out = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(EpochStats(int(row["epoch"]), float(row["loss"]), float(row["acc"])))
    return out


def save_checkpoint(model, path) -> None:
    """Binary checkpoint: magic, meta JSON, then float64 LE tensors."""
    meta = {
        "arch": model.arch,
        "class_count": model.class_count,
        "tensors": [
            {"name": name, "shape": list(model.params[name].shape)}
            for name in sorted(model.params)
        ],
    }
    if isinstance(model, TinyMlp):
        meta["input_dim"] = model.input_dim
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in sorted(model.params):
            fh.write(model.params[name].astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise LearnerError(f"{path}: bad checkpoint magic {magic!r}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        if meta["arch"] == TinyConvNet.arch:
            model = TinyConvNet(meta["class_count"])
        elif meta["arch"] == TinyMlp.arch:
            model = TinyMlp(meta["class_count"], input_dim=meta.get("input_dim", 13))
        else:
            raise LearnerError(f"{path}: unknown architecture {meta['arch']!r}")
        for spec in meta["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape))
            data = np.frombuffer(fh.read(count * 8), dtype="<f8")
            if data.size != count:
                raise LearnerError(f"{path}: truncated tensor {spec['name']!r}")
            model.params[spec["name"]] = data.reshape(shape).copy()
    return model

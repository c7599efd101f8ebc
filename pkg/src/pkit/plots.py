"""Figure rendering for report outputs.

Every report-producing path can drop PNG figures next to its JSON/CSV
output: waveform overlays with the modified patch shaded, SNR
histograms, training curves and confusion matrices.  Rendering is
headless (Agg) and strips volatile PNG metadata so reruns produce
stable files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def _finish(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def waveform_overlay(
    clean: np.ndarray,
    modified: np.ndarray,
    sample_rate: int,
    patch: tuple[int, int] | None,
    path,
    title: str = "clean vs protected",
):
    """Overlay the two waveforms; shade the modified range if given."""
    t = np.arange(len(clean)) / sample_rate
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(9, 5), sharex=True)
    ax0.plot(t, clean, lw=0.4, color="tab:blue", label="clean")
    ax0.plot(t, modified, lw=0.4, color="tab:orange", alpha=0.7, label="protected")
    ax0.set_ylabel("amplitude")
    ax0.legend(loc="upper right", fontsize=8)
    ax0.set_title(title)
    ax1.plot(t, modified - clean, lw=0.4, color="tab:red")
    ax1.set_ylabel("difference")
    ax1.set_xlabel("time [s]")
    if patch is not None:
        for ax in (ax0, ax1):
            ax.axvspan(patch[0] / sample_rate, patch[1] / sample_rate,
                       color="gray", alpha=0.25, lw=0)
    return _finish(fig, path)


def snr_histogram(snrs_db, path, title: str = "per-clip SNR"):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(np.asarray(snrs_db), bins=40, color="tab:blue", alpha=0.85)
    ax.set_xlabel("SNR [dB]")
    ax.set_ylabel("clips")
    ax.set_title(title)
    return _finish(fig, path)


def training_curve(history, path, title: str = "training"):
    """history: iterable of objects with epoch/loss/accuracy fields."""
    epochs = [h.epoch for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [h.loss for h in history], color="tab:red", label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss", color="tab:red")
    twin = ax.twinx()
    twin.plot(epochs, [h.accuracy for h in history], color="tab:blue", label="accuracy")
    twin.set_ylabel("train accuracy", color="tab:blue")
    twin.set_ylim(0, 1.02)
    ax.set_title(title)
    return _finish(fig, path)


def confusion_heatmap(confusion: np.ndarray, path, title: str = "confusion"):
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(confusion, cmap="Blues")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, shrink=0.85)
    return _finish(fig, path)

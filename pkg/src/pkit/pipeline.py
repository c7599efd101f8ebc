"""End-to-end experiment orchestration.

An experiment is described by an ExperimentSpec (TOML or JSON on disk)
and produces a self-describing run directory: dataset, keyring,
protected audio, checkpoint, history, quality report, figures and a
summary.json.  Re-running from the stored spec reproduces the summary,
checkpoint and protected WAVs byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import audio_io, blur, learner, plots, quality
from .keyring import MasterKey, ProtectionConfig, derive_all, export_keyring

EXPERIMENT_KINDS = (
    "clean",
    "positional",
    "full_blur",
    "mixed_keys",
    "attack_known_noise",
    "attack_random_blur",
    "polluted_test",
)

#: kinds whose evaluation uses a specially transformed test set
_SPECIAL_TEST_KINDS = (
    "mixed_keys",
    "attack_known_noise",
    "attack_random_blur",
    "polluted_test",
)


class PipelineError(Exception):
    pass


class StageError(PipelineError):
    """Wraps a failure with the name of the stage it happened in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class DatasetSource:
    """Either synthesize (classes/per_class/...) or point at a directory
    containing train.json and test.json."""

    directory: str | None = None
    classes: int = 10
    per_class: int = 200
    duration: float = 1.0
    sample_rate: int = 8000
    seed: int = 42

    def to_dict(self) -> dict:
        if self.directory is not None:
            return {"dir": self.directory}
        return {
            "classes": self.classes,
            "per_class": self.per_class,
            "duration": self.duration,
            "sample_rate": self.sample_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSource":
        if "dir" in d:
            return cls(directory=d["dir"])
        known = {k: d[k] for k in ("classes", "per_class", "duration", "sample_rate", "seed") if k in d}
        return cls(**known)


@dataclass
class ExperimentSpec:
    kind: str
    dataset: DatasetSource = field(default_factory=DatasetSource)
    model: str = "conv"
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 0.01
    train_seed: int = 0
    k: int = 80
    p: int = 240
    b: float = 0.01
    min_len: int = 0
    normalize_taps: bool = False
    master_hex: str | None = None
    attack_amplitude: float | None = None
    attack_seed: int = 1
    permutation: list[int] | None = None  # mixed_keys; default cyclic shift

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise PipelineError(
                f"unknown experiment kind {self.kind!r}; expected one of {EXPERIMENT_KINDS}"
            )
        if self.kind == "attack_known_noise" and self.attack_amplitude is None:
            raise PipelineError(
                "attack_known_noise requires an explicit attack amplitude"
            )
        if self.model not in ("conv", "mlp"):
            raise PipelineError(f"unknown model {self.model!r} (want 'conv' or 'mlp')")

    @property
    def blur_mode(self) -> str:
        return "full_sample" if self.kind == "full_blur" else "positional"

    def protection_config(self, class_count: int) -> ProtectionConfig:
        return ProtectionConfig(
            class_count=class_count,
            b=self.b,
            k=self.k,
            p=self.p,
            min_len=self.min_len,
            mode=self.blur_mode,
        )

    def train_config(self) -> learner.TrainConfig:
        return learner.TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.train_seed,
        )

    def to_dict(self, include_master: bool = True) -> dict:
        doc = {
            "kind": self.kind,
            "dataset": self.dataset.to_dict(),
            "train": {
                "model": self.model,
                "epochs": self.epochs,
                "batch_size": self.batch_size,
                "learning_rate": self.learning_rate,
                "seed": self.train_seed,
            },
            "protection": {
                "k": self.k,
                "p": self.p,
                "b": self.b,
                "min_len": self.min_len,
                "normalize_taps": self.normalize_taps,
            },
        }
        if include_master and self.master_hex is not None:
            doc["protection"]["master_hex"] = self.master_hex
        if self.kind.startswith("attack_") or self.kind == "mixed_keys":
            doc["attack"] = {
                "amplitude": self.attack_amplitude,
                "seed": self.attack_seed,
                "permutation": self.permutation,
            }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        train = doc.get("train", {})
        prot = doc.get("protection", {})
        attack = doc.get("attack", {})
        return cls(
            kind=doc["kind"],
            dataset=DatasetSource.from_dict(doc.get("dataset", {})),
            model=train.get("model", "conv"),
            epochs=train.get("epochs", 30),
            batch_size=train.get("batch_size", 128),
            learning_rate=train.get("learning_rate", 0.01),
            train_seed=train.get("seed", 0),
            k=prot.get("k", 80),
            p=prot.get("p", 240),
            b=prot.get("b", 0.01),
            min_len=prot.get("min_len", 0),
            normalize_taps=prot.get("normalize_taps", False),
            master_hex=prot.get("master_hex"),
            attack_amplitude=attack.get("amplitude"),
            attack_seed=attack.get("seed", 1),
            permutation=attack.get("permutation"),
        )


def load_spec(path) -> ExperimentSpec:
    """Read a spec file; TOML unless the extension is .json."""
    path = Path(path)
    if path.suffix == ".json":
        with open(path, "r", encoding="utf-8") as fh:
            return ExperimentSpec.from_dict(json.load(fh))
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        return ExperimentSpec.from_dict(tomllib.load(fh))


def _stage(name: str):
    def decorate(fn):
        def wrapper(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except PipelineError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc

        return wrapper

    return decorate


@_stage("dataset")
def _resolve_dataset(spec: ExperimentSpec, run_dir: Path):
    src = spec.dataset
    if src.directory is not None:
        root = Path(src.directory)
        train = audio_io.load_manifest(root / "train.json")
        test = audio_io.load_manifest(root / "test.json")
        return train, test
    return audio_io.synth_dataset(
        src.classes, src.per_class, src.duration, src.sample_rate, src.seed,
        run_dir / "data",
    )


def run_experiment(
    spec: ExperimentSpec,
    out_dir,
    store_key: bool = True,
    figures: bool = True,
) -> dict:
    """Run one experiment end to end; returns the summary dict.

    Writes everything into out_dir and nothing outside it.  The resolved
    spec (including a generated master key, unless store_key=False) goes
    to spec.json so the run can be reproduced exactly.
    """
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    train_m, test_m = _resolve_dataset(spec, run_dir)
    needs_key = spec.kind != "clean"

    master = None
    cfg = None
    if needs_key:
        if spec.master_hex is None:
            master = MasterKey.generate()
            spec.master_hex = master.secret.hex()
        else:
            master = MasterKey.from_hex(spec.master_hex)
        cfg = spec.protection_config(train_m.class_count)
        if store_key:
            export_keyring(master, cfg, run_dir / "keyring.pkr")

    _write_spec(spec, run_dir / "spec.json", include_master=store_key)

    # -- protection ---------------------------------------------------------
    quality_report = None
    if needs_key:
        fit_train, fit_test = _protect(spec, train_m, test_m, master, cfg, run_dir)
        quality_report = _quality(train_m, fit_train, run_dir)
    else:
        fit_train, fit_test = train_m, test_m

    eval_test = _special_test(spec, test_m, master, cfg, run_dir) or fit_test

    # -- training and evaluation -------------------------------------------
    model, history = _train(spec, fit_train, run_dir)
    clean_acc, clean_confusion = _evaluate(model, test_m)
    special_acc = None
    if spec.kind in _SPECIAL_TEST_KINDS:
        special_acc, _ = _evaluate(model, eval_test)

    summary = {
        "kind": spec.kind,
        "clean_test_acc": clean_acc,
        "poisoned_test_acc": special_acc,
        "frechet_mfcc": quality_report["frechet_mfcc"] if quality_report else None,
        "snr_stats": quality_report["snr"] if quality_report else None,
        "config": _summary_config(spec, master),
    }
    with open(run_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if figures:
        _render_figures(
            spec, run_dir, train_m, fit_train, history, clean_confusion, quality_report
        )
    return summary


@_stage("protect")
def _protect(spec, train_m, test_m, master, cfg, run_dir):
    return blur.protect_dataset(
        train_m,
        test_m,
        master,
        cfg,
        run_dir / "protected",
        pollute_test=(spec.kind == "polluted_test"),
        normalize_taps=spec.normalize_taps,
    )


@_stage("quality")
def _quality(train_m, protected_train, run_dir):
    report = quality.dataset_quality_report(train_m, protected_train)
    quality.save_quality_report(report, run_dir / "quality.json")
    return report


@_stage("special_test")
def _special_test(spec, test_m, master, cfg, run_dir):
    if spec.kind not in _SPECIAL_TEST_KINDS or spec.kind == "polluted_test":
        return None
    out = run_dir / "special_test"
    if spec.kind == "mixed_keys":
        n = cfg.class_count
        perm = spec.permutation or [(c + 1) % n for c in range(n)]
        return blur.apply_mixed_keys(test_m, master, cfg, perm, out)
    if spec.kind == "attack_known_noise":
        positions = {p.class_id: p.position for p in derive_all(master, cfg)}
        return blur.attack_known_location_noise(
            test_m, positions, cfg.p, spec.attack_amplitude, spec.attack_seed, out
        )
    if spec.kind == "attack_random_blur":
        return blur.attack_random_blur(test_m, cfg, spec.attack_seed, out)
    return None


@_stage("train")
def _train(spec, fit_train, run_dir):
    model, history = learner.train(spec.model, fit_train, spec.train_config())
    learner.save_checkpoint(model, run_dir / "checkpoint.tnn")
    learner.save_history(history, run_dir / "history.csv")
    return model, history


@_stage("evaluate")
def _evaluate(model, manifest):
    return learner.evaluate(model, manifest)


def _write_spec(spec: ExperimentSpec, path: Path, include_master: bool):
    doc = spec.to_dict(include_master=include_master)
    if not include_master:
        doc["protection"]["master_stored"] = False
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _summary_config(spec: ExperimentSpec, master: MasterKey | None) -> dict:
    doc = spec.to_dict(include_master=False)
    if master is not None:
        doc["protection"]["master_fingerprint"] = master.fingerprint()
    return doc


@_stage("figures")
def _render_figures(spec, run_dir, train_m, fit_train, history, confusion, quality_report):
    fig_dir = run_dir / "figures"
    plots.training_curve(history, fig_dir / "training_curve.png",
                         title=f"{spec.kind}: {spec.model} training")
    plots.confusion_heatmap(confusion, fig_dir / "confusion_matrix.png",
                            title=f"{spec.kind}: clean test confusion")
    if quality_report is not None:
        snrs = list(quality_report["snr_per_clip"].values())
        plots.snr_histogram(snrs, fig_dir / "snr_hist.png",
                            title=f"{spec.kind}: per-clip SNR (train)")
        entry = train_m.entries[0]
        clean_clip = train_m.load_clip(entry)
        prot_entry = next(e for e in fit_train.entries if e.id == entry.id)
        prot_clip = fit_train.load_clip(prot_entry)
        patch = _modified_range(fit_train.root / blur.PROTECTION_LOG_NAME, entry.id)
        plots.waveform_overlay(
            clean_clip.samples, prot_clip.samples, clean_clip.sample_rate, patch,
            fig_dir / "waveform_overlay.png",
            title=f"{spec.kind}: clip {entry.id}",
        )


def _modified_range(log_path: Path, clip_id: str):
    if not log_path.exists():
        return None
    with open(log_path, "r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("clip_id") == clip_id:
                return rec["modified_start"], rec["modified_end"]
    return None


# --------------------------------------------------------------------------
# run comparison


_METRIC_KEYS = ("clean_test_acc", "poisoned_test_acc", "frechet_mfcc")


def compare_runs(dir_a, dir_b) -> dict:
    """Side-by-side diff of two run summaries.

    Returns metric rows, the list of metrics that differ, and config
    mismatch flags; identical runs produce empty diff lists.
    """
    summaries = []
    for d in (dir_a, dir_b):
        path = Path(d) / "summary.json"
        if not path.exists():
            raise PipelineError(f"missing summary: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            summaries.append(json.load(fh))
    a, b = summaries

    metrics = {}
    differs = []
    for key in _METRIC_KEYS:
        va, vb = a.get(key), b.get(key)
        delta = None
        if isinstance(va, (int, float)) and isinstance(vb, (int, float)):
            delta = vb - va
        metrics[key] = {"a": va, "b": vb, "delta": delta}
        if va != vb:
            differs.append(key)
    mismatches = _config_mismatches(a.get("config", {}), b.get("config", {}))
    return {"metrics": metrics, "differs": differs, "config_mismatches": mismatches}


def _config_mismatches(ca: dict, cb: dict, prefix: str = "") -> list[str]:
    keys = sorted(set(ca) | set(cb))
    out = []
    for key in keys:
        va, vb = ca.get(key), cb.get(key)
        label = f"{prefix}{key}"
        if isinstance(va, dict) and isinstance(vb, dict):
            out.extend(_config_mismatches(va, vb, prefix=f"{label}."))
        elif va != vb:
            out.append(f"{label}: {va!r} != {vb!r}")
    return out


def format_comparison(diff: dict) -> str:
    lines = [f"{'metric':<20} {'run A':>14} {'run B':>14} {'delta':>14}"]
    for key, row in diff["metrics"].items():
        fmt = lambda v: "-" if v is None else f"{v:.6g}"
        lines.append(
            f"{key:<20} {fmt(row['a']):>14} {fmt(row['b']):>14} {fmt(row['delta']):>14}"
        )
    if diff["config_mismatches"]:
        lines.append("config mismatches:")
        lines.extend(f"  {m}" for m in diff["config_mismatches"])
    else:
        lines.append("configs match")
    return "\n".join(lines)

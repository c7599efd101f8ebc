"""pkit: keyed positional-blur protection for labeled audio datasets.

The library turns a labeled audio dataset into one whose training split
carries a small class-keyed blur at a class-specific patch location,
and ships the tooling to measure what that does: MFCC features, SNR and
Fréchet-style dataset distances, tiny from-scratch classifiers, and
attack simulators.
"""

from .audio_io import AudioClip, DatasetManifest, read_wav, synth_dataset, write_wav
from .blur import (
    BlurReport,
    apply_mixed_keys,
    attack_known_location_noise,
    attack_random_blur,
    blur_full,
    blur_patch,
    protect_dataset,
)
from .features import FeatureMatrix, MfccConfig, fft, fft_real, ifft, mfcc
from .keyring import (
    ClassProtection,
    MasterKey,
    ProtectionConfig,
    derive_class_seed,
    derive_protection,
    export_keyring,
    import_keyring,
)
from .learner import TinyConvNet, TinyMlp, TrainConfig, evaluate, train
from .pipeline import ExperimentSpec, compare_runs, run_experiment
from .quality import GaussianStats, dataset_quality_report, fit_stats, frechet_distance, snr_db

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "BlurReport",
    "ClassProtection",
    "DatasetManifest",
    "ExperimentSpec",
    "FeatureMatrix",
    "GaussianStats",
    "MasterKey",
    "MfccConfig",
    "ProtectionConfig",
    "TinyConvNet",
    "TinyMlp",
    "TrainConfig",
    "apply_mixed_keys",
    "attack_known_location_noise",
    "attack_random_blur",
    "blur_full",
    "blur_patch",
    "compare_runs",
    "dataset_quality_report",
    "derive_class_seed",
    "derive_protection",
    "evaluate",
    "export_keyring",
    "fft",
    "fft_real",
    "fit_stats",
    "frechet_distance",
    "ifft",
    "import_keyring",
    "mfcc",
    "protect_dataset",
    "read_wav",
    "run_experiment",
    "snr_db",
    "synth_dataset",
    "train",
    "write_wav",
]

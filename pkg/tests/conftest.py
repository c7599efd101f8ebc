import numpy as np
import pytest

from pkit.audio_io import AudioClip, synth_dataset
from pkit.keyring import MasterKey, ProtectionConfig

TEST_MASTER = MasterKey(bytes(range(32)))


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """4 classes x 20 clips, 0.5 s @ 8 kHz; shared across fast tests."""
    root = tmp_path_factory.mktemp("smallset")
    train, test = synth_dataset(4, 20, 0.5, 8000, seed=7, out_dir=root)
    return train, test


@pytest.fixture
def small_config():
    return ProtectionConfig(class_count=4, b=0.01)


def make_clip(samples, rate=8000, label=0, clip_id="clip"):
    return AudioClip(np.asarray(samples, dtype=np.float64), rate, label, clip_id)


@pytest.fixture
def tone_clip():
    t = np.arange(4000) / 8000.0
    x = 0.8 * np.sin(2 * np.pi * 440.0 * t)
    return make_clip(x, label=1, clip_id="tone440")

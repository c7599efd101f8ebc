import numpy as np
import pytest

from pkit.audio_io import AudioClip
from pkit.features import (
    FeatureError,
    MfccConfig,
    dct_matrix,
    fft,
    fft_real,
    frame_count,
    ifft,
    load_features,
    mel_filterbank,
    mfcc,
    save_features,
)

from conftest import make_clip
from oracles import direct_dft


def test_impulse_has_flat_spectrum():
    spectrum = fft_real(np.array([1.0, 0.0, 0.0, 0.0]))
    assert np.allclose(spectrum, np.ones(4), atol=1e-15)


def test_parseval_identity():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(256)
    spectrum = fft_real(x)
    time_energy = np.sum(np.abs(x) ** 2)
    freq_energy = np.sum(np.abs(spectrum) ** 2) / 256
    assert abs(time_energy - freq_energy) <= 1e-9 * time_energy


def test_cosine_concentrates_in_mirror_bins():
    n = 64
    x = np.cos(2 * np.pi * 3 * np.arange(n) / n)
    spectrum = fft_real(x)
    oracle = direct_dft(x)
    assert np.max(np.abs(spectrum - oracle)) <= 1e-9 * np.max(np.abs(oracle))
    magnitude = np.abs(spectrum)
    hot = {3, 61}
    assert magnitude[3] == pytest.approx(32.0, rel=1e-12)
    assert magnitude[61] == pytest.approx(32.0, rel=1e-12)
    for i in range(n):
        if i not in hot:
            assert magnitude[i] < 1e-9


@pytest.mark.parametrize("n", [2, 4, 8, 32, 128, 512, 1024])
def test_fft_matches_direct_dft(n):
    rng = np.random.default_rng(n)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    got = fft(x)
    want = direct_dft(x)
    scale = np.max(np.abs(want))
    assert np.max(np.abs(got - want)) <= 1e-9 * scale


def test_fft_inverse_roundtrip():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(128)
    back = ifft(fft(x))
    assert np.max(np.abs(back - x)) <= 1e-9


def test_fft_rejects_non_power_of_two():
    with pytest.raises(FeatureError, match="power of two"):
        fft(np.zeros(48))


def test_dct_matrix_is_orthonormal():
    mat = dct_matrix(26, 26)
    gram = mat @ mat.T
    assert np.max(np.abs(gram - np.eye(26))) <= 1e-12


def test_dct_of_constant_vector_hits_only_c0():
    mat = dct_matrix(13, 26)
    coeffs = mat @ np.full(26, -3.7)
    assert coeffs[0] == pytest.approx(np.sqrt(26) * -3.7, rel=1e-12)
    assert np.max(np.abs(coeffs[1:])) <= 1e-12


def test_mel_filterbank_shape_and_partition():
    cfg = MfccConfig.for_rate(8000)
    bank = mel_filterbank(cfg)
    assert bank.shape == (26, 129)
    assert np.all(bank >= 0.0)
    sums = bank.sum(axis=0)
    assert np.all(sums <= 1.0 + 1e-9)
    # interior bins (between the first and last filter centers) partition to 1
    freqs = np.arange(129) * 8000 / 256
    from pkit.features import hz_to_mel, mel_to_hz

    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(4000.0), 28))
    interior = (freqs >= edges[1]) & (freqs <= edges[-2])
    assert np.allclose(sums[interior], 1.0, atol=1e-9)


def test_silence_gives_floor_cepstrum():
    cfg = MfccConfig.for_rate(8000)
    clip = make_clip(np.zeros(2000))
    feat = mfcc(clip, cfg)
    expected_c0 = np.sqrt(26) * np.log(1e-10)
    assert np.allclose(feat.values[:, 0], expected_c0, rtol=1e-12)
    assert np.max(np.abs(feat.values[:, 1:])) <= 1e-12


def test_frame_count_arithmetic():
    cfg = MfccConfig.for_rate(8000)  # frame 200, hop 80
    assert frame_count(200, cfg) == 1
    assert frame_count(279, cfg) == 1
    assert frame_count(280, cfg) == 2
    assert frame_count(4000, cfg) == 48
    clip = make_clip(np.random.default_rng(0).uniform(-0.5, 0.5, 4000))
    assert mfcc(clip, cfg).values.shape == (48, 13)


def test_too_short_clip_rejected():
    cfg = MfccConfig.for_rate(8000)
    with pytest.raises(FeatureError, match="shorter"):
        mfcc(make_clip(np.ones(100)), cfg)


def test_scaling_shifts_only_c0(tone_clip):
    # keep every mel band above the floor with a faint broadband component
    cfg = MfccConfig.for_rate(8000)
    alpha = 0.5
    rng = np.random.default_rng(2)
    noise = 0.01 * rng.standard_normal(len(tone_clip))
    a = AudioClip(np.clip(tone_clip.samples + noise, -1, 1), 8000, 0, "a")
    b = AudioClip(alpha * a.samples, 8000, 0, "b")
    fa = mfcc(a, cfg).values
    fb = mfcc(b, cfg).values
    shift = np.sqrt(26) * 2.0 * np.log(alpha)
    assert np.max(np.abs((fb[:, 0] - fa[:, 0]) - shift)) <= 1e-6
    assert np.max(np.abs(fb[:, 1:] - fa[:, 1:])) <= 1e-6


def test_mfcc_deterministic(tone_clip):
    cfg = MfccConfig.for_rate(8000)
    a = mfcc(tone_clip, cfg).values
    b = mfcc(tone_clip, cfg).values
    assert np.array_equal(a, b)


def test_config_hash_tracks_parameters():
    a = MfccConfig.for_rate(8000)
    b = MfccConfig.for_rate(16000)
    c = MfccConfig(8000, a.frame_len, a.hop, a.fft_size, n_mels=20, n_coeffs=13)
    assert a.config_hash() == MfccConfig.for_rate(8000).config_hash()
    assert len({a.config_hash(), b.config_hash(), c.config_hash()}) == 3


def test_config_validation():
    with pytest.raises(FeatureError):
        MfccConfig(8000, frame_len=200, hop=80, fft_size=100)
    with pytest.raises(FeatureError):
        MfccConfig(8000, frame_len=200, hop=80, fft_size=256, n_mels=10, n_coeffs=13)


def test_feature_dump_roundtrip(tmp_path, tone_clip):
    cfg = MfccConfig.for_rate(8000)
    feat = mfcc(tone_clip, cfg)
    path = tmp_path / "feat.mfc"
    save_features(feat, path)
    loaded = load_features(path, clip_id=feat.clip_id)
    assert loaded.config_hash == feat.config_hash
    assert np.array_equal(loaded.values, feat.values)
    assert path.read_bytes()[:4] == b"MFC1"


def test_feature_dump_rejects_garbage(tmp_path):
    path = tmp_path / "bad.mfc"
    path.write_bytes(b"XXXX" + bytes(32))
    with pytest.raises(FeatureError, match="magic"):
        load_features(path)

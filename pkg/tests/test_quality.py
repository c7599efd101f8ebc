import numpy as np
import pytest

from pkit.audio_io import AudioClip
from pkit.blur import protect_manifest
from pkit.features import FeatureMatrix
from pkit.keyring import ProtectionConfig
from pkit.quality import (
    GaussianStats,
    QualityError,
    dataset_quality_report,
    fit_stats,
    frechet_distance,
    jacobi_eigh,
    save_quality_report,
    snr_db,
)

from conftest import TEST_MASTER, make_clip
from oracles import frechet_reference


def _feat(values, clip_id="f", config_hash="cafec0de00000000"):
    return FeatureMatrix(np.asarray(values, dtype=np.float64), clip_id, config_hash)


# --------------------------------------------------------------------------
# SNR


def test_snr_identical_clips_capped(tone_clip):
    assert snr_db(tone_clip, tone_clip) == 300.0


def test_snr_zero_db_when_error_equals_signal(tone_clip):
    doubled = AudioClip(tone_clip.samples * 2.0, 8000, 1, tone_clip.id)
    assert snr_db(tone_clip, doubled) == pytest.approx(0.0, abs=1e-12)


def test_snr_error_cases(tone_clip):
    with pytest.raises(QualityError, match="length"):
        snr_db(tone_clip, make_clip(tone_clip.samples[:-1]))
    silent = make_clip(np.zeros(len(tone_clip)))
    with pytest.raises(QualityError, match="all-zero"):
        snr_db(silent, tone_clip)


# --------------------------------------------------------------------------
# Gaussian statistics


def test_fit_stats_single_repeated_frame_gives_zero_cov():
    frame = np.linspace(-1, 1, 13)
    stats = fit_stats([_feat(np.tile(frame, (20, 1)))])
    assert np.allclose(stats.mean, frame)
    assert np.max(np.abs(stats.cov)) <= 1e-30  # zero up to mean-rounding ulps
    assert stats.frame_count == 20


def test_fit_stats_matches_standard_normal():
    rng = np.random.default_rng(0)
    feats = [_feat(rng.standard_normal((1000, 13))) for _ in range(100)]
    stats = fit_stats(feats)
    assert np.max(np.abs(stats.mean)) < 0.05
    assert np.max(np.abs(stats.cov - np.eye(13))) < 0.05


def test_fit_stats_invariant_to_clip_order():
    rng = np.random.default_rng(1)
    feats = [_feat(rng.standard_normal((30, 5))) for _ in range(6)]
    forward = fit_stats(feats)
    backward = fit_stats(list(reversed(feats)))
    assert np.allclose(forward.mean, backward.mean, atol=1e-12)
    assert np.allclose(forward.cov, backward.cov, atol=1e-12)


def test_fit_stats_insufficient_frames():
    with pytest.raises(QualityError, match="insufficient"):
        fit_stats([_feat(np.zeros((10, 13)))])


def test_fit_stats_rejects_mixed_configs():
    a = _feat(np.zeros((20, 3)), config_hash="aaaa")
    b = _feat(np.zeros((20, 3)), config_hash="bbbb")
    with pytest.raises(QualityError, match="mixed"):
        fit_stats([a, b])


# --------------------------------------------------------------------------
# eigensolver and Fréchet distance


def test_jacobi_matches_numpy_eigh():
    rng = np.random.default_rng(3)
    for dim in (1, 2, 5, 13):
        m = rng.standard_normal((dim, dim))
        sym = (m + m.T) / 2.0
        w, v = jacobi_eigh(sym)
        assert np.allclose(np.sort(w), np.sort(np.linalg.eigvalsh(sym)), atol=1e-10)
        assert np.allclose(v @ np.diag(w) @ v.T, sym, atol=1e-10)


def _stats(mean, cov):
    return GaussianStats(np.asarray(mean, float), np.asarray(cov, float), frame_count=100)


def test_frechet_identity_is_zero():
    rng = np.random.default_rng(4)
    m = rng.standard_normal((6, 6))
    cov = m @ m.T
    stats = _stats(rng.standard_normal(6), cov)
    assert frechet_distance(stats, stats) <= 1e-8


def test_frechet_diagonal_closed_form():
    a = _stats([0.0], [[1.0]])
    b = _stats([0.0], [[4.0]])
    assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-9)


def test_frechet_mean_shift_only():
    a = _stats([1.0, 0.0], np.eye(2))
    b = _stats([0.0, 0.0], np.eye(2))
    assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-9)


def test_frechet_symmetric():
    rng = np.random.default_rng(5)
    covs = []
    for _ in range(2):
        m = rng.standard_normal((5, 5))
        covs.append(m @ m.T + 0.1 * np.eye(5))
    a = _stats(rng.standard_normal(5), covs[0])
    b = _stats(rng.standard_normal(5), covs[1])
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-8)


def test_frechet_matches_independent_sqrt_oracle():
    rng = np.random.default_rng(6)
    for _ in range(5):
        ma, mb = rng.standard_normal(5), rng.standard_normal(5)
        xa = rng.standard_normal((5, 5))
        xb = rng.standard_normal((5, 5))
        cov_a = xa @ xa.T + 0.05 * np.eye(5)
        cov_b = xb @ xb.T + 0.05 * np.eye(5)
        got = frechet_distance(_stats(ma, cov_a), _stats(mb, cov_b))
        want = frechet_reference(ma, cov_a, mb, cov_b)
        assert abs(got - want) <= 1e-6, f"{got} vs oracle {want}"


def test_frechet_dimension_mismatch():
    with pytest.raises(QualityError, match="dimension"):
        frechet_distance(_stats([0.0], [[1.0]]), _stats([0.0, 0.0], np.eye(2)))


def test_frechet_monotone_under_added_noise():
    rng = np.random.default_rng(7)
    base = rng.standard_normal((5000, 13))
    clean = fit_stats([_feat(base)])
    distances = []
    for amplitude in (0.05, 0.2, 0.8):
        noisy = base + amplitude * rng.standard_normal(base.shape)
        distances.append(frechet_distance(fit_stats([_feat(noisy)]), clean))
    assert distances[0] <= distances[1] <= distances[2]


# --------------------------------------------------------------------------
# dataset report


@pytest.fixture(scope="module")
def quality_dataset(tmp_path_factory):
    from pkit.audio_io import synth_dataset

    root = tmp_path_factory.mktemp("qualityset")
    return synth_dataset(4, 20, 0.5, 8000, seed=11, out_dir=root)


def test_report_noop_dataset_is_perfect(tmp_path, quality_dataset):
    from pkit.blur import copy_manifest

    train, _ = quality_dataset
    copied = copy_manifest(train, tmp_path / "copy")
    report = dataset_quality_report(train, copied)
    assert report["frechet_mfcc"] <= 1e-8
    assert report["snr"]["min"] == 300.0
    assert report["clamped_samples"] is None  # no protection log for a copy


def test_report_positional_beats_full_blur(tmp_path, quality_dataset):
    train, _ = quality_dataset
    pos_cfg = ProtectionConfig(class_count=4, b=0.01, mode="positional")
    full_cfg = ProtectionConfig(class_count=4, b=0.01, mode="full_sample")
    pos = protect_manifest(train, TEST_MASTER, pos_cfg, tmp_path / "pos")
    full = protect_manifest(train, TEST_MASTER, full_cfg, tmp_path / "full")
    report_pos = dataset_quality_report(train, pos)
    report_full = dataset_quality_report(train, full)
    assert report_pos["frechet_mfcc"] < report_full["frechet_mfcc"]
    assert report_pos["snr"]["median"] >= report_full["snr"]["median"] + 10.0
    assert report_pos["clamped_samples"] is not None


def test_report_requires_aligned_ids(tmp_path, quality_dataset):
    train, test = quality_dataset
    with pytest.raises(QualityError, match="aligned"):
        dataset_quality_report(train, test)


def test_report_serialization(tmp_path, quality_dataset):
    from pkit.blur import copy_manifest
    import json

    train, _ = quality_dataset
    copied = copy_manifest(train, tmp_path / "c")
    report = dataset_quality_report(train, copied)
    out = tmp_path / "report.json"
    save_quality_report(report, out)
    doc = json.loads(out.read_text())
    for key in ("frechet_mfcc", "snr", "clamped_samples", "config_hash", "embedding"):
        assert key in doc
    assert "snr_per_clip" not in doc
    assert set(doc["snr"]) == {"min", "median", "mean"}

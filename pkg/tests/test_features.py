import numpy as np
import pytest

from dtb.features import (ConfigurationError, FeatureConfig, FeatureMatrix, Standardization, build_filterbank,
                          extract_features, make_windows, n_frames_for, pad_bins, read_feature_cache,
                          write_feature_cache)
from dtb.synth import AudioClip


@pytest.fixture(scope="module")
def bank():
    return build_filterbank(FeatureConfig())


def _tone(freq, dur=0.5, sr=44100, amp=0.5):
    t = np.arange(int(dur * sr)) / sr
    return AudioClip(sr, amp * np.sin(2 * np.pi * freq * t))


def test_filterbank_shape(bank):
    assert bank.matrix.shape == (229, 4096 // 2 + 1)


def test_filters_are_triangles(bank):
    m = bank.matrix
    assert (m >= 0).all()
    assert (m.sum(axis=1) > 0).all()
    for row in m:
        nz = np.flatnonzero(row)
        # compact, contiguous support
        assert nz[-1] - nz[0] + 1 == len(nz)
        seg = row[nz[0]:nz[-1] + 1]
        peak = int(np.argmax(seg))
        assert (np.diff(seg[:peak + 1]) >= 0).all()
        assert (np.diff(seg[peak:]) <= 0).all()


def test_centers_log_spaced(bank):
    c = bank.centers
    assert (np.diff(c) > 0).all()
    ratios = c[1:] / c[:-1]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-9)


@pytest.mark.parametrize("kw", [dict(f_min=100.0, f_max=50.0), dict(f_max=30000.0), dict(n_bins=5000)])
def test_infeasible_filterbank(kw):
    with pytest.raises(ConfigurationError):
        build_filterbank(FeatureConfig(**kw))


def test_silence_is_zero(bank):
    fm = extract_features(AudioClip(44100, np.zeros(44100)), filterbank=bank)
    assert fm.n_bins == 229
    assert not fm.data.any()


def test_frame_count():
    n = 88200
    fm = extract_features(AudioClip(44100, np.zeros(n)))
    assert fm.n_frames == n_frames_for(n, 441) == 201
    assert fm.frame_rate == 100.0


def test_tone_lands_on_nearest_filter(bank):
    fm = extract_features(_tone(440.0), filterbank=bank)
    arg = np.argmax(fm.data[5:-5], axis=1)
    assert (arg == arg[0]).all()
    assert arg[0] == np.argmin(np.abs(bank.centers - 440.0))


def test_deterministic(bank):
    a = extract_features(_tone(300.0), filterbank=bank)
    b = extract_features(_tone(300.0), filterbank=bank)
    assert a.data.tobytes() == b.data.tobytes()


def test_amplitude_monotone(bank):
    a = extract_features(_tone(300.0, amp=0.2), filterbank=bank)
    b = extract_features(_tone(300.0, amp=0.6), filterbank=bank)
    assert (b.data >= a.data).all()


def test_errors():
    with pytest.raises(ConfigurationError):
        extract_features(AudioClip(16000, np.zeros(16000)))
    with pytest.raises(ValueError):
        extract_features(AudioClip(44100, np.zeros(1000)))


def test_windows():
    data = np.arange(100, dtype=np.float32)[:, None] * np.ones((1, 229), np.float32)
    w = make_windows(FeatureMatrix(100.0, data), 5)
    assert w.shape == (100, 5, 229)
    assert w[0, :, 0].tolist() == [0, 0, 0, 1, 2]
    np.testing.assert_array_equal(w[:, 2, :], data)
    with pytest.raises(ValueError):
        make_windows(data, 4)


def test_pad_bins():
    x = np.ones((3, 229))
    y = pad_bins(x, 256)
    assert y.shape == (3, 256) and y[:, 229:].sum() == 0
    with pytest.raises(ConfigurationError):
        pad_bins(x, 200)


def test_standardization():
    rng = np.random.default_rng(0)
    mats = [FeatureMatrix(100.0, rng.normal(3.0, 2.0, (50, 8)).astype(np.float32)) for _ in range(4)]
    st = Standardization.fit(mats)
    z = np.concatenate([st.apply(m).data for m in mats])
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-5)
    np.testing.assert_allclose(z.std(axis=0), 1, atol=1e-5)
    back = Standardization.from_dict(st.to_dict())
    np.testing.assert_array_equal(back.apply(mats[0]).data, st.apply(mats[0]).data)


def test_cache_round_trip(tmp_path):
    fm = FeatureMatrix(100.0, np.random.default_rng(1).random((7, 229), dtype=np.float32))
    write_feature_cache(tmp_path / "a.feat", fm)
    back = read_feature_cache(tmp_path / "a.feat")
    assert back.frame_rate == 100.0
    assert back.data.tobytes() == fm.data.tobytes()
    raw = (tmp_path / "a.feat").read_bytes()
    (tmp_path / "b.feat").write_bytes(raw[:-4])
    with pytest.raises(ValueError):
        read_feature_cache(tmp_path / "b.feat")

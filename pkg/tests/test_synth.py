import numpy as np
import pytest

from dtb.notation import NoteCombination, count_combinations, midi_to_hz
from dtb.synth import (Mode, SynthPatch, build_fluid_dataset, mix_notes, render_combination, render_note,
                       read_wav, write_wav)


def _spectrum(x, sr):
    mag = np.abs(np.fft.rfft(x))
    return mag, np.fft.rfftfreq(len(x), 1 / sr)


def test_length_formula():
    assert len(render_note(60, 2.0, sample_rate=16000).samples) == 32000


def test_a4_peak_near_440():
    clip = render_note(69, 1.0, sample_rate=16000)
    mag, freqs = _spectrum(clip.samples, 16000)
    assert abs(freqs[np.argmax(mag)] - 440.0) <= freqs[1]


def test_pure_sinusoid_rms():
    patch = SynthPatch(n_partials=1, decay_rate=0.0, attack=0.0)
    x = render_note(69, 1.0, patch, 16000).samples
    assert np.sqrt(np.mean(x ** 2)) == pytest.approx(0.9 / np.sqrt(2), rel=1e-3)


def test_peak_normalized():
    for combo in (NoteCombination.of(60), NoteCombination.of(49, 71)):
        x = render_combination(combo, 0.5).samples
        assert np.max(np.abs(x)) == pytest.approx(0.9)


def test_partials_above_nyquist_dropped():
    # MIDI 108 ~ 4186 Hz; only the fundamental fits below 8 kHz Nyquist at 16 kHz
    x = render_note(108, 0.5, sample_rate=16000).samples
    ref = render_note(108, 0.5, SynthPatch(n_partials=1), 16000).samples
    np.testing.assert_allclose(x, ref, atol=1e-12)


@pytest.mark.parametrize("dur", [0.0, -1.0])
def test_non_positive_duration(dur):
    with pytest.raises(ValueError):
        render_note(60, dur)


def test_empty_combination():
    with pytest.raises(ValueError):
        render_combination(NoteCombination(), 1.0)


def test_singleton_equals_note():
    np.testing.assert_array_equal(render_combination(NoteCombination.of(62), 0.5).samples,
                                  render_note(62, 0.5).samples)


def test_superposition_before_normalization():
    combo = NoteCombination.of(60, 67)
    mixed = mix_notes(combo, 0.5)
    parts = render_note(60, 0.5).samples + render_note(67, 0.5).samples
    np.testing.assert_allclose(mixed, parts, rtol=0, atol=1e-15)


def test_interval_fundamentals_are_local_maxima():
    sr = 16000
    combo = NoteCombination.of(55, 66)
    mag, freqs = _spectrum(render_combination(combo, 1.0, sample_rate=sr).samples, sr)
    for p in combo:
        i = int(round(midi_to_hz(p) / freqs[1]))
        j = i - 2 + int(np.argmax(mag[i - 2:i + 3]))
        assert mag[j] >= mag[j - 1] and mag[j] >= mag[j + 1]
        assert abs(j - i) <= 1


def test_patch_invariants():
    with pytest.raises(ValueError):
        SynthPatch(n_partials=2, partial_amps=(0.5, 0.2))
    with pytest.raises(ValueError):
        SynthPatch(decay_rate=-1.0)
    assert SynthPatch().partial_amps[:3] == (1.0, 0.5, 1 / 3)


@pytest.mark.parametrize("mode,n_train,n_test", [(Mode.COMBI, 253, 23), (Mode.ISOL, 23, 253)])
def test_fluid_split_sizes(mode, n_train, n_test):
    man = build_fluid_dataset(mode)
    assert len(man.splits["train"]) == len(man.splits["valid"]) == n_train
    assert len(man.splits["test"]) == n_test
    assert not man.combinations("train") & man.combinations("test")
    assert len(man.combinations("train") | man.combinations("test")) == count_combinations(23, 1, 2)
    sizes = {len(c) for c in man.combinations("train")}
    assert sizes == ({2} if mode is Mode.COMBI else {1})


def test_degenerate_range():
    with pytest.raises(ValueError):
        build_fluid_dataset(Mode.COMBI, 60, 60)


def test_events_cover_whole_clip():
    it = build_fluid_dataset(Mode.COMBI, 60, 62, duration=1.5).splits["train"][0]
    assert [(e.onset, e.offset) for e in it.events] == [(0.0, 1.5)] * 2


def test_valid_is_jittered_and_seeded():
    a = build_fluid_dataset(Mode.ISOL, 60, 62, duration=0.2, seed=3)
    b = build_fluid_dataset(Mode.ISOL, 60, 62, duration=0.2, seed=3)
    c = build_fluid_dataset(Mode.ISOL, 60, 62, duration=0.2, seed=4)
    va, vb, vc = (m.splits["valid"][0].render().samples for m in (a, b, c))
    np.testing.assert_array_equal(va, vb)
    assert not np.array_equal(va, vc)
    assert not np.array_equal(va, a.splits["train"][0].render().samples)


def test_wav_round_trip(tmp_path):
    clip = render_note(60, 0.1)
    write_wav(tmp_path / "a.wav", clip)
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == clip.sample_rate
    np.testing.assert_allclose(back.samples, clip.samples, atol=1 / 32767)

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dtb.evaluation import (ConfigurationError, FrameCounts, aggregate, classify_frame, combination_stats,
                            framewise_prf, partition_shared, stats_from_csv, stats_to_csv, summary_json)
from dtb.notation import NoteCombination, NoteEvent, PianoRoll, events_to_pianoroll

C = NoteCombination.of
pitch_sets = st.frozensets(st.integers(49, 71), max_size=4).map(lambda s: NoteCombination(tuple(s)))


def _roll(rows, lo=60, k=8):
    data = np.zeros((len(rows), k), np.uint8)
    for t, ps in enumerate(rows):
        for p in ps:
            data[t, p - lo] = 1
    return PianoRoll(100.0, lo, data)


@pytest.mark.parametrize("pred,truth,expected", [
    (C(60), C(60), (True, False, False)),
    (C(60, 64), C(60), (False, True, False)),
    (C(60, 64), C(60, 67), (False, True, True)),
    (C(), C(60), (False, False, True)),
])
def test_classify_examples(pred, truth, expected):
    fc = classify_frame(pred, truth)
    assert (fc.exact, fc.has_additions, fc.has_omissions) == expected


@given(pitch_sets, pitch_sets)
def test_exact_iff_no_errors(pred, truth):
    fc = classify_frame(pred, truth)
    assert fc.exact == (not fc.has_additions and not fc.has_omissions)
    assert fc.has_additions == bool(pred.as_set() - truth.as_set())


def test_counting_example():
    truth = _roll([[60]] * 10)
    pred = _roll([[60]] * 7 + [[60, 64]] * 2 + [[]])
    (row,) = combination_stats(pred, truth, min_frames=1)
    assert (row.n_frames, row.p_exact, row.p_additions, row.p_omissions) == (10, 0.7, 0.2, 0.1)


def test_perfect_prediction():
    truth = _roll([[60]] * 5 + [[60, 62]] * 3 + [[]] * 2)
    rows = combination_stats(truth, truth, min_frames=1)
    assert [r.combination for r in rows] == [C(60), C(60, 62)]
    assert all((r.p_exact, r.p_additions, r.p_omissions) == (1.0, 0.0, 0.0) for r in rows)


def test_both_errors_in_one_frame():
    truth = _roll([[60, 67]] * 4)
    pred = _roll([[60, 67]] * 3 + [[60, 64]])
    (row,) = combination_stats(pred, truth, min_frames=1)
    assert row.p_additions == row.p_omissions == 0.25
    assert row.p_exact + row.p_additions + row.p_omissions > 1


def test_min_frames_and_top_k():
    truth = _roll([[60]] * 30 + [[61]] * 25 + [[62]] * 5)
    rows = combination_stats(truth, truth)
    assert [r.combination for r in rows] == [C(60), C(61)]
    assert len(combination_stats(truth, truth, top_k=1)) == 1


def test_grid_mismatch():
    with pytest.raises(ConfigurationError):
        combination_stats(_roll([[60]] * 3), _roll([[60]] * 4))
    with pytest.raises(ConfigurationError):
        framewise_prf(_roll([[60]]), _roll([[60]], lo=59))


def test_partition():
    a, b, c = C(60), C(61), C(62)
    assert partition_shared({a, b}, {b, c}) == ({b}, {c})
    assert partition_shared({a, b}, {a}) == ({a}, set())


def test_prf_examples():
    t = _roll([[60, 61], [60]])
    assert framewise_prf(t, t) == (1.0, 1.0, 1.0)
    assert framewise_prf(_roll([[], []]), t) == (0.0, 0.0, 0.0)
    pred = _roll([[60, 62], [60]])  # TP 2, FP 1, FN 1
    p, r, f = framewise_prf(pred, t)
    assert p == pytest.approx(2 / 3) and r == pytest.approx(2 / 3) and f == pytest.approx(2 / 3)


@given(st.lists(st.tuples(pitch_sets, pitch_sets), min_size=1, max_size=40))
def test_counts_agree_with_classify(pairs):
    pred = PianoRoll(100.0, 49, np.array([[p in a for p in range(49, 72)] for a, _ in pairs], np.uint8))
    truth = PianoRoll(100.0, 49, np.array([[p in b for p in range(49, 72)] for _, b in pairs], np.uint8))
    rows = {r.combination: r for r in combination_stats(pred, truth, min_frames=1)}
    for combo, r in rows.items():
        cls = [classify_frame(a, b) for a, b in pairs if b == combo]
        assert r.n_frames == len(cls)
        assert r.p_exact == pytest.approx(np.mean([c.exact for c in cls]))
        assert r.p_omissions == pytest.approx(np.mean([c.has_omissions for c in cls]))
    assert set(rows) == {b for _, b in pairs if b.pitches}


def test_csv_round_trip():
    truth = _roll([[60]] * 3 + [[60, 64]] * 2)
    pred = _roll([[60]] * 2 + [[61]] + [[60, 64]] * 2)
    counts = FrameCounts().add(pred, truth)
    rows = counts.stats(min_frames=1, reference={C(60)})
    text = stats_to_csv(rows)
    assert text.splitlines()[0] == "pitches,n_frames,p_exact,p_additions,p_omissions,shared"
    back = stats_from_csv(text)
    assert [(r.combination, r.n_frames, r.shared) for r in back] == [(C(60), 3, True), (C(60, 64), 2, False)]
    assert back[0].p_exact == pytest.approx(2 / 3, abs=1e-6)


def test_aggregate_and_summary():
    ev = [NoteEvent(0.0, 0.1, 60)]
    t = events_to_pianoroll(ev, 100.0, 20, 60, 8)
    (tp, fp, fn), counts = aggregate([(t, t), (t, t)])
    assert (tp, fp, fn) == (20, 0, 0)
    doc = json.loads(summary_json(tp, fp, fn, counts, split="test"))
    assert doc["f_measure"] == 1.0 and doc["frames"] == 20 and doc["split"] == "test"

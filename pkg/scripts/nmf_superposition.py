"""NMF dictionary from isolated notes applied to every two-note interval.

Needs no training run: renders the notes, learns one template per pitch
and reports framewise P/R/F on the intervals for a few thresholds.
"""
import argparse
import itertools

from dtb.evaluation import aggregate, prf_from_counts
from dtb.features import FeatureConfig, build_filterbank, extract_features
from dtb.nmf import NmfConfig, learn_note_dictionary, nmf_transcribe
from dtb.notation import FLUID_HI, FLUID_LO, NoteCombination, NoteEvent, events_to_pianoroll
from dtb.synth import render_combination, render_note


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--duration", type=float, default=2.0)
    ap.add_argument("--thresholds", type=float, nargs="+", default=[0.05, 0.1, 0.2])
    args = ap.parse_args()

    cfg = FeatureConfig()
    fb = build_filterbank(cfg)
    pitches = range(FLUID_LO, FLUID_HI + 1)
    notes = [(extract_features(render_note(p, args.duration), cfg, fb), p) for p in pitches]
    dictionary = learn_note_dictionary(notes)
    intervals = []
    for a, b in itertools.combinations(pitches, 2):
        fm = extract_features(render_combination(NoteCombination.of(a, b), args.duration), cfg, fb)
        truth = events_to_pianoroll([NoteEvent(0.0, args.duration, p) for p in (a, b)], cfg.frame_rate,
                                    fm.n_frames, FLUID_LO, len(pitches))
        intervals.append((fm, truth))
    print(f"dictionary {dictionary.shape[0]}x{dictionary.shape[1]}, {len(intervals)} intervals")
    for th in args.thresholds:
        ncfg = NmfConfig(rank=len(pitches), threshold=th)
        (tp, fp, fn), counts = aggregate((nmf_transcribe(fm, dictionary, ncfg), t) for fm, t in intervals)
        p, r, f = prf_from_counts(tp, fp, fn)
        exact = sum(counts.exact.values()) / sum(counts.frames.values())
        print(f"threshold {th:<5g} P {p:.3f}  R {r:.3f}  F {f:.3f}  exact frames {exact:.3f}")


if __name__ == "__main__":
    main()

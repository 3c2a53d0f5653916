"""Additive note synthesizer and the FLUID-COMBI / FLUID-ISOL dataset builder.

Every clip in a dataset is produced by the same patch, so train and test
splits share their acoustic properties and differ only in which note
combinations they contain.
"""
from __future__ import annotations

import enum
import itertools
import json
import wave
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .notation import FLUID_HI, FLUID_LO, NoteCombination, NoteEvent, check_pitch, midi_to_hz

PEAK = 0.9


class Mode(str, enum.Enum):
    COMBI = "COMBI"
    ISOL = "ISOL"


@dataclass(frozen=True)
class SynthPatch:
    n_partials: int = 12
    partial_amps: tuple[float, ...] | None = None
    partial_detune_cents: tuple[float, ...] | None = None
    decay_rate: float = 0.7
    attack: float = 0.01

    def __post_init__(self):
        if self.n_partials < 1:
            raise ValueError("n_partials must be >= 1")
        amps = self.partial_amps
        if amps is None:
            amps = tuple(1.0 / k for k in range(1, self.n_partials + 1))
        detune = self.partial_detune_cents
        if detune is None:
            detune = (0.0,) * self.n_partials
        amps, detune = tuple(map(float, amps)), tuple(map(float, detune))
        if len(amps) != self.n_partials or len(detune) != self.n_partials:
            raise ValueError("partial_amps and partial_detune_cents need n_partials entries")
        if amps[0] != 1.0:
            raise ValueError("partial_amps[0] must be 1 (fundamental is the reference)")
        if min(amps) < 0:
            raise ValueError("partial amplitudes must be non-negative")
        if self.decay_rate < 0 or self.attack < 0:
            raise ValueError("decay_rate and attack must be non-negative")
        object.__setattr__(self, "partial_amps", amps)
        object.__setattr__(self, "partial_detune_cents", detune)

    def jittered(self, rng: np.random.Generator, cents: float = 3.0) -> "SynthPatch":
        """Copy with every partial detuned by an extra uniform +-``cents``."""
        extra = rng.uniform(-cents, cents, self.n_partials)
        return replace(
            self, partial_detune_cents=tuple(float(d + e) for d, e in zip(self.partial_detune_cents, extra))
        )


@dataclass(frozen=True, eq=False)
class AudioClip:
    sample_rate: int
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValueError("audio must be mono")
        object.__setattr__(self, "samples", s)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def _raw_note(midi: int, duration: float, patch: SynthPatch, sample_rate: int) -> np.ndarray:
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = midi_to_hz(check_pitch(midi))
    out = np.zeros(n)
    for k, (amp, cents) in enumerate(zip(patch.partial_amps, patch.partial_detune_cents), start=1):
        fk = k * f0 * 2.0 ** (cents / 1200.0)
        if fk >= sample_rate / 2 or amp == 0:
            continue
        out += amp * np.sin(2 * np.pi * fk * t)
    out *= np.exp(-patch.decay_rate * t)
    if patch.attack > 0:
        out *= np.minimum(t / patch.attack, 1.0)
    return out


def _normalize(x: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(x)) if x.size else 0.0
    return x * (PEAK / peak) if peak > 0 else x


def render_note(midi: int, duration: float, patch: SynthPatch | None = None,
                sample_rate: int = 44100) -> AudioClip:
    """Sum of decaying sinusoidal partials, peak-normalized to 0.9."""
    patch = patch or SynthPatch()
    return AudioClip(sample_rate, _normalize(_raw_note(midi, duration, patch, sample_rate)))


def mix_notes(combo: NoteCombination, duration: float, patch: SynthPatch | None = None,
              sample_rate: int = 44100) -> np.ndarray:
    """Un-normalized sample-wise sum of the normalized single-note renders."""
    patch = patch or SynthPatch()
    if len(combo) == 0:
        raise ValueError("cannot render an empty combination")
    return sum(render_note(p, duration, patch, sample_rate).samples for p in combo)


def render_combination(combo: NoteCombination, duration: float, patch: SynthPatch | None = None,
                       sample_rate: int = 44100) -> AudioClip:
    """Synchronous onset/offset mixture of every pitch in ``combo``."""
    if len(combo) == 1:
        # skip the joint rescale so a singleton is bit-identical to its note
        return render_note(combo.pitches[0], duration, patch, sample_rate)
    return AudioClip(sample_rate, _normalize(mix_notes(combo, duration, patch, sample_rate)))


# -- dataset ---------------------------------------------------------------


@dataclass
class DatasetItem:
    item_id: str
    combination: NoteCombination
    events: list[NoteEvent]
    patch: SynthPatch
    duration: float

    def render(self, sample_rate: int = 44100) -> AudioClip:
        return render_combination(self.combination, self.duration, self.patch, sample_rate)


@dataclass
class DatasetManifest:
    mode: Mode
    pitch_range: tuple[int, int]
    splits: dict[str, list[DatasetItem]]
    sample_rate: int = 44100

    def combinations(self, split: str) -> set[NoteCombination]:
        return {it.combination for it in self.splits[split]}

    def to_json(self, paths: dict[str, tuple[str, str]] | None = None) -> str:
        """Serialize as ``split -> [[wav path, label path], ...]`` plus metadata."""
        doc = {
            "mode": self.mode.value,
            "pitch_range": list(self.pitch_range),
            "sample_rate": self.sample_rate,
            "splits": {
                split: [list(paths[it.item_id]) if paths else [f"{split}/{it.item_id}.wav", f"{split}/{it.item_id}.txt"]
                        for it in items]
                for split, items in self.splits.items()
            },
        }
        return json.dumps(doc, indent=1, sort_keys=True)


def _item(split: str, combo: NoteCombination, duration: float, patch: SynthPatch) -> DatasetItem:
    item_id = f"{split}_" + "-".join(str(p) for p in combo)
    events = [NoteEvent(0.0, duration, p) for p in combo]
    return DatasetItem(item_id, combo, events, patch, duration)


def build_fluid_dataset(mode: Mode | str = Mode.COMBI, pitch_lo: int = FLUID_LO, pitch_hi: int = FLUID_HI,
                        duration: float = 2.0, patch: SynthPatch | None = None, seed: int = 0,
                        sample_rate: int = 44100, jitter_cents: float = 3.0) -> DatasetManifest:
    """Lay out the FLUID protocol over the inclusive range ``pitch_lo..pitch_hi``.

    COMBI trains/validates on every two-note interval and tests on isolated
    notes; ISOL swaps the roles. Validation items are re-rendered with a
    seeded per-item detune jitter.
    """
    mode = Mode(mode)
    patch = patch or SynthPatch()
    if pitch_hi - pitch_lo + 1 < 2:
        raise ValueError(f"need at least 2 pitches, got range {pitch_lo}..{pitch_hi}")
    check_pitch(pitch_lo), check_pitch(pitch_hi)
    pitches = range(pitch_lo, pitch_hi + 1)
    singles = [NoteCombination.of(p) for p in pitches]
    pairs = [NoteCombination(c) for c in itertools.combinations(pitches, 2)]
    fit_set, test_set = (pairs, singles) if mode is Mode.COMBI else (singles, pairs)

    rng = np.random.default_rng(seed)
    splits = {
        "train": [_item("train", c, duration, patch) for c in fit_set],
        "valid": [_item("valid", c, duration, patch.jittered(rng, jitter_cents)) for c in fit_set],
        "test": [_item("test", c, duration, patch) for c in test_set],
    }
    return DatasetManifest(mode, (pitch_lo, pitch_hi), splits, sample_rate)


# -- WAV i/o ---------------------------------------------------------------


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.round(np.clip(clip.samples, -1.0, 1.0) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(clip.sample_rate))
        w.writeframes(pcm.tobytes())


def read_wav(path) -> AudioClip:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: only mono 16-bit PCM is supported")
        sr = w.getframerate()
        pcm = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return AudioClip(sr, pcm.astype(np.float64) / 32767.0)

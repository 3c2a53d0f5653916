"""Symbolic types for framewise transcription: pitches, note events, piano
rolls and note combinations, plus the combinatorics used to size the
combination space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PIANO_LO = 21
PIANO_K = 88
FLUID_LO = 49
FLUID_HI = 71

GT_HEADER = "OnsetTime\tOffsetTime\tMidiPitch"


def midi_to_hz(midi: float) -> float:
    return 440.0 * 2.0 ** ((midi - 69) / 12.0)


def check_pitch(midi: int) -> int:
    midi = int(midi)
    if not 0 <= midi <= 127:
        raise ValueError(f"MIDI pitch {midi} outside 0..127")
    return midi


@dataclass(frozen=True, order=True)
class NoteEvent:
    onset: float
    offset: float
    pitch: int
    amplitude: float | None = None

    def __post_init__(self):
        check_pitch(self.pitch)
        if not self.offset > self.onset:
            raise ValueError(f"offset must exceed onset: {self}")
        if self.amplitude is not None and not 0.0 <= self.amplitude <= 1.0:
            raise ValueError(f"amplitude must lie in [0, 1]: {self}")


@dataclass(frozen=True, order=True)
class NoteCombination:
    """Canonical (sorted, duplicate-free) set of simultaneously active pitches.

    The empty combination is silence.
    """

    pitches: tuple[int, ...] = ()

    def __post_init__(self):
        canon = tuple(sorted({check_pitch(p) for p in self.pitches}))
        object.__setattr__(self, "pitches", canon)

    @classmethod
    def of(cls, *pitches: int) -> "NoteCombination":
        return cls(tuple(pitches))

    def __len__(self) -> int:
        return len(self.pitches)

    def __iter__(self):
        return iter(self.pitches)

    def __contains__(self, pitch) -> bool:
        return pitch in self.pitches

    def as_set(self) -> frozenset[int]:
        return frozenset(self.pitches)

    def label(self) -> str:
        return " ".join(str(p) for p in self.pitches)

    @classmethod
    def from_label(cls, text: str) -> "NoteCombination":
        return cls(tuple(int(tok) for tok in text.split()))


@dataclass(frozen=True, eq=False)
class PianoRoll:
    """Frame-indexed binary activity matrix of shape (n_frames, n_pitches)."""

    frame_rate: float
    pitch_lo: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"piano roll must be 2-D, got shape {data.shape}")
        if data.size and not np.isin(data, (0, 1)).all():
            raise ValueError("piano roll entries must be 0 or 1")
        data = data.astype(np.uint8)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        check_pitch(self.pitch_lo)
        if self.n_pitches:
            check_pitch(self.pitch_lo + self.n_pitches - 1)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_pitches(self) -> int:
        return self.data.shape[1]

    @property
    def pitches(self) -> range:
        return range(self.pitch_lo, self.pitch_lo + self.n_pitches)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PianoRoll):
            return NotImplemented
        return (
            self.frame_rate == other.frame_rate
            and self.pitch_lo == other.pitch_lo
            and np.array_equal(self.data, other.data)
        )

    def same_grid(self, other: "PianoRoll") -> bool:
        return (
            self.data.shape == other.data.shape
            and self.frame_rate == other.frame_rate
            and self.pitch_lo == other.pitch_lo
        )


def events_to_pianoroll(
    events: Iterable[NoteEvent],
    frame_rate: float = 100.0,
    n_frames: int = 0,
    pitch_lo: int = PIANO_LO,
    n_pitches: int = PIANO_K,
) -> PianoRoll:
    """Rasterize note events into a piano roll.

    Frame ``t`` is sampled at time ``t / frame_rate`` and is active for an
    event when ``onset <= t / frame_rate < offset``.
    """
    data = np.zeros((n_frames, n_pitches), dtype=np.uint8)
    times = np.arange(n_frames) / frame_rate
    for ev in events:
        col = ev.pitch - pitch_lo
        if not 0 <= col < n_pitches:
            raise ValueError(
                f"event {ev} has pitch outside [{pitch_lo}, {pitch_lo + n_pitches})"
            )
        data[(times >= ev.onset) & (times < ev.offset), col] = 1
    return PianoRoll(frame_rate, pitch_lo, data)


def active_set(roll: PianoRoll, t: int) -> NoteCombination:
    if not 0 <= t < roll.n_frames:
        raise IndexError(f"frame {t} out of range for roll with {roll.n_frames} frames")
    cols = np.flatnonzero(roll.data[t])
    return NoteCombination(tuple(int(c) + roll.pitch_lo for c in cols))


def frame_combinations(roll: PianoRoll) -> list[NoteCombination]:
    """``active_set`` for every frame, in order."""
    lo = roll.pitch_lo
    return [
        NoteCombination(tuple(int(c) + lo for c in np.flatnonzero(row)))
        for row in roll.data
    ]


def count_combinations(n: int, k_min: int, k_max: int) -> int:
    """Exact ``sum(C(n, i) for i in k_min..k_max)`` as a Python int."""
    if not (0 <= k_min <= k_max <= n):
        raise ValueError(f"need 0 <= k_min <= k_max <= n, got n={n}, k_min={k_min}, k_max={k_max}")
    return sum(math.comb(n, i) for i in range(k_min, k_max + 1))


# -- file formats ---------------------------------------------------------


def write_ground_truth(path, events: Sequence[NoteEvent]) -> None:
    lines = [GT_HEADER]
    for ev in sorted(events):
        lines.append(f"{ev.onset:.6f}\t{ev.offset:.6f}\t{ev.pitch:d}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ground_truth(path, pitch_range: tuple[int, int] | None = None) -> list[NoteEvent]:
    """Parse a MAPS-style ground-truth text file.

    ``pitch_range`` is an inclusive ``(lo, hi)`` check applied to every event.
    """
    text = Path(path).read_text().splitlines()
    if not text or text[0].split() != ["OnsetTime", "OffsetTime", "MidiPitch"]:
        raise ValueError(f"{path}: missing 'OnsetTime OffsetTime MidiPitch' header")
    events = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
        ev = NoteEvent(float(parts[0]), float(parts[1]), int(parts[2]))
        if pitch_range is not None and not pitch_range[0] <= ev.pitch <= pitch_range[1]:
            raise ValueError(f"{path}:{lineno}: pitch {ev.pitch} outside {pitch_range}")
        events.append(ev)
    return events


def write_roll_csv(path, roll: PianoRoll) -> None:
    header = "frame," + ",".join(str(p) for p in roll.pitches)
    with open(path, "w") as fh:
        fh.write(f"# frame_rate={roll.frame_rate!r}\n")
        fh.write(header + "\n")
        for t, row in enumerate(roll.data):
            fh.write(f"{t}," + ",".join("1" if v else "0" for v in row) + "\n")


def read_roll_csv(path) -> PianoRoll:
    with open(path) as fh:
        first = fh.readline().strip()
        if not first.startswith("# frame_rate="):
            raise ValueError(f"{path}: missing frame_rate comment line")
        frame_rate = float(first.split("=", 1)[1])
        header = fh.readline().strip().split(",")
        pitches = [int(p) for p in header[1:]]
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = np.array([[int(v) for v in r[1:]] for r in rows], dtype=np.uint8)
    data = data.reshape(len(rows), len(pitches))
    return PianoRoll(frame_rate, pitches[0] if pitches else 0, data)

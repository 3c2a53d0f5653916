"""Non-negative matrix factorization baseline.

A dictionary of one spectral template per pitch is learned from isolated
notes; transcription then infers activations with the dictionary held
fixed. Because ``X ~ W H`` is linear in ``H``, a mixture of notes is
explained by the sum of the notes' activations.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import container
from .features import FeatureMatrix
from .notation import PianoRoll

DICT_MAGIC = b"DNMF"
EPS = 1e-12


class CoverageError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class NmfConfig:
    rank: int = 23
    max_iter: int = 500
    tol: float = 1e-7
    threshold: float = 0.1
    floor: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True, eq=False)
class Dictionary:
    W: np.ndarray = field(repr=False)
    pitch_map: tuple[int, ...] = ()

    @property
    def shape(self) -> tuple[int, int]:
        return self.W.shape


def _check_input(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains non-finite values")
    if (X < 0).any():
        raise ValueError(f"input has negative entries (min {X.min():.3g})")
    if not X.any():
        raise ValueError("input is all zeros; factorization is degenerate")
    return X


def frobenius(X, W, H) -> float:
    return float(np.linalg.norm(X - W @ H))


def nmf_factorize(X: np.ndarray, cfg: NmfConfig = NmfConfig(), fixed_W: Dictionary | np.ndarray | None = None,
                  H0: np.ndarray | None = None) -> tuple[Dictionary, np.ndarray, list[float]]:
    """Minimize ``||X - W H||_F`` with Lee-Seung multiplicative updates.

    With ``fixed_W`` only ``H`` is updated. ``error_history[0]`` is the error
    at initialization, followed by one entry per iteration. Iteration stops
    once the relative decrease of the error falls below ``cfg.tol``.
    """
    X = _check_input(X)
    D, T = X.shape
    rng = np.random.default_rng(cfg.seed)
    scale = np.sqrt(X.mean() / cfg.rank)
    pitch_map: tuple[int, ...] = ()
    if fixed_W is not None:
        if isinstance(fixed_W, Dictionary):
            pitch_map = fixed_W.pitch_map
            fixed_W = fixed_W.W
        W = np.asarray(fixed_W, dtype=np.float64)
        if W.shape[0] != D:
            raise ConfigurationError(f"dictionary has {W.shape[0]} rows, input has {D}")
        if (W < 0).any():
            raise ValueError("dictionary has negative entries")
        d = W.shape[1]
    else:
        d = cfg.rank
        W = rng.uniform(0.1, 1.0, (D, d)) * scale
    H = np.array(H0, dtype=np.float64) if H0 is not None else rng.uniform(0.1, 1.0, (d, T)) * scale
    errors = [frobenius(X, W, H)]
    for _ in range(cfg.max_iter):
        H *= (W.T @ X) / (W.T @ W @ H + EPS)
        if fixed_W is None:
            W *= (X @ H.T) / (W @ (H @ H.T) + EPS)
        errors.append(frobenius(X, W, H))
        prev, cur = errors[-2], errors[-1]
        if prev == 0 or (prev - cur) / prev < cfg.tol:
            break
    return Dictionary(W, pitch_map), H, errors


def learn_note_dictionary(items: list[tuple[FeatureMatrix, int]], pitches=None,
                          cfg: NmfConfig = NmfConfig(rank=1, max_iter=200, tol=1e-10)) -> Dictionary:
    """One L2-normalized rank-1 template per pitch from isolated-note features.

    Features must be non-negative (pre-standardization). ``pitches`` is the
    required coverage; by default the contiguous range spanned by the items.
    """
    frames: dict[int, list[np.ndarray]] = defaultdict(list)
    for fm, pitch in items:
        frames[int(pitch)].append(np.asarray(fm.data, dtype=np.float64))
    if not frames:
        raise CoverageError("no isolated-note items given")
    if pitches is None:
        pitches = range(min(frames), max(frames) + 1)
    pitches = list(pitches)
    missing = [p for p in pitches if p not in frames]
    if missing:
        raise CoverageError(f"no isolated-note items for pitches {missing}")
    cols = []
    one = NmfConfig(rank=1, max_iter=cfg.max_iter, tol=cfg.tol, seed=cfg.seed)
    for p in pitches:
        X = np.concatenate(frames[p], axis=0).T
        Wp, _, _ = nmf_factorize(X, one)
        w = Wp.W[:, 0]
        cols.append(w / np.linalg.norm(w))
    return Dictionary(np.stack(cols, axis=1), tuple(pitches))


def binarize_activations(H: np.ndarray, threshold: float = 0.1, floor: float = 1e-6) -> np.ndarray:
    """Active where ``H`` exceeds ``threshold`` times its largest entry and ``floor``.

    Returns a ``(T, d)`` uint8 array (frames first, as in a piano roll).
    """
    peak = H.max() if H.size else 0.0
    active = (H > threshold * peak) & (H > floor)
    return active.T.astype(np.uint8)


def nmf_transcribe(features: FeatureMatrix, dictionary: Dictionary,
                   cfg: NmfConfig = NmfConfig()) -> PianoRoll:
    """Fixed-dictionary activations, thresholded into a piano roll."""
    D, d = dictionary.shape
    if features.n_bins != D:
        raise ConfigurationError(f"dictionary expects {D} bins, features have {features.n_bins}")
    pitches = dictionary.pitch_map
    if list(pitches) != list(range(pitches[0], pitches[0] + d)):
        raise ConfigurationError("dictionary pitch map must be a contiguous ascending range")
    X = np.asarray(features.data, dtype=np.float64).T
    if not X.any():
        return PianoRoll(features.frame_rate, pitches[0], np.zeros((features.n_frames, d), np.uint8))
    _, H, _ = nmf_factorize(X, cfg, fixed_W=dictionary)
    return PianoRoll(features.frame_rate, pitches[0], binarize_activations(H, cfg.threshold, cfg.floor))


def save_dictionary(path, dictionary: Dictionary) -> None:
    container.save(path, DICT_MAGIC, {"W": dictionary.W}, {"pitch_map": list(dictionary.pitch_map)})


def load_dictionary(path) -> Dictionary:
    arrays, meta = container.load(path, DICT_MAGIC)
    if "W" not in arrays or "pitch_map" not in meta:
        raise container.FormatError(f"{path}: missing W or pitch_map")
    W = arrays["W"].astype(np.float64)
    if W.ndim != 2 or W.shape[1] != len(meta["pitch_map"]):
        raise container.FormatError(f"{path}: W shape {W.shape} does not match pitch map")
    return Dictionary(W, tuple(meta["pitch_map"]))

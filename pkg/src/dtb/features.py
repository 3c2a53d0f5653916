"""Log-frequency, log-magnitude spectrogram frontend and context windows."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .synth import AudioClip

FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1
_FEAT_HEADER = struct.Struct("<4sIdII")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 44100
    fft_size: int = 4096
    hop: int = 441
    n_bins: int = 229
    f_min: float = 30.0
    f_max: float = 16000.0

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    @property
    def bins_per_octave(self) -> float:
        """Density that spreads ``n_bins`` centers (plus two edges) over the range."""
        return (self.n_bins + 1) / np.log2(self.f_max / self.f_min)


@dataclass(frozen=True, eq=False)
class FilterBank:
    matrix: np.ndarray = field(repr=False)
    centers: np.ndarray = field(repr=False)

    @property
    def n_bins(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class Standardization:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, mats: list["FeatureMatrix"]) -> "Standardization":
        stacked = np.concatenate([m.data for m in mats], axis=0).astype(np.float64)
        std = stacked.std(axis=0)
        return cls(stacked.mean(axis=0), np.where(std > 0, std, 1.0))

    def apply(self, fm: "FeatureMatrix") -> "FeatureMatrix":
        data = (fm.data - self.mean) / self.std
        return FeatureMatrix(fm.frame_rate, data.astype(np.float32))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardization":
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]))


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    frame_rate: float
    data: np.ndarray = field(repr=False)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]


def build_filterbank(cfg: FeatureConfig = FeatureConfig()) -> FilterBank:
    """Triangular filters on log-spaced center frequencies.

    Filter ``i`` rises from ``edges[i]`` to ``edges[i + 1]`` and falls to
    ``edges[i + 2]`` where ``edges`` holds ``n_bins + 2`` geometrically spaced
    points from ``f_min`` to ``f_max``. Where neighbouring centers are closer
    than one FFT bin, each slope is widened to one bin so that every filter
    still touches the FFT grid; those filters interpolate the spectrum.
    """
    nyq = cfg.sample_rate / 2
    if not 0 < cfg.f_min < cfg.f_max <= nyq:
        raise ConfigurationError(f"need 0 < f_min < f_max <= {nyq}, got {cfg.f_min}, {cfg.f_max}")
    df = cfg.sample_rate / cfg.fft_size
    fft_freqs = np.arange(cfg.fft_size // 2 + 1) * df
    in_range = np.count_nonzero((fft_freqs >= cfg.f_min) & (fft_freqs <= cfg.f_max))
    if cfg.n_bins < 1 or cfg.n_bins > in_range:
        raise ConfigurationError(
            f"{cfg.n_bins} filters cannot be resolved by the {in_range} FFT bins in "
            f"[{cfg.f_min}, {cfg.f_max}] Hz"
        )
    edges = cfg.f_min * 2.0 ** (np.arange(cfg.n_bins + 2) / cfg.bins_per_octave)
    lo, mid, hi = edges[:-2], edges[1:-1], edges[2:]
    left = np.maximum(mid - lo, df)[:, None]
    right = np.maximum(hi - mid, df)[:, None]
    f = fft_freqs[None, :]
    rising = (f - (mid[:, None] - left)) / left
    falling = ((mid[:, None] + right) - f) / right
    mat = np.clip(np.minimum(rising, falling), 0.0, None)
    return FilterBank(mat, mid)


def stft_magnitude(samples: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    """Hann-windowed magnitude STFT with frame ``t`` centered on sample ``t * hop``.

    The signal is zero-padded by ``fft_size // 2`` on both sides.
    """
    pad = fft_size // 2
    x = np.pad(samples, (pad, pad))
    frames = sliding_window_view(x, fft_size)[::hop]
    window = np.hanning(fft_size + 1)[:-1]
    return np.abs(np.fft.rfft(frames * window, axis=1))


def extract_features(audio: AudioClip, cfg: FeatureConfig = FeatureConfig(),
                     filterbank: FilterBank | None = None,
                     standardization: Standardization | None = None) -> FeatureMatrix:
    """``log(1 + filterbank @ |STFT|)``, optionally standardized per bin."""
    if audio.sample_rate != cfg.sample_rate:
        raise ConfigurationError(
            f"audio sample rate {audio.sample_rate} != configured {cfg.sample_rate}"
        )
    if len(audio.samples) < cfg.fft_size:
        raise ValueError(f"audio has {len(audio.samples)} samples, shorter than one {cfg.fft_size}-point window")
    fb = filterbank if filterbank is not None else build_filterbank(cfg)
    spec = stft_magnitude(audio.samples, cfg.fft_size, cfg.hop)
    data = np.log1p(spec @ fb.matrix.T).astype(np.float32)
    fm = FeatureMatrix(cfg.frame_rate, data)
    return standardization.apply(fm) if standardization is not None else fm


def n_frames_for(n_samples: int, hop: int) -> int:
    return n_samples // hop + 1


def make_windows(features: FeatureMatrix | np.ndarray, width: int = 5) -> np.ndarray:
    """Read-only view of shape ``(n_frames, width, n_bins)``; edges replicated."""
    if width < 1 or width % 2 == 0:
        raise ValueError(f"window width must be odd and positive, got {width}")
    data = features.data if isinstance(features, FeatureMatrix) else features
    half = width // 2
    padded = np.pad(data, ((half, half), (0, 0)), mode="edge")
    return sliding_window_view(padded, width, axis=0).transpose(0, 2, 1)


def pad_bins(data: np.ndarray, n_bins: int) -> np.ndarray:
    """Zero-pad the frequency axis (last) up to ``n_bins``."""
    extra = n_bins - data.shape[-1]
    if extra < 0:
        raise ConfigurationError(f"cannot pad {data.shape[-1]} bins down to {n_bins}")
    return np.pad(data, [(0, 0)] * (data.ndim - 1) + [(0, extra)])


# -- feature cache ---------------------------------------------------------


def write_feature_cache(path, fm: FeatureMatrix) -> None:
    data = np.ascontiguousarray(fm.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_FEAT_HEADER.pack(FEAT_MAGIC, FEAT_VERSION, float(fm.frame_rate), *data.shape))
        fh.write(data.tobytes())


def read_feature_cache(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _FEAT_HEADER.size:
        raise ValueError(f"{path}: truncated feature cache header")
    magic, version, frame_rate, n_frames, n_bins = _FEAT_HEADER.unpack_from(raw)
    if magic != FEAT_MAGIC or version != FEAT_VERSION:
        raise ValueError(f"{path}: not a version-{FEAT_VERSION} feature cache")
    body = raw[_FEAT_HEADER.size:]
    if len(body) != 4 * n_frames * n_bins:
        raise ValueError(f"{path}: expected {n_frames}x{n_bins} floats, found {len(body) // 4}")
    data = np.frombuffer(body, dtype="<f4").reshape(n_frames, n_bins).astype(np.float32)
    return FeatureMatrix(frame_rate, data)

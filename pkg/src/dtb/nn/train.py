"""Mini-batch SGD training, inference and checkpoint persistence."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .. import container
from ..evaluation import prf_from_counts
from ..features import FeatureMatrix, make_windows, pad_bins
from ..notation import FLUID_LO, PIANO_LO, PianoRoll
from .architectures import from_spec
from .graph import ModelGraph
from .layers import bce_with_logits, sigmoid

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DTNN"


class TrainingDivergence(RuntimeError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    batch_size: int = 128
    max_epochs: int = 100
    lr_patience: int = 5
    early_stop_patience: int = 20
    dropout: bool = True
    seed: int = 0
    threshold: float = 0.5

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.lr_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


# -- data ------------------------------------------------------------------------


def is_chunked(model: ModelGraph) -> bool:
    return model.spec.get("kind") == "aunet"


class FrameData:
    """Per-frame context windows of several items, gathered lazily by index."""

    def __init__(self, items: list[tuple[FeatureMatrix, PianoRoll]], width: int):
        if width % 2 == 0:
            raise ValueError("context width must be odd")
        self.width = width
        half = width // 2
        padded, centers, labels = [], [], []
        offset = 0
        for fm, roll in items:
            if fm.n_frames != roll.n_frames:
                raise ConfigurationError(f"feature frames {fm.n_frames} != label frames {roll.n_frames}")
            padded.append(np.pad(fm.data, ((half, half), (0, 0)), mode="edge"))
            centers.append(offset + half + np.arange(fm.n_frames))
            labels.append(roll.data)
            offset += fm.n_frames + 2 * half
        self.padded = np.concatenate(padded).astype(np.float32)
        self.centers = np.concatenate(centers)
        self.labels = np.concatenate(labels).astype(np.float32)
        self._offsets = np.arange(-half, half + 1)

    def __len__(self) -> int:
        return len(self.centers)

    def inputs(self, idx: np.ndarray) -> np.ndarray:
        rows = self.centers[idx][:, None] + self._offsets[None, :]
        return self.padded[rows][:, None, :, :]

    def targets(self, idx: np.ndarray) -> np.ndarray:
        return self.labels[idx]


class ChunkData:
    """Fixed-size time chunks (frequency zero-padded) for fully convolutional models."""

    def __init__(self, items: list[tuple[FeatureMatrix, PianoRoll]], n_time: int, n_freq: int, overlap: int):
        xs, ys = [], []
        for fm, roll in items:
            for start in chunk_starts(fm.n_frames, n_time, overlap):
                xs.append(_chunk(pad_bins(fm.data, n_freq), start, n_time))
                ys.append(_chunk(roll.data.astype(np.float32), start, n_time))
        self.x = np.stack(xs)[:, None].astype(np.float32)
        self.y = np.stack(ys)[:, None]

    def __len__(self) -> int:
        return len(self.x)

    def inputs(self, idx):
        return self.x[idx]

    def targets(self, idx):
        return self.y[idx]


def chunk_starts(n_frames: int, n_time: int, overlap: int) -> list[int]:
    step = n_time - overlap
    starts = list(range(0, max(n_frames - n_time, 0) + 1, step))
    if starts[-1] + n_time < n_frames:
        starts.append(n_frames - n_time)
    return starts


def _chunk(a: np.ndarray, start: int, n: int) -> np.ndarray:
    piece = a[start:start + n]
    if len(piece) < n:
        piece = np.pad(piece, ((0, n - len(piece)), (0, 0)))
    return piece


def make_data(model: ModelGraph, items, overlap: int = 32):
    if is_chunked(model):
        _, n_time, n_freq = model.input_shape
        return ChunkData(items, n_time, n_freq, overlap)
    _, width, _ = model.input_shape
    return FrameData(items, width)


# -- inference ---------------------------------------------------------------------


def _batched_forward(model: ModelGraph, x: np.ndarray, batch: int = 1024) -> np.ndarray:
    return np.concatenate([model.forward(x[i:i + batch]) for i in range(0, len(x), batch)])


def predict_proba(model: ModelGraph, features: FeatureMatrix, overlap: int = 32,
                  batch: int = 1024) -> np.ndarray:
    """Per-frame pitch probabilities, shape ``(n_frames, n_pitches)``."""
    if not is_chunked(model):
        _, width, n_bins = model.input_shape
        if features.n_bins != n_bins:
            raise ConfigurationError(f"{model.name} expects {n_bins} bins, features have {features.n_bins}")
        windows = make_windows(features, width)[:, None].astype(model.dtype)
        return _batched_forward(model, windows, batch)
    _, n_time, n_freq = model.input_shape
    data = pad_bins(features.data, n_freq).astype(model.dtype)
    n_out = model.output_shape[-1]
    total = np.zeros((features.n_frames, n_out))
    count = np.zeros((features.n_frames, 1))
    for start in chunk_starts(features.n_frames, n_time, overlap):
        out = model.forward(_chunk(data, start, n_time)[None, None])[0, 0]
        stop = min(start + n_time, features.n_frames)
        total[start:stop] += out[:stop - start]
        count[start:stop] += 1
    return total / count


def default_pitch_lo(n_pitches: int) -> int:
    return FLUID_LO if n_pitches == 23 else PIANO_LO


def binarize(probs: np.ndarray, frame_rate: float, pitch_lo: int, threshold: float = 0.5) -> PianoRoll:
    """Strict ``>``: a probability exactly at the threshold is inactive."""
    return PianoRoll(frame_rate, pitch_lo, (probs > threshold).astype(np.uint8))


def predict_roll(model: ModelGraph, features: FeatureMatrix, threshold: float = 0.5,
                 pitch_lo: int | None = None, n_pitches: int | None = None) -> PianoRoll:
    n_out = model.output_shape[-1]
    if n_pitches is not None and n_pitches != n_out:
        raise ConfigurationError(f"{model.name} emits {n_out} pitches, roll needs {n_pitches}")
    probs = predict_proba(model, features)
    lo = default_pitch_lo(n_out) if pitch_lo is None else pitch_lo
    return binarize(probs, features.frame_rate, lo, threshold)


# -- training ----------------------------------------------------------------------


@dataclass
class Checkpoint:
    spec: dict
    state: dict[str, np.ndarray]
    config: TrainConfig = field(default_factory=TrainConfig)
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1

    def model(self) -> ModelGraph:
        g = from_spec(self.spec)
        g.load_state_dict(self.state)
        return g

    @property
    def param_count(self) -> int:
        return sum(a.size for a in self.state.values())

    @classmethod
    def of(cls, model: ModelGraph, **kw) -> "Checkpoint":
        return cls(dict(model.spec), model.state_dict(), **kw)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta = {
        "spec": ckpt.spec,
        "train_config": dataclasses.asdict(ckpt.config),
        "history": ckpt.history,
        "best_epoch": ckpt.best_epoch,
    }
    container.save(path, CHECKPOINT_MAGIC, ckpt.state, meta)


def load_checkpoint(path) -> Checkpoint:
    arrays, meta = container.load(path, CHECKPOINT_MAGIC)
    try:
        ckpt = Checkpoint(meta["spec"], arrays, TrainConfig(**meta["train_config"]),
                          meta["history"], meta["best_epoch"])
        ckpt.model()  # validates names and shapes against the architecture
    except (KeyError, TypeError, ValueError) as exc:
        raise container.FormatError(f"{path}: inconsistent checkpoint: {exc}") from None
    return ckpt


def evaluate_data(model: ModelGraph, data, threshold: float = 0.5, batch: int = 512) -> dict:
    """Loss and micro-averaged P/R/F of ``model`` (inference mode) on ``data``."""
    tp = fp = fn = 0
    loss_sum = 0.0
    n = len(data)
    for i in range(0, n, batch):
        idx = np.arange(i, min(i + batch, n))
        x, y = data.inputs(idx).astype(model.dtype), data.targets(idx)
        z = model.forward(x, train=False, logits=True)
        loss, _ = bce_with_logits(z, y)
        loss_sum += loss * z.size
        pred = sigmoid(z) > threshold
        truth = y > 0.5
        tp += int((pred & truth).sum())
        fp += int((pred & ~truth).sum())
        fn += int((~pred & truth).sum())
    p, r, f = prf_from_counts(tp, fp, fn)
    total = n * int(np.prod(model.output_shape))
    return {"loss": loss_sum / max(total, 1), "precision": p, "recall": r, "f_measure": f}


def train(model: ModelGraph, train_data, valid_data, cfg: TrainConfig = TrainConfig()) -> Checkpoint:
    """Minimize mean binary cross-entropy with momentum SGD.

    ``train_data``/``valid_data`` are lists of ``(FeatureMatrix, PianoRoll)``
    or prebuilt ``FrameData``/``ChunkData``. The learning rate halves whenever
    validation f-measure has not improved for ``lr_patience`` epochs; the
    returned checkpoint holds the best-validation epoch.
    """
    if isinstance(train_data, list):
        train_data = make_data(model, train_data)
    if isinstance(valid_data, list):
        valid_data = make_data(model, valid_data)
    rng = np.random.default_rng(cfg.seed)
    model.reseed(cfg.seed)
    model.set_dropout(cfg.dropout)
    dtype = model.dtype
    velocity = {qn: np.zeros_like(layer.params[key]) for qn, layer, key in model.parameters()}
    lr = cfg.lr
    history: list[dict] = []
    best_f, best_epoch, best_state = -1.0, -1, model.state_dict()
    stale = stale_lr = 0
    n = len(train_data)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            x, y = train_data.inputs(idx).astype(dtype), train_data.targets(idx)
            z = model.forward(x, train=True, logits=True)
            loss, dz = bce_with_logits(z, y)
            if not np.isfinite(loss):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch}, batch {b} (lr={lr})")
            model.backward(dz.astype(dtype))
            for qn, layer, key in model.parameters():
                v = velocity[qn]
                v *= cfg.momentum
                v -= lr * layer.grads[key]
                layer.params[key] += v
            loss_sum += loss * len(idx)
        val = evaluate_data(model, valid_data, cfg.threshold)
        history.append({"epoch": epoch, "lr": lr, "train_loss": loss_sum / n,
                        "valid_loss": val["loss"], "valid_precision": val["precision"],
                        "valid_recall": val["recall"], "valid_f": val["f_measure"]})
        log.info("epoch %d lr %.4g train loss %.4f valid f %.4f", epoch, lr, loss_sum / n, val["f_measure"])
        if val["f_measure"] > best_f:
            best_f, best_epoch, best_state = val["f_measure"], epoch, model.state_dict()
            stale = stale_lr = 0
        else:
            stale += 1
            stale_lr += 1
            if stale_lr >= cfg.lr_patience:
                lr /= 2
                stale_lr = 0
            if stale >= cfg.early_stop_patience:
                break
    model.load_state_dict(best_state)
    return Checkpoint(dict(model.spec), best_state, cfg, history, best_epoch)

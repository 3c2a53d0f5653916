"""Flat ``key = value`` experiment configuration.

Section fields use dotted keys (``train.batch_size = 64``). Unknown keys
are errors; every default is materialized when the config is echoed.
"""
from __future__ import annotations

import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .features import FeatureConfig
from .nmf import NmfConfig
from .nn.architectures import Architecture
from .nn.train import TrainConfig
from .synth import Mode, SynthPatch


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    source: str = "FLUID"
    pitch_lo: int = 49
    pitch_hi: int = 71
    duration: float = 2.0
    sample_rate: int = 44100
    jitter_cents: float = 3.0
    manifest: typing.Optional[str] = None


@dataclass(frozen=True)
class PatchSpec:
    n_partials: int = 12
    decay_rate: float = 0.7
    attack: float = 0.01


@dataclass(frozen=True)
class FeatureSpec:
    fft_size: int = 4096
    hop: int = 441
    n_bins: int = 229
    f_min: float = 30.0
    f_max: float = 16000.0


@dataclass(frozen=True)
class TrainSpec:
    lr: float = 0.1
    momentum: float = 0.9
    batch_size: int = 128
    max_epochs: int = 100
    lr_patience: int = 5
    early_stop_patience: int = 20
    dropout: bool = True
    threshold: float = 0.5


@dataclass(frozen=True)
class NmfSpec:
    max_iter: int = 500
    tol: float = 1e-7
    threshold: float = 0.1
    floor: float = 1e-6


@dataclass(frozen=True)
class EvalSpec:
    min_frames: int = 20
    top_k: int = 0


SECTIONS = {
    "dataset": DatasetSpec,
    "patch": PatchSpec,
    "features": FeatureSpec,
    "train": TrainSpec,
    "nmf": NmfSpec,
    "eval": EvalSpec,
}


@dataclass(frozen=True)
class ExperimentConfig:
    out_dir: str
    mode: typing.Optional[str] = None
    seed: int = 0
    architecture: str = "SMALLCONVNET"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    patch: PatchSpec = field(default_factory=PatchSpec)
    features: FeatureSpec = field(default_factory=FeatureSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    nmf: NmfSpec = field(default_factory=NmfSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)

    # -- derived runtime objects --------------------------------------------

    @property
    def n_pitches(self) -> int:
        return self.dataset.pitch_hi - self.dataset.pitch_lo + 1

    def synth_patch(self) -> SynthPatch:
        return SynthPatch(self.patch.n_partials, decay_rate=self.patch.decay_rate, attack=self.patch.attack)

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(self.dataset.sample_rate, **dataclasses.asdict(self.features))

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **dataclasses.asdict(self.train))

    def nmf_config(self) -> NmfConfig:
        return NmfConfig(rank=self.n_pitches, seed=self.seed, **dataclasses.asdict(self.nmf))

    def with_overrides(self, out_dir: str | None = None, seed: int | None = None) -> "ExperimentConfig":
        changes = {}
        if out_dir is not None:
            changes["out_dir"] = out_dir
        if seed is not None:
            changes["seed"] = seed
        return dataclasses.replace(self, **changes) if changes else self

    # -- validation -----------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        ds = self.dataset
        if ds.source not in ("FLUID", "MANIFEST"):
            raise ConfigError(f"dataset.source must be FLUID or MANIFEST, got {ds.source!r}")
        if ds.source == "FLUID":
            if self.mode is None:
                raise ConfigError("missing required key: mode (COMBI or ISOL)")
            try:
                Mode(self.mode)
            except ValueError:
                raise ConfigError(f"mode must be COMBI or ISOL, got {self.mode!r}") from None
        elif ds.manifest is None or not Path(ds.manifest).is_file():
            raise ConfigError(f"dataset.manifest must name an existing file, got {ds.manifest!r}")
        if not 0 <= ds.pitch_lo < ds.pitch_hi <= 127:
            raise ConfigError(f"invalid pitch range {ds.pitch_lo}..{ds.pitch_hi}")
        try:
            arch = Architecture(self.architecture)
        except ValueError:
            raise ConfigError(f"unknown architecture {self.architecture!r}") from None
        expected_k = {Architecture.SMALLCONVNET: 23}.get(arch, 88)
        if expected_k != self.n_pitches:
            raise ConfigError(f"{arch.value} emits {expected_k} pitches but the dataset range has "
                              f"{self.n_pitches}")
        try:
            self.synth_patch(), self.train_config(), self.nmf_config()
            fc = self.feature_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if fc.sample_rate % fc.hop:
            raise ConfigError(f"hop {fc.hop} must divide the sample rate {fc.sample_rate}")
        if arch is not Architecture.AUNET and fc.n_bins != 229:
            raise ConfigError(f"{arch.value} expects 229 feature bins, got {fc.n_bins}")
        return self

    # -- text form --------------------------------------------------------------

    def items(self) -> list[tuple[str, object]]:
        out = []
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name in SECTIONS:
                out.extend((f"{f.name}.{g.name}", getattr(val, g.name)) for g in fields(val))
            else:
                out.append((f.name, val))
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.items())

    def digest(self, keys: typing.Iterable[str]) -> str:
        wanted = set(keys)
        picked = [(k, v) for k, v in self.items()
                  if k in wanted or k.split(".", 1)[0] in wanted]
        return hashlib.sha256(repr(picked).encode()).hexdigest()[:16]


def _format(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _convert(key: str, raw: str, tp):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        if raw == "":
            return None
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
    try:
        if tp is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {tp.__name__}") from None


def parse_text(text: str, source: str = "<config>") -> ExperimentConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip("\"'")

    hints = typing.get_type_hints(ExperimentConfig)
    top, sections = {}, {name: {} for name in SECTIONS}
    unknown = []
    for key, value in raw.items():
        if "." in key:
            sec, name = key.split(".", 1)
            cls = SECTIONS.get(sec)
            sec_hints = typing.get_type_hints(cls) if cls else {}
            if name not in sec_hints:
                unknown.append(key)
                continue
            sections[sec][name] = _convert(key, value, sec_hints[name])
        elif key in hints and key not in SECTIONS:
            top[key] = _convert(key, value, hints[key])
        else:
            unknown.append(key)
    if unknown:
        raise ConfigError(f"{source}: unknown keys: {', '.join(sorted(unknown))}")
    if "out_dir" not in top:
        raise ConfigError(f"{source}: missing required keys: out_dir")
    cfg = ExperimentConfig(**top, **{name: SECTIONS[name](**vals) for name, vals in sections.items()})
    return cfg


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return parse_text(path.read_text(), str(path)).validate()


def echo_config(cfg: ExperimentConfig, out_dir=None) -> Path:
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.echo.txt"
    path.write_text(cfg.to_text())
    return path

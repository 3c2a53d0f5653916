"""Stage-wise experiment runner.

Stages write into ``cfg.out_dir`` and leave a stamp recording a digest of
the configuration they depend on, plus the artifacts they produced. A
stage whose stamp matches is skipped unless forced.
"""
from __future__ import annotations

import json
import logging
import os
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, echo_config
from .evaluation import aggregate, partition_shared, stats_to_csv, summary_json
from .features import (FeatureMatrix, Standardization, build_filterbank, extract_features,
                       read_feature_cache, write_feature_cache)
from .nmf import learn_note_dictionary, load_dictionary, nmf_transcribe, save_dictionary
from .notation import (NoteCombination, PianoRoll, events_to_pianoroll, frame_combinations,
                       read_ground_truth, read_roll_csv, write_ground_truth, write_roll_csv)
from .nn.architectures import build_architecture
from .nn.train import load_checkpoint, predict_roll, save_checkpoint, train
from .synth import build_fluid_dataset, read_wav, write_wav

log = logging.getLogger(__name__)

STAGES = ("synth-dataset", "extract-features", "train", "transcribe",
          "nmf-dict", "nmf-transcribe", "evaluate", "analyze-combinations")
ALIASES = {
    "synth": ("synth-dataset",),
    "features": ("extract-features",),
    "nmf": ("nmf-dict", "nmf-transcribe"),
    "analyze": ("evaluate", "analyze-combinations"),
}
REQUIRES = {
    "extract-features": ("synth-dataset",),
    "train": ("extract-features",),
    "transcribe": ("train",),
    "nmf-dict": ("extract-features",),
    "nmf-transcribe": ("nmf-dict",),
}
# configuration keys (or whole sections) each stage depends on
CONFIG_KEYS = {
    "synth-dataset": ("mode", "seed", "dataset", "patch"),
    "extract-features": ("features",),
    "train": ("architecture", "seed", "train"),
    "transcribe": ("train",),
    "nmf-dict": ("nmf", "seed"),
    "nmf-transcribe": ("nmf", "seed"),
    "evaluate": ("eval",),
    "analyze-combinations": ("eval",),
}
SPLITS = ("train", "valid", "test")
EVAL_SPLITS = ("valid", "test")
SYSTEMS = ("net", "nmf")


class DependencyError(RuntimeError):
    pass


def expand_stages(names) -> list[str]:
    out = []
    for name in names:
        for s in ALIASES.get(name, (name,)):
            if s not in STAGES:
                raise ValueError(f"unknown stage {name!r}; choose from {', '.join(STAGES + tuple(ALIASES))}")
            if s not in out:
                out.append(s)
    return sorted(out, key=STAGES.index)


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get("DTB_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    """Ordered map over items, at most ``DTB_THREADS`` at a time."""
    workers = n_workers()
    if workers == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(fn, items))


def tool_version() -> str:
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"dtb {__version__}" + (f" ({rev})" if rev else "")


@dataclass
class RunRecord:
    config: dict
    version: str
    stages: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    artifacts: dict[str, list[str]] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


class Experiment:
    """File layout and stage implementations for one output directory."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.root = Path(cfg.out_dir)
        self.fcfg = cfg.feature_config()
        self._written: list[Path] = []

    # -- paths ----------------------------------------------------------------

    @property
    def manifest_path(self) -> Path:
        return self.root / "data" / "manifest.json"

    def feature_path(self, split, item_id) -> Path:
        return self.root / "features" / split / f"{item_id}.feat"

    @property
    def standardization_path(self) -> Path:
        return self.root / "features" / "standardization.json"

    @property
    def checkpoint_path(self) -> Path:
        return self.root / "model" / "checkpoint.dtnn"

    @property
    def dictionary_path(self) -> Path:
        return self.root / "nmf" / "dictionary.dnmf"

    def prediction_path(self, system, split, item_id) -> Path:
        return self.root / "predictions" / system / split / f"{item_id}.csv"

    def report_dir(self, system) -> Path:
        return self.root / "reports" / system

    def stamp_path(self, stage) -> Path:
        return self.root / ".stamps" / f"{stage}.json"

    def _out(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        self._written.append(path)
        return path

    # -- stamps -----------------------------------------------------------------

    def stage_key(self, stage: str) -> str:
        """Digest of the stage's own config plus its prerequisites' keys."""
        parts = [self.cfg.digest(CONFIG_KEYS[stage])]
        for dep in REQUIRES.get(stage, ()):
            parts.append(self.stage_key(dep))
        if stage in ("evaluate", "analyze-combinations"):
            parts += [self.stage_key(s) for s in ("transcribe", "nmf-transcribe")]
        return "-".join(parts)

    def read_stamp(self, stage) -> dict | None:
        p = self.stamp_path(stage)
        return json.loads(p.read_text()) if p.is_file() else None

    def up_to_date(self, stage) -> bool:
        st = self.read_stamp(stage)
        return st is not None and st["key"] == self.stage_key(stage)

    # -- dataset access ---------------------------------------------------------

    def manifest(self) -> dict:
        if not self.manifest_path.is_file():
            raise DependencyError("no dataset manifest; run stage 'synth-dataset' first")
        return json.loads(self.manifest_path.read_text())

    def items(self, split) -> list[tuple[str, Path, Path]]:
        """``(item id, wav path, label path)`` sorted by item id."""
        doc = self.manifest()
        base = self.manifest_path.parent
        out = []
        for wav, lab in doc["splits"].get(split, []):
            wav, lab = base / wav, base / lab
            out.append((wav.stem, wav, lab))
        return sorted(out)

    def truth_roll(self, label_path: Path, n_frames: int) -> PianoRoll:
        ds = self.cfg.dataset
        events = read_ground_truth(label_path, (ds.pitch_lo, ds.pitch_hi))
        return events_to_pianoroll(events, self.fcfg.frame_rate, n_frames, ds.pitch_lo, self.cfg.n_pitches)

    def features(self, split, item_id, standardized: bool) -> FeatureMatrix:
        p = self.feature_path(split, item_id)
        if not p.is_file():
            raise DependencyError(f"missing feature cache {p}; run stage 'extract-features' first")
        fm = read_feature_cache(p)
        if standardized:
            fm = self.standardization().apply(fm)
        return fm

    def standardization(self) -> Standardization:
        if not self.standardization_path.is_file():
            raise DependencyError("no standardization statistics; run stage 'extract-features' first")
        return Standardization.from_dict(json.loads(self.standardization_path.read_text()))

    def labelled(self, split, standardized=True) -> list[tuple[str, FeatureMatrix, PianoRoll]]:
        out = []
        for item_id, _, lab in self.items(split):
            fm = self.features(split, item_id, standardized)
            out.append((item_id, fm, self.truth_roll(lab, fm.n_frames)))
        return out

    # -- stages -------------------------------------------------------------------

    def synth_dataset(self):
        cfg, ds = self.cfg, self.cfg.dataset
        if ds.source == "MANIFEST":
            src = Path(ds.manifest)
            doc = json.loads(src.read_text())
            base = src.parent.resolve()
            doc["splits"] = {s: [[str((base / w).resolve()), str((base / l).resolve())] for w, l in pairs]
                             for s, pairs in doc["splits"].items()}
            self._out(self.manifest_path).write_text(json.dumps(doc, indent=1, sort_keys=True))
            return
        man = build_fluid_dataset(cfg.mode, ds.pitch_lo, ds.pitch_hi, ds.duration, cfg.synth_patch(), cfg.seed,
                                  ds.sample_rate, ds.jitter_cents)
        paths = {}
        for split, items in man.splits.items():
            def render(it, split=split):
                wav = self._out(self.root / "data" / split / f"{it.item_id}.wav")
                lab = self._out(self.root / "data" / split / f"{it.item_id}.txt")
                write_wav(wav, it.render(ds.sample_rate))
                write_ground_truth(lab, it.events)
                return it.item_id, (f"{split}/{wav.name}", f"{split}/{lab.name}")
            paths.update(_pmap(render, items))
        self._out(self.manifest_path).write_text(man.to_json(paths))

    def extract_features(self):
        fb = build_filterbank(self.fcfg)
        for split in SPLITS:
            def one(entry, split=split):
                item_id, wav, _ = entry
                fm = extract_features(read_wav(wav), self.fcfg, fb)
                write_feature_cache(self._out(self.feature_path(split, item_id)), fm)
            _pmap(one, self.items(split))
        train_feats = [self.features("train", i, False) for i, _, _ in self.items("train")]
        st = Standardization.fit(train_feats)
        self._out(self.standardization_path).write_text(json.dumps(st.to_dict(), sort_keys=True))

    def train(self):
        model = build_architecture(self.cfg.architecture, seed=self.cfg.seed)
        tr = [(fm, roll) for _, fm, roll in self.labelled("train")]
        va = [(fm, roll) for _, fm, roll in self.labelled("valid")]
        ckpt = train(model, tr, va, self.cfg.train_config())
        save_checkpoint(ckpt, self._out(self.checkpoint_path))

    def transcribe(self):
        if not self.checkpoint_path.is_file():
            raise DependencyError("no checkpoint; run stage 'train' first")
        model = load_checkpoint(self.checkpoint_path).model()
        for split in EVAL_SPLITS:
            for item_id, fm, _ in self.labelled(split):
                roll = predict_roll(model, fm, self.cfg.train.threshold, self.cfg.dataset.pitch_lo,
                                    self.cfg.n_pitches)
                write_roll_csv(self._out(self.prediction_path("net", split, item_id)), roll)

    def nmf_dict(self):
        """Templates come from the isolated notes of the training split."""
        items = []
        for item_id, _, lab in self.items("train"):
            pitches = {e.pitch for e in read_ground_truth(lab)}
            if len(pitches) == 1:
                items.append((self.features("train", item_id, False), pitches.pop()))
        ds = self.cfg.dataset
        d = learn_note_dictionary(items, range(ds.pitch_lo, ds.pitch_hi + 1))
        save_dictionary(self._out(self.dictionary_path), d)

    def nmf_transcribe(self):
        if not self.dictionary_path.is_file():
            raise DependencyError("no NMF dictionary; run stage 'nmf-dict' first")
        d = load_dictionary(self.dictionary_path)
        ncfg = self.cfg.nmf_config()
        for split in EVAL_SPLITS:
            entries = self.items(split)

            def one(entry, split=split):
                item_id = entry[0]
                roll = nmf_transcribe(self.features(split, item_id, False), d, ncfg)
                write_roll_csv(self._out(self.prediction_path("nmf", split, item_id)), roll)
            _pmap(one, entries)

    def _systems(self) -> list[str]:
        found = [s for s in SYSTEMS if (self.root / "predictions" / s).is_dir()]
        if not found:
            raise DependencyError("no predictions; run stage 'transcribe' or 'nmf-transcribe' first")
        return found

    def _pairs(self, system, split):
        pairs = []
        for item_id, _, lab in self.items(split):
            p = self.prediction_path(system, split, item_id)
            if not p.is_file():
                raise DependencyError(f"missing prediction {p}")
            pred = read_roll_csv(p)
            pairs.append((pred, self.truth_roll(lab, pred.n_frames)))
        return pairs

    def reference_combinations(self) -> set[NoteCombination]:
        """Every non-silent ground-truth combination of the training split."""
        combos = set()
        for _, _, roll in self.labelled("train", standardized=False):
            combos.update(c for c in frame_combinations(roll) if c.pitches)
        return combos

    def evaluate(self):
        for system in self._systems():
            for split in EVAL_SPLITS:
                (tp, fp, fn), counts = aggregate(self._pairs(system, split))
                out = self._out(self.report_dir(system) / f"summary_{split}.json")
                out.write_text(summary_json(tp, fp, fn, counts, system=system, split=split))

    def analyze_combinations(self):
        ref = self.reference_combinations()
        ev = self.cfg.eval
        for system in self._systems():
            for split in EVAL_SPLITS:
                _, counts = aggregate(self._pairs(system, split))
                rows = counts.stats(ev.top_k or None, ev.min_frames, reference=ref)
                shared, unshared = partition_shared(ref, {r.combination for r in rows})
                rdir = self.report_dir(system)
                self._out(rdir / f"combination_stats_{split}.csv").write_text(stats_to_csv(rows))
                self._out(rdir / f"combination_stats_{split}_shared.csv").write_text(
                    stats_to_csv([r for r in rows if r.combination in shared]))
                self._out(rdir / f"combination_stats_{split}_unshared.csv").write_text(
                    stats_to_csv([r for r in rows if r.combination in unshared]))

    # -- driver ---------------------------------------------------------------------

    def run_stage(self, stage: str, force: bool, record: RunRecord) -> None:
        for dep in REQUIRES.get(stage, ()):
            if not self.up_to_date(dep):
                raise DependencyError(f"stage {stage!r} needs an up-to-date {dep!r}; run stage {dep!r} first")
        if not force and self.up_to_date(stage):
            record.stages[stage] = "skipped"
            record.artifacts[stage] = self.read_stamp(stage)["artifacts"]
            log.info("%s: up to date, skipped", stage)
            return
        self._written = []
        t0 = time.perf_counter()
        getattr(self, stage.replace("-", "_"))()
        record.timings[stage] = time.perf_counter() - t0
        record.stages[stage] = "ran"
        artifacts = sorted({str(p.relative_to(self.root)) for p in self._written})
        record.artifacts[stage] = artifacts
        stamp = self.stamp_path(stage)
        stamp.parent.mkdir(parents=True, exist_ok=True)
        stamp.write_text(json.dumps({"key": self.stage_key(stage), "artifacts": artifacts}, sort_keys=True))
        log.info("%s: done in %.1fs", stage, record.timings[stage])


def run_experiment(cfg: ExperimentConfig, stages=STAGES, force: bool = False) -> RunRecord:
    """Run ``stages`` (names or aliases) in dependency order and append a run record."""
    exp = Experiment(cfg)
    echo = echo_config(cfg)
    record = RunRecord(dict(cfg.items()), tool_version())
    record.artifacts["config"] = [echo.name]
    for stage in expand_stages(stages):
        exp.run_stage(stage, force, record)
    with open(exp.root / "run_record.jsonl", "a") as fh:
        fh.write(record.to_json() + "\n")
    return record

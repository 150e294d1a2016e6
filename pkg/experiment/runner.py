"""Execute an experiment config: split, source model, adaptation, baselines, evaluation.

Every repetition is one ``RunRecord``. All randomness flows from the master
seed through ``derive_seed``, so a config file fully determines its records
except for wall-clock timings.
"""

from __future__ import annotations

import dataclasses
import json
import re
import sys
import time
from collections.abc import Iterator
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from loguru import logger
from tqdm import tqdm

from data.archive import WindowArchive, load_split, write_archive
from data.ingest import ingest
from data.synthetic import synth_paired_dataset
from data.windows import LabeledWindows, WindowedSplit, split_codes
from evaluation.report import evaluate, write_report
from experiment.config import ExperimentConfig, ExperimentKind, Method, derive_seed
from experiment.summary import Summary, summarize, write_summary
from model.checkpoint import save_checkpoint
from model.convlstm import Domain, ModelMeta, ModelParams, init_model
from training.adapt import adapt_unsupervised, random_target, untrained_target
from training.baselines import BaselineMethod, run_baseline
from training.config import LossSpec, TrainConfig
from training.supervised import train_supervised

MANIFEST = "manifest.json"
RECORDS_DIR = "records"
ARCHIVE_NAME = "windows.warc"

MS_ON_SOURCE = "M_S on D_S"
MS_ON_TARGET = "M_S on D_ST"
MT_ON_TARGET = "M_T on D_ST"
RANDOM_SAMPLE = "Random samp"
UNTRAINED = "Untrained"
METHOD_LABELS = {
    Method.UNSUPERVISED: "Unsupervised",
    Method.LP: "LP",
    Method.FT: "FT",
    Method.LPFT: "LPFT",
}


@dataclass(frozen=True)
class ConditionResult:
    """Scores of one evaluated model under one experimental condition."""

    condition: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    weighted_f1: float
    report: str
    method: Optional[str] = None
    fraction: Optional[float] = None
    adapt: Optional[dict[str, Any]] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "condition": self.condition,
            "method": self.method,
            "fraction": self.fraction,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "weighted_f1": self.weighted_f1,
            "report": self.report,
            "adapt": self.adapt,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> ConditionResult:
        return cls(**raw)


@dataclass(frozen=True)
class RunRecord:
    config_hash: str
    name: str
    kind: str
    repetition: int
    seed: int
    conditions: tuple[ConditionResult, ...]
    checkpoints: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "name": self.name,
            "kind": self.kind,
            "repetition": self.repetition,
            "seed": self.seed,
            "conditions": [c.to_dict() for c in self.conditions],
            "checkpoints": dict(self.checkpoints),
            "timings": dict(self.timings),
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> RunRecord:
        try:
            return cls(
                config_hash=raw["config_hash"],
                name=raw["name"],
                kind=raw["kind"],
                repetition=int(raw["repetition"]),
                seed=int(raw["seed"]),
                conditions=tuple(ConditionResult.from_dict(c) for c in raw["conditions"]),
                checkpoints=dict(raw.get("checkpoints", {})),
                timings=dict(raw.get("timings", {})),
            )
        except (KeyError, TypeError) as e:
            raise ValueError(f"malformed run record: {e}") from e

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path: Union[str, Path]) -> RunRecord:
        return cls.from_dict(json.loads(Path(path).read_text()))


def slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_")


def load_records(out_dir: Union[str, Path]) -> list[RunRecord]:
    records_dir = Path(out_dir) / RECORDS_DIR
    paths = sorted(records_dir.glob("*.json"))
    if not paths:
        raise FileNotFoundError(f"no run records under {records_dir}")
    return [RunRecord.read(path) for path in paths]


# ============================================================================
# Data preparation
# ============================================================================


def prepare_archive(config: ExperimentConfig, out_dir: Path, progress: bool = False) -> Path:
    """Window archive the experiment reads: given, ingested from raw files, or synthesized."""
    source = config.dataset
    if source.archive is not None:
        return source.archive
    out = out_dir / ARCHIVE_NAME
    split_seed = derive_seed(config.seed, "split")
    if source.raw_dir is not None:
        ingest(
            str(source.dataset_id),
            source.raw_dir,
            out,
            descriptor_path=source.descriptor,
            scheme=config.scheme,
            seed=split_seed,
            workers=config.workers,
            progress=progress,
        )
        return out
    assert source.synthetic is not None
    windows = synth_paired_dataset(source.synthetic, derive_seed(config.seed, "synthetic"))
    codes = split_codes(windows, seed=split_seed)
    write_archive(WindowArchive("synthetic", windows, codes, split_seed), out)
    logger.info(f"Synthesized {len(windows)} window pairs into {out}")
    return out


def prepare_split(config: ExperimentConfig, out_dir: Path, progress: bool = False) -> WindowedSplit:
    swap = config.swap_sites or config.kind is ExperimentKind.DOMAIN_SWITCH
    return load_split(prepare_archive(config, out_dir, progress), config.standardize, swap)


# ============================================================================
# One repetition
# ============================================================================


class Repetition:
    """Stages of one repetition; checkpoints and metrics land in ``rep_dir``."""

    def __init__(
        self,
        config: ExperimentConfig,
        split: WindowedSplit,
        repetition: int,
        out_dir: Path,
        progress: bool = False,
    ):
        self.config = config
        self.split = split
        self.repetition = repetition
        self.seed = derive_seed(config.seed, "rep", repetition)
        self.out_dir = out_dir
        self.rep_dir = out_dir / f"rep{repetition:03d}"
        self.progress = progress
        self.checkpoints: dict[str, str] = {}
        self.timings: dict[str, float] = {}
        self._source: Optional[ModelParams] = None

    @contextmanager
    def timed(self, stage: str) -> Iterator[None]:
        start = time.perf_counter()
        yield
        self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - start

    def stage_seed(self, *keys: Any) -> int:
        return derive_seed(self.seed, *keys)

    def _train_config(self, base: Optional[TrainConfig], *keys: Any) -> TrainConfig:
        assert base is not None
        return base.replace(seed=self.stage_seed(*keys), progress=self.progress)

    def _save(self, name: str, model: ModelParams) -> None:
        path = save_checkpoint(model, self.rep_dir / f"{slug(name)}.ckpt")
        self.checkpoints[name] = str(Path(path).relative_to(self.out_dir))

    @property
    def target_channels(self) -> int:
        return int(self.split.adapt.target.shape[1])

    @property
    def source(self) -> ModelParams:
        """M_S, trained on the source windows of the train partition on first use."""
        if self._source is None:
            data = self.split.train_source.source_windows()
            widths = self.config.model
            meta = ModelMeta(
                in_channels=data.num_channels,
                num_classes=data.num_classes,
                window_length=data.windows.shape[2],
                domain=Domain.SOURCE,
                conv_filters=widths.conv_filters,
                kernel_size=widths.kernel_size,
                hidden_size=widths.hidden_size,
            )
            with self.timed("train_source"):
                self._source, _ = train_supervised(
                    init_model(meta, self.stage_seed("init")),
                    data,
                    self._train_config(self.config.train, "source"),
                    desc=f"Source (rep {self.repetition})",
                )
            self._save("ms", self._source)
        return self._source

    def evaluate(
        self,
        condition: str,
        model: ModelParams,
        data: LabeledWindows,
        method: Optional[Method] = None,
        fraction: Optional[float] = None,
        adapt: Optional[dict[str, Any]] = None,
    ) -> ConditionResult:
        with self.timed("evaluate"):
            report = evaluate(model, data)
        path = self.rep_dir / "metrics" / f"{slug(condition)}.json"
        write_report(report, path)
        return ConditionResult(
            condition=condition,
            accuracy=report.accuracy,
            precision=report.macro["precision"],
            recall=report.macro["recall"],
            f1=report.macro["f1"],
            weighted_f1=report.weighted["f1"],
            report=str(path.relative_to(self.out_dir)),
            method=method.value if method is not None else None,
            fraction=fraction,
            adapt=adapt,
        )

    def adapt(
        self, spec: LossSpec, fraction: float, *keys: Any
    ) -> tuple[ModelParams, dict[str, Any]]:
        config = self._train_config(self.config.adapt, *keys).replace(fraction=fraction)
        with self.timed("adapt"):
            model, report = adapt_unsupervised(
                self.source, self.split.adapt.strip_labels(), spec, config
            )
        return model, report.to_dict()

    def untrained(self) -> ModelParams:
        return untrained_target(self.source, self.target_channels, self.stage_seed("untrained"))

    # ------------------------------------------------------------------
    # Experiment kinds
    # ------------------------------------------------------------------

    def three_way(self) -> list[ConditionResult]:
        test = self.split.test
        results = [self.evaluate(MS_ON_SOURCE, self.source, test.source_windows())]
        results.append(self.evaluate(MS_ON_TARGET, self.untrained(), test.target_windows()))
        adapted, report = self.adapt(self.config.loss, 1.0, "adapt")
        self._save("mt", adapted)
        results.append(self.evaluate(MT_ON_TARGET, adapted, test.target_windows(), adapt=report))
        return results

    def loss_grid(self) -> list[ConditionResult]:
        target_test = self.split.test.target_windows()
        randomized = random_target(self.source, self.target_channels, self.stage_seed("random"))
        results = [
            self.evaluate(RANDOM_SAMPLE, randomized, target_test),
            self.evaluate(UNTRAINED, self.untrained(), target_test),
        ]
        for spec in self.config.losses or ():
            # one seed for every loss, so only the objective differs
            adapted, report = self.adapt(spec, 1.0, "adapt")
            self._save(f"mt {spec.label} {spec.target.value}", adapted)
            results.append(self.evaluate(spec.label, adapted, target_test, adapt=report))
        return results

    def fraction_sweep(self, methods: tuple[Method, ...]) -> list[ConditionResult]:
        target_test = self.split.test.target_windows()
        results: list[ConditionResult] = []
        untrained: Optional[ConditionResult] = None
        for fraction in self.config.fractions or ():
            for method in methods:
                condition = f"{METHOD_LABELS[method]}@{fraction:g}"
                if fraction == 0.0:
                    # no target data: M_S applied to the target site
                    if untrained is None:
                        untrained = self.evaluate(MS_ON_TARGET, self.untrained(), target_test)
                    results.append(
                        dataclasses.replace(
                            untrained, condition=condition, method=method.value, fraction=0.0
                        )
                    )
                    continue
                keys = ("target", f"{fraction:g}")
                adapt_report = None
                if method is Method.UNSUPERVISED:
                    model, adapt_report = self.adapt(self.config.loss, fraction, *keys)
                else:
                    config = self._train_config(self.config.baseline, *keys).replace(
                        fraction=fraction
                    )
                    with self.timed(method.value):
                        model = run_baseline(
                            BaselineMethod(method.value),
                            self.source,
                            self.split.adapt.target_windows(),
                            config,
                        )
                self._save(condition, model)
                results.append(
                    self.evaluate(
                        condition, model, target_test, method, fraction, adapt=adapt_report
                    )
                )
        return results

    def run(self) -> RunRecord:
        kind = self.config.kind
        logger.info(f"{self.config.name}: repetition {self.repetition} (seed {self.seed})")
        if kind is ExperimentKind.LOSS_GRID:
            conditions = self.loss_grid()
        elif kind is ExperimentKind.SIZE_SWEEP:
            conditions = self.fraction_sweep((Method.UNSUPERVISED,))
        elif kind is ExperimentKind.BASELINE_COMPARE:
            conditions = self.fraction_sweep(self.config.methods)
        else:
            conditions = self.three_way()
        return RunRecord(
            config_hash=self.config.config_hash,
            name=self.config.name,
            kind=kind.value,
            repetition=self.repetition,
            seed=self.seed,
            conditions=tuple(conditions),
            checkpoints=self.checkpoints,
            timings={stage: round(seconds, 3) for stage, seconds in self.timings.items()},
        )


def run_repetition(
    config: ExperimentConfig,
    split: WindowedSplit,
    repetition: int,
    out_dir: Path,
    progress: bool = False,
) -> RunRecord:
    record = Repetition(config, split, repetition, out_dir, progress).run()
    record.write(out_dir / RECORDS_DIR / f"rep{repetition:03d}.json")
    return record


# ============================================================================
# Whole experiment
# ============================================================================


def check_manifest(config: ExperimentConfig, out_dir: Path, force: bool = False) -> None:
    """Refuse to reuse ``out_dir`` for a different config unless ``force``."""
    manifest = out_dir / MANIFEST
    if manifest.exists():
        previous = json.loads(manifest.read_text()).get("config_hash")
        if previous != config.config_hash:
            if not force:
                raise FileExistsError(
                    f"{out_dir} holds results of config {str(previous)[:12]}, "
                    f"not {config.config_hash[:12]}; use --force to overwrite"
                )
            logger.warning(f"Overwriting results of config {str(previous)[:12]} in {out_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    for stale in (out_dir / RECORDS_DIR).glob("*.json"):
        stale.unlink()
    dataset = config.dataset
    paths = {
        name: str(Path(value).resolve())
        for name in ("archive", "raw_dir", "descriptor")
        if (value := getattr(dataset, name)) is not None
    }
    payload = {"config_hash": config.config_hash, "config": config.to_dict(), "paths": paths}
    manifest.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run_experiment(
    config: ExperimentConfig,
    out_dir: Union[str, Path],
    force: bool = False,
    progress: bool = False,
) -> tuple[list[RunRecord], Summary]:
    """Run every repetition of ``config`` and write records plus summary tables."""
    config.validate()
    out_dir = Path(out_dir)
    check_manifest(config, out_dir, force)
    split = prepare_split(config, out_dir, progress)
    logger.info(
        f"{config.name} ({config.kind.value}, config {config.config_hash[:12]}): "
        f"split sizes {split.sizes()}, {config.repetitions} repetition(s)"
    )

    repetitions = range(int(config.repetitions or 1))
    if config.workers > 1 and len(repetitions) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            records = list(
                pool.map(
                    run_repetition,
                    [config] * len(repetitions),
                    [split] * len(repetitions),
                    repetitions,
                    [out_dir] * len(repetitions),
                )
            )
    else:
        records = [
            run_repetition(config, split, r, out_dir, progress)
            for r in tqdm(
                repetitions,
                desc=config.name,
                unit=" rep",
                disable=(not progress) or (not sys.stderr.isatty()),
            )
        ]

    summary = summarize(records)
    write_summary(summary, out_dir)
    return records, summary

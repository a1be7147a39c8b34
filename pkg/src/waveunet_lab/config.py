"""Experiment configuration files and run manifests.

One YAML file describes one experiment: architecture, weight regime,
training schedule, dataset source, and output location. Parse errors name
the offending field by its dotted path. Manifests are written atomically
at the end of a run and are sufficient to reproduce it.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

import yaml

from . import __version__
from .data import DatasetSplit, load_dataset, synth_dataset
from .errors import ConfigurationError
from .specs import ArchitectureSpec, FreezeSpec, model_name
from .training import TrainConfig


def _section(d: dict, key: str, path: str = "") -> dict:
    full = f"{path}.{key}" if path else key
    value = d.get(key)
    if value is None:
        raise ConfigurationError(f"missing section {full}")
    if not isinstance(value, dict):
        raise ConfigurationError(f"{full} must be a mapping")
    return value


def _require(section: dict, key: str, path: str) -> Any:
    full = f"{path}.{key}" if path else key
    if key not in section:
        raise ConfigurationError(f"missing required field {full}")
    return section[key]


@dataclass(frozen=True)
class DatasetConfig:
    """Either a stem-folder path or a synthetic corpus recipe."""

    path: Optional[str] = None
    synthetic: Optional[dict[str, Any]] = None
    split_seed: int = 0

    def validate(self) -> None:
        if (self.path is None) == (self.synthetic is None):
            raise ConfigurationError("dataset: exactly one of path or synthetic is required")

    def load(self) -> DatasetSplit:
        self.validate()
        if self.path is not None:
            return load_dataset(self.path, split_seed=self.split_seed)
        syn = dict(self.synthetic or {})
        return synth_dataset(
            seed=int(syn.get("seed", self.split_seed)),
            n_tracks=int(syn.get("tracks", 12)),
            duration=float(syn.get("duration", 30.0)),
            sample_rate=int(syn.get("sample_rate", 22050)),
            channels=int(syn.get("channels", 2)),
        )

    def to_dict(self) -> dict[str, Any]:
        return {"path": self.path, "synthetic": self.synthetic, "split_seed": self.split_seed}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DatasetConfig":
        cfg = cls(
            path=d.get("path"),
            synthetic=d.get("synthetic"),
            split_seed=int(d.get("split_seed", 0)),
        )
        cfg.validate()
        return cfg


@dataclass
class ExperimentConfig:
    run_name: str
    output_dir: str
    architecture: ArchitectureSpec
    freeze: FreezeSpec
    training: TrainConfig
    dataset: DatasetConfig
    data_seed: int = 0

    @property
    def canonical_name(self) -> str:
        return model_name(
            self.architecture,
            self.freeze,
            stages=self.training.stages,
            identity_loss=self.training.use_identity_loss,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_name": self.run_name,
            "output_dir": self.output_dir,
            "architecture": self.architecture.to_dict(),
            "freeze": self.freeze.to_dict(),
            "training": self.training.to_dict(),
            "dataset": self.dataset.to_dict(),
            "data_seed": self.data_seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("config root must be a mapping")
        arch_section = _section(d, "architecture")
        # shape-defining fields must be stated explicitly in experiment files
        _require(arch_section, "num_levels", "architecture")
        _require(arch_section, "input_length", "architecture")
        try:
            architecture = ArchitectureSpec.from_dict(arch_section)
        except ConfigurationError as exc:
            raise ConfigurationError(f"architecture: {exc}") from exc
        try:
            freeze = FreezeSpec.from_dict(d.get("freeze") or {})
        except ConfigurationError as exc:
            raise ConfigurationError(f"freeze: {exc}") from exc
        try:
            training = TrainConfig.from_dict(d.get("training") or {})
        except (ConfigurationError, TypeError) as exc:
            raise ConfigurationError(f"training: {exc}") from exc
        try:
            dataset = DatasetConfig.from_dict(_section(d, "dataset"))
        except ConfigurationError as exc:
            raise ConfigurationError(f"dataset: {exc}") from exc
        cfg = cls(
            run_name=str(d.get("run_name", "")) or "",
            output_dir=str(_require(d, "output_dir", "")).strip() or ".",
            architecture=architecture,
            freeze=freeze,
            training=training,
            dataset=dataset,
            data_seed=int(d.get("data_seed", 0)),
        )
        if not cfg.run_name:
            cfg.run_name = cfg.canonical_name
        return cfg

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file {path} does not exist")
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(raw or {})


@dataclass
class RunManifest:
    run_name: str
    kind: str                       # train | evaluate | search | report
    version: str = __version__
    started: str = ""
    finished: str = ""
    config: dict[str, Any] = field(default_factory=dict)
    seeds: dict[str, int] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)
    results: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_name": self.run_name,
            "kind": self.kind,
            "version": self.version,
            "started": self.started,
            "finished": self.finished,
            "config": self.config,
            "seeds": self.seeds,
            "artifacts": self.artifacts,
            "results": self.results,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunManifest":
        return cls(**{k: d.get(k, v) for k, v in {
            "run_name": "", "kind": "", "version": "", "started": "", "finished": "",
            "config": {}, "seeds": {}, "artifacts": {}, "results": {},
        }.items()})


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(manifest: RunManifest, path: str | Path) -> Path:
    """Atomic write: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n"
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def read_manifest(path: str | Path) -> RunManifest:
    with open(path) as fh:
        return RunManifest.from_dict(json.load(fh))

"""Declarative pipeline configuration.

One JSON file drives every subcommand. Section seeds default to the master
seed, and the model's input dimension defaults to the dataset's sample
count, so a minimal config is just paths plus whatever is being swept.
Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError, ParameterError
from .explain import ExplainConfig
from .infodyn import TEConfig
from .sage import ModelConfig
from .waveforms import JitterRanges, SynthParams

_DEFAULT_PATHS = {
    "dataset_dir": "data",
    "graphs_dir": "graphs",
    "checkpoint": "checkpoints/model.npz",
    "reports_dir": "reports",
}


@dataclass(frozen=True)
class DatasetSection:
    params: SynthParams
    per_class: int = 100
    jitter: JitterRanges = JitterRanges()

    def __post_init__(self):
        if self.per_class < 1:
            raise ParameterError(f"per_class must be >= 1, got {self.per_class}")


@dataclass(frozen=True)
class PathsSection:
    dataset_dir: Path
    graphs_dir: Path
    checkpoint: Path
    reports_dir: Path


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    dataset: DatasetSection
    te: TEConfig
    model: ModelConfig
    explain: ExplainConfig
    paths: PathsSection


def _check_keys(section: str, doc: dict, allowed) -> None:
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(unknown)}")


def _build(section: str, cls, doc: dict):
    names = [f.name for f in fields(cls)]
    _check_keys(section, doc, names)
    try:
        return cls(**doc)
    except ParameterError as exc:
        raise ConfigError(f"invalid {section} configuration: {exc}") from exc


def _apply_overrides(doc: dict, overrides: dict) -> None:
    for dotted, value in overrides.items():
        target = doc
        *parents, leaf = dotted.split(".")
        for part in parents:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigError(f"cannot override {dotted}: {part} is not a section")
        target[leaf] = value


def build_config(doc: dict, base_dir=".") -> PipelineConfig:
    """Validate a raw config document and resolve it into typed sections."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys("config", doc, ("seed", "dataset", "te", "model", "explain", "paths"))
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")

    dataset_doc = dict(doc.get("dataset", {}))
    per_class = dataset_doc.pop("per_class", 100)
    jitter_doc = dict(dataset_doc.pop("jitter", {}))
    for key in ("sag", "surge", "fault_start", "noise_sigma"):
        if key in jitter_doc:
            jitter_doc[key] = tuple(jitter_doc[key])
    jitter = _build("dataset.jitter", JitterRanges, jitter_doc)
    dataset_doc.setdefault("seed", seed)
    if "phase_offsets_deg" in dataset_doc:
        dataset_doc["phase_offsets_deg"] = tuple(dataset_doc["phase_offsets_deg"])
    params = _build("dataset", SynthParams, dataset_doc)
    dataset = DatasetSection(params=params, per_class=per_class, jitter=jitter)

    te = _build("te", TEConfig, dict(doc.get("te", {})))

    model_doc = dict(doc.get("model", {}))
    model_doc.setdefault("seed", seed)
    model_doc.setdefault("input_dim", params.sample_count)
    if "head_dims" in model_doc:
        model_doc["head_dims"] = tuple(model_doc["head_dims"])
    model = _build("model", ModelConfig, model_doc)

    explain_doc = dict(doc.get("explain", {}))
    explain_doc.setdefault("seed", seed)
    explain = _build("explain", ExplainConfig, explain_doc)

    paths_doc = dict(_DEFAULT_PATHS)
    _check_keys("paths", dict(doc.get("paths", {})), _DEFAULT_PATHS)
    paths_doc.update(doc.get("paths", {}))
    base = Path(base_dir)
    paths = PathsSection(**{k: base / v for k, v in paths_doc.items()})

    return PipelineConfig(seed=seed, dataset=dataset, te=te, model=model, explain=explain, paths=paths)


def load_config(path, overrides: dict = None) -> PipelineConfig:
    """Load and validate a JSON config file; paths resolve against its directory."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if overrides:
        _apply_overrides(doc, overrides)
    return build_config(doc, base_dir=path.parent)

"""Experiment configuration: schema-checked structured text with canonical hashing."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import yaml

from .errors import ConfigurationError

METHOD_NAMES = ("original", "probe_edit", "retrain", "finetune", "random_label",
                "gradient_ascent")

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["dataset", "arch", "forget_classes", "train", "methods"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "dataset": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["blobs", "signals", "signal_files"]},
                "classes": {"type": "integer", "minimum": 2},
                "per_class": {"type": "integer", "minimum": 2},
                "dim": {"type": "integer", "minimum": 2},
                "separation": {"type": "number", "exclusiveMinimum": 0},
                "channels": {"type": "integer", "minimum": 1},
                "length": {"type": "integer", "minimum": 64},
                "noise_amplitude": {"type": "number", "minimum": 0},
                "train_manifest": {"type": "string"},
                "test_manifest": {"type": "string"},
                "window_length": {"type": "integer", "minimum": 1},
                "stride": {"type": "integer", "minimum": 1},
            },
        },
        "arch": {"type": "string"},
        "forget_classes": {
            "type": "array", "items": {"type": "integer", "minimum": 0},
            "minItems": 1,
        },
        "train": {"$ref": "#/$defs/train"},
        "methods": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name"],
                "additionalProperties": False,
                "properties": {
                    "name": {"enum": list(METHOD_NAMES)},
                    "label": {"type": "string"},
                    "train": {"$ref": "#/$defs/train"},
                    "probe": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "epsilon": {"type": "number", "exclusiveMinimum": 0},
                            "steps": {"type": "integer", "minimum": 1},
                            "step_size": {"type": "number", "exclusiveMinimum": 0},
                            "noise_mode": {"enum": ["per_sample", "per_class"]},
                            "fallback": {"enum": ["drop", "runner_up"]},
                        },
                    },
                    "edit": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "epochs": {"type": "integer", "minimum": 1},
                            "eta_push": {"type": "number", "exclusiveMinimum": 0},
                            "eta_pull": {"type": "number", "exclusiveMinimum": 0},
                            "temperature": {"type": "number", "exclusiveMinimum": 0},
                            "schedule": {"enum": ["alternate", "push_only", "pull_only",
                                                  "push_then_pull", "pull_then_push"]},
                            "batch_size": {"type": "integer", "minimum": 1},
                            "kl_direction": {"enum": ["target_first", "student_first"]},
                        },
                    },
                },
            },
        },
        "repeats": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "output_dir": {"type": "string"},
    },
    "$defs": {
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "learning_rate": {"type": "number", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "weight_decay": {"type": "number", "minimum": 0},
            },
        },
    },
}


@dataclass(frozen=True)
class MethodSpec:
    name: str
    label: str
    train: dict = field(default_factory=dict)
    probe: dict = field(default_factory=dict)
    edit: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description plus its canonical content hash."""

    name: str
    dataset: dict
    arch: str
    forget_classes: tuple[int, ...]
    train: dict
    methods: tuple[MethodSpec, ...]
    repeats: int
    seed: int
    output_dir: str
    raw: dict

    @property
    def config_hash(self) -> str:
        return hash_config(self.raw)


def canonical_bytes(raw: dict) -> bytes:
    """Canonical JSON encoding (sorted keys, no whitespace) of a config dict."""
    return json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()


def hash_config(raw: dict) -> str:
    return hashlib.sha256(canonical_bytes(raw)).hexdigest()[:16]


def validate_config(raw: dict) -> None:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config field {path}: {exc.message}") from exc


def parse_config(raw: dict) -> ExperimentConfig:
    validate_config(raw)
    methods = []
    seen = set()
    for spec in raw["methods"]:
        label = spec.get("label", spec["name"])
        if label in seen:
            raise ConfigurationError(f"duplicate method label {label!r}")
        seen.add(label)
        methods.append(MethodSpec(name=spec["name"], label=label,
                                  train=dict(spec.get("train", {})),
                                  probe=dict(spec.get("probe", {})),
                                  edit=dict(spec.get("edit", {}))))
    return ExperimentConfig(
        name=raw.get("name", "experiment"),
        dataset=dict(raw["dataset"]),
        arch=raw["arch"],
        forget_classes=tuple(sorted(set(raw["forget_classes"]))),
        train=dict(raw["train"]),
        methods=tuple(methods),
        repeats=int(raw.get("repeats", 1)),
        seed=int(raw.get("seed", 0)),
        output_dir=raw.get("output_dir", "runs/experiment"),
        raw=raw,
    )


def read_raw_config(path) -> dict:
    """Read a YAML or JSON config file into a plain dict, without validation."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    text = path.read_text()
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"could not parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path} does not contain a mapping")
    return raw


def load_config(path) -> ExperimentConfig:
    """Load a YAML or JSON experiment config and validate it against the schema."""
    return parse_config(read_raw_config(path))

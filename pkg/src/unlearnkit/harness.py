"""Config-driven experiment runner: train, unlearn, evaluate, aggregate, plot."""
from __future__ import annotations

import datetime
import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import finetune, gradient_ascent_unlearn, random_label_unlearn, retrain
from .config import ExperimentConfig, MethodSpec, canonical_bytes, hash_config
from .data import (ForgetPartition, LabeledDataset, SignalLayout, generate_blobs,
                   generate_synthetic_signals, load_signal_dataset, partition_by_class,
                   record_data_access)
from .editing import EditConfig, EditTrace, probe_edit_unlearn, write_trace
from .errors import ComparisonError, ConfigurationError
from .evaluation import (accuracy, aggregate_reports, build_report, read_report,
                         write_aggregate, write_report)
from .models import (Classifier, TrainConfig, build_reference_model, input_shape_of,
                     load_classifier, save_classifier, train_supervised)
from .probing import ProbeConfig

log = logging.getLogger(__name__)

RETAIN_USING_METHODS = ("retrain", "finetune")


def build_datasets(spec: dict, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Materialize the train/test pair a dataset spec describes."""
    kind = spec["kind"]
    if kind == "blobs":
        return generate_blobs(spec["classes"], spec["per_class"], spec.get("dim", 2),
                              spec.get("separation", 6.0), seed)
    if kind == "signals":
        return generate_synthetic_signals(
            spec["classes"], spec["per_class"], spec["channels"], spec["length"],
            seed, noise_amplitude=spec.get("noise_amplitude", 0.3))
    if kind == "signal_files":
        layouts = {
            "train": SignalLayout(spec["channels"], spec["window_length"],
                                  spec.get("stride", spec["window_length"]),
                                  spec["classes"], "train"),
            "test": SignalLayout(spec["channels"], spec["window_length"],
                                 spec.get("stride", spec["window_length"]),
                                 spec["classes"], "test"),
        }
        train = load_signal_dataset(spec["train_manifest"], layouts["train"])
        test = load_signal_dataset(spec["test_manifest"], layouts["test"])
        return train, test
    raise ConfigurationError(f"unknown dataset kind {kind!r}")


def _train_cfg(cfg: ExperimentConfig, overrides: dict, seed: int) -> TrainConfig:
    merged = dict(cfg.train)
    merged.update(overrides)
    return TrainConfig(seed=seed, **merged)


def run_method(spec: MethodSpec, original: Classifier, partition: ForgetPartition,
               cfg: ExperimentConfig, seed: int) -> tuple[Classifier, EditTrace | None]:
    """Dispatch one unlearning method; returns the edited model and optional trace."""
    name = spec.name
    if name == "original":
        return original.clone(), None
    if name == "probe_edit":
        if "epsilon" not in spec.probe:
            raise ConfigurationError("probe_edit needs probe.epsilon in its method config")
        probe_cfg = ProbeConfig(seed=seed, **spec.probe)
        edit_cfg = EditConfig(seed=seed, **spec.edit)
        return probe_edit_unlearn(original, partition.d_f, probe_cfg, edit_cfg)
    if name == "retrain":
        return retrain(original.arch, partition.d_r, _train_cfg(cfg, spec.train, seed),
                       forget_classes=partition.forget_classes), None
    if name == "finetune":
        return finetune(original, partition.d_r, _train_cfg(cfg, spec.train, seed),
                        forget_classes=partition.forget_classes), None
    if name == "random_label":
        return random_label_unlearn(original, partition.d_f,
                                    _train_cfg(cfg, spec.train, seed), seed,
                                    forget_classes=partition.forget_classes), None
    if name == "gradient_ascent":
        return gradient_ascent_unlearn(original, partition.d_f,
                                       _train_cfg(cfg, spec.train, seed)), None
    raise ConfigurationError(f"unknown method {name!r}")


def trace_epoch_metrics(trace: EditTrace, reference: Classifier,
                        d_ft: LabeledDataset, d_rt: LabeledDataset
                        ) -> dict[int, tuple[float, float]]:
    """Evaluate per-epoch parameter snapshots on the test splits, post hoc."""
    scratch = build_reference_model(reference.arch, reference.class_count, seed=0)
    metrics: dict[int, tuple[float, float]] = {}
    for epoch, state in trace.snapshots:
        scratch.load_state_arrays(state)
        metrics[epoch] = (accuracy(scratch, d_ft), accuracy(scratch, d_rt))
    return metrics


@dataclass
class RunManifest:
    """Everything a rerun or a plot needs to find this experiment's artifacts."""

    config_hash: str
    config_path: str
    name: str
    dataset: dict
    arch: str
    forget_classes: list
    seeds: list
    version: str
    started: str
    finished: str
    runs: list
    aggregate_path: str

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)

    @staticmethod
    def load(path) -> "RunManifest":
        with open(path) as fh:
            return RunManifest(**json.load(fh))


def _ensure_dirs(out: Path) -> dict[str, Path]:
    dirs = {name: out / name for name in ("checkpoints", "traces", "reports", "plots")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


def get_or_train_original(cfg: ExperimentConfig, train_ds: LabeledDataset,
                          out: Path, seed: int) -> Classifier:
    """Load the cached original checkpoint for this seed, or train and cache it."""
    if input_shape_of(cfg.arch) != train_ds.sample_shape:
        raise ConfigurationError(
            f"arch {cfg.arch} expects input shape {input_shape_of(cfg.arch)} but the "
            f"dataset provides {train_ds.sample_shape}")
    path = out / "checkpoints" / f"original_seed{seed}.npz"
    if path.exists():
        return load_classifier(path)
    model = build_reference_model(cfg.arch, train_ds.class_count, seed)
    train_supervised(model, train_ds, _train_cfg(cfg, {}, seed))
    save_classifier(model, path)
    return model


def run_experiment(cfg: ExperimentConfig, out_dir=None, method_filter: str | None = None,
                   do_unlearn: bool = True, do_evaluate: bool = True) -> RunManifest:
    """Run every (method, repeat) cell of an experiment config.

    Stage errors are recorded per run entry instead of aborting the whole
    experiment, and partial artifacts stay on disk.
    """
    out = Path(out_dir or cfg.output_dir)
    dirs = _ensure_dirs(out)
    config_path = out / "config.canonical.json"
    config_path.write_bytes(canonical_bytes(cfg.raw))
    config_hash = hash_config(cfg.raw)
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()

    methods = [m for m in cfg.methods if method_filter is None or m.label == method_filter
               or m.name == method_filter]
    if method_filter is not None and not methods:
        raise ConfigurationError(f"method {method_filter!r} is not in this config")

    seeds = [cfg.seed + r for r in range(cfg.repeats)]
    runs: list[dict] = []
    reports = []
    for seed in seeds:
        try:
            train_ds, test_ds = build_datasets(cfg.dataset, seed)
            partition = partition_by_class(train_ds, test_ds, cfg.forget_classes)
            original = get_or_train_original(cfg, train_ds, out, seed)
            original_acc_ft = accuracy(original, partition.d_ft)
        except Exception as exc:  # noqa: BLE001 - recorded, not swallowed silently
            runs.append({"seed": seed, "stage": "data/train", "status": "error",
                         "error": f"{type(exc).__name__}: {exc}"})
            log.error("seed %d data/train stage failed: %s", seed, exc)
            continue

        for spec in methods:
            entry: dict = {"seed": seed, "method": spec.label, "status": "ok"}
            ckpt = dirs["checkpoints"] / f"{spec.label}_seed{seed}.npz"
            trace_path = dirs["traces"] / f"{spec.label}_seed{seed}.csv"
            report_path = dirs["reports"] / f"{spec.label}_seed{seed}.txt"
            try:
                if do_unlearn:
                    with record_data_access() as access:
                        access.marker("unlearn start")
                        model, trace = run_method(spec, original, partition, cfg, seed)
                        access.marker("unlearn end")
                    entry["retain_reads_during_unlearn"] = access.retain_reads_between()
                    save_classifier(model, ckpt)
                    if trace is not None:
                        metrics = trace_epoch_metrics(trace, original, partition.d_ft,
                                                      partition.d_rt)
                        write_trace(trace, trace_path, metrics)
                        entry["trace"] = str(trace_path)
                elif ckpt.exists():
                    model, trace = load_classifier(ckpt), None
                else:
                    raise ConfigurationError(f"checkpoint missing: {ckpt}; run unlearn first")
                entry["checkpoint"] = str(ckpt)

                if do_evaluate:
                    report = build_report(
                        original, model, partition, method=spec.label, seed=seed,
                        config_hash=config_hash,
                        uses_retain=spec.name in RETAIN_USING_METHODS,
                        original_acc_ft=original_acc_ft)
                    write_report(report, report_path)
                    reports.append(report)
                    entry["report"] = str(report_path)
            except Exception as exc:  # noqa: BLE001
                stage = "unlearn" if "checkpoint" not in entry else "evaluate"
                entry.update(status="error", stage=stage,
                             error=f"{type(exc).__name__}: {exc}")
                log.error("seed %d method %s failed in %s: %s", seed, spec.label,
                          stage, exc)
            runs.append(entry)

    aggregate_path = out / "aggregate.csv"
    if reports:
        write_aggregate(aggregate_reports(reports), aggregate_path)

    manifest = RunManifest(
        config_hash=config_hash,
        config_path=str(config_path),
        name=cfg.name,
        dataset=cfg.dataset,
        arch=cfg.arch,
        forget_classes=list(cfg.forget_classes),
        seeds=seeds,
        version=__version__,
        started=started,
        finished=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        runs=runs,
        aggregate_path=str(aggregate_path) if reports else "",
    )
    manifest.save(out / "manifest.json")
    return manifest


def train_originals(cfg: ExperimentConfig, out_dir=None) -> list[Path]:
    """Train (or reuse) the original model for every repeat seed."""
    out = Path(out_dir or cfg.output_dir)
    _ensure_dirs(out)
    paths = []
    for r in range(cfg.repeats):
        seed = cfg.seed + r
        train_ds, _ = build_datasets(cfg.dataset, seed)
        get_or_train_original(cfg, train_ds, out, seed)
        paths.append(out / "checkpoints" / f"original_seed{seed}.npz")
    return paths


def compare_methods(manifest_paths: list) -> list[dict]:
    """Join reports from several manifests into one method-by-metric table.

    All manifests must describe the same dataset, architecture, and forget
    classes; otherwise the comparison is meaningless and raises.
    """
    manifests = [RunManifest.load(p) if not isinstance(p, RunManifest) else p
                 for p in manifest_paths]
    if not manifests:
        raise ComparisonError("no manifests to compare")
    head = manifests[0]
    for m in manifests[1:]:
        same = (m.dataset == head.dataset and m.arch == head.arch
                and m.forget_classes == head.forget_classes)
        if not same:
            raise ComparisonError(
                f"experiment {m.name!r} targets a different dataset/arch/forget split "
                f"than {head.name!r}")
    reports = []
    for m in manifests:
        for entry in m.runs:
            if entry.get("report"):
                reports.append(read_report(entry["report"]))
    if not reports:
        raise ComparisonError("manifests contain no completed reports")
    return aggregate_reports(reports)

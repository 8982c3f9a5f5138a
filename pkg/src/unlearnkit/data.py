"""Datasets, forget/retain partitioning, synthetic generators, and signal ingestion.

Every read of sample data goes through the ``inputs``/``labels`` properties,
which report to any active :class:`DataAccessLog`. The benchmark harness uses
this to audit that retain splits are never touched while an unlearning
algorithm runs.
"""
from __future__ import annotations

import csv
import io
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError

_ACTIVE_LOGS: list["DataAccessLog"] = []


class DataAccessLog:
    """Ordered record of dataset reads and named markers."""

    def __init__(self):
        self.events: list[tuple[str, str]] = []

    def record_read(self, tag: str) -> None:
        self.events.append(("read", tag))

    def marker(self, name: str) -> None:
        self.events.append(("marker", name))

    def reads(self) -> list[str]:
        return [tag for kind, tag in self.events if kind == "read"]

    def reads_between(self, start: str, end: str) -> list[str]:
        tags, active = [], False
        for kind, tag in self.events:
            if kind == "marker" and tag == start:
                active = True
            elif kind == "marker" and tag == end:
                active = False
            elif kind == "read" and active:
                tags.append(tag)
        return tags

    def retain_reads_between(self, start: str = "unlearn start",
                             end: str = "unlearn end") -> int:
        return sum(1 for tag in self.reads_between(start, end) if tag.startswith("retain"))


@contextmanager
def record_data_access():
    """Context manager that collects dataset reads into a fresh log."""
    log = DataAccessLog()
    _ACTIVE_LOGS.append(log)
    try:
        yield log
    finally:
        _ACTIVE_LOGS.remove(log)


class LabeledDataset:
    """Immutable array-backed dataset: N same-shape inputs with labels in [0, K)."""

    def __init__(self, inputs: np.ndarray, labels: np.ndarray, class_count: int,
                 split: str, tag: str = "dataset"):
        inputs = np.asarray(inputs)
        labels = np.asarray(labels, dtype=np.int64)
        if inputs.ndim < 2:
            raise DataError("inputs must be (N, *sample_shape)")
        if len(inputs) != len(labels):
            raise DataError(f"{len(inputs)} inputs but {len(labels)} labels")
        if len(inputs) < 1:
            raise DataError("dataset must hold at least one sample")
        if not np.all(np.isfinite(inputs)):
            bad = int(np.argmax(~np.isfinite(inputs).reshape(len(inputs), -1).all(axis=1)))
            raise DataError(f"non-finite input at sample index {bad}")
        if labels.min() < 0 or labels.max() >= class_count:
            bad = int(np.argmax((labels < 0) | (labels >= class_count)))
            raise DataError(f"label {int(labels[bad])} at index {bad} outside [0, {class_count})")
        if split not in ("train", "test"):
            raise DataError(f"split must be 'train' or 'test', got {split!r}")
        self._inputs = inputs
        self._labels = labels
        self.class_count = class_count
        self.split = split
        self.tag = tag
        self._inputs.setflags(write=False)
        self._labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self._labels)

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self._inputs.shape[1:]

    @property
    def inputs(self) -> np.ndarray:
        for log in _ACTIVE_LOGS:
            log.record_read(self.tag)
        return self._inputs

    @property
    def labels(self) -> np.ndarray:
        for log in _ACTIVE_LOGS:
            log.record_read(self.tag)
        return self._labels

    def subset(self, indices: np.ndarray, tag: str | None = None) -> "LabeledDataset":
        return LabeledDataset(self.inputs[indices], self.labels[indices],
                              self.class_count, self.split, tag or self.tag)

    def retagged(self, tag: str) -> "LabeledDataset":
        return LabeledDataset(self._inputs, self._labels, self.class_count, self.split, tag)


@dataclass(frozen=True)
class ForgetPartition:
    """Forget/retain split of a train and test set induced by the forget classes."""

    forget_classes: tuple[int, ...]
    d_f: LabeledDataset
    d_r: LabeledDataset
    d_ft: LabeledDataset
    d_rt: LabeledDataset

    @property
    def class_count(self) -> int:
        return self.d_f.class_count


def partition_by_class(train: LabeledDataset, test: LabeledDataset,
                       forget_classes) -> ForgetPartition:
    """Split train/test by forget-class membership, preserving sample order."""
    forget = tuple(sorted(set(int(c) for c in forget_classes)))
    K = train.class_count
    if test.class_count != K:
        raise DomainError(f"train K={K} but test K={test.class_count}")
    if not forget:
        raise DomainError("forget class set is empty")
    if any(c < 0 or c >= K for c in forget):
        raise DomainError(f"forget classes {forget} outside [0, {K})")
    if len(forget) == K:
        raise DomainError("cannot forget every class; nothing would be retained")

    def split(ds: LabeledDataset, prefix: str):
        mask = np.isin(ds.labels, forget)
        if not mask.any():
            raise DataError(f"no samples of classes {forget} in the {ds.split} set")
        if mask.all():
            raise DataError(f"no retained samples in the {ds.split} set")
        f = ds.subset(np.flatnonzero(mask), tag=f"forget_{prefix}")
        r = ds.subset(np.flatnonzero(~mask), tag=f"retain_{prefix}")
        return f, r

    d_f, d_r = split(train, "train")
    d_ft, d_rt = split(test, "test")
    return ForgetPartition(forget, d_f, d_r, d_ft, d_rt)


def _stratified_split(inputs, labels, class_count, train_frac=0.8):
    train_idx, test_idx = [], []
    for k in range(class_count):
        idx = np.flatnonzero(labels == k)
        cut = int(train_frac * len(idx))
        train_idx.append(idx[:cut])
        test_idx.append(idx[cut:])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    return train_idx, test_idx


def generate_blobs(class_count: int, n_per_class: int, dim: int, separation: float,
                   seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Unit-covariance Gaussian clusters with pairwise mean distance >= separation.

    Means sit on scaled basis vectors when they fit the dimension, otherwise on
    a circle in the first two coordinates. Returns a stratified 80/20
    train/test pair, deterministic in the seed.
    """
    if class_count < 2:
        raise DomainError("class_count must be >= 2")
    if n_per_class < 2:
        raise DomainError("n_per_class must be >= 2")
    if dim < 2:
        raise DomainError("dim must be >= 2")
    if separation <= 0:
        raise DomainError("separation must be positive")

    means = np.zeros((class_count, dim))
    if class_count <= dim:
        for k in range(class_count):
            means[k, k] = separation / np.sqrt(2.0)
    else:
        radius = separation / (2.0 * np.sin(np.pi / class_count))
        angles = 2.0 * np.pi * np.arange(class_count) / class_count
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)

    rng = np.random.default_rng(seed)
    inputs = np.concatenate([
        rng.normal(loc=means[k], scale=1.0, size=(n_per_class, dim))
        for k in range(class_count)
    ]).astype(np.float32)
    labels = np.repeat(np.arange(class_count), n_per_class)

    tr, te = _stratified_split(inputs, labels, class_count)
    train = LabeledDataset(inputs[tr], labels[tr], class_count, "train", tag="train")
    test = LabeledDataset(inputs[te], labels[te], class_count, "test", tag="test")
    return train, test


def generate_synthetic_signals(class_count: int, n_per_class: int, channels: int,
                               length: int, seed: int, noise_amplitude: float = 0.3,
                               base_cycles: float = 32.0
                               ) -> tuple[LabeledDataset, LabeledDataset]:
    """Multi-channel sinusoid mixtures; class k rides base frequency f0*(1 + k/K).

    Each sample is the class waveform (fundamental plus two harmonics) under a
    random per-sample time shift, plus Gaussian noise of the given amplitude.
    With zero noise, same-class samples are identical up to that phase shift.
    """
    if class_count < 2:
        raise DomainError("class_count must be >= 2")
    if n_per_class < 2:
        raise DomainError("n_per_class must be >= 2")
    if channels < 1:
        raise DomainError("channels must be >= 1")
    if length < 64:
        raise DomainError("length must be >= 64")
    if noise_amplitude < 0:
        raise DomainError("noise_amplitude must be >= 0")

    rng = np.random.default_rng(seed)
    t = np.arange(length) / length
    harmonics = (1.0, 0.5, 0.25)
    chan_gain = 1.0 + np.arange(channels) / (2.0 * channels)
    chan_phase = 2.0 * np.pi * np.arange(channels) / (3.0 * channels)

    inputs = np.empty((class_count * n_per_class, channels, length), dtype=np.float32)
    labels = np.repeat(np.arange(class_count), n_per_class)
    row = 0
    for k in range(class_count):
        f_k = base_cycles * (1.0 + k / class_count)
        for _ in range(n_per_class):
            shift = rng.uniform(0.0, 2.0 * np.pi)
            wave = np.zeros((channels, length))
            for h, amp in enumerate(harmonics, start=1):
                phase = shift * h + chan_phase[:, None]
                wave += amp * chan_gain[:, None] * np.sin(
                    2.0 * np.pi * f_k * h * t[None, :] + phase)
            if noise_amplitude > 0:
                wave = wave + rng.normal(0.0, noise_amplitude, size=wave.shape)
            inputs[row] = wave
            row += 1

    tr, te = _stratified_split(inputs, labels, class_count)
    train = LabeledDataset(inputs[tr], labels[tr], class_count, "train", tag="train")
    test = LabeledDataset(inputs[te], labels[te], class_count, "test", tag="test")
    return train, test


def window_signal(raw: np.ndarray, length: int, stride: int) -> np.ndarray:
    """Slice a channel-major recording into (count, C, length) contiguous windows."""
    raw = np.asarray(raw)
    if raw.ndim == 1:
        raw = raw[None, :]
    if raw.ndim != 2:
        raise DataError(f"expected (channels, samples) recording, got shape {raw.shape}")
    if stride < 1:
        raise DomainError("stride must be >= 1")
    total = raw.shape[1]
    if total < length:
        raise DataError(f"recording of {total} samples is shorter than window {length}")
    count = (total - length) // stride + 1
    out = np.stack([raw[:, i * stride:i * stride + length] for i in range(count)])
    return out


@dataclass(frozen=True)
class SignalLayout:
    """How to interpret a directory of raw recordings when windowing them."""

    channels: int
    window_length: int
    stride: int
    class_count: int
    split: str = "train"


_MANIFEST_HEADER = ["path", "channels", "samples", "label"]


def load_signal_dataset(path, layout: SignalLayout) -> LabeledDataset:
    """Load `.bin` float32 recordings listed in a manifest and window them.

    ``path`` is the manifest file or a directory containing ``manifest.csv``.
    Each manifest record is ``path, channels, samples, label``; recordings are
    little-endian float32, channel-major.
    """
    root = Path(path)
    manifest = root / "manifest.csv" if root.is_dir() else root
    if not manifest.exists():
        raise DataError(f"manifest not found at {manifest}")
    rows = []
    with open(manifest, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip() == "path":
                continue
            if len(rec) != 4:
                raise DataError(f"{manifest}: malformed record {rec!r}")
            rows.append(rec)
    if not rows:
        raise DataError(f"{manifest}: no recordings listed")

    windows, labels = [], []
    for rec in rows:
        rel, channels, samples, label = rec[0].strip(), int(rec[1]), int(rec[2]), int(rec[3])
        if channels != layout.channels:
            raise DataError(f"{rel}: manifest declares {channels} channels, "
                            f"layout expects {layout.channels}")
        if label < 0 or label >= layout.class_count:
            raise DataError(f"{rel}: label {label} outside [0, {layout.class_count})")
        file = manifest.parent / rel
        if not file.exists():
            raise DataError(f"recording file missing: {file}")
        raw = np.fromfile(file, dtype="<f4")
        if raw.size != channels * samples:
            raise DataError(f"{rel}: expected {channels * samples} values, got {raw.size}")
        raw = raw.reshape(channels, samples)
        wins = window_signal(raw, layout.window_length, layout.stride)
        finite = np.isfinite(wins).reshape(len(wins), -1).all(axis=1)
        if not finite.all():
            bad = int(np.argmax(~finite))
            raise DataError(f"{rel}: non-finite values in window {bad}")
        windows.append(wins)
        labels.append(np.full(len(wins), label))

    inputs = np.concatenate(windows).astype(np.float32)
    labels = np.concatenate(labels)
    return LabeledDataset(inputs, labels, layout.class_count, layout.split,
                          tag=f"signals_{layout.split}")


def export_signal_dataset(dataset: LabeledDataset, out_dir) -> Path:
    """Write each sample as a float32 recording plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    inputs, labels = dataset.inputs, dataset.labels
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_MANIFEST_HEADER)
        for i in range(len(dataset)):
            sample = np.atleast_2d(inputs[i]).astype("<f4")
            name = f"rec_{i:05d}.bin"
            sample.tofile(out / name)
            writer.writerow([name, sample.shape[0], sample.shape[1], int(labels[i])])
    return manifest

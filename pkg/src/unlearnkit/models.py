"""Differentiable classifiers: reference architectures, training, and shared probability utilities.

Models are small CPU torch modules wrapped in a :class:`Classifier` that
tracks the architecture descriptor, class count, and a frozen flag. Frozen
classifiers (teachers) are never mutated by any operation in this package.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, asdict, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, DataError, DomainError, NumericalError

_ARCH_RE = re.compile(r"^(mlp|cnn1d|cnn2d)\((\d+(?:\s*,\s*\d+)*)\)$")

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def parse_arch(arch: str) -> tuple[str, tuple[int, ...]]:
    """Parse an architecture descriptor such as ``mlp(2,64,64)`` or ``cnn1d(2,1024)``."""
    m = _ARCH_RE.match(arch.replace(" ", ""))
    if m is None:
        raise ConfigurationError(
            f"unknown architecture descriptor {arch!r}; expected mlp(dims...), "
            "cnn1d(channels,length) or cnn2d(height,width,channels)"
        )
    kind = m.group(1)
    args = tuple(int(tok) for tok in m.group(2).split(","))
    if kind == "mlp" and len(args) < 1:
        raise ConfigurationError("mlp needs at least the input dimension, e.g. mlp(2,64)")
    if kind == "cnn1d" and len(args) != 2:
        raise ConfigurationError("cnn1d takes (channels, length), e.g. cnn1d(2,1024)")
    if kind == "cnn2d" and len(args) != 3:
        raise ConfigurationError("cnn2d takes (height, width, channels), e.g. cnn2d(32,32,3)")
    return kind, args


def input_shape_of(arch: str) -> tuple[int, ...]:
    """Per-sample input shape implied by an architecture descriptor."""
    kind, args = parse_arch(arch)
    if kind == "mlp":
        return (args[0],)
    if kind == "cnn1d":
        return args  # (channels, length)
    return args  # (height, width, channels)


class _Image2d(nn.Module):
    """Channels-last image stem: permutes H x W x C input to torch layout."""

    def forward(self, x):
        return x.permute(0, 3, 1, 2)


def _build_module(arch: str, class_count: int) -> nn.Module:
    kind, args = parse_arch(arch)
    if kind == "mlp":
        dims = [args[0], *args[1:]]
        layers: list[nn.Module] = []
        for a, b in zip(dims[:-1], dims[1:]):
            layers.append(nn.Linear(a, b))
            layers.append(nn.ReLU())
        layers.append(nn.Linear(dims[-1], class_count))
        return nn.Sequential(*layers)
    if kind == "cnn1d":
        channels, length = args
        if length % 16 != 0:
            raise ConfigurationError("cnn1d length must be divisible by 16")
        flat = 16 * (length // 16)
        return nn.Sequential(
            nn.Conv1d(channels, 8, kernel_size=9, padding=4),
            nn.ReLU(),
            nn.MaxPool1d(4),
            nn.Conv1d(8, 16, kernel_size=9, padding=4),
            nn.ReLU(),
            nn.MaxPool1d(4),
            nn.Flatten(),
            nn.Linear(flat, 64),
            nn.ReLU(),
            nn.Linear(64, class_count),
        )
    height, width, channels = args
    if height % 4 != 0 or width % 4 != 0:
        raise ConfigurationError("cnn2d height and width must be divisible by 4")
    flat = 16 * (height // 4) * (width // 4)
    return nn.Sequential(
        _Image2d(),
        nn.Conv2d(channels, 8, kernel_size=3, padding=1),
        nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Conv2d(8, 16, kernel_size=3, padding=1),
        nn.ReLU(),
        nn.MaxPool2d(2),
        nn.Flatten(),
        nn.Linear(flat, 64),
        nn.ReLU(),
        nn.Linear(64, class_count),
    )


class Classifier:
    """A K-class differentiable model plus the metadata the toolkit tracks.

    ``frozen`` classifiers act as immutable teachers: their parameters must be
    bit-identical before and after any operation. Use :meth:`snapshot` to get
    a frozen copy and :meth:`clone` for an editable one.
    """

    def __init__(self, module: nn.Module, arch: str, class_count: int, seed: int,
                 frozen: bool = False):
        self.module = module
        self.arch = arch
        self.class_count = class_count
        self.seed = seed
        self.frozen = frozen
        self.input_shape = input_shape_of(arch)
        self.meta: dict = {}
        if frozen:
            self._freeze()

    def _freeze(self):
        self.frozen = True
        self.module.eval()
        for p in self.module.parameters():
            p.requires_grad_(False)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.module.parameters()).dtype

    def to_tensor(self, batch: np.ndarray | torch.Tensor) -> torch.Tensor:
        if isinstance(batch, torch.Tensor):
            return batch.to(self.dtype)
        arr = np.ascontiguousarray(batch)
        if not arr.flags.writeable:
            arr = arr.copy()
        return torch.as_tensor(arr, dtype=self.dtype)

    def check_batch(self, batch) -> None:
        shape = tuple(batch.shape)
        if len(shape) != len(self.input_shape) + 1 or shape[1:] != self.input_shape:
            raise DataError(
                f"batch shape {shape} does not match {self.arch} input "
                f"(batch, {', '.join(map(str, self.input_shape))})"
            )

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        """Differentiable forward pass; expects a tensor already on model dtype."""
        return self.module(batch)

    def logits(self, batch: np.ndarray, chunk: int = 1024) -> np.ndarray:
        """Inference-mode logits for a numpy batch, shape (B, K)."""
        self.check_batch(batch)
        outs = []
        with torch.no_grad():
            for start in range(0, len(batch), chunk):
                t = self.to_tensor(batch[start:start + chunk])
                outs.append(self.module(t).numpy())
        return np.concatenate(outs, axis=0)

    def snapshot(self) -> "Classifier":
        """Frozen deep copy whose outputs match this model on any input."""
        return Classifier(_copy_module(self.module), self.arch, self.class_count,
                          self.seed, frozen=True)

    def clone(self) -> "Classifier":
        """Unfrozen deep copy, safe to train without touching the source."""
        return Classifier(_copy_module(self.module), self.arch, self.class_count,
                          self.seed, frozen=False)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.detach().numpy().copy() for name, p in self.module.state_dict().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        state = {name: torch.as_tensor(arr) for name, arr in arrays.items()}
        self.module.load_state_dict(state)

    def checksum(self) -> str:
        """SHA-256 over raw parameter bytes; detects any mutation."""
        h = hashlib.sha256()
        for name, p in sorted(self.module.state_dict().items()):
            h.update(name.encode())
            h.update(p.detach().numpy().tobytes())
        return h.hexdigest()


def _copy_module(module: nn.Module) -> nn.Module:
    import copy

    clone = copy.deepcopy(module)
    for p in clone.parameters():
        p.requires_grad_(True)
    return clone


def build_reference_model(arch: str, class_count: int, seed: int,
                          dtype: str = "float32") -> Classifier:
    """Build an unfrozen reference classifier; (arch, K, seed) fixes the init bits."""
    if class_count < 2:
        raise DomainError(f"class_count must be >= 2, got {class_count}")
    if dtype not in _DTYPES:
        raise ConfigurationError(f"dtype must be one of {sorted(_DTYPES)}")
    torch.manual_seed(seed)
    module = _build_module(arch, class_count).to(_DTYPES[dtype])
    return Classifier(module, arch, class_count, seed)


@dataclass(frozen=True)
class TrainConfig:
    """Supervised-training hyperparameters; the seed fixes init and batch order.

    ``epochs`` and ``learning_rate`` may be 0, making training a no-op (handy
    for identity checks on the finetune and gradient-ascent baselines).
    """

    epochs: int = 30
    learning_rate: float = 0.1
    batch_size: int = 32
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise DomainError("epochs must be >= 0")
        if self.learning_rate < 0:
            raise DomainError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise DomainError("weight_decay must be >= 0")

    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def _l2_penalty(module: nn.Module) -> torch.Tensor:
    return sum((p * p).sum() for p in module.parameters())


def train_supervised(model: Classifier, data, cfg: TrainConfig) -> Classifier:
    """Mini-batch SGD on cross-entropy plus ``weight_decay * ||w||^2``.

    Trains ``model`` in place and returns it. Per-epoch mean training losses
    are recorded in ``model.meta['train_loss_history']``.
    """
    if model.frozen:
        raise DomainError("cannot train a frozen classifier")
    if len(data) == 0:
        raise DataError("training dataset is empty")
    labels = data.labels
    if labels.min() < 0 or labels.max() >= model.class_count:
        bad = int(np.argmax((labels < 0) | (labels >= model.class_count)))
        raise DataError(
            f"label {int(labels[bad])} at index {bad} outside [0, {model.class_count})"
        )
    inputs = data.inputs
    model.check_batch(inputs)

    rng = np.random.default_rng(cfg.seed)
    history: list[float] = []
    model.module.train()
    for _ in range(cfg.epochs):
        order = rng.permutation(len(inputs))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = model.to_tensor(inputs[idx])
            yb = torch.as_tensor(labels[idx], dtype=torch.long)
            logits = model.module(xb)
            loss = F.cross_entropy(logits, yb)
            if cfg.weight_decay > 0:
                loss = loss + cfg.weight_decay * _l2_penalty(model.module)
            model.module.zero_grad()
            loss.backward()
            with torch.no_grad():
                for p in model.module.parameters():
                    p -= cfg.learning_rate * p.grad
            epoch_loss += float(loss.detach()) * len(idx)
        history.append(epoch_loss / len(inputs))
    model.module.eval()
    model.meta["train_loss_history"] = history
    model.meta["train_config_hash"] = cfg.hash()
    return model


def softmax_temperature(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature-scaled softmax along the last axis, computed in float64."""
    if temperature <= 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise DomainError("logits must be finite")
    z = z / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(model: Classifier, batch: np.ndarray) -> np.ndarray:
    """Argmax labels for a batch; ties resolve to the lowest class index."""
    logits = model.logits(batch)
    return np.argmax(logits, axis=1)


def input_gradient(model: Classifier, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of per-sample cross-entropy at (x, y) with respect to x.

    ``x`` is a batch (B, *input_shape); each row's gradient involves only its
    own loss term.
    """
    model.check_batch(x)
    xt = model.to_tensor(x).requires_grad_(True)
    yt = torch.as_tensor(np.asarray(y), dtype=torch.long)
    loss = F.cross_entropy(model.module(xt), yt, reduction="sum")
    (grad,) = torch.autograd.grad(loss, xt)
    grad = grad.numpy()
    if not np.all(np.isfinite(grad)):
        bad = int(np.argmax(~np.isfinite(grad).reshape(len(grad), -1).all(axis=1)))
        raise NumericalError(f"non-finite input gradient at sample index {bad}")
    return grad


def save_classifier(model: Classifier, path) -> None:
    """Checkpoint to a named-array container; round-trips bit-exactly."""
    manifest = {
        "arch": model.arch,
        "class_count": model.class_count,
        "seed": model.seed,
        "frozen": model.frozen,
        "dtype": str(model.dtype).replace("torch.", ""),
        "train_config_hash": model.meta.get("train_config_hash", ""),
    }
    arrays = {f"p::{name}": arr for name, arr in model.state_arrays().items()}
    np.savez(path, _manifest=np.array(json.dumps(manifest, sort_keys=True)), **arrays)


def load_classifier(path) -> Classifier:
    """Rebuild a checkpointed classifier, restoring parameters and frozen flag."""
    with np.load(path) as payload:
        manifest = json.loads(str(payload["_manifest"]))
        arrays = {key[3:]: payload[key] for key in payload.files if key.startswith("p::")}
    model = build_reference_model(manifest["arch"], manifest["class_count"],
                                  manifest["seed"], dtype=manifest["dtype"])
    model.load_state_arrays(arrays)
    model.meta["train_config_hash"] = manifest.get("train_config_hash", "")
    if manifest["frozen"]:
        model._freeze()
    return model

"""Boundary probing: L-inf projected gradient ascent and edit-instruction synthesis.

Phase 1 of the unlearning pipeline. A frozen teacher is probed on each
forget-class sample by ascending the cross-entropy loss inside an epsilon
ball; the teacher's own prediction at the probed point becomes the edit label.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DomainError, NumericalError, ProbingFailedError
from .models import Classifier, predict, softmax_temperature

log = logging.getLogger(__name__)

_NOISE_MODES = ("per_sample", "per_class")
_FALLBACKS = ("drop", "runner_up")


@dataclass(frozen=True)
class ProbeConfig:
    """Projected-gradient-ascent settings for boundary probing.

    ``epsilon`` is the L-inf radius, ``steps`` the ascent iteration count, and
    ``step_size`` the raw-gradient step length. ``noise_mode`` chooses one
    noise matrix per sample or one shared matrix per forget class.
    """

    epsilon: float
    steps: int = 50
    step_size: float = 1.0
    noise_mode: str = "per_sample"
    fallback: str = "drop"
    seed: int = 0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise DomainError("epsilon must be positive")
        if self.steps < 1:
            raise DomainError("steps must be >= 1")
        if self.step_size <= 0:
            raise DomainError("step_size must be positive")
        if self.noise_mode not in _NOISE_MODES:
            raise DomainError(f"noise_mode must be one of {_NOISE_MODES}")
        if self.fallback not in _FALLBACKS:
            raise DomainError(f"fallback must be one of {_FALLBACKS}")


@dataclass(frozen=True)
class EditInstruction:
    """A probed input paired with the label the teacher itself assigned there."""

    x_probe: np.ndarray
    y_edit: int
    y_orig: int


class EditSet:
    """Array-backed collection of edit instructions plus probing statistics."""

    def __init__(self, x_probe: np.ndarray, y_edit: np.ndarray, y_orig: np.ndarray,
                 flip_rate: float, class_stats: dict[int, tuple[int, int]]):
        self.x_probe = x_probe
        self.y_edit = np.asarray(y_edit, dtype=np.int64)
        self.y_orig = np.asarray(y_orig, dtype=np.int64)
        self.flip_rate = float(flip_rate)
        self.class_stats = class_stats

    def __len__(self) -> int:
        return len(self.y_edit)

    @property
    def instructions(self) -> list[EditInstruction]:
        return [EditInstruction(self.x_probe[i], int(self.y_edit[i]), int(self.y_orig[i]))
                for i in range(len(self))]


def project_linf(delta, epsilon: float):
    """Clip every entry to [-epsilon, epsilon]; idempotent by construction."""
    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    if isinstance(delta, torch.Tensor):
        return delta.clamp(-epsilon, epsilon)
    return np.clip(delta, -epsilon, epsilon)


def _ascend(teacher: Classifier, x: torch.Tensor, y: torch.Tensor,
            delta: torch.Tensor, cfg: ProbeConfig, reduction: str,
            step_callback=None) -> torch.Tensor:
    for t in range(cfg.steps):
        d = delta.clone().requires_grad_(True)
        loss = F.cross_entropy(teacher.forward(x + d), y, reduction=reduction)
        if not torch.isfinite(loss):
            raise NumericalError(f"non-finite probing loss at ascent step {t}")
        (grad,) = torch.autograd.grad(loss, d)
        delta = project_linf(delta + cfg.step_size * grad, cfg.epsilon)
        if step_callback is not None:
            step_callback(t, delta.numpy())
    return delta


def pga_probe(teacher: Classifier, X: np.ndarray, Y: np.ndarray, cfg: ProbeConfig,
              step_callback=None) -> np.ndarray:
    """Learn boundary-probing noise for a batch under a frozen teacher.

    Noise is drawn from a standard normal, clipped into the epsilon ball, then
    ascended for ``cfg.steps`` raw-gradient steps with reprojection after each.
    Returns one noise row per input regardless of ``noise_mode``; in
    ``per_class`` mode rows of the same class share one matrix.
    """
    if not teacher.frozen:
        raise DomainError("probing requires a frozen teacher")
    teacher.check_batch(X)
    x = teacher.to_tensor(X)
    y = torch.as_tensor(np.asarray(Y), dtype=torch.long)
    gen = torch.Generator().manual_seed(cfg.seed)

    if cfg.noise_mode == "per_sample":
        delta = torch.randn(x.shape, generator=gen, dtype=x.dtype)
        delta = project_linf(delta, cfg.epsilon)
        delta = _ascend(teacher, x, y, delta, cfg, reduction="sum",
                        step_callback=step_callback)
        return delta.numpy()

    delta_full = torch.empty_like(x)
    for k in sorted(set(int(v) for v in y)):
        rows = torch.nonzero(y == k, as_tuple=True)[0]
        d = torch.randn((1, *x.shape[1:]), generator=gen, dtype=x.dtype)
        d = project_linf(d, cfg.epsilon)
        d = _ascend(teacher, x[rows], y[rows], d, cfg, reduction="mean",
                    step_callback=step_callback)
        delta_full[rows] = d
    return delta_full.numpy()


def synthesize_edit_instructions(teacher: Classifier, forget_data,
                                 cfg: ProbeConfig) -> EditSet:
    """Probe every forget sample once and pair it with the teacher's new label.

    Samples whose prediction did not flip are dropped (``fallback='drop'``) or
    relabeled with the strongest non-original class (``fallback='runner_up'``).
    """
    if len(forget_data) == 0:
        raise DomainError("forget set is empty")
    X = forget_data.inputs
    Y = forget_data.labels
    before = teacher.checksum()

    delta = pga_probe(teacher, X, Y, cfg)
    x_probe = (X + delta.astype(X.dtype, copy=False)).astype(X.dtype, copy=False)
    y_pred = predict(teacher, x_probe)
    flipped = y_pred != Y
    flip_rate = float(flipped.mean())
    class_stats = {int(k): (int((Y == k).sum()), int(flipped[Y == k].sum()))
                   for k in np.unique(Y)}

    if cfg.fallback == "drop":
        if not flipped.any():
            raise ProbingFailedError(
                "probing flipped no predictions; enlarge epsilon/steps or use "
                "fallback='runner_up'")
        if not flipped.all():
            log.warning("probing dropped %d/%d unflipped samples (flip rate %.3f)",
                        int((~flipped).sum()), len(Y), flip_rate)
        keep = np.flatnonzero(flipped)
        y_edit = y_pred[keep]
        x_kept, y_orig = x_probe[keep], Y[keep]
    else:
        probs = softmax_temperature(teacher.logits(x_probe), 1.0)
        probs[np.arange(len(Y)), Y] = -np.inf
        y_edit = np.where(flipped, y_pred, np.argmax(probs, axis=1))
        x_kept, y_orig = x_probe, Y.copy()

    assert teacher.checksum() == before, "probing mutated the frozen teacher"
    return EditSet(x_kept, y_edit, y_orig, flip_rate, class_stats)


def save_edit_set(edit_set: EditSet, path) -> None:
    """Persist instructions as an array container plus a text audit summary."""
    np.savez(path, x_probe=edit_set.x_probe, y_edit=edit_set.y_edit,
             y_orig=edit_set.y_orig)
    summary = {
        "instructions": len(edit_set),
        "flip_rate": edit_set.flip_rate,
        "per_class": {str(k): {"samples": n, "flipped": f}
                      for k, (n, f) in sorted(edit_set.class_stats.items())},
    }
    summary_path = str(path).removesuffix(".npz") + "_summary.txt"
    with open(summary_path, "w") as fh:
        for key, value in summary.items():
            fh.write(f"{key}={json.dumps(value)}\n")


def load_edit_set(path) -> EditSet:
    with np.load(path) as payload:
        x_probe = payload["x_probe"]
        y_edit = payload["y_edit"]
        y_orig = payload["y_orig"]
    flips = int((y_edit != y_orig).sum())
    return EditSet(x_probe, y_edit, y_orig, flips / max(len(y_orig), 1), {})

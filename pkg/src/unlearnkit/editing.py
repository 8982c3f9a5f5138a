"""Push-pull knowledge editing: the second phase of probe-then-edit unlearning.

The push branch runs cross-entropy steps on the synthesized edit instructions,
collapsing the forget class's decision region. The pull branch distills the
frozen teacher's masked, temperature-softened distribution back into the
student on the original forget inputs, anchoring retained-class behavior.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DomainError, NumericalError
from .models import Classifier, softmax_temperature
from .probing import EditSet, ProbeConfig, synthesize_edit_instructions

_SCHEDULES = ("alternate", "push_only", "pull_only", "push_then_pull", "pull_then_push")
_LOG_FLOOR = math.log(1e-12)


@dataclass(frozen=True)
class EditConfig:
    """Push-pull editing hyperparameters.

    ``schedule`` selects the full alternating loop or one of the ablation
    arms. ``kl_direction`` defaults to the trainable form KL(target || student);
    ``student_first`` is an experimental variant kept for comparison only.
    """

    epochs: int = 20
    eta_push: float = 0.1
    eta_pull: float = 0.01
    temperature: float = 4.0
    schedule: str = "alternate"
    batch_size: int = 32
    seed: int = 0
    record_checkpoints: bool = True
    kl_direction: str = "target_first"

    def __post_init__(self):
        if self.epochs < 1:
            raise DomainError("epochs must be >= 1")
        if self.eta_push <= 0 or self.eta_pull <= 0:
            raise DomainError("learning rates must be positive")
        if self.temperature <= 0:
            raise DomainError("temperature must be positive")
        if self.schedule not in _SCHEDULES:
            raise DomainError(f"schedule must be one of {_SCHEDULES}")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.kl_direction not in ("target_first", "student_first"):
            raise DomainError("kl_direction must be 'target_first' or 'student_first'")


@dataclass(frozen=True)
class StepRecord:
    epoch: int
    branch: str
    loss: float


class EditTrace:
    """Per-step loss records, optional per-epoch parameter snapshots, final checksum."""

    def __init__(self):
        self.records: list[StepRecord] = []
        self.snapshots: list[tuple[int, dict[str, np.ndarray]]] = []
        self.final_checksum: str = ""

    def add(self, epoch: int, branch: str, loss: float) -> None:
        self.records.append(StepRecord(epoch, branch, float(loss)))

    def epochs(self) -> list[int]:
        return sorted({r.epoch for r in self.records})


def _sgd_step(model: Classifier, loss: torch.Tensor, lr: float) -> None:
    model.module.zero_grad()
    loss.backward()
    with torch.no_grad():
        for p in model.module.parameters():
            if p.grad is not None:
                p -= lr * p.grad


def push_step(model: Classifier, x_probe: np.ndarray, y_edit: np.ndarray,
              eta_push: float) -> float:
    """One SGD step on mean cross-entropy over edit instructions; returns the pre-step loss."""
    if len(x_probe) == 0:
        raise DomainError("push batch is empty")
    if model.frozen:
        raise DomainError("cannot push-edit a frozen classifier")
    xb = model.to_tensor(x_probe)
    yb = torch.as_tensor(np.asarray(y_edit), dtype=torch.long)
    loss = F.cross_entropy(model.module(xb), yb)
    _sgd_step(model, loss, eta_push)
    return float(loss.detach())


def masked_soft_target(logits: np.ndarray, forget_classes, temperature: float) -> np.ndarray:
    """Temperature-soften logits, zero the forget classes, renormalize the rest.

    Rows whose retained mass underflows fall back to uniform over retained
    classes. Retained-class probability ratios match the unmasked softmax.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    K = z.shape[-1]
    forget = [forget_classes] if np.isscalar(forget_classes) else sorted(set(forget_classes))
    forget = [int(u) for u in forget]
    if not forget or len(forget) >= K:
        raise DomainError("forget classes must be a nonempty strict subset of [0, K)")
    if any(u < 0 or u >= K for u in forget):
        raise DomainError(f"forget class outside [0, {K})")

    p = softmax_temperature(z, temperature)
    p[:, forget] = 0.0
    mass = p.sum(axis=1, keepdims=True)
    degenerate = mass[:, 0] < 1e-12
    if degenerate.any():
        retained = np.setdiff1d(np.arange(K), forget)
        p[degenerate] = 0.0
        p[np.ix_(degenerate, retained)] = 1.0 / len(retained)
        mass = p.sum(axis=1, keepdims=True)
    p = p / mass
    return p[0] if single else p


def build_pull_target(teacher: Classifier, x: np.ndarray, forget_classes,
                      temperature: float) -> np.ndarray:
    """Masked softened teacher distribution at x; accepts one input or a batch."""
    if not teacher.frozen:
        raise DomainError("pull targets come from a frozen teacher")
    x = np.asarray(x)
    single = x.shape == teacher.input_shape
    batch = x[None] if single else x
    target = masked_soft_target(teacher.logits(batch), forget_classes, temperature)
    return target[0] if single else target


def _pull_loss(student_logits: torch.Tensor, target: torch.Tensor,
               temperature: float, direction: str) -> torch.Tensor:
    """Per-sample temperature-compensated KL between target and softened student."""
    log_q = F.log_softmax(student_logits / temperature, dim=1)
    log_q = log_q.clamp(min=_LOG_FLOOR)
    if direction == "target_first":
        safe_log_p = torch.log(target.clamp(min=1e-30))
        terms = torch.where(target > 0, target * (safe_log_p - log_q),
                            torch.zeros_like(target))
    else:
        q = log_q.exp()
        terms = q * (log_q - torch.log(target.clamp(min=1e-12)))
    return temperature * temperature * terms.sum(dim=1)


def pull_step(model: Classifier, x: np.ndarray, teacher: Classifier,
              forget_classes, cfg: EditConfig) -> float:
    """One distillation SGD step toward the masked teacher target; returns the pre-step loss."""
    if len(x) == 0:
        raise DomainError("pull batch is empty")
    if model.frozen:
        raise DomainError("cannot pull-edit a frozen classifier")
    target_np = build_pull_target(teacher, x, forget_classes, cfg.temperature)
    xb = model.to_tensor(x)
    target = torch.as_tensor(target_np, dtype=model.dtype)
    per_sample = _pull_loss(model.module(xb), target, cfg.temperature, cfg.kl_direction)
    finite = torch.isfinite(per_sample)
    if not bool(finite.all()):
        bad = int(torch.nonzero(~finite)[0])
        raise NumericalError(f"non-finite pull loss at sample index {bad}")
    loss = per_sample.mean()
    _sgd_step(model, loss, cfg.eta_pull)
    return float(loss.detach())


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[s:s + batch_size] for s in range(0, n, batch_size)]


def _epoch_branches(schedule: str, epochs: int) -> list[str]:
    if schedule == "alternate":
        return ["alternate"] * epochs
    if schedule == "push_only":
        return ["push"] * epochs
    if schedule == "pull_only":
        return ["pull"] * epochs
    if schedule == "push_then_pull":
        return ["push"] * epochs + ["pull"] * epochs
    return ["pull"] * epochs + ["push"] * epochs


def probe_edit_unlearn(original: Classifier, forget_data, probe_cfg: ProbeConfig,
                       edit_cfg: EditConfig) -> tuple[Classifier, EditTrace]:
    """Full retain-free unlearning run: probe once, then push-pull edit.

    Inputs are exactly the original model and the forget split; no retain data
    crosses this boundary. Returns the edited student and the step trace,
    leaving ``original`` untouched.
    """
    teacher = original.snapshot()
    student = original.clone()
    teacher_sum = teacher.checksum()

    edit_set = synthesize_edit_instructions(teacher, forget_data, probe_cfg)
    forget_classes = tuple(sorted(edit_set.class_stats))
    x_forget = forget_data.inputs

    rng = np.random.default_rng(edit_cfg.seed)
    trace = EditTrace()
    if edit_cfg.record_checkpoints:
        trace.snapshots.append((0, student.state_arrays()))

    for epoch, branch in enumerate(_epoch_branches(edit_cfg.schedule, edit_cfg.epochs),
                                   start=1):
        push_batches = _batches(len(edit_set), edit_cfg.batch_size, rng)
        pull_batches = _batches(len(x_forget), edit_cfg.batch_size, rng)
        if branch == "alternate":
            pairs = max(len(push_batches), len(pull_batches))
            for i in range(pairs):
                pb = push_batches[i % len(push_batches)]
                loss = push_step(student, edit_set.x_probe[pb], edit_set.y_edit[pb],
                                 edit_cfg.eta_push)
                trace.add(epoch, "push", loss)
                qb = pull_batches[i % len(pull_batches)]
                loss = pull_step(student, x_forget[qb], teacher, forget_classes, edit_cfg)
                trace.add(epoch, "pull", loss)
        elif branch == "push":
            for pb in push_batches:
                loss = push_step(student, edit_set.x_probe[pb], edit_set.y_edit[pb],
                                 edit_cfg.eta_push)
                trace.add(epoch, "push", loss)
        else:
            for qb in pull_batches:
                loss = pull_step(student, x_forget[qb], teacher, forget_classes, edit_cfg)
                trace.add(epoch, "pull", loss)
        if edit_cfg.record_checkpoints:
            trace.snapshots.append((epoch, student.state_arrays()))

    trace.final_checksum = student.checksum()
    assert teacher.checksum() == teacher_sum, "editing mutated the frozen teacher"
    return student, trace


def write_trace(trace: EditTrace, path, epoch_metrics: dict[int, tuple[float, float]] | None = None) -> None:
    """Write one delimited row per step; accuracy columns fill the last row of each epoch."""
    last_of_epoch: dict[int, int] = {}
    for i, rec in enumerate(trace.records):
        last_of_epoch[rec.epoch] = i
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "branch", "loss", "forget_acc", "retain_acc"])
        for i, rec in enumerate(trace.records):
            facc, racc = "", ""
            if epoch_metrics and last_of_epoch[rec.epoch] == i and rec.epoch in epoch_metrics:
                facc, racc = (f"{v:.4f}" for v in epoch_metrics[rec.epoch])
            writer.writerow([rec.epoch, rec.branch, f"{rec.loss:.6f}", facc, racc])


def read_trace_epochs(path) -> list[tuple[int, float, float]]:
    """Read (epoch, forget_acc, retain_acc) rows from an exported trace."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            if rec["forget_acc"]:
                rows.append((int(rec["epoch"]), float(rec["forget_acc"]),
                             float(rec["retain_acc"])))
    return rows

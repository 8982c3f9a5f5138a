"""Unlearning metrics: split accuracies, H-Mean, membership inference, and
the output-consistency checks the class-removal definition asks for."""
from __future__ import annotations

import csv
import logging
import math
import statistics
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .data import ForgetPartition, LabeledDataset
from .errors import DomainError
from .models import Classifier, predict, softmax_temperature

log = logging.getLogger(__name__)


def accuracy(model: Classifier, dataset: LabeledDataset) -> float:
    """Percentage of argmax predictions matching the labels."""
    if len(dataset) == 0:
        raise DomainError("cannot score an empty dataset")
    return 100.0 * float(np.mean(predict(model, dataset.inputs) == dataset.labels))


class PartitionAccuracies(NamedTuple):
    acc_f: float
    acc_r: float
    acc_ft: float
    acc_rt: float


def evaluate_partition(model: Classifier, partition: ForgetPartition) -> PartitionAccuracies:
    """Accuracy on each of the four forget/retain splits."""
    parts = {"forget train": partition.d_f, "retain train": partition.d_r,
             "forget test": partition.d_ft, "retain test": partition.d_rt}
    for name, part in parts.items():
        if part is None or len(part) == 0:
            raise DomainError(f"partition has an empty {name} split")
    return PartitionAccuracies(*(accuracy(model, p) for p in parts.values()))


def h_mean(acc_rt: float, drop_ft: float) -> float:
    """Harmonic mean of retained-test accuracy and the forget-test accuracy drop."""
    for name, v in (("acc_rt", acc_rt), ("drop_ft", drop_ft)):
        if not 0.0 <= v <= 100.0:
            raise DomainError(f"{name} must lie in [0, 100], got {v}")
    if acc_rt + drop_ft == 0.0:
        return 0.0
    return 2.0 * acc_rt * drop_ft / (acc_rt + drop_ft)


@dataclass(frozen=True)
class MIAConfig:
    """Loss-threshold attack settings; calibration can be subsampled for speed."""

    max_calibration: int | None = None
    seed: int = 0


@dataclass(frozen=True)
class ThresholdAttackResult:
    score: float
    threshold: float
    balanced_accuracy: float
    degenerate: bool


def threshold_attack(member_losses: np.ndarray, nonmember_losses: np.ndarray,
                     target_losses: np.ndarray) -> ThresholdAttackResult:
    """Pick the loss threshold with the best balanced member/non-member accuracy,
    then report what fraction of the targets falls on the member side.

    Depends only on the ordering of losses, so any strictly increasing
    transform of the losses yields the identical score.
    """
    member = np.asarray(member_losses, dtype=np.float64)
    nonmember = np.asarray(nonmember_losses, dtype=np.float64)
    target = np.asarray(target_losses, dtype=np.float64)
    combined = np.unique(np.concatenate([member, nonmember]))
    if len(combined) == 1:
        return ThresholdAttackResult(50.0, float(combined[0]), 0.5, True)

    candidates = np.concatenate([
        [combined[0] - 1.0],
        (combined[:-1] + combined[1:]) / 2.0,
        [combined[-1] + 1.0],
    ])
    best_t, best_bacc = candidates[0], -1.0
    for t in candidates:
        bacc = 0.5 * (float(np.mean(member <= t)) + float(np.mean(nonmember > t)))
        if bacc > best_bacc + 1e-12:
            best_t, best_bacc = t, bacc
    score = 100.0 * float(np.mean(target <= best_t))
    return ThresholdAttackResult(score, float(best_t), best_bacc, False)


def _sample_losses(model: Classifier, dataset: LabeledDataset) -> np.ndarray:
    probs = softmax_temperature(model.logits(dataset.inputs), 1.0)
    picked = probs[np.arange(len(dataset)), dataset.labels]
    return -np.log(np.clip(picked, 1e-30, None))


def mia_score(model: Classifier, partition: ForgetPartition,
              cfg: MIAConfig | None = None, return_details: bool = False):
    """Membership-inference success rate on the forget split, in percent.

    A loss threshold is calibrated on retain train (members) versus retain
    test (non-members) by balanced accuracy; the score is the share of forget
    samples classified as members. Lower means better forgetting.
    """
    cfg = cfg or MIAConfig()
    members, nonmembers = partition.d_r, partition.d_rt
    if len(members) == 0 or len(nonmembers) == 0 or len(partition.d_f) == 0:
        raise DomainError("MIA needs nonempty retain train/test and forget splits")
    member_losses = _sample_losses(model, members)
    nonmember_losses = _sample_losses(model, nonmembers)
    if cfg.max_calibration is not None:
        rng = np.random.default_rng(cfg.seed)
        if len(member_losses) > cfg.max_calibration:
            member_losses = member_losses[rng.choice(len(member_losses), cfg.max_calibration,
                                                     replace=False)]
        if len(nonmember_losses) > cfg.max_calibration:
            nonmember_losses = nonmember_losses[rng.choice(len(nonmember_losses),
                                                           cfg.max_calibration, replace=False)]
    target_losses = _sample_losses(model, partition.d_f)
    result = threshold_attack(member_losses, nonmember_losses, target_losses)
    if result.degenerate:
        log.warning("MIA calibration degenerate (all losses equal); reporting 50")
    return result if return_details else result.score


def retain_kl_consistency(original: Classifier, unlearned: Classifier,
                          retain_eval: LabeledDataset) -> float:
    """Mean KL(original || unlearned) over the evaluation inputs, in nats."""
    if original.class_count != unlearned.class_count:
        raise DomainError("models disagree on class count")
    inputs = retain_eval.inputs
    p = softmax_temperature(original.logits(inputs), 1.0)
    q = softmax_temperature(unlearned.logits(inputs), 1.0)
    terms = np.where(p > 0, p * (np.log(np.clip(p, 1e-30, None))
                                 - np.log(np.clip(q, 1e-30, None))), 0.0)
    return float(np.mean(terms.sum(axis=1)))


def forget_confidence_uniformity(model: Classifier, forget_data: LabeledDataset,
                                 forget_classes) -> float:
    """|mean max retained-class probability - uniform level| on the forget split."""
    if len(forget_data) == 0:
        raise DomainError("forget set is empty")
    forget = sorted(set(int(c) for c in forget_classes))
    K = model.class_count
    retained = [k for k in range(K) if k not in forget]
    if not retained:
        raise DomainError("no retained classes")
    probs = softmax_temperature(model.logits(forget_data.inputs), 1.0)
    probs[:, forget] = 0.0
    mass = probs.sum(axis=1, keepdims=True)
    uniform = 1.0 / len(retained)
    renorm = np.where(mass > 0, probs / np.clip(mass, 1e-30, None), 0.0)
    renorm[mass[:, 0] <= 0] = uniform
    mean_conf = float(np.mean(renorm.max(axis=1)))
    return abs(mean_conf - uniform)


@dataclass(frozen=True)
class EvaluationReport:
    """All benchmark metrics for one (method, seed) run."""

    method: str
    seed: int
    config_hash: str
    acc_f: float
    acc_r: float
    acc_ft: float
    acc_rt: float
    drop_ft: float
    h_mean: float
    mia: float
    retain_kl: float
    forget_conf_gap: float
    uses_retain: bool = False
    mia_degenerate: bool = False


def build_report(original: Classifier, unlearned: Classifier,
                 partition: ForgetPartition, method: str, seed: int,
                 config_hash: str, uses_retain: bool = False,
                 mia_cfg: MIAConfig | None = None,
                 original_acc_ft: float | None = None) -> EvaluationReport:
    """Evaluate one unlearned model against the original on a partition."""
    accs = evaluate_partition(unlearned, partition)
    if original_acc_ft is None:
        original_acc_ft = accuracy(original, partition.d_ft)
    drop_ft = max(0.0, original_acc_ft - accs.acc_ft)
    mia = mia_score(unlearned, partition, mia_cfg, return_details=True)
    return EvaluationReport(
        method=method,
        seed=seed,
        config_hash=config_hash,
        acc_f=accs.acc_f,
        acc_r=accs.acc_r,
        acc_ft=accs.acc_ft,
        acc_rt=accs.acc_rt,
        drop_ft=drop_ft,
        h_mean=h_mean(accs.acc_rt, drop_ft),
        mia=mia.score,
        retain_kl=retain_kl_consistency(original, unlearned, partition.d_rt),
        forget_conf_gap=forget_confidence_uniformity(unlearned, partition.d_f,
                                                     partition.forget_classes),
        uses_retain=uses_retain,
        mia_degenerate=mia.degenerate,
    )


def write_report(report: EvaluationReport, path) -> None:
    """Flat key=value text, one report per (method, seed)."""
    with open(path, "w") as fh:
        for f in fields(EvaluationReport):
            value = getattr(report, f.name)
            fh.write(f"{f.name}={value!r}\n")


def read_report(path) -> EvaluationReport:
    raw: dict = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            raw[key] = value
    kwargs = {}
    for f in fields(EvaluationReport):
        text = raw[f.name]
        if f.type in ("float", float):
            kwargs[f.name] = float(text)
        elif f.type in ("int", int):
            kwargs[f.name] = int(text)
        elif f.type in ("bool", bool):
            kwargs[f.name] = text == "True"
        else:
            kwargs[f.name] = text.strip("'\"")
    return EvaluationReport(**kwargs)


AGGREGATE_METRICS = ("acc_f", "acc_r", "acc_ft", "acc_rt", "h_mean", "mia")


def aggregate_reports(reports: list[EvaluationReport]) -> list[dict]:
    """Per-method mean and std rows over repeats, in first-seen method order."""
    by_method: dict[str, list[EvaluationReport]] = {}
    for rep in reports:
        by_method.setdefault(rep.method, []).append(rep)
    rows = []
    for method, reps in by_method.items():
        row: dict = {"method": method, "repeats": len(reps),
                     "uses_retain": any(r.uses_retain for r in reps)}
        for metric in AGGREGATE_METRICS:
            values = [getattr(r, metric) for r in reps]
            row[metric] = statistics.fmean(values)
            row[f"{metric}_std"] = statistics.stdev(values) if len(values) >= 2 else None
        rows.append(row)
    return rows


def write_aggregate(rows: list[dict], path) -> None:
    """Delimited method-by-metric table; std columns blank under two repeats."""
    header = ["method", "repeats", "uses_retain"]
    for metric in AGGREGATE_METRICS:
        header += [metric, f"{metric}_std"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            out = [row["method"], row["repeats"], str(row["uses_retain"]).lower()]
            for metric in AGGREGATE_METRICS:
                out.append(f"{row[metric]:.4f}")
                std = row[f"{metric}_std"]
                out.append("" if std is None else f"{std:.4f}")
            writer.writerow(out)

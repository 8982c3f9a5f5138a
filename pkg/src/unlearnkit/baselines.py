"""Reference unlearning baselines: retrain oracle, finetune, random label, gradient ascent."""
from __future__ import annotations

import logging

import numpy as np
import torch
import torch.nn.functional as F

from .data import LabeledDataset
from .errors import ContractViolationError, DomainError
from .models import Classifier, TrainConfig, build_reference_model, train_supervised

log = logging.getLogger(__name__)


def retrain(arch: str, retain_data: LabeledDataset, cfg: TrainConfig,
            forget_classes=None) -> Classifier:
    """Gold-standard oracle: a fresh model trained on the retain split only."""
    if forget_classes is not None:
        forget = set(int(c) for c in forget_classes)
        labels = retain_data.labels
        if any(int(y) in forget for y in np.unique(labels)):
            raise ContractViolationError(
                f"retrain received samples of forget classes {sorted(forget)}")
    model = build_reference_model(arch, retain_data.class_count, cfg.seed)
    return train_supervised(model, retain_data, cfg)


def finetune(model: Classifier, retain_data: LabeledDataset, cfg: TrainConfig,
             forget_classes=None) -> Classifier:
    """Continue supervised training on the retain split; uses retain data by design."""
    if forget_classes is not None:
        forget = set(int(c) for c in forget_classes)
        if any(int(y) in forget for y in np.unique(retain_data.labels)):
            raise ContractViolationError(
                f"finetune received samples of forget classes {sorted(forget)}")
    student = model.clone()
    if cfg.epochs == 0:
        return student
    return train_supervised(student, retain_data, cfg)


def random_label_unlearn(model: Classifier, forget_data: LabeledDataset,
                         cfg: TrainConfig, seed: int,
                         forget_classes=None) -> Classifier:
    """Fine-tune on the forget inputs relabeled uniformly over retained classes."""
    K = model.class_count
    labels = forget_data.labels
    forget = sorted(set(int(c) for c in forget_classes)) if forget_classes is not None \
        else sorted(int(c) for c in np.unique(labels))
    retained = [k for k in range(K) if k not in forget]
    if not retained:
        raise DomainError("no retained classes left to relabel onto")
    rng = np.random.default_rng(seed)
    new_labels = rng.choice(retained, size=len(labels))
    relabeled = LabeledDataset(forget_data.inputs, new_labels, K, forget_data.split,
                               tag=forget_data.tag)
    return train_supervised(model.clone(), relabeled, cfg)


def gradient_ascent_unlearn(model: Classifier, forget_data: LabeledDataset,
                            cfg: TrainConfig, divergence_cap: float = 50.0) -> Classifier:
    """SGD on the negated cross-entropy over the forget split.

    Per-epoch mean forget loss lands in ``meta['forget_loss_history']``; the
    run stops early once that loss passes ``divergence_cap`` (collapse is the
    expected endpoint of unbounded ascent) and sets ``meta['diverged']``.
    """
    if len(forget_data) == 0:
        raise DomainError("forget set is empty")
    student = model.clone()
    inputs, labels = forget_data.inputs, forget_data.labels
    rng = np.random.default_rng(cfg.seed)
    history: list[float] = []
    diverged = False
    student.module.train()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(inputs))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = student.to_tensor(inputs[idx])
            yb = torch.as_tensor(labels[idx], dtype=torch.long)
            loss = F.cross_entropy(student.module(xb), yb)
            epoch_loss += float(loss.detach()) * len(idx)
            ascent = -loss
            student.module.zero_grad()
            ascent.backward()
            with torch.no_grad():
                for p in student.module.parameters():
                    p -= cfg.learning_rate * p.grad
        history.append(epoch_loss / len(inputs))
        if history[-1] > divergence_cap:
            diverged = True
            log.warning("gradient ascent stopped at epoch %d: forget loss %.2f "
                        "exceeded cap %.2f", epoch + 1, history[-1], divergence_cap)
            break
    student.module.eval()
    student.meta["forget_loss_history"] = history
    student.meta["diverged"] = diverged
    return student

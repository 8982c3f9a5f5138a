"""Retain-free class-level unlearning toolkit.

Probes a frozen model's decision boundary on the forget classes, synthesizes
self-consistent edit instructions, and edits the model with alternating
push (cross-entropy on probed points) and pull (masked temperature-scaled
distillation) steps. Ships with retrain/finetune/random-label/gradient-ascent
baselines, a metric suite, and a config-driven benchmark CLI.
"""

__version__ = "0.1.0"

from .baselines import (finetune, gradient_ascent_unlearn, random_label_unlearn,
                        retrain)
from .data import (DataAccessLog, ForgetPartition, LabeledDataset, SignalLayout,
                   export_signal_dataset, generate_blobs, generate_synthetic_signals,
                   load_signal_dataset, partition_by_class, record_data_access,
                   window_signal)
from .editing import (EditConfig, EditTrace, build_pull_target, masked_soft_target,
                      probe_edit_unlearn, pull_step, push_step, write_trace)
from .errors import (ComparisonError, ConfigurationError, ContractViolationError,
                     DataError, DomainError, NumericalError, ProbingFailedError,
                     UnlearnkitError)
from .evaluation import (EvaluationReport, MIAConfig, accuracy, build_report,
                         evaluate_partition, forget_confidence_uniformity, h_mean,
                         mia_score, retain_kl_consistency, threshold_attack)
from .models import (Classifier, TrainConfig, build_reference_model, input_gradient,
                     load_classifier, predict, save_classifier, softmax_temperature,
                     train_supervised)
from .probing import (EditInstruction, EditSet, ProbeConfig, pga_probe, project_linf,
                      save_edit_set, synthesize_edit_instructions)

__all__ = [name for name in dir() if not name.startswith("_")]

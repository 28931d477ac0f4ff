"""Desk-scale transformer encoder classifiers trained with teacher-student
knowledge distillation, on a from-scratch float64 autodiff core."""

from .ablation import AblationPlan, AblationReport, ArchSpec, load_external_predictions, run_arm, run_plan
from .data import (
    DataSpec,
    Dataset,
    Example,
    TsvSchema,
    Vocab,
    batch_iter,
    build_datasets,
    build_vocab,
    encode_example,
    load_tsv,
    normalize_text,
    synth_task,
    with_label_noise,
)
from .distill import (
    DistillConfig,
    SoftLabelStore,
    combined_loss,
    distill_loss,
    feature_distill_loss,
    generate_soft_labels,
    one_hot,
    soften,
    task_loss,
)
from .metrics import ConfusionMatrix, MetricsReport, accuracy, compute_report, confusion, f1, macro_f1, precision_recall
from .model import (
    EncoderModel,
    ModelConfig,
    encode,
    load_checkpoint,
    parameter_count,
    positional_encoding,
    save_checkpoint,
    scaled_dot_attention,
)
from .tensor import Tensor, backward, finite_diff_check, no_grad, parameter
from .train import AdamW, TrainConfig, TrainReport, evaluate, pretrain_mlm, train_classifier, train_student_distilled

__version__ = "0.1.0"

__all__ = [
    "AblationPlan",
    "AblationReport",
    "AdamW",
    "ArchSpec",
    "ConfusionMatrix",
    "DataSpec",
    "Dataset",
    "DistillConfig",
    "EncoderModel",
    "Example",
    "MetricsReport",
    "ModelConfig",
    "SoftLabelStore",
    "Tensor",
    "TrainConfig",
    "TrainReport",
    "TsvSchema",
    "Vocab",
    "accuracy",
    "backward",
    "batch_iter",
    "build_datasets",
    "build_vocab",
    "combined_loss",
    "compute_report",
    "confusion",
    "distill_loss",
    "encode",
    "encode_example",
    "evaluate",
    "f1",
    "feature_distill_loss",
    "finite_diff_check",
    "generate_soft_labels",
    "load_checkpoint",
    "load_external_predictions",
    "load_tsv",
    "macro_f1",
    "no_grad",
    "normalize_text",
    "one_hot",
    "parameter",
    "parameter_count",
    "positional_encoding",
    "precision_recall",
    "pretrain_mlm",
    "run_arm",
    "run_plan",
    "save_checkpoint",
    "scaled_dot_attention",
    "soften",
    "synth_task",
    "task_loss",
    "train_classifier",
    "train_student_distilled",
    "with_label_noise",
]

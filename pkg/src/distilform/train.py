"""Optimization loops: teacher/plain classifier training, distilled student
training, masked-token pretraining, and evaluation.

Determinism contract: given (seed, config, data) every batch loss and the
final parameter bits are reproducible.  All run-internal randomness (epoch
shuffles, mask sampling) derives from the config seed through
``derived_seed``; wall-clock seconds are the only non-deterministic report
field.  F1 columns everywhere carry macro-averaged F1.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import CLS_ID, Dataset, MASK_ID, batch_iter
from .distill import (
    DistillConfig,
    FEATURE_MODE,
    SoftLabelStore,
    combined_loss,
    distill_loss,
    feature_distill_loss,
    one_hot,
    soften,
    task_loss,
)
from .errors import ConfigError, ContractError, TrainingError
from .metrics import MetricsReport, compute_report
from .model import EncoderModel

GradientMap = dict[str, np.ndarray]


def derived_seed(seed: int, *streams: int) -> int:
    """Stable sub-seed for a named random stream of a run."""
    state = np.random.SeedSequence([int(seed), *[int(s) for s in streams]])
    return int(state.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters; reference values are batch 64, 10 epochs."""

    batch_size: int = 64
    epochs: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip: float = 5.0  # global-norm ceiling, 0 disables
    seed: int = 0
    distill: DistillConfig | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not (0.0 < value < 1.0):
                raise ConfigError(f"{name} must lie in (0, 1), got {value}")
        if self.adam_eps <= 0.0:
            raise ConfigError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.grad_clip < 0.0:
            raise ConfigError(f"grad_clip must be >= 0, got {self.grad_clip}")


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments."""

    def __init__(self, params: list[tuple[str, T.Tensor]], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m: dict[str, np.ndarray] = {name: np.zeros_like(p.data) for name, p in params}
        self.v: dict[str, np.ndarray] = {name: np.zeros_like(p.data) for name, p in params}
        self.t = 0

    def step(self, grads: GradientMap) -> None:
        cfg = self.cfg
        for name, _ in self.params:
            g = grads.get(name)
            if g is None:
                raise TrainingError(f"gradient map is missing parameter {name}")
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name}")
        self.t += 1
        correction1 = 1.0 - cfg.beta1**self.t
        correction2 = 1.0 - cfg.beta2**self.t
        for name, p in self.params:
            g = grads[name]
            m = self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            v = self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * (g * g)
            m_hat = m / correction1
            v_hat = v / correction2
            p.data = (
                p.data
                - cfg.learning_rate * (m_hat / (np.sqrt(v_hat) + cfg.adam_eps))
                - cfg.learning_rate * cfg.weight_decay * p.data
            )


def clip_gradients(grads: GradientMap, max_norm: float) -> float:
    """Scale all gradients in place when the global norm exceeds the ceiling.

    The norm is accumulated in sorted-name order so it does not depend on the
    traversal order that produced the map.
    """
    total = math.sqrt(sum(float((grads[name] * grads[name]).sum()) for name in sorted(grads)))
    if max_norm > 0.0 and total > max_norm:
        scale = max_norm / total
        for name in grads:
            grads[name] *= scale
    return total


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    val_f1: float
    seconds: float


@dataclass
class TrainReport:
    """Per-epoch statistics plus the flat sequence of batch losses."""

    epochs: list[EpochRecord] = field(default_factory=list)
    batch_losses: list[float] = field(default_factory=list)
    checkpoint_path: str | None = None

    def final_val_accuracy(self) -> float:
        return self.epochs[-1].val_acc if self.epochs else float("nan")

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,train_acc,val_acc,val_f1,seconds"]
        for r in self.epochs:
            lines.append(
                f"{r.epoch},{r.train_loss!r},{r.train_acc!r},{r.val_acc!r},"
                f"{r.val_f1!r},{r.seconds:.3f}"
            )
        return "\n".join(lines) + "\n"

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_csv())


def evaluate(model: EncoderModel, dataset: Dataset, batch_size: int = 64) -> MetricsReport:
    """Argmax predictions (ties to the lowest class index) scored over the dataset.

    Same-bit reproduction of a report requires the same batch size, since the
    batched matrix kernels may round differently across shapes.
    """
    if len(dataset) == 0:
        raise ContractError("evaluate: dataset is empty")
    ids, mask, labels = dataset.arrays()
    predictions = np.empty(len(dataset), dtype=np.int64)
    with T.no_grad():
        for lo in range(0, len(dataset), batch_size):
            logits = model.forward(ids[lo : lo + batch_size], mask[lo : lo + batch_size])
            predictions[lo : lo + logits.shape[0]] = np.argmax(logits.data, axis=1)
    return compute_report(predictions, labels, dataset.num_classes)


def _run_training(
    model: EncoderModel,
    dataset: Dataset,
    cfg: TrainConfig,
    batch_loss,
    extra_params: list[tuple[str, T.Tensor]],
    val_dataset: Dataset | None,
) -> TrainReport:
    """Shared epoch/batch loop.

    ``batch_loss(ids, mask, labels, examples)`` returns (loss tensor, prob
    rows) for one batch.  Plain and distilled training share this loop so
    that their shuffle streams and statistics are identical.
    """
    if len(dataset) == 0:
        raise ContractError("training dataset is empty")
    params = model.param_items() + extra_params
    optimizer = AdamW(params, cfg)
    param_tensors = [p for _, p in params]
    position = {id(ex): i for i, ex in enumerate(dataset.examples)}
    report = TrainReport()
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        epoch_loss = 0.0
        epoch_correct = 0
        for batch_index, batch in enumerate(
            batch_iter(dataset, cfg.batch_size, derived_seed(cfg.seed, 0, epoch))
        ):
            index = [position[id(ex)] for ex in batch]
            ids, mask, labels = dataset.arrays(index)
            loss, probs = batch_loss(ids, mask, labels, batch)
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {batch_index}"
                )
            grads = T.backward(loss, params=param_tensors)
            clip_gradients(grads, cfg.grad_clip)
            optimizer.step(grads)
            report.batch_losses.append(loss_value)
            epoch_loss += loss_value * len(batch)
            epoch_correct += int((np.argmax(probs, axis=1) == labels).sum())
        if val_dataset is not None:
            val_report = evaluate(model, val_dataset, cfg.batch_size)
            val_acc, val_f1 = val_report.accuracy, val_report.macro_f1
        else:
            val_acc = val_f1 = float("nan")
        report.epochs.append(
            EpochRecord(
                epoch=epoch,
                train_loss=epoch_loss / len(dataset),
                train_acc=epoch_correct / len(dataset),
                val_acc=val_acc,
                val_f1=val_f1,
                seconds=time.perf_counter() - started,
            )
        )
    return report


def train_classifier(
    model: EncoderModel,
    dataset: Dataset,
    cfg: TrainConfig,
    val_dataset: Dataset | None = None,
) -> TrainReport:
    """Plain cross-entropy training of a classifier (teacher or baseline student)."""
    num_classes = dataset.num_classes

    def batch_loss(ids, mask, labels, _examples):
        logits = model.forward(ids, mask)
        probs = T.softmax_rows(logits)
        return task_loss(one_hot(labels, num_classes), probs), probs.data

    return _run_training(model, dataset, cfg, batch_loss, [], val_dataset)


def train_student_distilled(
    student: EncoderModel,
    teacher_softlabels: SoftLabelStore,
    dataset: Dataset,
    cfg: TrainConfig,
    val_dataset: Dataset | None = None,
    teacher: EncoderModel | None = None,
) -> TrainReport:
    """Student training against combined task + distillation loss.

    The soft-label store must cover every example id.  Feature mode
    additionally needs the live teacher to produce hidden states and learns a
    width-matching projection alongside the student parameters.
    """
    dcfg = cfg.distill
    if dcfg is None:
        raise ContractError("train_student_distilled requires cfg.distill")
    missing = sorted(set(dataset.example_ids()) - set(teacher_softlabels.probs))
    if missing:
        raise ContractError(f"soft-label store is missing example ids {missing[:10]}")
    if teacher_softlabels.num_classes != dataset.num_classes:
        raise ContractError(
            f"soft-label store has {teacher_softlabels.num_classes} classes, "
            f"dataset has {dataset.num_classes}"
        )
    num_classes = dataset.num_classes

    extra_params: list[tuple[str, T.Tensor]] = []
    projection: T.Tensor | None = None
    if dcfg.mode == FEATURE_MODE:
        if teacher is None:
            raise ContractError("feature-mode distillation requires the live teacher model")
        rng = np.random.Generator(np.random.PCG64(derived_seed(cfg.seed, 1)))
        d_s, d_t = student.config.d_model, teacher.config.d_model
        limit = math.sqrt(6.0 / (d_s + d_t))
        projection = T.parameter(rng.uniform(-limit, limit, size=(d_s, d_t)), "feature_projection")
        extra_params.append(("feature_projection", projection))

    def batch_loss(ids, mask, labels, examples):
        teacher_rows = teacher_softlabels.rows_for([ex.example_id for ex in examples])
        if dcfg.mode == FEATURE_MODE:
            logits, student_hidden = student.forward(ids, mask, return_hidden=True)
        else:
            logits = student.forward(ids, mask)
        probs = T.softmax_rows(logits)
        l_task = task_loss(one_hot(labels, num_classes), probs)
        l_distill = distill_loss(teacher_rows, soften(logits, dcfg.temperature))
        loss = combined_loss(l_task, l_distill, dcfg)
        if dcfg.mode == FEATURE_MODE:
            with T.no_grad():
                _, teacher_hidden = teacher.forward(ids, mask, return_hidden=True)
            l_feature = feature_distill_loss(teacher_hidden.data, student_hidden, projection)
            loss = T.add(loss, T.scalar_mul(l_feature, dcfg.feature_weight))
        return loss, probs.data

    return _run_training(student, dataset, cfg, batch_loss, extra_params, val_dataset)


def pretrain_mlm(
    model: EncoderModel,
    corpus: Dataset,
    cfg: TrainConfig,
    mask_fraction: float = 0.15,
) -> TrainReport:
    """Masked-token pretraining through a tied-weight vocabulary head.

    Per sequence, round(mask_fraction * content positions) positions are
    replaced by the MASK token (the CLS slot is never masked) and the model
    predicts the original ids there; cross-entropy is taken over masked
    positions only.  Only encoder parameters are updated; the classifier head
    is untouched.  Batches with nothing masked are skipped, so a fraction of
    zero leaves the model bit-identical.
    """
    if not (0.0 <= mask_fraction <= 1.0):
        raise ConfigError(f"mask_fraction must lie in [0, 1], got {mask_fraction}")
    if len(corpus) < cfg.batch_size:
        raise ContractError(
            f"corpus has {len(corpus)} examples, shorter than one batch of {cfg.batch_size}"
        )
    vocab_size = model.config.vocab_size
    encoder_params = [
        (name, p) for name, p in model.param_items() if name not in ("W_cls", "b_cls")
    ]
    optimizer = AdamW(encoder_params, cfg)
    param_tensors = [p for _, p in encoder_params]
    position = {id(ex): i for i, ex in enumerate(corpus.examples)}
    report = TrainReport()
    seq_width = corpus.max_seq_len
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        rng = np.random.Generator(np.random.PCG64(derived_seed(cfg.seed, 2, epoch)))
        epoch_loss = 0.0
        epoch_masked = 0
        epoch_correct = 0
        for batch_index, batch in enumerate(
            batch_iter(corpus, cfg.batch_size, derived_seed(cfg.seed, 0, epoch))
        ):
            index = [position[id(ex)] for ex in batch]
            ids, mask, _ = corpus.arrays(index)
            masked_ids = ids.copy()
            rows: list[int] = []
            cols: list[int] = []
            for r in range(len(batch)):
                candidates = np.flatnonzero(mask[r] & (ids[r] != CLS_ID))
                k = int(round(mask_fraction * candidates.size))
                if k == 0:
                    continue
                chosen = rng.choice(candidates, size=k, replace=False)
                for c in chosen:
                    rows.append(r)
                    cols.append(int(c))
            if not rows:
                continue
            targets = ids[rows, cols]
            masked_ids[rows, cols] = MASK_ID
            _, hidden = model.forward(masked_ids, mask, return_hidden=True)
            flat = T.reshape(hidden, (len(batch) * seq_width, model.config.d_model))
            positions = [r * seq_width + c for r, c in zip(rows, cols)]
            picked = T.gather_rows(flat, np.asarray(positions))
            vocab_logits = T.matmul(picked, T.transpose(model.W_e))
            probs = T.softmax_rows(vocab_logits)
            loss = task_loss(one_hot(targets, vocab_size), probs)
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {batch_index}")
            grads = T.backward(loss, params=param_tensors)
            clip_gradients(grads, cfg.grad_clip)
            optimizer.step(grads)
            report.batch_losses.append(loss_value)
            epoch_loss += loss_value * len(rows)
            epoch_masked += len(rows)
            epoch_correct += int((np.argmax(probs.data, axis=1) == targets).sum())
        report.epochs.append(
            EpochRecord(
                epoch=epoch,
                train_loss=epoch_loss / epoch_masked if epoch_masked else float("nan"),
                train_acc=epoch_correct / epoch_masked if epoch_masked else float("nan"),
                val_acc=float("nan"),
                val_f1=float("nan"),
                seconds=time.perf_counter() - started,
            )
        )
    return report

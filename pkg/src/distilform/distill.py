"""Knowledge-transfer machinery: temperature softening, soft-label stores,
the task / distillation / combined losses, and feature matching.

Both cross-entropy losses run through one shared kernel (batch mean of
-sum(target * log(max(p, 1e-12)))), so the task loss with one-hot labels and
the distillation loss with a one-hot teacher are bit-identical - the property
the distillation-off reductions in training rely on.  The 1e-12 floor keeps
saturated rows finite and sits far below every test tolerance.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import Dataset
from .errors import ConfigError, ContractError
from .model import EncoderModel, checkpoint_checksum

PROB_FLOOR = 1e-12

OUTPUT_MODE = "output"
FEATURE_MODE = "output+feature"


@dataclass(frozen=True)
class DistillConfig:
    """Knowledge-transfer knobs; defaults follow the reference setup (T=1, weight 0.5).

    ``scale_by_t_squared`` multiplies the distillation term by T**2 to keep
    gradient magnitudes comparable across temperatures; at T=1 it is inert.
    """

    temperature: float = 1.0
    alpha: float = 0.5
    mode: str = OUTPUT_MODE
    feature_weight: float = 0.0
    scale_by_t_squared: bool = True

    def __post_init__(self) -> None:
        if self.temperature <= 0.0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.mode not in (OUTPUT_MODE, FEATURE_MODE):
            raise ConfigError(f"mode must be {OUTPUT_MODE!r} or {FEATURE_MODE!r}, got {self.mode!r}")
        if self.feature_weight < 0.0:
            raise ConfigError(f"feature_weight must be >= 0, got {self.feature_weight}")


def soften(logits, temperature: float) -> T.Tensor:
    """softmax(logits / T); T=1 reproduces the plain predictive distribution."""
    if temperature <= 0.0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    return T.softmax_rows(T.scalar_div(T.constant(logits), temperature))


def _soft_cross_entropy(target: T.Tensor, probs: T.Tensor) -> T.Tensor:
    if target.shape != probs.shape or len(probs.shape) != 2:
        raise ContractError(
            f"cross entropy needs matching [batch, classes] shapes, "
            f"got {target.shape} and {probs.shape}"
        )
    batch = probs.shape[0]
    logp = T.log(T.clip_min(probs, PROB_FLOOR))
    return T.scalar_mul(T.sum_all(T.multiply(target, logp)), -1.0 / batch)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = int(labels.min()) if labels.min() < 0 else int(labels.max())
        raise ContractError(f"label {bad} outside [0, {num_classes})")
    return np.eye(num_classes, dtype=np.float64)[labels]


def task_loss(true_labels, probs) -> T.Tensor:
    """Mean cross-entropy of predicted probabilities against one-hot labels."""
    return _soft_cross_entropy(T.constant(true_labels), T.constant(probs))


def distill_loss(teacher_probs, student_probs) -> T.Tensor:
    """Soft cross-entropy of the student distribution against the teacher's."""
    return _soft_cross_entropy(T.constant(teacher_probs), T.constant(student_probs))


def combined_loss(l_task, l_distill, cfg: DistillConfig) -> T.Tensor:
    """alpha * T**2 * L_distill + (1 - alpha) * L_task (T**2 optional)."""
    factor = cfg.temperature**2 if cfg.scale_by_t_squared else 1.0
    return T.add(
        T.scalar_mul(T.constant(l_distill), cfg.alpha * factor),
        T.scalar_mul(T.constant(l_task), 1.0 - cfg.alpha),
    )


def feature_distill_loss(teacher_hidden, student_hidden, projection: T.Tensor) -> T.Tensor:
    """Mean squared error between projected student states and teacher states."""
    student_hidden = T.constant(student_hidden)
    teacher_hidden = T.constant(teacher_hidden)
    if projection.shape != (student_hidden.shape[-1], teacher_hidden.shape[-1]):
        raise ContractError(
            f"projection shape {projection.shape} cannot map student width "
            f"{student_hidden.shape[-1]} to teacher width {teacher_hidden.shape[-1]}"
        )
    if student_hidden.shape[:-1] != teacher_hidden.shape[:-1]:
        raise ContractError(
            f"hidden state positions disagree: {student_hidden.shape} vs {teacher_hidden.shape}"
        )
    diff = T.subtract(T.matmul(student_hidden, projection), teacher_hidden)
    return T.mean_all(T.multiply(diff, diff))


# ---------------------------------------------------------------------------
# soft-label store
# ---------------------------------------------------------------------------

SOFTLABEL_MAGIC = "SOFTLABELS1"


class SoftLabelStore:
    """Per-example teacher probability rows, keyed by example id.

    Records the softening temperature and the teacher checkpoint identity so a
    downstream run can refuse mismatched provenance.
    """

    def __init__(
        self,
        num_classes: int,
        temperature: float,
        teacher_id: str,
        probs: dict[int, np.ndarray],
    ):
        if temperature <= 0.0:
            raise ConfigError(f"temperature must be positive, got {temperature}")
        self.num_classes = int(num_classes)
        self.temperature = float(temperature)
        self.teacher_id = teacher_id
        self.probs: dict[int, np.ndarray] = {}
        for example_id, row in probs.items():
            row = np.asarray(row, dtype=np.float64)
            if row.shape != (self.num_classes,):
                raise ContractError(
                    f"soft label for example {example_id} has shape {row.shape}, "
                    f"expected ({self.num_classes},)"
                )
            if (row < 0.0).any() or abs(row.sum() - 1.0) > 1e-9:
                raise ContractError(
                    f"soft label for example {example_id} is not a probability vector"
                )
            self.probs[int(example_id)] = row

    def __len__(self) -> int:
        return len(self.probs)

    def rows_for(self, example_ids) -> np.ndarray:
        """Stack rows for the given ids; missing ids are a contract error."""
        missing = [int(i) for i in example_ids if int(i) not in self.probs]
        if missing:
            raise ContractError(f"soft-label store is missing example ids {missing[:10]}")
        return np.stack([self.probs[int(i)] for i in example_ids])

    def covers(self, dataset: Dataset) -> bool:
        return set(self.probs) == set(dataset.example_ids())

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(
                f"{SOFTLABEL_MAGIC} n={len(self.probs)} classes={self.num_classes} "
                f"T={self.temperature!r} teacher={self.teacher_id}\n"
            )
            for example_id, row in self.probs.items():
                values = " ".join(f"{p:.17g}" for p in row)
                fh.write(f"{example_id} {values}\n")

    @classmethod
    def load(cls, path) -> "SoftLabelStore":
        with open(path, encoding="ascii") as fh:
            header = fh.readline().rstrip("\n").split(" ")
            if not header or header[0] != SOFTLABEL_MAGIC:
                raise ContractError(f"{path}: bad soft-label header")
            kv = dict(item.split("=", 1) for item in header[1:])
            n, classes = int(kv["n"]), int(kv["classes"])
            temperature, teacher = float(kv["T"]), kv["teacher"]
            probs: dict[int, np.ndarray] = {}
            for line in fh:
                fields = line.split()
                if not fields:
                    continue
                probs[int(fields[0])] = np.array([float(v) for v in fields[1:]], dtype=np.float64)
        if len(probs) != n:
            raise ContractError(f"{path}: header claims {n} rows, found {len(probs)}")
        return cls(classes, temperature, teacher, probs)


def generate_soft_labels(
    teacher: EncoderModel,
    dataset: Dataset,
    temperature: float = 1.0,
    batch_size: int = 64,
) -> SoftLabelStore:
    """Run the teacher over the dataset without gradients and store softened rows."""
    if teacher.config.num_classes != dataset.num_classes:
        raise ContractError(
            f"teacher has {teacher.config.num_classes} classes, dataset has {dataset.num_classes}"
        )
    if teacher.config.vocab_size != len(dataset.vocab):
        raise ContractError(
            f"teacher vocab size {teacher.config.vocab_size} does not match "
            f"dataset vocab size {len(dataset.vocab)}"
        )
    probs: dict[int, np.ndarray] = {}
    ids, mask, _ = dataset.arrays()
    with T.no_grad():
        for lo in range(0, len(dataset), batch_size):
            logits = teacher.forward(ids[lo : lo + batch_size], mask[lo : lo + batch_size])
            rows = soften(logits, temperature).data
            for offset, ex in enumerate(dataset.examples[lo : lo + batch_size]):
                probs[ex.example_id] = rows[offset]
    return SoftLabelStore(dataset.num_classes, temperature, checkpoint_checksum(teacher), probs)


def entropy(distribution) -> float:
    """Shannon entropy in nats with the same 1e-12 floor as the losses."""
    row = np.asarray(distribution, dtype=np.float64)
    return float(-(row * np.log(np.maximum(row, PROB_FLOOR))).sum())


def dataset_checksum(dataset: Dataset) -> str:
    """Stable identity of a dataset's ids and labels (provenance guard)."""
    h = hashlib.sha256()
    for ex in dataset.examples:
        h.update(f"{ex.example_id}:{ex.label};".encode("ascii"))
        h.update(ex.token_ids.astype("<i8").tobytes())
    return h.hexdigest()[:16]

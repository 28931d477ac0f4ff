"""Confusion-matrix construction and the derived classification metrics.

The count matrix is indexed ``[true_class, predicted_class]``.  For binary
tasks class 1 is the positive class, so ``TP = m[1, 1]``, ``FN = m[1, 0]``,
``FP = m[0, 1]`` and ``TN = m[0, 0]``.  Zero-denominator cases define the
affected metric as 0.0 and are flagged explicitly in the report rather than
silently dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


class ConfusionMatrix:
    """C x C count matrix, rows = true class, columns = predicted class."""

    def __init__(self, counts) -> None:
        m = np.asarray(counts, dtype=np.int64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
            raise ContractError(f"confusion matrix must be square C>=2, got shape {m.shape}")
        if (m < 0).any():
            raise ContractError("confusion matrix counts must be nonnegative")
        self.counts = m

    @classmethod
    def from_predictions(cls, predictions, labels, num_classes: int) -> "ConfusionMatrix":
        preds = np.asarray(predictions, dtype=np.int64)
        labs = np.asarray(labels, dtype=np.int64)
        if preds.shape != labs.shape or preds.ndim != 1 or preds.size == 0:
            raise ContractError(
                f"predictions/labels must be equal-length nonempty vectors, "
                f"got {preds.shape} and {labs.shape}"
            )
        if num_classes < 2:
            raise ContractError(f"num_classes must be >= 2, got {num_classes}")
        for name, values in (("prediction", preds), ("label", labs)):
            if values.min() < 0 or values.max() >= num_classes:
                bad = int(values.min()) if values.min() < 0 else int(values.max())
                raise ContractError(f"{name} value {bad} outside [0, {num_classes})")
        m = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(m, (labs, preds), 1)
        return cls(m)

    @classmethod
    def from_binary_counts(cls, tp: int, tn: int, fp: int, fn: int) -> "ConfusionMatrix":
        return cls([[tn, fp], [fn, tp]])

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def one_vs_rest(self, c: int) -> tuple[int, int, int, int]:
        """(TP, FP, FN, TN) treating class ``c`` as positive."""
        m = self.counts
        tp = int(m[c, c])
        fp = int(m[:, c].sum() - m[c, c])
        fn = int(m[c, :].sum() - m[c, c])
        tn = self.total - tp - fp - fn
        return tp, fp, fn, tn

    # binary positive class is 1
    @property
    def tp(self) -> int:
        return self.one_vs_rest(1)[0]

    @property
    def fp(self) -> int:
        return self.one_vs_rest(1)[1]

    @property
    def fn(self) -> int:
        return self.one_vs_rest(1)[2]

    @property
    def tn(self) -> int:
        return self.one_vs_rest(1)[3]

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"ConfusionMatrix({self.counts.tolist()})"


def confusion(predictions, labels, num_classes: int) -> ConfusionMatrix:
    """Count matrix from parallel prediction/label vectors."""
    return ConfusionMatrix.from_predictions(predictions, labels, num_classes)


def accuracy(cm: ConfusionMatrix) -> float:
    """Correct predictions over total: trace / total."""
    if cm.total == 0:
        raise ContractError("accuracy of an empty confusion matrix is undefined")
    return float(np.trace(cm.counts)) / cm.total


def precision_recall(cm: ConfusionMatrix, positive_class: int = 1) -> tuple[float, float]:
    """(TP/(TP+FP), TP/(TP+FN)) for the chosen positive class; 0.0 on empty denominators."""
    if cm.total == 0:
        raise ContractError("metrics of an empty confusion matrix are undefined")
    tp, fp, fn, _ = cm.one_vs_rest(positive_class)
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return precision, recall


def f1(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both vanish."""
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean of per-class one-vs-rest F1 scores."""
    scores = []
    for c in range(cm.num_classes):
        p, r = precision_recall(cm, c)
        scores.append(f1(p, r))
    return sum(scores) / len(scores)


@dataclass
class MetricsReport:
    """Accuracy plus per-class and macro precision/recall/F1 for one evaluation."""

    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: ConfusionMatrix
    n_examples: int
    degenerate: list[str] = field(default_factory=list)

    @property
    def binary_f1(self) -> float:
        """F1 of the positive class (class 1)."""
        return self.f1[1]

    def to_text(self) -> str:
        m = self.confusion.counts
        c = self.confusion.num_classes
        width = max(9, len(str(int(m.max()))) + 2)
        lines = ["confusion matrix (rows = true, columns = predicted)"]
        header = " " * 10 + "".join(f"{f'pred {j}':>{width}}" for j in range(c))
        lines.append(header)
        for i in range(c):
            row = f"{f'true {i}':<10}" + "".join(f"{int(m[i, j]):>{width}}" for j in range(c))
            lines.append(row)
        lines.append("")
        lines.append(f"accuracy  {self.accuracy:.6f}   examples {self.n_examples}")
        for i in range(c):
            lines.append(
                f"class {i}:  precision {self.precision[i]:.6f}  "
                f"recall {self.recall[i]:.6f}  f1 {self.f1[i]:.6f}"
            )
        lines.append(
            f"macro:    precision {self.macro_precision:.6f}  "
            f"recall {self.macro_recall:.6f}  f1 {self.macro_f1:.6f}"
        )
        for note in self.degenerate:
            lines.append(f"note: {note}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["metric,class,value"]
        lines.append(f"accuracy,,{self.accuracy!r}")
        for i in range(self.confusion.num_classes):
            lines.append(f"precision,{i},{self.precision[i]!r}")
            lines.append(f"recall,{i},{self.recall[i]!r}")
            lines.append(f"f1,{i},{self.f1[i]!r}")
        lines.append(f"macro_precision,,{self.macro_precision!r}")
        lines.append(f"macro_recall,,{self.macro_recall!r}")
        lines.append(f"macro_f1,,{self.macro_f1!r}")
        lines.append(f"n_examples,,{self.n_examples}")
        return "\n".join(lines) + "\n"


def compute_report(predictions, labels, num_classes: int) -> MetricsReport:
    """Score a prediction vector and assemble the full report."""
    cm = confusion(predictions, labels, num_classes)
    per_p: list[float] = []
    per_r: list[float] = []
    per_f: list[float] = []
    flags: list[str] = []
    for c in range(num_classes):
        tp, fp, fn, _ = cm.one_vs_rest(c)
        p, r = precision_recall(cm, c)
        if tp + fp == 0:
            flags.append(f"precision undefined for class {c} (no predicted positives); reported 0.0")
        if tp + fn == 0:
            flags.append(f"recall undefined for class {c} (no true positives); reported 0.0")
        per_p.append(p)
        per_r.append(r)
        per_f.append(f1(p, r))
    return MetricsReport(
        accuracy=accuracy(cm),
        precision=per_p,
        recall=per_r,
        f1=per_f,
        macro_precision=sum(per_p) / num_classes,
        macro_recall=sum(per_r) / num_classes,
        macro_f1=sum(per_f) / num_classes,
        confusion=cm,
        n_examples=cm.total,
        degenerate=flags,
    )

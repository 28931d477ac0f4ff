"""Three-arm comparison harness: transformer-only, distillation-only, and the
combined pipeline, run over a seed list with median/min/max summaries.

Arm realizations:

* ``t-nlp``   - the student architecture trained on hard labels only.
* ``kd-nlp``  - distillation signal alone (alpha=1) into the weakest backbone:
  one encoder layer at half width.
* ``tkd-nlp`` - the full student trained on the combined loss.

Teacher, student, and shuffle seeds are derived per (run seed, role), never
per arm, so the teacher's existence cannot perturb an arm that ignores it and
``tkd-nlp`` with alpha=0 reproduces ``t-nlp`` exactly.

``REFERENCE_RESULTS`` carries published full-scale accuracy/F1 numbers for
display next to desk-scale output; nothing reads them outside report
rendering and they are never pass/fail thresholds.
"""

from __future__ import annotations

import dataclasses
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .data import DataSpec, Dataset, build_datasets
from .distill import DistillConfig, generate_soft_labels
from .errors import ConfigError, ContractError
from .metrics import MetricsReport, compute_report
from .model import EncoderModel, ModelConfig
from .train import TrainConfig, TrainReport, derived_seed, evaluate, train_classifier, train_student_distilled

ARM_TKD = "tkd-nlp"
ARM_T = "t-nlp"
ARM_KD = "kd-nlp"
ARMS = (ARM_TKD, ARM_T, ARM_KD)

# Published full-scale results (accuracy %, F1 %); display-only provenance.
REFERENCE_RESULTS: dict[str, tuple[float, float]] = {
    "tkd-nlp": (98.32, 97.14),
    "rnn": (92.41, 95.31),
    "lstm": (93.31, 94.25),
    "cnn": (96.58, 93.78),
    "t-nlp": (94.48, 93.89),
    "kd-nlp": (90.26, 92.14),
}
REFERENCE_LABEL = "paper (full-scale, not reproduced)"


@dataclass(frozen=True)
class ArchSpec:
    """Encoder size knobs; completed to a ModelConfig once the data is known."""

    num_layers: int
    num_heads: int
    d_model: int
    d_ff: int

    def to_model_config(self, vocab_size: int, max_seq_len: int, num_classes: int) -> ModelConfig:
        return ModelConfig(
            num_layers=self.num_layers,
            num_heads=self.num_heads,
            d_model=self.d_model,
            d_ff=self.d_ff,
            vocab_size=vocab_size,
            max_seq_len=max_seq_len,
            num_classes=num_classes,
        )

    def reduced(self) -> "ArchSpec":
        """Weakest backbone for the distillation-only arm: one layer, half width."""
        d_model = max(2, self.d_model // 2)
        heads = self.num_heads if d_model % self.num_heads == 0 else 1
        return ArchSpec(num_layers=1, num_heads=heads, d_model=d_model, d_ff=max(1, self.d_ff // 2))


@dataclass
class AblationPlan:
    arms: tuple[str, ...]
    seeds: tuple[int, ...]
    data: DataSpec
    student: ArchSpec
    teacher: ArchSpec
    train: TrainConfig
    alpha: float = 0.5
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if not self.arms:
            raise ConfigError("ablation plan needs at least one arm")
        for arm in self.arms:
            if arm not in ARMS:
                raise ConfigError(f"unknown arm {arm!r}, expected one of {ARMS}")
        if not self.seeds:
            raise ConfigError("ablation plan needs at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"ablation seeds must be distinct, got {self.seeds}")


@dataclass
class ArmRun:
    arm: str
    seed: int
    accuracy: float
    macro_f1: float
    seconds: float
    metrics: MetricsReport
    train_report: TrainReport


@dataclass
class AblationReport:
    plan: AblationPlan
    runs: list[ArmRun] = field(default_factory=list)

    def runs_for(self, arm: str) -> list[ArmRun]:
        return [r for r in self.runs if r.arm == arm]

    def summary(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for arm in self.plan.arms:
            rows = self.runs_for(arm)
            if not rows:
                continue
            accs = [r.accuracy for r in rows]
            f1s = [r.macro_f1 for r in rows]
            out[arm] = {
                "median_acc": statistics.median(accs),
                "min_acc": min(accs),
                "max_acc": max(accs),
                "median_f1": statistics.median(f1s),
                "min_f1": min(f1s),
                "max_f1": max(f1s),
            }
        return out

    def to_csv(self) -> str:
        lines = ["arm,seed,acc,f1,train_seconds"]
        for r in self.runs:
            lines.append(f"{r.arm},{r.seed},{r.accuracy!r},{r.macro_f1!r},{r.seconds:.3f}")
        lines.append("")
        lines.append("paper_reference")
        lines.append("model,acc,f1")
        for name, (acc, f1) in REFERENCE_RESULTS.items():
            lines.append(f"{name},{acc},{f1}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [f"ablation over seeds {list(self.plan.seeds)} on {self.plan.data.describe()}"]
        lines.append("")
        lines.append(f"{'arm':<10} {'runs':>4} {'median_acc':>11} {'min_acc':>8} {'max_acc':>8} {'median_f1':>10}")
        for arm, stats in self.summary().items():
            lines.append(
                f"{arm:<10} {len(self.runs_for(arm)):>4} {stats['median_acc']:>11.4f} "
                f"{stats['min_acc']:>8.4f} {stats['max_acc']:>8.4f} {stats['median_f1']:>10.4f}"
            )
        lines.append("")
        lines.append(f"reference: {REFERENCE_LABEL}")
        lines.append(f"{'model':<10} {'acc':>7} {'f1':>7}")
        for name, (acc, f1) in REFERENCE_RESULTS.items():
            lines.append(f"{name:<10} {acc:>7.2f} {f1:>7.2f}")
        return "\n".join(lines)

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_csv())


def _train_config(plan: AblationPlan, seed: int, distill: DistillConfig | None) -> TrainConfig:
    return dataclasses.replace(plan.train, seed=derived_seed(seed, 13), distill=distill)


def run_arm(
    arm: str,
    plan: AblationPlan,
    seed: int,
    datasets: tuple[Dataset, Dataset] | None = None,
) -> ArmRun:
    """Train and score one arm at one seed; returns validation metrics."""
    if arm not in ARMS:
        raise ConfigError(f"unknown arm {arm!r}, expected one of {ARMS}")
    if datasets is None:
        train_ds, val_ds = build_datasets(plan.data)
    else:
        train_ds, val_ds = datasets
    if val_ds is None:
        raise ContractError("ablation runs need a validation split")
    vocab_size = len(train_ds.vocab)
    dims = (vocab_size, train_ds.max_seq_len, train_ds.num_classes)
    started = time.perf_counter()
    if arm == ARM_T:
        student = EncoderModel.init(plan.student.to_model_config(*dims), derived_seed(seed, 12))
        report = train_classifier(student, train_ds, _train_config(plan, seed, None), val_ds)
    else:
        teacher = EncoderModel.init(plan.teacher.to_model_config(*dims), derived_seed(seed, 10))
        teacher_cfg = dataclasses.replace(plan.train, seed=derived_seed(seed, 11), distill=None)
        train_classifier(teacher, train_ds, teacher_cfg)
        store = generate_soft_labels(teacher, train_ds, plan.temperature, plan.train.batch_size)
        arch = plan.student.reduced() if arm == ARM_KD else plan.student
        alpha = 1.0 if arm == ARM_KD else plan.alpha
        student = EncoderModel.init(arch.to_model_config(*dims), derived_seed(seed, 12))
        dcfg = DistillConfig(temperature=plan.temperature, alpha=alpha)
        report = train_student_distilled(
            student, store, train_ds, _train_config(plan, seed, dcfg), val_ds
        )
    metrics = evaluate(student, val_ds, plan.train.batch_size)
    return ArmRun(
        arm=arm,
        seed=seed,
        accuracy=metrics.accuracy,
        macro_f1=metrics.macro_f1,
        seconds=time.perf_counter() - started,
        metrics=metrics,
        train_report=report,
    )


def run_plan(plan: AblationPlan, out_dir=None) -> AblationReport:
    """Cross product of arms x seeds; on failure the partial report is saved first."""
    train_ds, val_ds = build_datasets(plan.data)
    report = AblationReport(plan)
    try:
        for arm in plan.arms:
            for seed in plan.seeds:
                report.runs.append(run_arm(arm, plan, seed, (train_ds, val_ds)))
    except Exception:
        if out_dir is not None:
            report.save_csv(f"{out_dir}/ablation_partial.csv")
        raise
    return report


def load_external_predictions(path, dataset: Dataset) -> MetricsReport:
    """Score an external model's ``example_id,predicted_class`` file on a dataset."""
    predictions: dict[int, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            first, _, second = line.partition(",")
            if line_no == 0 and not first.lstrip("-").isdigit():
                continue  # header row
            predictions[int(first)] = int(second)
    wanted = dataset.example_ids()
    missing = sorted(set(wanted) - set(predictions))
    if missing:
        raise ContractError(f"prediction file is missing example ids {missing[:10]}")
    extra = sorted(set(predictions) - set(wanted))
    if extra:
        raise ContractError(f"prediction file has unknown example ids {extra[:10]}")
    preds = np.asarray([predictions[i] for i in wanted], dtype=np.int64)
    labels = np.asarray([ex.label for ex in dataset.examples], dtype=np.int64)
    return compute_report(preds, labels, dataset.num_classes)

"""Plain-text ``key = value`` run configuration with CLI flag overrides.

One flat namespace covers the dataset spec, student and teacher architectures,
distillation knobs, and optimization hyperparameters.  Unknown keys are hard
errors; the fully resolved configuration is echoed next to every command's
outputs for provenance.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .ablation import AblationPlan, ArchSpec
from .data import DataSpec
from .distill import DistillConfig
from .errors import ConfigError
from .train import TrainConfig


@dataclass
class RunConfig:
    # dataset
    task: str = ""  # keyword | parity | majority; empty selects TSV keys
    n_train: int = 512
    n_val: int = 128
    vocab_size: int = 50
    seq_len: int = 16
    label_noise: float = 0.0
    data_seed: int = 1234
    train_tsv: str = ""
    val_tsv: str = ""
    sentence_cols: str = "sentence"  # comma-separated column names
    label_col: str = "label"
    bins: int = 0
    min_freq: int = 1
    max_seq_len: int = 32
    # student architecture
    num_layers: int = 2
    num_heads: int = 2
    d_model: int = 32
    d_ff: int = 64
    layernorm_eps: float = 1e-5
    # teacher architecture
    teacher_num_layers: int = 4
    teacher_num_heads: int = 4
    teacher_d_model: int = 64
    teacher_d_ff: int = 128
    # distillation
    temperature: float = 1.0
    alpha: float = 0.5
    distill_mode: str = "output"
    feature_weight: float = 0.0
    temperature_squared: bool = True
    # optimization
    batch_size: int = 64
    epochs: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip: float = 5.0
    seed: int = 7
    mask_fraction: float = 0.15
    # ablation plan
    arms: str = "tkd-nlp,t-nlp,kd-nlp"
    seeds: str = "1,2,3,4,5,6,7"

    # ------------------------------------------------------------------
    def data_spec(self) -> DataSpec:
        return DataSpec(
            task=self.task,
            n_train=self.n_train,
            n_val=self.n_val,
            vocab_size=self.vocab_size,
            seq_len=self.seq_len,
            label_noise=self.label_noise,
            data_seed=self.data_seed,
            train_tsv=self.train_tsv,
            val_tsv=self.val_tsv,
            sentence_cols=tuple(s.strip() for s in self.sentence_cols.split(",") if s.strip()),
            label_col=self.label_col,
            bins=self.bins,
            min_freq=self.min_freq,
            max_seq_len=self.max_seq_len,
        )

    def student_arch(self) -> ArchSpec:
        return ArchSpec(self.num_layers, self.num_heads, self.d_model, self.d_ff)

    def teacher_arch(self) -> ArchSpec:
        return ArchSpec(
            self.teacher_num_layers, self.teacher_num_heads, self.teacher_d_model, self.teacher_d_ff
        )

    def distill_config(self) -> DistillConfig:
        return DistillConfig(
            temperature=self.temperature,
            alpha=self.alpha,
            mode=self.distill_mode,
            feature_weight=self.feature_weight,
            scale_by_t_squared=self.temperature_squared,
        )

    def train_config(self, seed: int, distill: DistillConfig | None = None) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_eps=self.adam_eps,
            weight_decay=self.weight_decay,
            grad_clip=self.grad_clip,
            seed=seed,
            distill=distill,
        )

    def plan(self) -> AblationPlan:
        arms = tuple(a.strip() for a in self.arms.split(",") if a.strip())
        try:
            seeds = tuple(int(s) for s in self.seeds.split(",") if s.strip())
        except ValueError as exc:
            raise ConfigError(f"seeds must be comma-separated integers, got {self.seeds!r}") from exc
        return AblationPlan(
            arms=arms,
            seeds=seeds,
            data=self.data_spec(),
            student=self.student_arch(),
            teacher=self.teacher_arch(),
            train=self.train_config(seed=0),
            alpha=self.alpha,
            temperature=self.temperature,
        )

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from exc


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    for line_no, line in enumerate(text.split("\n"), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value', got {line!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(path: str | None, overrides: dict[str, object] | None = None) -> RunConfig:
    """Defaults, then config file values, then CLI overrides (flag wins)."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        for key, raw in parse_kv_text(text, source=str(path)).items():
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            setattr(cfg, key, _coerce(key, raw))
    for key, value in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config override {key!r}")
        if value is not None:
            setattr(cfg, key, value)
    return cfg

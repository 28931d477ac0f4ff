"""Command-line surface: pretrain, train-teacher, make-softlabels, distill,
evaluate, ablate, gradcheck.

Exit codes: 0 success, 1 runtime/training failure, 2 usage or configuration
error.  Every command that takes ``--out`` echoes its fully resolved
configuration there as ``resolved.cfg``; no command mutates its input files.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import tensor as T
from .ablation import run_plan
from .config import RunConfig, load_config
from .data import build_datasets
from .distill import SoftLabelStore, generate_soft_labels, soften, task_loss
from .errors import ConfigError, ContractError, SchemaError
from .model import EncoderModel, ModelConfig, load_checkpoint, save_checkpoint
from .train import (
    derived_seed,
    evaluate,
    pretrain_mlm,
    train_classifier,
    train_student_distilled,
)

CHECKPOINT_FILE = "checkpoint.tkd"
REPORT_FILE = "report.csv"
RESOLVED_FILE = "resolved.cfg"
SOFTLABEL_FILE = "softlabels.txt"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="key = value configuration file")
    parser.add_argument("--data", metavar="PATH", help="override the primary TSV data path")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--seed", type=int, metavar="N")
    parser.add_argument("--alpha", type=float, metavar="F")
    parser.add_argument("--temperature", type=float, metavar="F")
    parser.add_argument("--epochs", type=int, metavar="N")
    parser.add_argument("--batch-size", type=int, metavar="N", dest="batch_size")


def _config_from_args(args, data_key: str = "train_tsv") -> RunConfig:
    overrides = {
        "seed": args.seed,
        "alpha": args.alpha,
        "temperature": args.temperature,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
    }
    if args.data is not None:
        overrides[data_key] = args.data
        overrides["task"] = ""
    return load_config(args.config, overrides)


def _prepare_out(args, cfg: RunConfig) -> str:
    if not args.out:
        raise ConfigError("missing required --out directory")
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, RESOLVED_FILE), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    return args.out


def _student_model_config(cfg: RunConfig, dataset) -> ModelConfig:
    return cfg.student_arch().to_model_config(
        len(dataset.vocab), dataset.max_seq_len, dataset.num_classes
    )


def cmd_train_teacher(args) -> int:
    cfg = _config_from_args(args)
    train_ds, val_ds = build_datasets(cfg.data_spec())
    out = _prepare_out(args, cfg)
    model_cfg = cfg.teacher_arch().to_model_config(
        len(train_ds.vocab), train_ds.max_seq_len, train_ds.num_classes
    )
    model = EncoderModel.init(model_cfg, derived_seed(cfg.seed, 10))
    report = train_classifier(model, train_ds, cfg.train_config(derived_seed(cfg.seed, 11)), val_ds)
    save_checkpoint(model, os.path.join(out, CHECKPOINT_FILE))
    report.save_csv(os.path.join(out, REPORT_FILE))
    last = report.epochs[-1]
    print(
        f"teacher trained: train_acc={last.train_acc:.4f} val_acc={last.val_acc:.4f} "
        f"val_f1={last.val_f1:.4f}"
    )
    return 0


def cmd_pretrain(args) -> int:
    cfg = _config_from_args(args)
    corpus, _ = build_datasets(cfg.data_spec())
    out = _prepare_out(args, cfg)
    model = EncoderModel.init(_student_model_config(cfg, corpus), derived_seed(cfg.seed, 12))
    report = pretrain_mlm(model, corpus, cfg.train_config(derived_seed(cfg.seed, 14)), cfg.mask_fraction)
    save_checkpoint(model, os.path.join(out, CHECKPOINT_FILE))
    report.save_csv(os.path.join(out, REPORT_FILE))
    if report.epochs:
        print(f"pretrained: final masked-token loss={report.epochs[-1].train_loss:.4f}")
    return 0


def cmd_make_softlabels(args) -> int:
    cfg = _config_from_args(args)
    teacher = load_checkpoint(args.checkpoint)
    train_ds, _ = build_datasets(cfg.data_spec())
    out = _prepare_out(args, cfg)
    store = generate_soft_labels(teacher, train_ds, cfg.temperature, cfg.batch_size)
    store.save(os.path.join(out, SOFTLABEL_FILE))
    print(f"soft labels written: {len(store)} rows at T={cfg.temperature}")
    return 0


def cmd_distill(args) -> int:
    cfg = _config_from_args(args)
    store = SoftLabelStore.load(args.softlabels)
    train_ds, val_ds = build_datasets(cfg.data_spec())
    if store.num_classes != train_ds.num_classes:
        raise ConfigError(
            f"soft-label store has {store.num_classes} classes, dataset has "
            f"{train_ds.num_classes}; refusing mismatched provenance"
        )
    if not store.covers(train_ds):
        missing = sorted(set(train_ds.example_ids()) - set(store.probs))
        raise ConfigError(
            f"soft-label store does not cover the dataset (missing ids {missing[:10]}); "
            f"refusing mismatched provenance"
        )
    out = _prepare_out(args, cfg)
    student = EncoderModel.init(_student_model_config(cfg, train_ds), derived_seed(cfg.seed, 12))
    report = train_student_distilled(
        student, store, train_ds, cfg.train_config(derived_seed(cfg.seed, 13), cfg.distill_config()), val_ds
    )
    save_checkpoint(student, os.path.join(out, CHECKPOINT_FILE))
    report.save_csv(os.path.join(out, REPORT_FILE))
    last = report.epochs[-1]
    print(
        f"student distilled: train_acc={last.train_acc:.4f} val_acc={last.val_acc:.4f} "
        f"val_f1={last.val_f1:.4f}"
    )
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args, data_key="val_tsv")
    model = load_checkpoint(args.checkpoint)
    train_ds, val_ds = build_datasets(cfg.data_spec())
    dataset = val_ds if val_ds is not None else train_ds
    out = _prepare_out(args, cfg)
    report = evaluate(model, dataset, cfg.batch_size)
    with open(os.path.join(out, "metrics.txt"), "w", encoding="ascii") as fh:
        fh.write(report.to_text() + "\n")
    with open(os.path.join(out, "metrics.csv"), "w", encoding="ascii") as fh:
        fh.write(report.to_csv())
    print(report.to_text())
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.plan, {"seed": args.seed})
    plan = cfg.plan()
    out = _prepare_out(args, cfg)
    report = run_plan(plan, out_dir=out)
    report.save_csv(os.path.join(out, "ablation.csv"))
    with open(os.path.join(out, "ablation.txt"), "w", encoding="ascii") as fh:
        fh.write(report.to_text() + "\n")
    print(report.to_text())
    return 0


GRADCHECK_THRESHOLD = 1e-3


def cmd_gradcheck(args) -> int:
    """Finite-difference check of the full model gradient on a tiny instance."""
    cfg = load_config(args.config) if args.config else RunConfig(
        num_layers=2, num_heads=2, d_model=8, d_ff=16
    )
    model_cfg = ModelConfig(
        num_layers=cfg.num_layers,
        num_heads=cfg.num_heads,
        d_model=cfg.d_model,
        d_ff=cfg.d_ff,
        vocab_size=12,
        max_seq_len=6,
        num_classes=2,
    )
    model = EncoderModel.init(model_cfg, seed=cfg.seed)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    batch, seq = 4, 6
    ids = rng.integers(0, model_cfg.vocab_size, size=(batch, seq))
    ids[:, 0] = 2
    mask = np.ones((batch, seq), dtype=bool)
    mask[0, 4:] = False
    labels = rng.integers(0, model_cfg.num_classes, size=batch)
    onehot = np.eye(model_cfg.num_classes)[labels]

    def loss_fn():
        return task_loss(onehot, soften(model.forward(ids, mask), 1.0))

    error = T.finite_diff_check(loss_fn, model.parameters(), h=1e-4)
    print(f"max relative gradient error: {error:.3e} (threshold {GRADCHECK_THRESHOLD:.0e})")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, RESOLVED_FILE), "w", encoding="utf-8") as fh:
            fh.write(cfg.to_text())
        with open(os.path.join(args.out, "gradcheck.txt"), "w", encoding="ascii") as fh:
            fh.write(f"{error!r}\n")
    return 0 if error < GRADCHECK_THRESHOLD else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distilform",
        description="Train transformer encoder classifiers with teacher-student distillation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", help="train a classifier with the teacher architecture")
    _add_common(p)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("pretrain", help="masked-token pretraining of the student encoder")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("make-softlabels", help="store a teacher's softened class distributions")
    p.add_argument("checkpoint", help="teacher checkpoint path")
    _add_common(p)
    p.set_defaults(func=cmd_make_softlabels)

    p = sub.add_parser("distill", help="train a student against stored soft labels")
    p.add_argument("softlabels", help="soft-label file from make-softlabels")
    _add_common(p)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("evaluate", help="score a checkpoint on the configured validation data")
    p.add_argument("checkpoint", help="model checkpoint path")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the three-arm comparison plan")
    p.add_argument("plan", help="plan file (key = value)")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of model gradients")
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ContractError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

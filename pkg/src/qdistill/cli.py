"""Command-line entry point: ``qdistill <subcommand> [flags]``.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure,
3 a declared acceptance threshold was missed.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import cnn, data, stats
from . import experiments as exp
from .checkpoint import load_checkpoint
from .errors import ConfigError, QDistillError, ThresholdError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_THRESHOLD = 0, 1, 2, 3

# flag name -> config field
FLAG_FIELDS = {
    "dataset": "dataset", "data_root": "data_root", "qubits": "qubits", "layers": "layers",
    "encoding": "encoding", "reducer": "reducer", "readout": "readout", "teacher": "teacher",
    "tau": "tau", "alpha": "alpha", "lr": "lr", "seeds": "seeds", "per_class": "per_class",
    "test_per_class": "test_per_class", "shots": "shots", "out": "out", "patience": "patience",
    "max_epochs": "max_epochs", "batch_size": "batch_size", "hidden_dim": "hidden_dim",
    "engine": "gradient_engine",
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML config file; flags override its fields")
    p.add_argument("--dataset", choices=exp.DATASETS)
    p.add_argument("--data-root", help=f"dataset directory (default ${data.DATA_ROOT_ENV})")
    p.add_argument("--qubits", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--encoding", choices=exp.ENCODINGS)
    p.add_argument("--reducer")
    p.add_argument("--readout", choices=exp.READOUTS)
    p.add_argument("--teacher", help="lenet | alexnet | logits:<path> | none")
    p.add_argument("--tau", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--seeds", help="comma-separated seed list, e.g. 0,1,2")
    p.add_argument("--per-class", type=int)
    p.add_argument("--test-per-class", type=int)
    p.add_argument("--shots", type=int, help="measurement shots at evaluation; 0 = analytic")
    p.add_argument("--patience", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--engine", choices=("adjoint", "parameter-shift"))
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qdistill", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", help="train the classical teacher and export its logits")
    _common(p)
    p.add_argument("--min-teacher-acc", type=float, help="exit 3 if test accuracy is below this")

    p = sub.add_parser("export-logits", help="write a logits file from a teacher checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--logits-out", required=True)

    p = sub.add_parser("train-student", help="baseline students (no teacher)")
    _common(p)

    p = sub.add_parser("distill", help="baseline vs distilled students with paired statistics")
    _common(p)
    p.add_argument("--min-gain", type=float, help="required mean gain in accuracy points")
    p.add_argument("--max-p", type=float, help="required paired t-test p-value bound")

    p = sub.add_parser("ablate-reducers", help="compare dimensionality reducers")
    _common(p)
    p.add_argument("--reducers", default="fc,avgpool,maxpool,crop,pca")

    p = sub.add_parser("ablate-encodings", help="compare data encodings")
    _common(p)
    p.add_argument("--encodings", default="amplitude,angle,qubit")

    p = sub.add_parser("sweep", help="tau x alpha grid of validation accuracies")
    _common(p)
    p.add_argument("--taus", default=",".join(f"{t:g}" for t in exp.SWEEP_TAUS))
    p.add_argument("--alphas", default=",".join(f"{a:g}" for a in exp.SWEEP_ALPHAS))

    p = sub.add_parser("report", help="print a previously emitted report")
    p.add_argument("csv", help="report .csv file")
    return parser


def config_from_args(args) -> exp.ExperimentConfig:
    overrides = {field: getattr(args, flag) for flag, field in FLAG_FIELDS.items()
                 if getattr(args, flag, None) is not None}
    if args.config:
        return exp.load_config_file(args.config, overrides)
    return exp.validate_config({}, overrides)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _print_report(report_base: str):
    with open(report_base + ".txt") as fh:
        sys.stdout.write(fh.read())


def cmd_train_teacher(args, cfg):
    if not cfg.has_teacher or cfg.teacher.startswith("logits:"):
        raise ConfigError("train-teacher needs --teacher lenet or alexnet")
    prep = exp.prepare_data(cfg)
    art = exp.obtain_teacher(cfg, prep)
    report = stats.ExperimentReport("teacher", config=cfg.to_dict())
    report.add_run(f"teacher:{cfg.teacher}", stats.RunResult(cfg.teacher_seed, art.test_accuracy,
                                                             epochs=art.epochs))
    report.parameter_counts[f"teacher:{cfg.teacher}"] = stats.count_parameters(art.net)
    stats.emit_report(report, os.path.join(cfg.out, "teacher"))
    _print_report(os.path.join(cfg.out, "teacher"))
    if args.min_teacher_acc is not None and art.test_accuracy < args.min_teacher_acc:
        raise ThresholdError(f"teacher accuracy {art.test_accuracy:.4f} < {args.min_teacher_acc}")


def cmd_export_logits(args, cfg):
    prep = exp.prepare_data(cfg)
    net = exp.build_teacher_net(cfg, prep.teacher_train.images.shape[1:])
    params, _ = load_checkpoint(args.checkpoint)
    scalar_all = data.Dataset(np.concatenate([prep.teacher_train.images, prep.teacher_val.images]),
                              np.concatenate([prep.teacher_train.labels, prep.teacher_val.labels]),
                              indices=np.concatenate([prep.teacher_train.indices, prep.teacher_val.indices]))
    table = data.TeacherLogits.from_arrays(cfg.teacher, scalar_all.indices,
                                           cnn.predict(net, params, scalar_all.images))
    table.save(args.logits_out)
    print(f"wrote {len(table)} rows to {args.logits_out}")


def cmd_train_student(args, cfg):
    cfg = replace(cfg, alpha=0.0, teacher="none")
    exp.run_experiment(cfg, baseline=True, distilled=False, name="train-student")
    _print_report(os.path.join(cfg.out, "train-student"))


def cmd_distill(args, cfg):
    report = exp.run_experiment(cfg, name="distill")
    _print_report(os.path.join(cfg.out, "distill"))
    comp = next((c for c in report.comparisons if c.test.startswith("paired")), None)
    if comp is None:
        return
    if args.min_gain is not None and 100 * comp.delta_mean < args.min_gain:
        raise ThresholdError(f"gain {100 * comp.delta_mean:+.2f} points < {args.min_gain}")
    if args.max_p is not None and comp.p >= args.max_p:
        raise ThresholdError(f"paired p = {comp.p:.4g} >= {args.max_p}")


def cmd_ablate_reducers(args, cfg):
    exp.ablate_reducers(cfg, [r.strip() for r in args.reducers.split(",") if r.strip()])
    _print_report(os.path.join(cfg.out, "ablate-reducers"))


def cmd_ablate_encodings(args, cfg):
    exp.ablate_encodings(cfg, [e.strip() for e in args.encodings.split(",") if e.strip()])
    _print_report(os.path.join(cfg.out, "ablate-encodings"))


def cmd_sweep(args, cfg):
    exp.run_sweep(cfg, _floats(args.taus), _floats(args.alphas))
    _print_report(os.path.join(cfg.out, "sweep"))


def cmd_report(args):
    base = args.csv[:-4] if args.csv.endswith(".csv") else args.csv
    if not os.path.exists(base + ".csv"):
        raise FileNotFoundError(f"{base}.csv does not exist")
    report = stats.read_report(base + ".csv")
    stats.emit_report(report, base)
    _print_report(base)


COMMANDS = {
    "train-teacher": cmd_train_teacher, "export-logits": cmd_export_logits,
    "train-student": cmd_train_student, "distill": cmd_distill,
    "ablate-reducers": cmd_ablate_reducers, "ablate-encodings": cmd_ablate_encodings,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            cmd_report(args)
            return EXIT_OK
        cfg = config_from_args(args)
        COMMANDS[args.command](args, cfg)
    except ThresholdError as exc:
        print(f"threshold not met: {exc}", file=sys.stderr)
        return EXIT_THRESHOLD
    except ConfigError as exc:
        for line in getattr(exc, "errors", [str(exc)]):
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except (QDistillError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

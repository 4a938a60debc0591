"""Declarative experiment configs and the end-to-end recipes behind the CLI.

A run loads a balanced subset, trains (or loads) a frozen teacher, then
trains a baseline student (alpha = 0) and a distilled student for every seed
and assembles an :class:`~qdistill.stats.ExperimentReport`.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from . import cnn, data, stats, train
from . import reduce as red
from .checkpoint import load_checkpoint, save_checkpoint
from .distill import DistillConfig
from .encode import AMPLITUDE, ANGLE, AXES, BASIS, EncodingKind
from .errors import ConfigError, ValidationError

log = logging.getLogger(__name__)

DATASETS = ("mnist", "fashionmnist", "cifar10")
ENCODINGS = (AMPLITUDE, ANGLE, BASIS)
READOUTS = (train.LINEAR_HEAD, train.BASIS_PROBS)
NATIVE_TEACHERS = ("lenet", "alexnet")
SWEEP_TAUS = (1.0, 2.0, 5.0)
SWEEP_ALPHAS = tuple(round(0.1 * k, 1) for k in range(1, 11))


@dataclass(frozen=True)
class ExperimentConfig:
    data_root: str
    dataset: str = "mnist"
    per_class: int = 200
    test_per_class: int = 100
    data_seed: int = 0
    val_fraction: float = 0.1
    qubits: int = 4
    layers: int = 2
    encoding: str = AMPLITUDE
    rotation_axis: str | None = None
    reducer: str = red.FC
    hidden_dim: int = 32
    readout: str = train.LINEAR_HEAD
    teacher: str = "lenet"
    teacher_seed: int = 0
    teacher_patience: int = 20
    teacher_width: float = 0.125   # AlexNet channel multiplier; 1.0 is the full 94.7M-parameter net
    tau: float = 2.0
    alpha: float = 0.4
    lr: float = 1e-3
    max_epochs: int = 1000
    patience: int = 10
    batch_size: int = 32
    gradient_engine: str = train.ADJOINT
    clip_norm: float | None = 10.0
    seeds: tuple = (0, 1, 2, 3, 4)
    shots: int = 1024
    out: str = "runs/experiment"

    @property
    def num_classes(self) -> int:
        return 10

    @property
    def target_dim(self) -> int:
        return self.encoding_kind.feature_dim(self.qubits)

    @property
    def encoding_kind(self) -> EncodingKind:
        return EncodingKind(self.encoding, self.rotation_axis if self.encoding == ANGLE else None)

    @property
    def has_teacher(self) -> bool:
        return self.teacher != "none"

    def distill_config(self, alpha: float | None = None) -> DistillConfig:
        return DistillConfig(self.tau, self.alpha if alpha is None else alpha)

    def loop_config(self, seed: int) -> train.TrainLoopConfig:
        return train.TrainLoopConfig(self.max_epochs, self.patience, self.batch_size, seed,
                                     self.gradient_engine, self.lr, "adam", self.clip_norm)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    def fingerprint(self, *ignore: str) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in ("out",) + ignore}
        return stats.config_fingerprint(d)


FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name, value):
    kind = FIELD_TYPES[name]
    if value is None or (isinstance(value, str) and value.lower() in ("none", "null", "")):
        if "None" in kind:
            return None
        if name in ("teacher",):
            return "none"
    if name == "seeds":
        if isinstance(value, int):
            return tuple(range(value))
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        return tuple(int(v) for v in value)
    if kind.startswith("int"):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"expected an integer, got {value}")
        return int(value)
    if kind.startswith("float"):
        return float(value)
    return str(value)


def parse_config_text(text: str) -> dict:
    """Parse a YAML (or ``key: value`` per line) config into a plain dict."""
    raw = yaml.safe_load(text) if text.strip() else {}
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ValidationError(["config must be a mapping of field names to values"])
    return {str(k).replace("-", "_"): v for k, v in raw.items()}


def validate_config(raw, overrides: dict | None = None) -> ExperimentConfig:
    """Check every field and cross-field rule; fill defaults.

    ``raw`` is config text or a dict; ``overrides`` (e.g. CLI flags) win over
    it. All problems are collected and raised together as a
    :class:`~qdistill.errors.ValidationError`.
    """
    values = parse_config_text(raw) if isinstance(raw, str) else dict(raw or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    errors, clean = [], {}
    for key, value in values.items():
        if key not in FIELD_TYPES:
            errors.append(f"unknown field {key!r}")
            continue
        try:
            clean[key] = _coerce(key, value)
        except (TypeError, ValueError) as exc:
            errors.append(f"{key}: {exc}")
    if not clean.get("data_root"):
        env = os.environ.get(data.DATA_ROOT_ENV)
        if env:
            clean["data_root"] = env
        else:
            errors.append(f"data_root is required (field, --data-root or ${data.DATA_ROOT_ENV})")
            clean["data_root"] = ""
    cfg = ExperimentConfig(**clean) if not errors else None
    if cfg is None:
        raise ValidationError(errors)
    errors.extend(_cross_check(cfg))
    if errors:
        raise ValidationError(errors)
    if cfg.encoding == ANGLE and cfg.rotation_axis is None:
        cfg = replace(cfg, rotation_axis="Y")
    return cfg


def _cross_check(cfg: ExperimentConfig) -> list[str]:
    errs = []
    if cfg.dataset not in DATASETS:
        errs.append(f"dataset must be one of {DATASETS}, got {cfg.dataset!r}")
    if not 1 <= cfg.qubits <= 12:
        errs.append(f"qubits must lie in 1..12, got {cfg.qubits}")
    if cfg.layers < 1:
        errs.append("layers must be >= 1")
    if cfg.encoding not in ENCODINGS:
        errs.append(f"encoding must be one of {ENCODINGS}, got {cfg.encoding!r}")
    elif cfg.rotation_axis is not None and (cfg.encoding != ANGLE or cfg.rotation_axis not in AXES):
        errs.append(f"rotation_axis must be one of {AXES} and only with angle encoding")
    if cfg.reducer not in red.REDUCER_KINDS:
        errs.append(f"reducer must be one of {red.REDUCER_KINDS}, got {cfg.reducer!r}")
    elif cfg.encoding in ENCODINGS and cfg.reducer != red.FC and cfg.encoding != AMPLITUDE:
        errs.append(f"reducer {cfg.reducer!r} with {cfg.encoding} encoding is unsupported; "
                    "frozen reducers feed amplitude encoding only")
    elif cfg.reducer in (red.CROP, red.MAXPOOL, red.AVGPOOL) and cfg.encoding == AMPLITUDE \
            and 1 <= cfg.qubits <= 12 and cfg.qubits % 2:
        errs.append(f"{cfg.reducer} needs a square feature grid; 2**{cfg.qubits} is not square")
    if cfg.readout not in READOUTS:
        errs.append(f"readout must be one of {READOUTS}, got {cfg.readout!r}")
    elif cfg.readout == train.BASIS_PROBS and 1 <= cfg.qubits <= 12 and 2**cfg.qubits < cfg.num_classes:
        errs.append(f"basis readout needs 2**qubits >= {cfg.num_classes}")
    if not (cfg.teacher in NATIVE_TEACHERS + ("none",) or cfg.teacher.startswith("logits:")):
        errs.append(f"teacher must be lenet, alexnet, logits:<path> or none, got {cfg.teacher!r}")
    if cfg.teacher == "lenet" and cfg.dataset == "cifar10":
        errs.append("the LeNet teacher takes 28x28 grayscale input; use alexnet or logits:<path> for cifar10")
    if cfg.tau <= 0:
        errs.append("tau must be > 0")
    if not 0 <= cfg.alpha <= 1:
        errs.append("alpha must lie in [0, 1]")
    if cfg.teacher == "none" and cfg.alpha > 0:
        errs.append("distillation weight without teacher (alpha > 0 needs a teacher)")
    if cfg.lr <= 0:
        errs.append("lr must be > 0")
    for name in ("per_class", "test_per_class", "max_epochs", "patience", "teacher_patience",
                 "batch_size", "hidden_dim"):
        if getattr(cfg, name) < 1:
            errs.append(f"{name} must be >= 1")
    if not 0 < cfg.val_fraction < 1:
        errs.append("val_fraction must lie in (0, 1)")
    if cfg.shots < 0:
        errs.append("shots must be >= 0 (0 means analytic evaluation)")
    if not cfg.seeds:
        errs.append("seeds must not be empty")
    elif len(set(cfg.seeds)) != len(cfg.seeds):
        errs.append("seeds must be distinct")
    if cfg.gradient_engine not in (train.ADJOINT, train.PARAMETER_SHIFT):
        errs.append(f"gradient_engine must be adjoint or parameter-shift, got {cfg.gradient_engine!r}")
    if not 0 < cfg.teacher_width <= 1:
        errs.append("teacher_width must lie in (0, 1]")
    return errs


def load_config_file(path, overrides: dict | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return validate_config(fh.read(), overrides)


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------

# max/avg of z-scores would select rare-pixel outliers rather than ink; crop
# stays on z-scores since a raw 4x4 centre patch is often blank
SPATIAL_REDUCERS = (red.MAXPOOL, red.AVGPOOL)


@dataclass
class PreparedData:
    """Train/val/test splits in three views: scalar-standardised for the teacher,
    per-feature z-scored for most students, and raw pixel intensities for
    the pooling reducers."""
    train_all: data.Dataset
    teacher_train: data.Dataset
    teacher_val: data.Dataset
    teacher_test: data.Dataset
    train: data.Dataset
    val: data.Dataset
    test: data.Dataset
    normalizer: data.Normalizer
    pixels: tuple = ()
    notes: list = field(default_factory=list)

    def student_splits(self, reducer: str) -> tuple:
        """(train, val, test) as seen by a student with this reducer."""
        if reducer in SPATIAL_REDUCERS and self.pixels:
            return self.pixels
        return self.train, self.val, self.test


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    full_train = data.load_dataset(cfg.dataset, cfg.data_root, "train")
    full_test = data.load_dataset(cfg.dataset, cfg.data_root, "test")
    train_all = data.subset(full_train, cfg.per_class, cfg.data_seed)
    test = data.subset(full_test, cfg.test_per_class, cfg.data_seed)
    trn, val = data.stratified_split(train_all, cfg.val_fraction, cfg.data_seed)

    mu, sigma = float(trn.images.mean()), float(trn.images.std())

    def scalar(ds):
        return replace(ds, images=(ds.images - mu) / sigma)

    norm = data.fit_normalizer(trn)
    notes = []
    if norm.num_degenerate:
        notes.append(f"{norm.num_degenerate} constant input features normalised to 0")
    return PreparedData(train_all, scalar(trn), scalar(val), scalar(test),
                        data.apply_normalizer(trn, norm), data.apply_normalizer(val, norm),
                        data.apply_normalizer(test, norm), norm, (trn, val, test), notes)


# ---------------------------------------------------------------------------
# Teacher
# ---------------------------------------------------------------------------

def build_teacher_net(cfg: ExperimentConfig, input_shape) -> cnn.NetworkSpec:
    if cfg.teacher == "lenet":
        return cnn.build_lenet_teacher(cfg.num_classes)
    return cnn.build_alexnet_teacher(cfg.num_classes, tuple(input_shape), width=cfg.teacher_width)


@dataclass
class TeacherArtifacts:
    logits: data.TeacherLogits
    test_accuracy: float | None
    net: cnn.NetworkSpec | None = None
    params: dict | None = None
    epochs: int = 0


def _teacher_key(cfg: ExperimentConfig) -> str:
    keep = ("dataset", "data_root", "per_class", "test_per_class", "data_seed", "val_fraction",
            "teacher", "teacher_seed", "teacher_patience", "teacher_width", "max_epochs", "lr",
            "batch_size", "clip_norm")
    return stats.config_fingerprint({k: getattr(cfg, k) for k in keep})


def obtain_teacher(cfg: ExperimentConfig, prep: PreparedData) -> TeacherArtifacts | None:
    """Train a native teacher (cached in ``cfg.out``) or ingest a logits file."""
    if not cfg.has_teacher:
        return None
    if cfg.teacher.startswith("logits:"):
        table = data.load_teacher_logits(cfg.teacher[len("logits:"):], prep.train_all)
        return TeacherArtifacts(table, None)

    net = build_teacher_net(cfg, prep.teacher_train.images.shape[1:])
    key = _teacher_key(cfg)
    ckpt = os.path.join(cfg.out, f"teacher-{cfg.teacher}-{key}.qdck")
    if os.path.exists(ckpt):
        params, meta = load_checkpoint(ckpt)
        log.info("reusing cached teacher %s", ckpt)
        epochs = meta.get("epochs", 0)
    else:
        loop = train.TrainLoopConfig(cfg.max_epochs, cfg.teacher_patience, cfg.batch_size,
                                     cfg.teacher_seed, learning_rate=cfg.lr, clip_norm=cfg.clip_norm)
        params, history = train.fit_teacher(net, prep.teacher_train, prep.teacher_val, loop)
        epochs = len(history)
        os.makedirs(cfg.out, exist_ok=True)
        save_checkpoint(ckpt, params, {"teacher": cfg.teacher, "epochs": epochs, "key": key})
        with open(os.path.join(cfg.out, f"teacher-{cfg.teacher}-history.jsonl"), "w") as fh:
            fh.write(history.to_jsonl())
    acc = stats.accuracy(cnn.predict(net, params, prep.teacher_test.images).argmax(axis=1),
                         prep.teacher_test.labels)
    everything = data.Dataset(np.concatenate([prep.teacher_train.images, prep.teacher_val.images]),
                              np.concatenate([prep.teacher_train.labels, prep.teacher_val.labels]),
                              indices=np.concatenate([prep.teacher_train.indices,
                                                      prep.teacher_val.indices]))
    table = train.export_teacher_logits(net, params, everything, cfg.teacher)
    table.save(os.path.join(cfg.out, f"teacher-{cfg.teacher}.logits"))
    return TeacherArtifacts(table, acc, net, params, epochs)


# ---------------------------------------------------------------------------
# Students
# ---------------------------------------------------------------------------

def build_student_for(cfg: ExperimentConfig, prep: PreparedData, seed: int) -> train.StudentModel:
    basis = None
    if cfg.reducer == red.PCA:
        cache = os.path.join(cfg.out, "pca")
        key = f"{cfg.dataset}-{prep.train.tag.split(':')[-1]}"
        basis = red.load_pca(cache, key, cfg.target_dim)
        if basis is None:
            gray = red.to_grayscale(prep.train.images).reshape(len(prep.train), -1)
            basis = red.pca_fit(gray, cfg.target_dim)
            red.save_pca(basis, cache, key)
    input_dim = int(np.prod(prep.train.images.shape[1:]))
    return train.build_student(cfg.qubits, cfg.layers, cfg.encoding_kind, cfg.reducer, input_dim,
                               cfg.num_classes, cfg.readout, cfg.hidden_dim,
                               np.random.default_rng(seed), basis)


@dataclass
class StudentRun:
    model: train.StudentModel
    history: train.History
    accuracy: float
    shot_accuracy: float | None
    correct: np.ndarray


def train_student(cfg: ExperimentConfig, prep: PreparedData, teacher: TeacherArtifacts | None,
                  seed: int, alpha: float, tag: str | None = None) -> StudentRun:
    model = build_student_for(cfg, prep, seed)
    trn, val, test = prep.student_splits(cfg.reducer)
    table = teacher.logits if (teacher is not None and alpha > 0) else None
    best, history = train.fit(model, trn, val, table, cfg.distill_config(alpha),
                              cfg.loop_config(seed))
    x_test = train._student_inputs(best, test)
    preds = train.predict_student(best, x_test)
    correct = preds == test.labels
    shot_acc = None
    if cfg.shots:
        shot_preds = train.predict_student(best, x_test, shots=cfg.shots,
                                           rng=np.random.default_rng(seed))
        shot_acc = stats.accuracy(shot_preds, test.labels)
    if tag:
        os.makedirs(os.path.join(cfg.out, "checkpoints"), exist_ok=True)
        base = os.path.join(cfg.out, "checkpoints", f"{tag}-seed{seed}")
        save_checkpoint(base + ".qdck", best.params,
                        {"seed": seed, "alpha": alpha, "config": cfg.fingerprint()})
        with open(base + ".history.jsonl", "w") as fh:
            fh.write(history.to_jsonl())
    return StudentRun(best, history, float(correct.mean()), shot_acc, correct)


def _record(report: stats.ExperimentReport, arm: str, run: StudentRun, seed: int, fp: str,
            shots: int):
    n = run.correct.size
    report.add_run(arm, stats.RunResult(seed, run.accuracy, int(run.correct.sum()), n,
                                        len(run.history), run.history.best_epoch, fp))
    if run.shot_accuracy is not None:
        report.add_run(f"{arm}@{shots}shots", stats.RunResult(
            seed, run.shot_accuracy, int(round(run.shot_accuracy * n)), n,
            len(run.history), run.history.best_epoch, fp))


def run_experiment(cfg: ExperimentConfig, baseline: bool = True, distilled: bool = True,
                   emit: bool = True, name: str = "experiment") -> stats.ExperimentReport:
    """Teacher (if any), then baseline and distilled students for every seed."""
    prep = prepare_data(cfg)
    teacher = obtain_teacher(cfg, prep) if (distilled and cfg.has_teacher) else None
    distilled = distilled and teacher is not None and cfg.alpha > 0
    fp = cfg.fingerprint()
    report = stats.ExperimentReport(name, config=cfg.to_dict(), notes=list(prep.notes))
    if teacher is not None and teacher.test_accuracy is not None:
        report.add_run(f"teacher:{cfg.teacher}", stats.RunResult(
            cfg.teacher_seed, teacher.test_accuracy, total=len(prep.test), epochs=teacher.epochs,
            fingerprint=fp))
        report.parameter_counts[f"teacher:{cfg.teacher}"] = stats.count_parameters(teacher.net)
    last = {}
    for seed in cfg.seeds:
        if baseline:
            last["baseline"] = train_student(cfg, prep, teacher, seed, 0.0, "baseline")
            _record(report, "baseline", last["baseline"], seed, fp, cfg.shots)
        if distilled:
            last["distilled"] = train_student(cfg, prep, teacher, seed, cfg.alpha, "distilled")
            _record(report, "distilled", last["distilled"], seed, fp, cfg.shots)
        log.info("seed %s done: %s", seed, {k: v.accuracy for k, v in last.items()})
    if last:
        report.parameter_counts["student"] = stats.count_parameters(next(iter(last.values())).model)
    if baseline and distilled:
        if len(cfg.seeds) >= 2:
            report.compare("distilled", "baseline")
            if cfg.shots:
                report.compare(f"distilled@{cfg.shots}shots", f"baseline@{cfg.shots}shots")
        mc = stats.mcnemar_test(last["distilled"].correct, last["baseline"].correct)
        report.comparisons.append(stats.Comparison(
            "distilled", "baseline", float(last["distilled"].correct.mean() - last["baseline"].correct.mean()),
            float(mc.only_a - mc.only_b), 1, mc.p, test=f"McNemar per sample (seed {cfg.seeds[-1]})"))
    if emit:
        stats.emit_report(report, os.path.join(cfg.out, name))
    return report


# ---------------------------------------------------------------------------
# Ablations and sweeps
# ---------------------------------------------------------------------------

def _ablate(cfg: ExperimentConfig, field_name: str, values, name: str, emit: bool):
    """One arm per value of ``field_name``; each arm is the distilled student
    when a teacher is configured, otherwise the plain baseline."""
    prep = prepare_data(cfg)
    teacher = obtain_teacher(cfg, prep)
    report = stats.ExperimentReport(name, config=cfg.to_dict(), notes=list(prep.notes))
    fp = cfg.fingerprint()
    alpha = cfg.alpha if teacher is not None else 0.0
    for value in values:
        arm_cfg = replace(cfg, **{field_name: value})
        if field_name == "encoding":
            arm_cfg = replace(arm_cfg, rotation_axis="Y" if value == ANGLE else None)
        errs = _cross_check(arm_cfg)
        if errs:
            raise ValidationError([f"{field_name}={value}: {e}" for e in errs])
        for seed in cfg.seeds:
            run = train_student(arm_cfg, prep, teacher, seed, alpha)
            _record(report, value, run, seed, fp, cfg.shots)
        report.parameter_counts[value] = stats.count_parameters(run.model)
    if emit:
        stats.emit_report(report, os.path.join(cfg.out, name))
    return report


def ablate_encodings(cfg: ExperimentConfig, encodings=ENCODINGS, emit: bool = True):
    """Amplitude / angle / qubit encodings, each fed by the FC reducer."""
    return _ablate(replace(cfg, reducer=red.FC), "encoding", encodings, "ablate-encodings", emit)


def ablate_reducers(cfg: ExperimentConfig, reducers=(red.FC, red.AVGPOOL, red.MAXPOOL, red.CROP, red.PCA),
                    emit: bool = True):
    """Reducer strategies under amplitude encoding."""
    return _ablate(replace(cfg, encoding=AMPLITUDE, rotation_axis=None), "reducer", reducers,
                   "ablate-reducers", emit)


def run_sweep(cfg: ExperimentConfig, taus=SWEEP_TAUS, alphas=SWEEP_ALPHAS, emit: bool = True):
    """Best validation accuracy of the distilled student on a tau x alpha grid.

    Uses the first seed only. Returns ``{(tau, alpha): val_accuracy}``.
    """
    if not cfg.has_teacher:
        raise ConfigError("a sweep over alpha needs a teacher")
    prep = prepare_data(cfg)
    teacher = obtain_teacher(cfg, prep)
    seed = cfg.seeds[0]
    grid = {}
    for tau in taus:
        for alpha in alphas:
            cell = replace(cfg, tau=float(tau))
            model = build_student_for(cell, prep, seed)
            table = teacher.logits if alpha > 0 else None
            trn, val, _ = prep.student_splits(cell.reducer)
            _, history = train.fit(model, trn, val, table,
                                   DistillConfig(float(tau), float(alpha)), cell.loop_config(seed))
            grid[(float(tau), float(alpha))] = history.best_val_accuracy
            log.info("sweep tau=%s alpha=%s val=%.4f", tau, alpha, history.best_val_accuracy)
    if emit:
        write_sweep(grid, os.path.join(cfg.out, "sweep"), cfg)
    return grid


def write_sweep(grid: dict, base: str, cfg: ExperimentConfig | None = None) -> tuple[str, str]:
    taus = sorted({t for t, _ in grid})
    alphas = sorted({a for _, a in grid})
    os.makedirs(os.path.dirname(base) or ".", exist_ok=True)
    with open(base + ".csv", "w") as fh:
        fh.write("tau," + ",".join(f"alpha={a:g}" for a in alphas) + "\n")
        for t in taus:
            fh.write(f"{t:g}," + ",".join(repr(grid[(t, a)]) for a in alphas) + "\n")
    lines = ["validation accuracy (%), rows tau, columns alpha", ""]
    lines.append("tau\\alpha " + " ".join(f"{a:>6g}" for a in alphas))
    for t in taus:
        lines.append(f"{t:>9g} " + " ".join(f"{100 * grid[(t, a)]:6.2f}" for a in alphas))
    if cfg is not None:
        lines += ["", f"config fingerprint: {cfg.fingerprint()}"]
    with open(base + ".txt", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if cfg is not None:
        with open(base + ".json", "w") as fh:
            json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
    return base + ".csv", base + ".txt"

"""Hybrid student (reducer -> encoder -> PQC -> readout) and the training loops."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import cnn
from . import reduce as red
from .data import Dataset, TeacherLogits, iterate_minibatches
from .distill import DistillConfig, distill_loss
from .encode import AMPLITUDE, BASIS, EncodingKind, encode_batch, encode_vjp
from .errors import ConfigError, DegenerateInputError
from .qsim import (CircuitSpec, build_student_circuit, gradient_adjoint,
                   gradient_parameter_shift, probabilities, sample_probabilities,
                   simulate, z_signs)

log = logging.getLogger(__name__)

LINEAR_HEAD, BASIS_PROBS = "linear", "basis"
ADJOINT, PARAMETER_SHIFT = "adjoint", "parameter-shift"
READOUT_EPS = 1e-12


# ---------------------------------------------------------------------------
# Student model
# ---------------------------------------------------------------------------

@dataclass
class StudentModel:
    reducer: red.ReducerKind
    encoding: EncodingKind
    circuit: CircuitSpec
    readout: str
    num_classes: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        q = self.circuit.num_qubits
        if self.reducer.target_dim != self.encoding.feature_dim(q):
            raise ConfigError(
                f"reducer emits {self.reducer.target_dim} features but {self.encoding.kind} "
                f"encoding on {q} qubits needs {self.encoding.feature_dim(q)}")
        if self.readout not in (LINEAR_HEAD, BASIS_PROBS):
            raise ConfigError(f"unknown readout {self.readout!r}")
        if self.readout == BASIS_PROBS and 2**q < self.num_classes:
            raise ConfigError(f"basis readout needs 2**Q >= C ({2**q} < {self.num_classes})")

    @property
    def num_qubits(self) -> int:
        return self.circuit.num_qubits

    def copy(self) -> "StudentModel":
        return StudentModel(self.reducer, self.encoding, self.circuit, self.readout,
                            self.num_classes, {k: v.copy() for k, v in self.params.items()})


def build_student(num_qubits: int, layers: int, encoding: EncodingKind, reducer: str,
                  input_dim: int, num_classes: int = 10, readout: str = LINEAR_HEAD,
                  hidden_dim: int = 32, rng: np.random.Generator | None = None,
                  fitted_basis: red.PCABasis | None = None) -> StudentModel:
    """Assemble a student with freshly initialised trainable parameters.

    Circuit angles start uniform in [-pi, pi]; FC reducer and linear head use
    the symmetric uniform scheme with zero biases.
    """
    rng = np.random.default_rng() if rng is None else rng
    circuit = build_student_circuit(num_qubits, layers)
    target = encoding.feature_dim(num_qubits)
    if reducer != red.FC and encoding.kind != AMPLITUDE:
        raise ConfigError(f"reducer {reducer!r} only pairs with amplitude encoding")
    kind = red.ReducerKind(reducer, target, hidden_dim, fitted_basis)
    params = {}
    if kind.trainable:
        params.update(red.init_fc_reducer(input_dim, hidden_dim, target, rng))
    params["circuit.theta"] = rng.uniform(-np.pi, np.pi, size=circuit.num_params)
    if readout == LINEAR_HEAD:
        lim = np.sqrt(6.0 / (num_qubits + num_classes))
        params["head.W"] = rng.uniform(-lim, lim, size=(num_qubits, num_classes))
        params["head.b"] = np.zeros(num_classes)
    return StudentModel(kind, encoding, circuit, readout, num_classes, params)


def _features(model: StudentModel, images: np.ndarray):
    if model.reducer.trainable:
        flat = np.asarray(images, dtype=float).reshape(len(images), -1)
        return red.fc_forward(flat, model.params)
    if images.ndim == 2 and images.shape[1] == model.reducer.target_dim:
        return images, None  # already reduced
    return red.apply_frozen(model.reducer, images), None


def student_forward(model: StudentModel, images: np.ndarray, return_cache: bool = False,
                    keys=None, shots: int = 0, rng: np.random.Generator | None = None):
    """Class logits ``(B, C)`` for an image batch.

    ``images`` may also be pre-reduced ``(B, target_dim)`` features when the
    reducer is frozen. With ``shots > 0`` the basis probabilities are replaced
    by multinomial estimates before the readout (evaluation only).
    """
    feats, red_cache = _features(model, images)
    q = model.num_qubits
    try:
        amps_in, enc_cache = encode_batch(model.encoding, feats, q)
    except DegenerateInputError as exc:
        if keys is not None:
            raise DegenerateInputError(f"{exc} (sample keys {list(np.asarray(keys))})") from exc
        raise
    psi = simulate(model.circuit, model.params["circuit.theta"], amps_in)
    probs = probabilities(psi)
    if shots:
        probs = sample_probabilities(probs, shots, rng or np.random.default_rng())
    if model.readout == LINEAR_HEAD:
        readin = probs @ z_signs(q)
        logits = readin @ model.params["head.W"] + model.params["head.b"]
    else:
        c = model.num_classes
        readin = probs[:, :c] + READOUT_EPS
        logits = np.log(readin) - np.log(readin.sum(axis=1, keepdims=True))
    if not return_cache:
        return logits
    return logits, {"red": red_cache, "enc": enc_cache, "amps_in": amps_in, "psi": psi,
                    "readin": readin, "feats": feats}


def student_backward(model: StudentModel, cache: dict, dlogits: np.ndarray,
                     engine: str = ADJOINT) -> dict[str, np.ndarray]:
    """Gradients of the loss w.r.t. every trainable parameter, given dL/dlogits."""
    grads = {}
    cost_cot = prob_cot = None
    if model.readout == LINEAR_HEAD:
        grads["head.W"] = cache["readin"].T @ dlogits
        grads["head.b"] = dlogits.sum(axis=0)
        cost_cot = dlogits @ model.params["head.W"].T
    else:
        c = model.num_classes
        readin = cache["readin"]
        prob_cot = np.zeros(cache["psi"].shape)
        prob_cot[:, :c] = dlogits / readin - dlogits.sum(axis=1, keepdims=True) / readin.sum(axis=1, keepdims=True)

    theta = model.params["circuit.theta"]
    need_input = model.reducer.trainable and model.encoding.differentiable
    if engine == PARAMETER_SHIFT:
        grads["circuit.theta"] = gradient_parameter_shift(
            model.circuit, theta, cache["amps_in"], cost_cot, prob_cot)
        if need_input:
            warnings.warn("parameter-shift engine: reducer gradients still use the adjoint input path",
                          stacklevel=2)
            _, lam = gradient_adjoint(model.circuit, theta, cache["amps_in"], cost_cot, prob_cot,
                                      final_state=cache["psi"])
    elif engine == ADJOINT:
        grads["circuit.theta"], lam = gradient_adjoint(
            model.circuit, theta, cache["amps_in"], cost_cot, prob_cot, final_state=cache["psi"])
    else:
        raise ConfigError(f"unknown gradient engine {engine!r}")

    if need_input:
        dfeat = encode_vjp(model.encoding, cache["enc"], lam)
        grads.update(red.fc_backward(model.params, cache["red"], dfeat))
    return grads


def student_loss_and_grads(model: StudentModel, images, labels, teacher_logits,
                           cfg: DistillConfig, engine: str = ADJOINT, keys=None):
    logits, cache = student_forward(model, images, return_cache=True, keys=keys)
    total, parts, dlogits = distill_loss(teacher_logits, logits, labels, cfg, return_grad=True)
    return total, parts, student_backward(model, cache, dlogits, engine)


# ---------------------------------------------------------------------------
# Optimiser
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")


def adam_step(state: OptimizerState, params: dict, grads: dict) -> dict:
    """One update of ``params`` in place (and returned); SGD mode is ``theta -= lr * g``."""
    state.t += 1
    lr = state.learning_rate
    for key, g in grads.items():
        if state.kind == "sgd":
            params[key] -= lr * g
            continue
        m = state.m.setdefault(key, np.zeros_like(g))
        v = state.v.setdefault(key, np.zeros_like(g))
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1**state.t)
        v_hat = v / (1 - state.beta2**state.t)
        params[key] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def clip_gradients(grads: dict, max_norm: float | None) -> float:
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# Loops
# ---------------------------------------------------------------------------

@dataclass
class TrainLoopConfig:
    max_epochs: int = 1000
    patience: int = 10
    batch_size: int = 32
    seed: int = 0
    gradient_engine: str = ADJOINT
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    clip_norm: float | None = 10.0

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigError("max_epochs and batch_size must be >= 1")


@dataclass
class History:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = 0.0
    stopped_early: bool = False

    def append(self, **record):
        self.records.append(record)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def __len__(self):
        return len(self.records)


def _early_stop_loop(loop: TrainLoopConfig, run_epoch, evaluate, snapshot, history: History):
    """Epoch loop; stops after ``patience`` epochs without a higher validation accuracy.

    ``evaluate`` returns ``(val_accuracy, val_loss)``. The kept checkpoint is
    the most accurate epoch, ties broken by the lower validation loss.
    """
    best_acc, best_loss, since = -1.0, np.inf, 0
    best_state = snapshot()
    for epoch in range(1, loop.max_epochs + 1):
        stats = run_epoch(epoch)
        val_acc, val_loss = evaluate()
        history.append(epoch=epoch, val_acc=val_acc, val_loss=val_loss, **stats)
        improved = val_acc > best_acc
        if improved or (val_acc == best_acc and val_loss < best_loss):
            best_state = snapshot()
            history.best_epoch, history.best_val_accuracy = epoch, val_acc
            best_loss = val_loss
        if improved:
            best_acc, since = val_acc, 0
        else:
            since += 1
            if since >= loop.patience:
                history.stopped_early = epoch < loop.max_epochs
                break
    return best_state


def predict_student(model: StudentModel, images: np.ndarray, shots: int = 0,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    return student_forward(model, images, shots=shots, rng=rng).argmax(axis=1)


def _student_inputs(model: StudentModel, ds: Dataset) -> np.ndarray:
    """Flattened images for the FC reducer, or frozen-reducer features computed once."""
    if model.reducer.trainable:
        return ds.images.reshape(len(ds), -1)
    return red.apply_frozen(model.reducer, ds.images)


def fit(model: StudentModel, train: Dataset, val: Dataset, teacher: TeacherLogits | None,
        cfg: DistillConfig, loop: TrainLoopConfig):
    """Train ``model`` with mini-batch Adam and early stopping on validation accuracy.

    Returns ``(best_model, history)``; the input model is not modified.
    """
    if len(train) == 0 or len(val) == 0:
        raise ConfigError("fit needs non-empty train and validation splits")
    if cfg.alpha > 0 and teacher is None:
        raise ConfigError("distillation weight alpha > 0 without teacher logits")
    model = model.copy()
    rng = np.random.default_rng(loop.seed)
    x_train, x_val = _student_inputs(model, train), _student_inputs(model, val)
    t_logits = teacher.lookup(train.indices) if (teacher is not None and cfg.alpha > 0) else None
    opt = OptimizerState(loop.optimizer, loop.learning_rate)
    history = History()

    def run_epoch(epoch):
        tot = kd = ce = 0.0
        for rows in iterate_minibatches(len(train), loop.batch_size, rng):
            t_rows = None if t_logits is None else t_logits[rows]
            loss, parts, grads = student_loss_and_grads(
                model, x_train[rows], train.labels[rows], t_rows, cfg,
                loop.gradient_engine, keys=train.indices[rows])
            clip_gradients(grads, loop.clip_norm)
            adam_step(opt, model.params, grads)
            w = len(rows) / len(train)
            tot, kd, ce = tot + w * loss, kd + w * parts["kd"], ce + w * parts["ce"]
        return {"loss": tot, "kd": kd, "ce": ce}

    def evaluate():
        logits = student_forward(model, x_val)
        loss, _ = distill_loss(None, logits, val.labels, DistillConfig(1.0, 0.0))
        return float(np.mean(logits.argmax(axis=1) == val.labels)), loss

    def snapshot():
        return {k: v.copy() for k, v in model.params.items()}

    best = _early_stop_loop(loop, run_epoch, evaluate, snapshot, history)
    model.params = best
    return model, history


def evaluate_student(model: StudentModel, ds: Dataset, shots: int = 0, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    preds = predict_student(model, _student_inputs(model, ds), shots=shots, rng=rng)
    return float(np.mean(preds == ds.labels))


def fit_teacher(net: cnn.NetworkSpec, train: Dataset, val: Dataset, loop: TrainLoopConfig,
                params: dict | None = None):
    """Plain cross-entropy training of a classical teacher with early stopping.

    Returns ``(best_params, history)``.
    """
    if len(train) == 0 or len(val) == 0:
        raise ConfigError("fit_teacher needs non-empty train and validation splits")
    rng = np.random.default_rng(loop.seed)
    params = cnn.init_params(net, rng) if params is None else {k: v.copy() for k, v in params.items()}
    opt = OptimizerState(loop.optimizer, loop.learning_rate)
    ce_only = DistillConfig(temperature=1.0, alpha=0.0)
    history = History()

    def run_epoch(epoch):
        tot = 0.0
        for rows in iterate_minibatches(len(train), loop.batch_size, rng):
            logits, caches = cnn.forward(net, params, train.images[rows], training=True,
                                         rng=rng, return_cache=True)
            loss, _, dlogits = distill_loss(None, logits, train.labels[rows], ce_only, return_grad=True)
            grads, _ = cnn.backward(net, params, caches, dlogits)
            clip_gradients(grads, loop.clip_norm)
            adam_step(opt, params, grads)
            tot += loss * len(rows) / len(train)
        return {"loss": tot, "kd": 0.0, "ce": tot}

    def evaluate():
        logits = cnn.predict(net, params, val.images)
        loss, _ = distill_loss(None, logits, val.labels, ce_only)
        return float(np.mean(logits.argmax(axis=1) == val.labels)), loss

    def snapshot():
        return {k: v.copy() for k, v in params.items()}

    best = _early_stop_loop(loop, run_epoch, evaluate, snapshot, history)
    return best, history


def export_teacher_logits(net: cnn.NetworkSpec, params: dict, ds: Dataset,
                          name: str | None = None) -> TeacherLogits:
    """Inference-mode logits for every sample of ``ds`` keyed by its source index."""
    return TeacherLogits.from_arrays(name or net.name, ds.indices, cnn.predict(net, params, ds.images))

"""Response-based distillation losses.

All functions accept a single logit vector ``(C,)`` or a batch ``(B, C)``.
Batched losses are means over samples. The KD term is *not* rescaled by
``tau**2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

PROB_FLOOR = 1e-12
LOG_FLOOR = np.log(PROB_FLOOR)


@dataclass(frozen=True)
class DistillConfig:
    temperature: float = 2.0
    alpha: float = 0.4

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")


def log_softmax_t(logits, tau: float = 1.0) -> np.ndarray:
    if not tau > 0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    z = np.asarray(logits, dtype=float) / tau
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def softmax_t(logits, tau: float = 1.0) -> np.ndarray:
    """Softmax of ``logits / tau`` with max subtraction."""
    return np.exp(log_softmax_t(logits, tau))


def cross_entropy(probs_pred, label) -> float | np.ndarray:
    """-log p[label], clamped at 1e-12. Returns one value per row for batches."""
    p = np.asarray(probs_pred, dtype=float)
    label = np.asarray(label)
    if np.any(label < 0) or np.any(label >= p.shape[-1]):
        raise ShapeError(f"label out of range for {p.shape[-1]} classes")
    picked = np.take_along_axis(np.atleast_2d(p), np.atleast_1d(label)[:, None], axis=1)[:, 0]
    out = -np.log(np.maximum(picked, PROB_FLOOR))
    return float(out[0]) if p.ndim == 1 else out


def kl_divergence(p, q) -> float | np.ndarray:
    """sum_i p_i log(p_i / q_i); zero-probability terms of ``p`` contribute 0."""
    p = np.asarray(p, dtype=float)
    q = np.maximum(np.asarray(q, dtype=float), PROB_FLOOR)
    safe_p = np.where(p > 0, p, 1.0)
    terms = np.where(p > 0, p * (np.log(safe_p) - np.log(q)), 0.0)
    out = terms.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def distill_loss(teacher_logits, student_logits, label, cfg: DistillConfig, return_grad=False):
    """Combined objective ``alpha * KD + (1 - alpha) * CE``.

    KD is ``KL(softmax(teacher / tau) || softmax(student / tau))`` and CE uses
    the unsoftened student distribution. Returns ``(total, {"kd", "ce"})``,
    plus the gradient w.r.t. ``student_logits`` when ``return_grad`` is set.
    Batched inputs are averaged; the gradient is that of the batch mean.
    """
    s = np.asarray(student_logits, dtype=float)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    labels = np.atleast_1d(np.asarray(label))
    if s.shape[1] <= labels.max() or labels.min() < 0:
        raise ShapeError(f"label out of range for {s.shape[1]} classes")
    n, c = s.shape
    tau, alpha = cfg.temperature, cfg.alpha

    log_q1 = log_softmax_t(s, 1.0)
    ce_rows = -np.maximum(log_q1[np.arange(n), labels], LOG_FLOOR)
    ce = float(ce_rows.mean())

    if teacher_logits is None:
        if alpha > 0:
            raise ConfigError("alpha > 0 requires teacher logits")
        kd, kd_rows, p_t, log_qt = 0.0, np.zeros(n), None, None
    else:
        t = np.atleast_2d(np.asarray(teacher_logits, dtype=float))
        if t.shape != s.shape:
            raise ShapeError(f"teacher logits {t.shape} vs student logits {s.shape}")
        log_pt = log_softmax_t(t, tau)
        p_t = np.exp(log_pt)
        log_qt = np.maximum(log_softmax_t(s, tau), LOG_FLOOR)
        kd_rows = np.sum(np.where(p_t > 0, p_t * (log_pt - log_qt), 0.0), axis=1)
        kd = float(kd_rows.mean())

    total = alpha * kd + (1.0 - alpha) * ce
    parts = {"kd": kd, "ce": ce}
    if not return_grad:
        return total, parts

    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    grad = (1.0 - alpha) * (np.exp(log_q1) - onehot)
    if p_t is not None and alpha > 0:
        grad = grad + alpha * (softmax_t(s, tau) - p_t) / tau
    grad /= n
    return total, parts, (grad[0] if single else grad)

"""Classical feature vectors to initial quantum states.

Each encoder has a single-sample form returning a :class:`Statevector` and a
batched form (``*_batch``) working on ``(B, D)`` feature arrays, plus the
vector-Jacobian product needed to push state gradients back into features.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError, ShapeError
from .qsim import Statevector

AMPLITUDE, ANGLE, BASIS = "amplitude", "angle", "qubit"
AXES = ("X", "Y", "Z")
NORM_EPS = 1e-12


@dataclass(frozen=True)
class EncodingKind:
    kind: str = AMPLITUDE
    rotation_axis: str | None = None

    def __post_init__(self):
        if self.kind not in (AMPLITUDE, ANGLE, BASIS):
            raise ConfigError(f"unknown encoding {self.kind!r}; expected amplitude, angle or qubit")
        if self.kind == ANGLE:
            if self.rotation_axis is None:
                object.__setattr__(self, "rotation_axis", "Y")
            if self.rotation_axis not in AXES:
                raise ConfigError(f"rotation_axis must be one of {AXES}")
        elif self.rotation_axis is not None:
            raise ConfigError("rotation_axis only applies to angle encoding")

    def feature_dim(self, num_qubits: int) -> int:
        return 2**num_qubits if self.kind == AMPLITUDE else num_qubits

    @property
    def differentiable(self) -> bool:
        return self.kind != BASIS


def _features(values, dim, what):
    x = np.asarray(values, dtype=float)
    if x.shape[-1] != dim:
        raise ShapeError(f"{what} expects {dim} features, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise ShapeError("features must be finite")
    return x


# --- amplitude ---------------------------------------------------------------

def encode_amplitude_batch(features: np.ndarray, num_qubits: int):
    """Return ``(amplitudes, norms)`` for a ``(B, 2**Q)`` feature batch."""
    x = _features(np.atleast_2d(features), 2**num_qubits, "amplitude encoding")
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms <= NORM_EPS)
    if bad.size:
        raise DegenerateInputError(f"near-zero feature norm for samples {bad.tolist()}")
    return x / norms[:, None], norms


def amplitude_vjp(amps: np.ndarray, norms: np.ndarray, grad_amps: np.ndarray) -> np.ndarray:
    """Backpropagate dL/d(normalised amplitudes) to dL/d(features)."""
    g = grad_amps.real if np.iscomplexobj(grad_amps) else grad_amps
    radial = np.sum(g * amps, axis=1, keepdims=True)
    return (g - radial * amps) / norms[:, None]


def encode_amplitude(features, num_qubits: int) -> Statevector:
    amps, _ = encode_amplitude_batch(np.asarray(features, dtype=float)[None, :], num_qubits)
    return Statevector(amps[0])


# --- angle -------------------------------------------------------------------

def _qubit_columns(x, axis):
    """Single-qubit states R_axis(x)|0> as arrays of shape (B, Q, 2)."""
    c, s = np.cos(x / 2), np.sin(x / 2)
    if axis == "Y":
        return np.stack([c, s], axis=-1).astype(complex)
    if axis == "X":
        return np.stack([c + 0j, -1j * s], axis=-1)
    return np.stack([c - 1j * s, np.zeros_like(c, dtype=complex)], axis=-1)


def _qubit_column_derivs(x, axis):
    c, s = np.cos(x / 2), np.sin(x / 2)
    if axis == "Y":
        return np.stack([-s / 2, c / 2], axis=-1).astype(complex)
    if axis == "X":
        return np.stack([-s / 2 + 0j, -0.5j * c], axis=-1)
    return np.stack([-s / 2 - 0.5j * c, np.zeros_like(c, dtype=complex)], axis=-1)


def _kron_rows(cols):
    """Tensor product over the qubit axis of (B, Q, 2) columns, qubit 0 most significant."""
    out = cols[:, 0, :]
    for q in range(1, cols.shape[1]):
        out = (out[:, :, None] * cols[:, q, None, :]).reshape(out.shape[0], -1)
    return out


def encode_angle_batch(features: np.ndarray, num_qubits: int, axis: str = "Y") -> np.ndarray:
    x = _features(np.atleast_2d(features), num_qubits, "angle encoding")
    if axis not in AXES:
        raise ConfigError(f"rotation axis must be one of {AXES}")
    return _kron_rows(_qubit_columns(x, axis))


def angle_vjp(features: np.ndarray, grad_amps: np.ndarray, axis: str = "Y") -> np.ndarray:
    """dL/dx_q = Re(<g, d psi / d x_q>) for the product state."""
    x = np.atleast_2d(features)
    cols = _qubit_columns(x, axis)
    dcols = _qubit_column_derivs(x, axis)
    out = np.empty_like(x)
    for q in range(x.shape[1]):
        mixed = cols.copy()
        mixed[:, q, :] = dcols[:, q, :]
        out[:, q] = np.sum(np.conj(grad_amps) * _kron_rows(mixed), axis=1).real
    return out


def encode_angle(features, num_qubits: int, axis: str = "Y") -> Statevector:
    return Statevector(encode_angle_batch(np.asarray(features, dtype=float)[None, :],
                                          num_qubits, axis)[0])


# --- basis -------------------------------------------------------------------

def encode_basis(index: int, num_qubits: int) -> Statevector:
    if not 0 <= index < 2**num_qubits:
        raise ShapeError(f"basis index {index} out of range for {num_qubits} qubits")
    return Statevector.basis(int(index), num_qubits)


def basis_indices(features: np.ndarray, num_qubits: int) -> np.ndarray:
    """Bit q of the index is 1 iff feature q > 0 (qubit 0 is the most significant bit)."""
    x = _features(np.atleast_2d(features), num_qubits, "basis encoding")
    bits = (x > 0).astype(np.int64)
    weights = 1 << (num_qubits - 1 - np.arange(num_qubits))
    return bits @ weights


def encode_basis_batch(features: np.ndarray, num_qubits: int) -> np.ndarray:
    idx = basis_indices(features, num_qubits)
    amps = np.zeros((idx.size, 2**num_qubits), dtype=complex)
    amps[np.arange(idx.size), idx] = 1.0
    return amps


def encode_basis_from_features(features, num_qubits: int) -> Statevector:
    return encode_basis(int(basis_indices(features, num_qubits)[0]), num_qubits)


def encode_batch(encoding: EncodingKind, features: np.ndarray, num_qubits: int):
    """Encode a batch; returns ``(amplitudes, cache)`` where cache feeds :func:`encode_vjp`."""
    if encoding.kind == AMPLITUDE:
        amps, norms = encode_amplitude_batch(features, num_qubits)
        return amps.astype(complex), (amps, norms)
    if encoding.kind == ANGLE:
        return encode_angle_batch(features, num_qubits, encoding.rotation_axis), features
    return encode_basis_batch(features, num_qubits), None


def encode_vjp(encoding: EncodingKind, cache, grad_amps: np.ndarray) -> np.ndarray | None:
    """Feature gradient for ``grad_amps``; ``None`` for basis encoding (piecewise constant)."""
    if encoding.kind == AMPLITUDE:
        amps, norms = cache
        return amplitude_vjp(amps, norms, grad_amps)
    if encoding.kind == ANGLE:
        return angle_vjp(cache, grad_amps, encoding.rotation_axis)
    return None


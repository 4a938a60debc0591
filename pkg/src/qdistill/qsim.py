"""Exact statevector simulation of layered rotation/CNOT circuits.

Bit ordering: qubit 0 is the most significant bit of a basis index, so for
two qubits the index of ``|q0 q1>`` is ``2*q0 + q1``.

Every kernel works on a batch of states stored as a complex array of shape
``(B, 2**Q)``; the single-state public functions are thin wrappers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, StructuralError

RX, RY, RZ, CNOT = "RX", "RY", "RZ", "CNOT"
ROTATIONS = (RX, RY, RZ)
MAX_QUBITS = 12
NORM_TOL = 1e-10

_PAULI = {
    RX: np.array([[0, 1], [1, 0]], dtype=complex),
    RY: np.array([[0, -1j], [1j, 0]], dtype=complex),
    RZ: np.array([[1, 0], [0, -1]], dtype=complex),
}

CIRCUIT_FORMAT_HEADER = "# qdistill-circuit v1"


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GateOp:
    kind: str
    target: int
    control: int | None = None
    param_index: int | None = None

    def __post_init__(self):
        if self.kind in ROTATIONS:
            if self.param_index is None or self.control is not None:
                raise StructuralError(f"{self.kind} needs param_index and no control")
        elif self.kind == CNOT:
            if self.control is None or self.param_index is not None:
                raise StructuralError("CNOT needs a control and no param_index")
            if self.control == self.target:
                raise StructuralError("CNOT control equals target")
        else:
            raise StructuralError(f"unknown gate kind {self.kind!r}")

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.target,) if self.control is None else (self.control, self.target)


@dataclass(frozen=True)
class CircuitSpec:
    num_qubits: int
    layers: int
    ops: tuple[GateOp, ...]
    num_params: int

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        for op in self.ops:
            if max(op.qubits) >= self.num_qubits or min(op.qubits) < 0:
                raise StructuralError(f"{op} touches a qubit outside 0..{self.num_qubits - 1}")
        idx = sorted(op.param_index for op in self.ops if op.param_index is not None)
        if idx != list(range(self.num_params)):
            raise StructuralError("param_index values must cover 0..num_params-1 exactly once")

    def to_text(self) -> str:
        lines = [
            CIRCUIT_FORMAT_HEADER,
            f"qubits {self.num_qubits}",
            f"layers {self.layers}",
            f"params {self.num_params}",
        ]
        for op in self.ops:
            if op.kind == CNOT:
                lines.append(f"CNOT {op.control},{op.target} -")
            else:
                lines.append(f"{op.kind} {op.target} {op.param_index}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CircuitSpec":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != CIRCUIT_FORMAT_HEADER:
            raise StructuralError("missing circuit format header")
        header = {}
        for ln in lines[1:4]:
            key, val = ln.split()
            header[key] = int(val)
        ops = []
        for ln in lines[4:]:
            kind, qubits, pidx = ln.split()
            if kind == CNOT:
                c, t = (int(v) for v in qubits.split(","))
                ops.append(GateOp(CNOT, target=t, control=c))
            else:
                ops.append(GateOp(kind, target=int(qubits), param_index=int(pidx)))
        return cls(header["qubits"], header["layers"], tuple(ops), header["params"])


@dataclass(frozen=True)
class Statevector:
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).ravel()
        n = amps.size
        if n < 2 or n & (n - 1):
            raise StructuralError(f"statevector length {n} is not a power of two >= 2")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-8:
            raise StructuralError(f"statevector norm {norm!r} is not 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def num_qubits(self) -> int:
        return self.amplitudes.size.bit_length() - 1

    @classmethod
    def zero(cls, num_qubits: int) -> "Statevector":
        return cls.basis(0, num_qubits)

    @classmethod
    def basis(cls, index: int, num_qubits: int) -> "Statevector":
        amps = np.zeros(2**num_qubits, dtype=complex)
        amps[index] = 1.0
        return cls(amps)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class MeasurementResult:
    expectations: np.ndarray
    basis_probs: np.ndarray
    shots_used: int = 0


# ---------------------------------------------------------------------------
# Circuit construction
# ---------------------------------------------------------------------------

def build_student_circuit(num_qubits: int, layers: int = 2) -> CircuitSpec:
    """Hardware-efficient ansatz: per layer RX, RY, RZ on every qubit, then a CNOT ring.

    The ring is ``CNOT(i, (i+1) % Q)`` for each ``i`` and is omitted for a
    single qubit.
    """
    if not 1 <= num_qubits <= MAX_QUBITS:
        raise ConfigError(f"num_qubits must be in 1..{MAX_QUBITS}, got {num_qubits}")
    if layers < 1:
        raise ConfigError(f"layers must be >= 1, got {layers}")
    ops = []
    p = 0
    for _ in range(layers):
        for q in range(num_qubits):
            for kind in ROTATIONS:
                ops.append(GateOp(kind, target=q, param_index=p))
                p += 1
        if num_qubits > 1:
            for q in range(num_qubits):
                ops.append(GateOp(CNOT, target=(q + 1) % num_qubits, control=q))
    return CircuitSpec(num_qubits, layers, tuple(ops), p)


# ---------------------------------------------------------------------------
# Batched kernels
# ---------------------------------------------------------------------------

def rotation_matrix(kind: str, theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    if kind == RX:
        return np.array([[c, -1j * s], [-1j * s, c]])
    if kind == RY:
        return np.array([[c, -s], [s, c]], dtype=complex)
    if kind == RZ:
        return np.array([[c - 1j * s, 0], [0, c + 1j * s]])
    raise StructuralError(f"not a rotation: {kind!r}")


def apply_matrix(amps: np.ndarray, matrix: np.ndarray, qubit: int, num_qubits: int) -> np.ndarray:
    """Apply a 2x2 matrix to ``qubit`` of every state in a ``(B, 2**Q)`` batch."""
    b = amps.shape[0]
    v = amps.reshape(b, 2**qubit, 2, 2 ** (num_qubits - qubit - 1))
    return np.einsum("ij,bajc->baic", matrix, v).reshape(b, -1)


@lru_cache(maxsize=None)
def cnot_permutation(control: int, target: int, num_qubits: int) -> np.ndarray:
    idx = np.arange(2**num_qubits)
    cbit = 1 << (num_qubits - 1 - control)
    tbit = 1 << (num_qubits - 1 - target)
    perm = np.where(idx & cbit, idx ^ tbit, idx)
    perm.setflags(write=False)
    return perm


@lru_cache(maxsize=None)
def z_signs(num_qubits: int) -> np.ndarray:
    """``signs[i, q]`` is the Pauli-Z eigenvalue of qubit ``q`` in basis state ``i``."""
    idx = np.arange(2**num_qubits)[:, None]
    shifts = num_qubits - 1 - np.arange(num_qubits)[None, :]
    signs = 1.0 - 2.0 * ((idx >> shifts) & 1)
    signs.setflags(write=False)
    return signs


def _apply_op(amps, op, params, num_qubits, inverse=False):
    if op.kind == CNOT:
        return amps[:, cnot_permutation(op.control, op.target, num_qubits)]
    theta = params[op.param_index]
    return apply_matrix(amps, rotation_matrix(op.kind, -theta if inverse else theta),
                        op.target, num_qubits)


def _check_params(spec: CircuitSpec, params) -> np.ndarray:
    params = np.asarray(params, dtype=float).ravel()
    if params.size != spec.num_params:
        raise StructuralError(f"expected {spec.num_params} params, got {params.size}")
    return params


def _as_batch(state, num_qubits):
    if isinstance(state, Statevector):
        amps = state.amplitudes[None, :]
    else:
        amps = np.asarray(state, dtype=complex)
        if amps.ndim == 1:
            amps = amps[None, :]
    if amps.shape[1] != 2**num_qubits:
        raise StructuralError(f"state length {amps.shape[1]} does not match {num_qubits} qubits")
    return amps


def simulate(spec: CircuitSpec, params, amps: np.ndarray) -> np.ndarray:
    """Run the circuit on a batch of input states, returning the output batch."""
    params = _check_params(spec, params)
    out = _as_batch(amps, spec.num_qubits)
    for op in spec.ops:
        out = _apply_op(out, op, params, spec.num_qubits)
    return out


def simulate_inverse(spec: CircuitSpec, params, amps: np.ndarray) -> np.ndarray:
    """Apply U(params)^dagger: reversed order, negated angles, CNOTs unchanged."""
    params = _check_params(spec, params)
    out = _as_batch(amps, spec.num_qubits)
    for op in reversed(spec.ops):
        out = _apply_op(out, op, params, spec.num_qubits, inverse=True)
    return out


def probabilities(amps: np.ndarray) -> np.ndarray:
    return amps.real**2 + amps.imag**2


def z_expectations(probs: np.ndarray, num_qubits: int) -> np.ndarray:
    return probs @ z_signs(num_qubits)


# ---------------------------------------------------------------------------
# Single-state operations
# ---------------------------------------------------------------------------

def apply_gate(state: Statevector, gate: GateOp, params) -> Statevector:
    q = state.num_qubits
    if max(gate.qubits) >= q:
        raise StructuralError(f"{gate} out of range for {q} qubits")
    params = np.asarray(params, dtype=float).ravel()
    if gate.param_index is not None and gate.param_index >= params.size:
        raise StructuralError(f"param_index {gate.param_index} out of range")
    return Statevector(_apply_op(state.amplitudes[None, :], gate, params, q)[0])


def run_circuit(spec: CircuitSpec, params, input_state: Statevector) -> Statevector:
    if input_state.num_qubits != spec.num_qubits:
        raise StructuralError("input state and circuit disagree on qubit count")
    return Statevector(simulate(spec, params, input_state.amplitudes)[0])


def measure_analytic(state: Statevector) -> MeasurementResult:
    probs = state.probabilities()
    return MeasurementResult(z_expectations(probs, state.num_qubits), probs, 0)


def sample_probabilities(probs: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Empirical outcome frequencies ``n_k / N`` from ``shots`` multinomial draws per row."""
    probs = np.atleast_2d(probs)
    p = np.clip(probs, 0.0, None)
    p = p / p.sum(axis=1, keepdims=True)
    counts = np.stack([rng.multinomial(shots, row) for row in p])
    return counts / shots


def measure_shots(state: Statevector, shots: int, seed: int) -> MeasurementResult:
    if shots < 1:
        raise ValueError("shots must be >= 1; use measure_analytic for exact values")
    rng = np.random.default_rng(seed)
    freqs = sample_probabilities(state.probabilities(), shots, rng)[0]
    return MeasurementResult(z_expectations(freqs, state.num_qubits), freqs, shots)


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

def _prob_cotangent(num_qubits, batch, cost_cotangent, prob_cotangent):
    """Fold expectation and probability cotangents into dL/dp of shape (B, 2**Q)."""
    dp = np.zeros((batch, 2**num_qubits))
    if cost_cotangent is not None:
        cot = np.broadcast_to(np.asarray(cost_cotangent, dtype=float), (batch, num_qubits))
        dp = dp + cot @ z_signs(num_qubits).T
    if prob_cotangent is not None:
        dp = dp + np.broadcast_to(np.asarray(prob_cotangent, dtype=float), dp.shape)
    return dp


def gradient_parameter_shift(spec: CircuitSpec, params, input_state, cost_cotangent=None,
                             prob_cotangent=None) -> np.ndarray:
    """Gradient of a loss w.r.t. all rotation angles via the +-pi/2 shift rule.

    ``cost_cotangent`` is dL/d<Z_q> (shape ``(Q,)`` or ``(B, Q)``);
    ``prob_cotangent`` optionally adds dL/dp_i for the basis probabilities.
    Gradients are summed over the batch.
    """
    params = _check_params(spec, params)
    amps = _as_batch(input_state, spec.num_qubits)
    dp = _prob_cotangent(spec.num_qubits, amps.shape[0], cost_cotangent, prob_cotangent)
    grads = np.zeros(spec.num_params)
    for j in range(spec.num_params):
        shifted = params.copy()
        shifted[j] += np.pi / 2
        plus = probabilities(simulate(spec, shifted, amps))
        shifted[j] -= np.pi
        minus = probabilities(simulate(spec, shifted, amps))
        grads[j] = 0.5 * np.sum(dp * (plus - minus))
    return grads


def gradient_adjoint(spec: CircuitSpec, params, input_state, cost_cotangent=None,
                     prob_cotangent=None, final_state=None):
    """Reverse-mode gradient through the statevector.

    Returns ``(param_grads, input_grads)``. ``param_grads`` is summed over the
    batch; ``input_grads`` has the batch shape of the input and uses the
    convention ``dL/dRe(a) + i dL/dIm(a)``, so for real input amplitudes the
    gradient is its real part.
    """
    params = _check_params(spec, params)
    q = spec.num_qubits
    amps = _as_batch(input_state, q)
    psi = simulate(spec, params, amps) if final_state is None else final_state
    dp = _prob_cotangent(q, amps.shape[0], cost_cotangent, prob_cotangent)
    lam = 2.0 * dp * psi
    grads = np.zeros(spec.num_params)
    for op in reversed(spec.ops):
        if op.kind != CNOT:
            mu = apply_matrix(psi, _PAULI[op.kind], op.target, q)
            grads[op.param_index] += 0.5 * np.sum(np.conj(lam) * mu).imag
        psi = _apply_op(psi, op, params, q, inverse=True)
        lam = _apply_op(lam, op, params, q, inverse=True)
    if isinstance(input_state, Statevector) or np.ndim(input_state) == 1:
        lam = lam[0]
    return grads, lam

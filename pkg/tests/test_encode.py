import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdistill import encode, qsim
from qdistill.encode import EncodingKind
from qdistill.errors import ConfigError, DegenerateInputError, ShapeError


def single_qubit_ry(theta):
    return np.array([np.cos(theta / 2), np.sin(theta / 2)])


def test_amplitude_345():
    np.testing.assert_allclose(encode.encode_amplitude([3, 4], 1).amplitudes, [0.6, 0.8])


def test_amplitude_basis_vector():
    np.testing.assert_array_equal(encode.encode_amplitude([1, 0, 0, 0], 2).amplitudes, [1, 0, 0, 0])


def test_amplitude_zero_vector_is_degenerate():
    with pytest.raises(DegenerateInputError):
        encode.encode_amplitude([0, 0], 1)


def test_amplitude_wrong_length():
    with pytest.raises(ShapeError):
        encode.encode_amplitude([1, 2, 3], 2)


def test_amplitude_keeps_signs_and_is_real():
    amps = encode.encode_amplitude([1, -1, 2, -2], 2).amplitudes
    assert np.all(amps.imag == 0)
    assert np.all(np.sign(amps.real) == [1, -1, 1, -1])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(1e-3, 1e3))
def test_amplitude_scale_invariant(seed, scale):
    x = np.random.default_rng(seed).normal(size=8)
    a = encode.encode_amplitude(x, 3).amplitudes
    b = encode.encode_amplitude(scale * x, 3).amplitudes
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert abs(np.linalg.norm(a) - 1) < 1e-12


def test_angle_pi_is_one():
    np.testing.assert_allclose(encode.encode_angle([np.pi], 1).amplitudes, [0, 1], atol=1e-15)


def test_angle_zero_is_ground_state():
    np.testing.assert_allclose(encode.encode_angle([0, 0, 0, 0], 4).amplitudes,
                               qsim.Statevector.zero(4).amplitudes)


def test_angle_half_pi_equal_superposition():
    res = qsim.measure_analytic(encode.encode_angle([np.pi / 2], 1))
    np.testing.assert_allclose(res.basis_probs, [0.5, 0.5])


def test_angle_wrong_length():
    with pytest.raises(ShapeError):
        encode.encode_angle([0.1, 0.2], 3)


@pytest.mark.parametrize("axis", ["X", "Y", "Z"])
def test_angle_matches_circuit_rotations(axis):
    x = np.array([0.3, -1.2, 2.5])
    state = qsim.Statevector.zero(3)
    for q, v in enumerate(x):
        state = qsim.apply_gate(state, qsim.GateOp("R" + axis, q, param_index=0), [v])
    np.testing.assert_allclose(encode.encode_angle(x, 3, axis).amplitudes, state.amplitudes, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), q=st.integers(1, 5))
def test_angle_output_is_product_state(seed, q):
    x = np.random.default_rng(seed).uniform(-np.pi, np.pi, size=q)
    probs = encode.encode_angle(x, q).probabilities()
    expected = np.array([1.0])
    for v in x:
        expected = np.kron(expected, single_qubit_ry(v) ** 2)
    np.testing.assert_allclose(probs, expected, atol=1e-10)


def test_basis_index_five():
    amps = encode.encode_basis(5, 3).amplitudes
    assert amps[5] == 1 and np.count_nonzero(amps) == 1


def test_basis_zero():
    np.testing.assert_array_equal(encode.encode_basis(0, 4).amplitudes, qsim.Statevector.zero(4).amplitudes)


def test_basis_out_of_range():
    with pytest.raises(ShapeError):
        encode.encode_basis(8, 3)


def test_basis_from_features_thresholds_at_zero():
    state = encode.encode_basis_from_features([1.2, -0.3, 0.0, 2.0], 4)
    assert state.amplitudes[0b1001] == 1


def test_basis_from_features_all_signs():
    assert encode.encode_basis_from_features([-1, -2, -3], 3).amplitudes[0] == 1
    assert encode.encode_basis_from_features([1, 2, 3], 3).amplitudes[7] == 1


@pytest.mark.parametrize("q", [1, 3, 5])
def test_basis_round_trip_through_argmax(q):
    for idx in range(2**q):
        probs = qsim.measure_analytic(encode.encode_basis(idx, q)).basis_probs
        assert int(np.argmax(probs)) == idx


def test_encoders_produce_valid_states():
    rng = np.random.default_rng(0)
    for _ in range(20):
        q = int(rng.integers(1, 7))
        for state in (encode.encode_amplitude(rng.normal(size=2**q), q),
                      encode.encode_angle(rng.normal(size=q), q),
                      encode.encode_basis_from_features(rng.normal(size=q), q)):
            assert state.amplitudes.size == 2**q
            assert abs(np.linalg.norm(state.amplitudes) - 1) < 1e-12


def test_encoding_kind_validation():
    assert EncodingKind("angle").rotation_axis == "Y"
    assert EncodingKind("amplitude").feature_dim(4) == 16
    assert EncodingKind("qubit").feature_dim(4) == 4
    with pytest.raises(ConfigError):
        EncodingKind("amplitude", "X")
    with pytest.raises(ConfigError):
        EncodingKind("dense")


def _vjp_check(kind, x, q):
    rng = np.random.default_rng(7)
    g = rng.normal(size=(x.shape[0], 2**q)) + 1j * rng.normal(size=(x.shape[0], 2**q))
    amps, cache = encode.encode_batch(kind, x, q)
    analytic = encode.encode_vjp(kind, cache, g)

    def f(xx):
        a, _ = encode.encode_batch(kind, xx, q)
        return np.sum((np.conj(g) * a).real)

    h = 1e-6
    fd = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        fd[idx] = (f(x + e) - f(x - e)) / (2 * h)
    np.testing.assert_allclose(analytic, fd, atol=1e-7)


def test_amplitude_vjp_matches_finite_differences():
    x = np.random.default_rng(1).normal(size=(3, 8))
    _vjp_check(EncodingKind("amplitude"), x, 3)


@pytest.mark.parametrize("axis", ["X", "Y", "Z"])
def test_angle_vjp_matches_finite_differences(axis):
    x = np.random.default_rng(2).normal(size=(2, 3))
    _vjp_check(EncodingKind("angle", axis), x, 3)


def test_basis_has_no_feature_gradient():
    kind = EncodingKind("qubit")
    _, cache = encode.encode_batch(kind, np.ones((1, 2)), 2)
    assert encode.encode_vjp(kind, cache, np.ones((1, 4))) is None

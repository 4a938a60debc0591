# Three ways to differentiate the student circuit, side by side.
# Run: python notebooks/gradient_engines.py

import time

import numpy as np

from qdistill import qsim

rng = np.random.default_rng(0)

spec = qsim.build_student_circuit(4, layers=2)   # RX RY RZ per qubit, then a CNOT ring
spec.num_params                                   # 24 angles

theta = rng.uniform(-np.pi, np.pi, spec.num_params)
v = rng.normal(size=16) + 1j * rng.normal(size=16)
psi = qsim.Statevector(v / np.linalg.norm(v))
w = rng.normal(size=4)   # cost = w . <Z_q>

# parameter shift: two circuit runs per angle
t0 = time.perf_counter()
g_ps = qsim.gradient_parameter_shift(spec, theta, psi, w)
t_ps = time.perf_counter() - t0

# adjoint: one forward, one backward sweep
t0 = time.perf_counter()
g_adj, _ = qsim.gradient_adjoint(spec, theta, psi, w)
t_adj = time.perf_counter() - t0

signs = qsim.z_signs(4)

def cost(t):
    return (qsim.probabilities(qsim.simulate(spec, t, psi.amplitudes)) @ signs @ w)[0]

h = 1e-5
g_fd = np.array([(cost(theta + h * e) - cost(theta - h * e)) / (2 * h) for e in np.eye(spec.num_params)])

print("max |ps - adjoint| ", np.abs(g_ps - g_adj).max())
print("max |ps - fd|      ", np.abs(g_ps - g_fd).max())
print(f"timing: shift {1e3 * t_ps:.2f} ms, adjoint {1e3 * t_adj:.2f} ms")

# shot noise on a |+> state shrinks like 1/sqrt(shots)
plus = qsim.Statevector(np.array([1.0, 1.0]) / np.sqrt(2))
for shots in (64, 1024, 16384):
    est = [qsim.measure_shots(plus, shots, s).basis_probs[0] for s in range(200)]
    print(f"{shots:>6} shots: std of p(0) = {np.std(est):.4f}  (theory {0.5 / np.sqrt(shots):.4f})")

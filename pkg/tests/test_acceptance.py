"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 4-6 train real models on the bundled MNIST subset and take a few
minutes on one CPU core.
"""
import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from qdistill import cnn, experiments as exp, qsim, reduce as red, stats, train
from qdistill.distill import DistillConfig, distill_loss
from qdistill.encode import EncodingKind

ROOT = os.path.join(os.path.dirname(__file__), "..", "data", "mnist5k")
needs_data = pytest.mark.skipif(not os.path.isdir(ROOT), reason="bundled MNIST subset missing")


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        return ok
    return emit


# --- 1 ------------------------------------------------------------------------

def test_c01_gradient_tri_equivalence(verdict):
    rng = np.random.default_rng(2024)
    spec = qsim.build_student_circuit(4, 2)
    signs = qsim.z_signs(4)
    h = 1e-5
    worst, start = 0.0, time.perf_counter()
    for _ in range(50):
        theta = rng.uniform(-np.pi, np.pi, spec.num_params)
        v = rng.normal(size=16) + 1j * rng.normal(size=16)
        state = qsim.Statevector(v / np.linalg.norm(v))
        w = rng.normal(size=4)

        def cost(t):
            return float((qsim.probabilities(qsim.simulate(spec, t, state.amplitudes)) @ signs @ w)[0])

        ps = qsim.gradient_parameter_shift(spec, theta, state, w)
        adj, _ = qsim.gradient_adjoint(spec, theta, state, w)
        fd = np.array([(cost(theta + h * e) - cost(theta - h * e)) / (2 * h)
                       for e in np.eye(spec.num_params)])
        worst = max(worst, np.abs(ps - adj).max(), np.abs(ps - fd).max(), np.abs(adj - fd).max())
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and elapsed < 60
    assert verdict(1, "gradient tri-equivalence", ok,
                   f"max disagreement {worst:.2e} (< 1e-6), {elapsed:.1f}s")


# --- 2 ------------------------------------------------------------------------

def test_c02_end_to_end_hybrid_gradient(verdict):
    rng = np.random.default_rng(7)
    cfg = DistillConfig(2.0, 0.4)
    h, worst, checked = 1e-4, 0.0, 0
    start = time.perf_counter()
    for sample in range(5):
        model = train.build_student(4, 2, EncodingKind("amplitude"), "fc", 64, rng=rng)
        x = rng.normal(size=(1, 1, 8, 8))
        y = rng.integers(0, 10, 1)
        t = rng.normal(size=(1, 10)) * 3
        _, _, grads = train.student_loss_and_grads(model, x, y, t, cfg)
        for key, arr in model.params.items():
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + h
                up = distill_loss(t, train.student_forward(model, x), y, cfg)[0]
                arr[idx] = orig - h
                down = distill_loss(t, train.student_forward(model, x), y, cfg)[0]
                arr[idx] = orig
                fd, an = (up - down) / (2 * h), grads[key][idx]
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-5))
                checked += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 60
    assert verdict(2, "end-to-end hybrid gradient", ok,
                   f"{checked} parameter checks over 5 samples, worst relative error {worst:.2e}, {elapsed:.1f}s")


# --- 3 ------------------------------------------------------------------------

def test_c03_teacher_parameter_counts(verdict):
    expected = {"lenet": 44_426, "alexnet": 94_672_074}
    got = {"lenet": stats.count_parameters(cnn.build_lenet_teacher(10))["total"],
           "alexnet": stats.count_parameters(cnn.build_alexnet_teacher(10))["total"]}
    diff = {k: cnn.count_parameters(cnn.build_lenet_teacher(10) if k == "lenet"
                                    else cnn.build_alexnet_teacher(10))
            for k in got if got[k] != expected[k]}
    assert verdict(3, "teacher reconstruction counts", got == expected,
                   f"LeNet {got['lenet']:,}, AlexNet {got['alexnet']:,}"
                   + (f"; per-layer {diff}" if diff else ""))


# --- 4-6 shared setup ----------------------------------------------------------

@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    cfg = exp.validate_config({
        "data_root": ROOT, "dataset": "mnist", "per_class": 200, "test_per_class": 100,
        "qubits": 4, "layers": 2, "encoding": "amplitude", "reducer": "fc", "teacher": "lenet",
        "tau": 2.0, "alpha": 0.4, "seeds": [0, 1, 2, 3, 4], "shots": 0,
        "out": str(tmp_path_factory.mktemp("acceptance"))})
    prep = exp.prepare_data(cfg)
    return cfg, prep, exp.obtain_teacher(cfg, prep)


@needs_data
def test_c04_distillation_gain(desk, verdict):
    cfg, prep, teacher = desk
    start = time.perf_counter()
    base = [exp.train_student(cfg, prep, teacher, s, 0.0).accuracy for s in cfg.seeds]
    dist = [exp.train_student(cfg, prep, teacher, s, cfg.alpha).accuracy for s in cfg.seeds]
    res = stats.paired_t_test(dist, base)
    gain = 100 * (np.mean(dist) - np.mean(base))
    ok = teacher.test_accuracy >= 0.95 and gain >= 1.0 and res.p < 0.05
    verdict(4, "distillation gain (desk scale)", ok,
            f"teacher {100 * teacher.test_accuracy:.2f}%, baseline "
            f"{stats.format_pct(*stats.mean_std(base))}, distilled {stats.format_pct(*stats.mean_std(dist))}, "
            f"gain {gain:+.2f} points (>= +1.0), paired t={res.t:.3f} p={res.p:.4f} (< 0.05), "
            f"{time.perf_counter() - start:.0f}s")
    assert teacher.test_accuracy >= 0.95
    assert gain >= 1.0 and res.p < 0.05


@needs_data
def test_c05_encoding_ablation_ordering(desk, verdict):
    cfg, _, _ = desk
    rep = exp.ablate_encodings(replace(cfg, seeds=(0, 1, 2)), emit=False)
    m = {k: float(np.mean(rep.accuracies(k))) for k in ("amplitude", "angle", "qubit")}
    ok = m["amplitude"] - m["angle"] >= 0.03 and m["amplitude"] >= m["qubit"]
    assert verdict(5, "encoding ablation ordering", ok,
                   ", ".join(f"{k} {100 * v:.2f}%" for k, v in m.items())
                   + f" (amplitude - angle = {100 * (m['amplitude'] - m['angle']):+.2f} >= 3)")


@needs_data
def test_c06_reducer_ablation_ordering(desk, verdict):
    cfg, _, _ = desk
    rep = exp.ablate_reducers(replace(cfg, seeds=(0, 1, 2)),
                              reducers=(red.FC, red.AVGPOOL, red.MAXPOOL), emit=False)
    m = {k: float(np.mean(rep.accuracies(k))) for k in (red.FC, red.AVGPOOL, red.MAXPOOL)}
    ok = m[red.FC] > m[red.AVGPOOL] > m[red.MAXPOOL]
    assert verdict(6, "reducer ablation ordering", ok,
                   " > ".join(f"{k} {100 * v:.2f}%" for k, v in m.items()))


# --- 7 ------------------------------------------------------------------------

def test_c07_shot_decoding_convergence(verdict):
    plus = qsim.Statevector(np.array([1.0, 1.0]) / math.sqrt(2))
    hits = sum(abs(qsim.measure_shots(plus, 1024, seed).basis_probs[0] - 0.5) <= 0.047
               for seed in range(1000))
    assert verdict(7, "shot-decoding convergence", hits / 1000 >= 0.99,
                   f"{hits}/1000 trials within 0.047 of 0.5 (>= 0.99)")


# --- 8 ------------------------------------------------------------------------

def test_c08_loss_identities(verdict):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        c = int(rng.integers(2, 11))
        t, s = rng.normal(size=c) * 4, rng.normal(size=c) * 4
        y = int(rng.integers(0, c))
        tau = float(rng.choice([1.0, 2.0, 5.0]))
        tot0, p0 = distill_loss(t, s, y, DistillConfig(tau, 0.0))
        tot1, p1 = distill_loss(t, s, y, DistillConfig(tau, 1.0))
        _, pe = distill_loss(s, s, y, DistillConfig(tau, 0.4))
        worst = max(worst, abs(tot0 - p0["ce"]), abs(tot1 - p1["kd"]), abs(pe["kd"]))
    assert verdict(8, "loss identities", worst <= 1e-12, f"max deviation {worst:.1e} (<= 1e-12)")


# --- 9 ------------------------------------------------------------------------

def test_c09_pca_oracle(verdict):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(20):
        n, k = int(rng.integers(20, 200)), int(rng.integers(1, 8))
        x = rng.normal(size=(n, 8)) @ rng.normal(size=(8, 8)) + rng.normal(size=8)
        basis = red.pca_fit(x, k)
        evals, evecs = np.linalg.eigh(np.cov(x, rowvar=False))
        top = evecs[:, np.argsort(evals)[::-1][:k]]
        worst = max(worst, np.abs(basis.components @ basis.components.T - top @ top.T).max())
    assert verdict(9, "PCA oracle equivalence", worst < 1e-8, f"max projector difference {worst:.1e} (< 1e-8)")


# --- 10 -----------------------------------------------------------------------

def _t_cdf_trapezoid(t, df, n=400_001):
    x = np.linspace(0.0, abs(t), n)
    logc = math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)
    y = np.exp(logc - (df + 1) / 2 * np.log1p(x * x / df))
    area = float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2)
    return 0.5 + math.copysign(area, t)


def test_c10_statistics_oracle(verdict):
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(3, 11))
        a = rng.normal(size=n)
        b = a - rng.normal(loc=rng.uniform(-1, 1), size=n)
        res = stats.paired_t_test(a, b)
        oracle = 2 * (1 - _t_cdf_trapezoid(abs(res.t), n - 1))
        worst = max(worst, abs(res.p - oracle))
    assert verdict(10, "statistics oracle", worst < 1e-6, f"max |p - oracle| {worst:.1e} (< 1e-6)")

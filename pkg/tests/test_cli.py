import os

import numpy as np
import pytest

from qdistill import cli, data, experiments as exp, stats
from qdistill.errors import ValidationError

ROOT = os.path.join(os.path.dirname(__file__), "..", "data", "mnist5k")
TINY = ["--data-root", ROOT, "--per-class", "6", "--test-per-class", "3", "--max-epochs", "2",
        "--patience", "1", "--seeds", "0,1", "--shots", "0", "--hidden-dim", "4"]

needs_data = pytest.mark.skipif(not os.path.isdir(ROOT), reason="bundled MNIST subset missing")


@pytest.fixture(autouse=True)
def no_env_root(monkeypatch):
    monkeypatch.delenv(data.DATA_ROOT_ENV, raising=False)


def tiny_cfg(tmp_path, **kw):
    base = dict(data_root=ROOT, per_class=6, test_per_class=3, max_epochs=2, patience=1,
                teacher_patience=1, seeds="0,1", shots=0, hidden_dim=4, out=str(tmp_path))
    base.update(kw)
    return exp.validate_config(base)


# --- validation ----------------------------------------------------------------

def test_empty_config_single_error():
    with pytest.raises(ValidationError) as info:
        exp.validate_config("")
    assert len(info.value.errors) == 1 and "data_root" in info.value.errors[0]


def test_defaults_and_derived_target():
    cfg = exp.validate_config({"data_root": "x"})
    assert (cfg.tau, cfg.alpha, cfg.lr, cfg.patience, cfg.shots) == (2.0, 0.4, 1e-3, 10, 1024)
    assert (cfg.qubits, cfg.encoding, cfg.target_dim, cfg.max_epochs) == (4, "amplitude", 16, 1000)
    assert exp.validate_config({"data_root": "x", "encoding": "angle"}).rotation_axis == "Y"


def test_env_root(monkeypatch):
    monkeypatch.setenv(data.DATA_ROOT_ENV, "/d")
    assert exp.validate_config("").data_root == "/d"


def test_pca_with_angle_rejected():
    with pytest.raises(ValidationError, match="pca"):
        exp.validate_config({"data_root": "x", "reducer": "pca", "encoding": "angle"})


def test_alpha_without_teacher_rejected():
    with pytest.raises(ValidationError, match="without teacher"):
        exp.validate_config({"data_root": "x", "teacher": "none"})
    assert exp.validate_config({"data_root": "x", "teacher": "none", "alpha": 0}).alpha == 0


def test_errors_are_aggregated():
    with pytest.raises(ValidationError) as info:
        exp.validate_config({"data_root": "x", "qubits": 3, "readout": "basis", "tau": -1,
                             "alpha": 2, "dataset": "svhn"})
    assert len(info.value.errors) >= 4


def test_unknown_and_mistyped_fields():
    with pytest.raises(ValidationError) as info:
        exp.validate_config({"data_root": "x", "colour": "red", "qubits": "four"})
    assert len(info.value.errors) == 2


def test_yaml_file_and_flag_override(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("data_root: /data\ntau: 5\nalpha: 0.7\nseeds: [1, 2, 3]\n")
    cfg = exp.load_config_file(path, {"alpha": 0.1})
    assert (cfg.tau, cfg.alpha, cfg.seeds) == (5.0, 0.1, (1, 2, 3))


def test_fingerprint_tracks_config():
    a = exp.validate_config({"data_root": "x"})
    b = exp.validate_config({"data_root": "x", "tau": 5})
    assert a.fingerprint() != b.fingerprint()
    assert a.fingerprint() == exp.validate_config({"data_root": "x", "out": "elsewhere"}).fingerprint()


# --- exit codes ----------------------------------------------------------------

def test_exit_code_validation(capsys):
    assert cli.main(["distill"]) == cli.EXIT_CONFIG
    assert "data_root" in capsys.readouterr().err


def test_exit_code_runtime(tmp_path):
    assert cli.main(["train-student", "--data-root", str(tmp_path), "--alpha", "0"]) == cli.EXIT_RUNTIME


def test_report_missing_file(tmp_path):
    assert cli.main(["report", str(tmp_path / "none.csv")]) == cli.EXIT_RUNTIME


# --- pipeline ------------------------------------------------------------------

@needs_data
def test_run_experiment_arms_and_determinism(tmp_path):
    cfg = tiny_cfg(tmp_path)
    rep = exp.run_experiment(cfg)
    assert len(rep.arms["baseline"]) == 2 and len(rep.arms["distilled"]) == 2
    assert "teacher:lenet" in rep.arms
    assert rep.parameter_counts["teacher:lenet"]["total"] == 44_426
    assert rep.parameter_counts["student"]["circuit"] == 24
    tests = [c.test for c in rep.comparisons]
    assert any(t.startswith("paired") for t in tests) and any(t.startswith("McNemar") for t in tests)
    again = exp.run_experiment(cfg)     # reuses the cached teacher
    assert again.accuracies("distilled") == rep.accuracies("distilled")
    assert stats.read_report(os.path.join(tmp_path, "experiment.csv")).accuracies("baseline") == \
        rep.accuracies("baseline")
    assert os.path.exists(os.path.join(tmp_path, "checkpoints", "distilled-seed1.qdck"))


@needs_data
def test_alpha_zero_distilled_arm_equals_baseline(tmp_path):
    cfg = tiny_cfg(tmp_path, alpha=0.0)
    rep = exp.run_experiment(cfg, distilled=False)
    assert "distilled" not in rep.arms
    run0 = exp.train_student(cfg, exp.prepare_data(cfg), None, 0, 0.0)
    assert run0.accuracy == rep.accuracies("baseline")[0]


@needs_data
def test_logits_teacher_ingestion(tmp_path):
    cfg = tiny_cfg(tmp_path)
    prep = exp.prepare_data(cfg)
    rng = np.random.default_rng(0)
    table = data.TeacherLogits.from_arrays("resnet50", prep.train_all.indices,
                                           rng.normal(size=(len(prep.train_all), 10)))
    path = tmp_path / "ext.logits"
    table.save(path)
    rep = exp.run_experiment(tiny_cfg(tmp_path, teacher=f"logits:{path}"), baseline=False)
    assert len(rep.arms["distilled"]) == 2 and not any(a.startswith("teacher") for a in rep.arms)


@needs_data
def test_shot_arms(tmp_path):
    rep = exp.run_experiment(tiny_cfg(tmp_path, teacher="none", alpha=0, shots=256, seeds="0"))
    assert set(rep.arms) == {"baseline", "baseline@256shots"}


@needs_data
def test_sweep_grid(tmp_path):
    cfg = tiny_cfg(tmp_path, max_epochs=1)
    grid = exp.run_sweep(cfg, taus=(1.0, 2.0), alphas=(0.4, 1.0))
    assert set(grid) == {(1.0, 0.4), (1.0, 1.0), (2.0, 0.4), (2.0, 1.0)}
    text = open(tmp_path / "sweep.csv").read().splitlines()
    assert text[0] == "tau,alpha=0.4,alpha=1" and len(text) == 3


def test_full_sweep_grid_shape():
    assert len(exp.SWEEP_TAUS) * len(exp.SWEEP_ALPHAS) == 30
    assert 2.0 in exp.SWEEP_TAUS and 0.4 in exp.SWEEP_ALPHAS


@needs_data
def test_ablations(tmp_path):
    cfg = tiny_cfg(tmp_path, seeds="0")
    enc = exp.ablate_encodings(cfg, emit=False)
    assert set(enc.arms) == {"amplitude", "angle", "qubit"}
    assert enc.parameter_counts["angle"]["reducer"] == 784 * 4 + 4 + 4 * 4 + 4
    rd = exp.ablate_reducers(cfg, emit=False)
    assert set(rd.arms) == {"fc", "avgpool", "maxpool", "crop", "pca"}
    assert rd.parameter_counts["maxpool"]["reducer"] == 0


@needs_data
def test_cli_end_to_end(tmp_path, capsys):
    out = str(tmp_path / "o")
    assert cli.main(["train-teacher", *TINY, "--out", out]) == 0
    ckpt = next(f for f in os.listdir(out) if f.endswith(".qdck"))
    logits = str(tmp_path / "t.logits")
    assert cli.main(["export-logits", *TINY, "--out", out, "--checkpoint", os.path.join(out, ckpt),
                     "--logits-out", logits]) == 0
    assert cli.main(["distill", *TINY, "--out", out, "--teacher", f"logits:{logits}"]) == 0
    assert "distilled vs baseline" in capsys.readouterr().out
    assert cli.main(["report", os.path.join(out, "distill.csv")]) == 0
    assert cli.main(["train-student", *TINY, "--out", out]) == 0
    assert cli.main(["distill", *TINY, "--out", out, "--min-gain", "101"]) == cli.EXIT_THRESHOLD
    assert cli.main(["sweep", *TINY, "--out", out, "--taus", "2", "--alphas", "0.4"]) == 0
    assert cli.main(["ablate-encodings", *TINY, "--out", out, "--seeds", "0",
                     "--encodings", "amplitude"]) == 0


def test_spatial_reducers_see_pixel_intensities(tmp_path):
    prep = exp.prepare_data(tiny_cfg(tmp_path))
    for kind in ("avgpool", "maxpool"):
        trn, _, test = prep.student_splits(kind)
        assert trn.images.min() >= 0 and trn.images.max() <= 1
        assert len(test) == len(prep.test)
    for kind in ("fc", "crop", "pca"):
        trn, _, _ = prep.student_splits(kind)
        assert trn is prep.train and trn.images.min() < 0

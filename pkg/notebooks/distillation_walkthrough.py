# A small distillation run on the bundled MNIST subset.
# Trains a LeNet teacher, then a 4-qubit student with and without soft targets.
# Takes a couple of minutes on one core.  Run: python notebooks/distillation_walkthrough.py

import os
import tempfile

import numpy as np

from qdistill import distill, stats
from qdistill import experiments as exp

root = os.path.join(os.path.dirname(__file__), "..", "data", "mnist5k")

# soft targets first: temperature flattens the teacher's distribution
logits = np.array([6.0, 2.0, 1.0, -1.0])
for tau in (1.0, 2.0, 5.0):
    print(f"tau={tau}:", np.round(distill.softmax_t(logits, tau), 3))

cfg = exp.validate_config({
    "data_root": root, "per_class": 200, "test_per_class": 100,
    "qubits": 4, "layers": 2, "encoding": "amplitude", "reducer": "fc",
    "teacher": "lenet", "tau": 2.0, "alpha": 0.4, "seeds": [0, 1], "shots": 0,
    "out": tempfile.mkdtemp(prefix="qdistill-demo-")})

prep = exp.prepare_data(cfg)
prep.train.images.shape   # (1800, 1, 28, 28) after the validation split

teacher = exp.obtain_teacher(cfg, prep)
print(f"teacher test accuracy {teacher.test_accuracy:.3f} after {teacher.epochs} epochs")

base, dist = [], []
for seed in cfg.seeds:
    b = exp.train_student(cfg, prep, teacher, seed, alpha=0.0)
    d = exp.train_student(cfg, prep, teacher, seed, alpha=cfg.alpha)
    print(f"seed {seed}: baseline {b.accuracy:.3f} ({len(b.history.records)} epochs), "
          f"distilled {d.accuracy:.3f} ({len(d.history.records)} epochs)")
    base.append(b.accuracy)
    dist.append(d.accuracy)

print("baseline ", stats.format_pct(*stats.mean_std(base)))
print("distilled", stats.format_pct(*stats.mean_std(dist)))
print(stats.paired_t_test(dist, base))

# parameter budgets
student = exp.build_student_for(cfg, prep, seed=0)
print(stats.count_parameters(student))
print(stats.count_parameters(teacher.net))

"""Accuracy, multi-seed aggregation, paired tests, parameter accounting and reports."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError

# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def accuracy(predictions, labels) -> float:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ConfigError("predictions and labels differ in length")
    if predictions.size == 0:
        raise ConfigError("accuracy of an empty prediction set")
    return int(np.sum(predictions == labels)) / predictions.size


def mean_std(values) -> tuple[float, float]:
    """Mean and sample (n - 1) standard deviation."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ConfigError("need at least two values for a sample standard deviation")
    return float(v.mean()), float(v.std(ddof=1))


# ---------------------------------------------------------------------------
# Student t distribution
# ---------------------------------------------------------------------------

def _betacf(a, b, x, max_iter=300, eps=1e-16):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x in (0.0, 1.0):
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def t_cdf(t: float, df: float) -> float:
    tail = 0.5 * t_sf_two_sided(t, df)
    return 1.0 - tail if t > 0 else tail


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float
    mean_diff: float
    degenerate: bool = False


def paired_t_test(a, b) -> TTestResult:
    """Two-sided paired t-test on ``a - b`` (pairs matched by position)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigError("paired samples must be 1-D and equally long")
    n = a.size
    if n < 2:
        raise ConfigError("paired t-test needs n >= 2")
    d = a - b
    mean, sd = float(d.mean()), float(d.std(ddof=1))
    scale = max(float(np.abs(d).max()), 1e-300)
    if sd <= 1e-12 * scale:                 # identical differences up to rounding
        if abs(mean) <= 1e-12 * scale:
            return TTestResult(0.0, n - 1, 1.0, 0.0, degenerate=True)
        return TTestResult(math.copysign(math.inf, mean), n - 1, 0.0, mean, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, n - 1, t_sf_two_sided(t, n - 1), mean)


@dataclass(frozen=True)
class McNemarResult:
    only_a: int     # samples a got right and b got wrong
    only_b: int
    p: float


def mcnemar_test(correct_a, correct_b) -> McNemarResult:
    """Exact two-sided McNemar test on per-sample correctness of two classifiers."""
    ca, cb = np.asarray(correct_a, dtype=bool), np.asarray(correct_b, dtype=bool)
    if ca.shape != cb.shape:
        raise ConfigError("per-sample vectors differ in length")
    n10, n01 = int(np.sum(ca & ~cb)), int(np.sum(~ca & cb))
    n = n10 + n01
    if n == 0:
        return McNemarResult(n10, n01, 1.0)
    k = min(n10, n01)
    log_terms = [math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1) - n * math.log(2)
                 for i in range(k + 1)]
    top = max(log_terms)
    tail = math.exp(top) * sum(math.exp(t - top) for t in log_terms)
    return McNemarResult(n10, n01, min(1.0, 2.0 * tail))


# ---------------------------------------------------------------------------
# Parameter accounting
# ---------------------------------------------------------------------------

def count_parameters(model) -> dict[str, int]:
    """Per-component trainable parameter counts plus ``"total"``.

    Students report ``reducer``, ``circuit`` and ``readout``; teachers report
    one entry per parametrised layer.
    """
    from .cnn import NetworkSpec, count_parameters as layer_counts
    from .train import StudentModel

    if isinstance(model, NetworkSpec):
        counts = layer_counts(model)
    elif isinstance(model, StudentModel):
        p = model.params
        counts = {
            "reducer": sum(v.size for k, v in p.items() if k.startswith("reducer.")),
            "circuit": model.circuit.num_params,
            "readout": sum(v.size for k, v in p.items() if k.startswith("head.")),
        }
    else:
        raise ConfigError(f"cannot count parameters of {type(model).__name__}")
    counts["total"] = sum(counts.values())
    return counts


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    seed: int
    accuracy: float
    correct: int = 0
    total: int = 0
    epochs: int = 0
    best_epoch: int = 0
    fingerprint: str = ""


@dataclass
class Comparison:
    treatment: str
    baseline: str
    delta_mean: float
    t: float
    df: int
    p: float
    degenerate: bool = False
    test: str = "paired-t per seed"


@dataclass
class ExperimentReport:
    name: str
    arms: dict = field(default_factory=dict)         # arm -> list[RunResult]
    comparisons: list = field(default_factory=list)
    parameter_counts: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def add_run(self, arm: str, run: RunResult) -> None:
        self.arms.setdefault(arm, []).append(run)

    def accuracies(self, arm: str) -> list[float]:
        return [r.accuracy for r in sorted(self.arms[arm], key=lambda r: r.seed)]

    def summary(self, arm: str) -> tuple[float, float]:
        return mean_std(self.accuracies(arm))

    def compare(self, treatment: str, baseline: str) -> Comparison:
        """Per-seed paired t-test of ``treatment`` against ``baseline``."""
        a = {r.seed: r.accuracy for r in self.arms[treatment]}
        b = {r.seed: r.accuracy for r in self.arms[baseline]}
        seeds = sorted(set(a) & set(b))
        res = paired_t_test([a[s] for s in seeds], [b[s] for s in seeds])
        comp = Comparison(treatment, baseline, res.mean_diff, res.t, res.df, res.p, res.degenerate)
        self.comparisons.append(comp)
        return comp

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.config)


def config_fingerprint(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]


def format_pct(mean: float, std: float) -> str:
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


CSV_FIELDS = ["section", "arm", "seed", "accuracy", "mean", "std", "formatted",
              "baseline", "t", "df", "p", "flag", "component", "count"]


def emit_report(report: ExperimentReport, path) -> tuple[str, str]:
    """Write ``<path>.csv`` and ``<path>.txt``; returns both paths."""
    base = os.fspath(path)
    if base.endswith((".csv", ".txt")):
        base = base[:-4]
    csv_path, txt_path = base + ".csv", base + ".txt"
    rows, lines = [], [f"experiment: {report.name}", f"config fingerprint: {report.fingerprint}", ""]
    for arm in report.arms:
        for r in sorted(report.arms[arm], key=lambda r: r.seed):
            rows.append({"section": "run", "arm": arm, "seed": r.seed, "accuracy": repr(r.accuracy)})
        if len(report.arms[arm]) >= 2:
            m, s = report.summary(arm)
            rows.append({"section": "summary", "arm": arm, "mean": repr(m), "std": repr(s),
                         "formatted": format_pct(m, s)})
            lines.append(f"{arm:<28} {format_pct(m, s)}  (n={len(report.arms[arm])})")
        else:
            acc = report.arms[arm][0].accuracy
            lines.append(f"{arm:<28} {100 * acc:.2f}  (n=1)")
    if report.comparisons:
        lines.append("")
    for c in report.comparisons:
        rows.append({"section": "comparison", "arm": c.treatment, "baseline": c.baseline,
                     "mean": repr(c.delta_mean), "t": repr(c.t), "df": c.df, "p": repr(c.p),
                     "flag": c.test + (" degenerate" if c.degenerate else "")})
        lines.append(f"{c.treatment} vs {c.baseline} [{c.test}]: delta {100 * c.delta_mean:+.2f} "
                     f"points, t={c.t:.4f}, df={c.df}, p={c.p:.4g}"
                     + (" (degenerate)" if c.degenerate else ""))
    if report.parameter_counts:
        lines.append("")
        lines.append("parameter counts:")
    for model, counts in report.parameter_counts.items():
        for comp, n in counts.items():
            rows.append({"section": "params", "arm": model, "component": comp, "count": n})
        lines.append(f"  {model}: " + ", ".join(f"{k}={v:,}" for k, v in counts.items()))
    for note in report.notes:
        lines.append(f"note: {note}")
    os.makedirs(os.path.dirname(csv_path) or ".", exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    with open(txt_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(base + ".json", "w") as fh:
        json.dump({"name": report.name, "config": report.config}, fh, indent=2, sort_keys=True, default=str)
    return csv_path, txt_path


def read_report(csv_path) -> ExperimentReport:
    """Rebuild runs, comparisons and parameter counts from an emitted CSV."""
    base = os.fspath(csv_path)[:-4]
    meta = {"name": os.path.basename(base), "config": {}}
    if os.path.exists(base + ".json"):
        with open(base + ".json") as fh:
            meta = json.load(fh)
    report = ExperimentReport(meta["name"], config=meta["config"])
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["section"] == "run":
                report.add_run(row["arm"], RunResult(int(row["seed"]), float(row["accuracy"])))
            elif row["section"] == "comparison":
                flag = row["flag"]
                report.comparisons.append(Comparison(
                    row["arm"], row["baseline"], float(row["mean"]), float(row["t"]),
                    int(row["df"]), float(row["p"]), flag.endswith("degenerate"),
                    flag.replace(" degenerate", "")))
            elif row["section"] == "params":
                report.parameter_counts.setdefault(row["arm"], {})[row["component"]] = int(row["count"])
    return report

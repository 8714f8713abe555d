"""Model evaluation, multi-seed robustness summaries and ablation tables."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import gaussian_kde

from .data import SignalDataset
from .errors import ValidationError
from .metrics import MetricsReport, metrics_report
from .model import ModelState, NetworkSpec, predict
from .training import METHODS, TrainConfig, train

__all__ = [
    "evaluate",
    "RobustnessSummary",
    "summarize",
    "robustness_study",
    "AblationRow",
    "AblationTable",
    "ablation_matrix",
    "ablation_from_values",
    "pooled_std",
    "ordering_holds",
    "write_json",
]

HIST_BINS = 20
KDE_POINTS = 512
# the sampled KDE support extends this many bandwidths past the data range
KDE_PAD = 5.0


def evaluate(state: ModelState, ds: SignalDataset) -> MetricsReport:
    """Argmax predictions of the classifier in inference mode, scored against ``ds.labels``."""
    if len(ds) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    if ds.labels is None:
        raise ValidationError("evaluation needs a labeled dataset")
    return metrics_report(ds.labels, predict(state, ds.features), state.spec.num_classes)


# ---- robustness --------------------------------------------------------------

@dataclass
class RobustnessSummary:
    """Per-seed values with mean, sample std, histogram and Gaussian KDE.

    Every statistic is a pure function of ``values`` (see :func:`summarize`).
    ``kde_x``/``kde_y`` are empty when the values have zero spread.
    """

    seeds: list[int]
    values: np.ndarray
    mean: float
    std: float
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    kde_x: np.ndarray
    kde_y: np.ndarray
    per_class: np.ndarray | None = None
    macro_f1: np.ndarray | None = None
    method: str = ""

    @property
    def n_seeds(self) -> int:
        return len(self.values)

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "n_seeds": self.n_seeds,
            "seeds": [int(s) for s in self.seeds],
            "values": [float(v) for v in self.values],
            "mean": self.mean,
            "std": self.std,
            "hist_edges": self.hist_edges.tolist(),
            "hist_counts": self.hist_counts.tolist(),
        }
        if self.per_class is not None:
            d["per_class"] = self.per_class.tolist()
        if self.macro_f1 is not None:
            d["macro_f1"] = [float(v) for v in self.macro_f1]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RobustnessSummary":
        per_class = np.asarray(d["per_class"], dtype=np.float64) if "per_class" in d else None
        f1 = np.asarray(d["macro_f1"], dtype=np.float64) if "macro_f1" in d else None
        return summarize(d["values"], seeds=d["seeds"], per_class=per_class, macro_f1=f1,
                         method=d.get("method", ""))

    def write_csv(self, path) -> Path:
        """One row per seed: seed, accuracy, macro F1 and per-class accuracy."""
        path = Path(path)
        n_cls = 0 if self.per_class is None else self.per_class.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "accuracy", "macro_f1"] + [f"class_{k}_accuracy" for k in range(n_cls)])
            for i, (seed, v) in enumerate(zip(self.seeds, self.values)):
                f1 = "" if self.macro_f1 is None else repr(float(self.macro_f1[i]))
                row = [int(seed), repr(float(v)), f1]
                if n_cls:
                    row += [repr(float(x)) for x in self.per_class[i]]
                w.writerow(row)
        return path

    def write_histogram_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(self.hist_edges[:-1], self.hist_edges[1:], self.hist_counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
        return path


def summarize(values, seeds=None, per_class=None, macro_f1=None, method: str = "") -> RobustnessSummary:
    """Statistics of a per-seed metric list.

    The standard deviation uses ``ddof=1``. The histogram has 20 equal-width
    bins over ``[min, max]``; the KDE uses a Gaussian kernel with Silverman's
    bandwidth sampled on 512 points spanning the data range padded by five
    bandwidths on each side.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size < 2:
        raise ValidationError("need at least two per-seed values")
    if not np.all(np.isfinite(values)):
        raise ValidationError("per-seed values must be finite")
    seeds = list(range(values.size)) if seeds is None else [int(s) for s in seeds]
    if len(seeds) != values.size:
        raise ValidationError("seeds and values differ in length")
    lo, hi = float(values.min()), float(values.max())
    counts, edges = np.histogram(values, bins=HIST_BINS, range=(lo, hi) if hi > lo else (lo - 0.5, lo + 0.5))
    # identical values have zero spread exactly; np.std would leave rounding residue
    std = float(values.std(ddof=1)) if hi > lo else 0.0
    kde_x = kde_y = np.empty(0)
    if hi > lo:
        kde = gaussian_kde(values, bw_method="silverman")
        bw = float(np.sqrt(kde.covariance[0, 0]))
        kde_x = np.linspace(lo - KDE_PAD * bw, hi + KDE_PAD * bw, KDE_POINTS)
        kde_y = kde(kde_x)
    return RobustnessSummary(
        seeds=seeds, values=values, mean=float(values.mean()) if hi > lo else lo, std=std,
        hist_edges=edges, hist_counts=counts.astype(np.int64), kde_x=kde_x, kde_y=kde_y,
        per_class=None if per_class is None else np.asarray(per_class, dtype=np.float64),
        macro_f1=None if macro_f1 is None else np.asarray(macro_f1, dtype=np.float64),
        method=method,
    )


def robustness_study(source: SignalDataset, target: SignalDataset, cfg: TrainConfig, n_seeds: int,
                     spec: NetworkSpec | None = None, seeds=None, progress=None) -> RobustnessSummary:
    """Train ``n_seeds`` independent runs (seeds ``cfg.seed + k``) and summarize final target accuracy.

    ``seeds`` overrides the seed list. ``progress(seed, report)`` is called after each run.
    """
    if n_seeds < 2:
        raise ValidationError("robustness study needs n_seeds >= 2")
    if target.labels is None:
        raise ValidationError("robustness study scores the target domain and needs its labels")
    seeds = [cfg.seed + k for k in range(n_seeds)] if seeds is None else [int(s) for s in seeds]
    if len(seeds) != n_seeds:
        raise ValidationError("seeds must have n_seeds entries")
    unlabeled = target.without_labels()
    acc, f1, per_class = [], [], []
    for seed in seeds:
        state, _ = train(source, unlabeled, replace(cfg, seed=seed), spec)
        rep = evaluate(state, target)
        acc.append(rep.accuracy)
        f1.append(rep.macro_f1)
        per_class.append(rep.class_accuracy)
        if progress is not None:
            progress(seed, rep)
    return summarize(acc, seeds, np.array(per_class), np.array(f1), method=cfg.method)


# ---- ablation ----------------------------------------------------------------

@dataclass
class AblationRow:
    method: str
    accuracy: list[float]
    macro_f1: list[float]
    reports: list[MetricsReport] = field(default_factory=list, repr=False)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracy))

    @property
    def mean_macro_f1(self) -> float:
        return float(np.mean(self.macro_f1))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.accuracy, ddof=1)) if len(self.accuracy) > 1 else 0.0


@dataclass
class AblationTable:
    rows: list[AblationRow]

    def row(self, method: str) -> AblationRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise ValidationError(f"method {method!r} not in table")

    def to_dict(self) -> dict:
        return {"rows": [{"method": r.method, "accuracy": [float(v) for v in r.accuracy],
                          "macro_f1": [float(v) for v in r.macro_f1]} for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "AblationTable":
        return cls([AblationRow(r["method"], list(r["accuracy"]), list(r["macro_f1"])) for r in d["rows"]])

    def write_csv(self, path) -> Path:
        """Summary table: one row per method with run count, means and std."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "runs", "accuracy_mean", "accuracy_std", "macro_f1_mean"])
            for r in self.rows:
                w.writerow([r.method, len(r.accuracy), repr(r.mean_accuracy), repr(r.std_accuracy),
                            repr(r.mean_macro_f1)])
        return path

    def write_runs_csv(self, path) -> Path:
        """Long table: one row per (method, run)."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "run", "accuracy", "macro_f1"])
            for r in self.rows:
                for k, (a, f) in enumerate(zip(r.accuracy, r.macro_f1)):
                    w.writerow([r.method, k, repr(float(a)), repr(float(f))])
        return path


def pooled_std(table: AblationTable) -> float:
    """Square root of the run-count weighted mean of per-method sample variances."""
    num = den = 0.0
    for r in table.rows:
        n = len(r.accuracy)
        if n > 1:
            num += (n - 1) * float(np.var(r.accuracy, ddof=1))
            den += n - 1
    return float(np.sqrt(num / den)) if den else 0.0


def ordering_holds(table: AblationTable, order=("full", "dann_mcc", "dann", "plain"), tol: float | None = None) -> bool:
    """True when each method's mean accuracy is at least the next one's minus ``tol``.

    ``tol`` defaults to the pooled standard deviation of the table.
    """
    tol = pooled_std(table) if tol is None else tol
    means = [table.row(m).mean_accuracy for m in order]
    return all(a >= b - tol for a, b in zip(means, means[1:]))


def ablation_matrix(source: SignalDataset, target: SignalDataset, cfg: TrainConfig, methods,
                    n_runs: int = 1, spec: NetworkSpec | None = None, progress=None) -> AblationTable:
    """Train every method ``n_runs`` times (seeds ``cfg.seed + k``) and score on the target domain."""
    methods = list(methods)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValidationError(f"unknown methods {unknown}; choose from {list(METHODS)}")
    if n_runs < 1:
        raise ValidationError("n_runs must be >= 1")
    if target.labels is None:
        raise ValidationError("ablation scores the target domain and needs its labels")
    unlabeled = target.without_labels()
    rows = []
    for method in methods:
        row = AblationRow(method, [], [])
        for k in range(n_runs):
            state, _ = train(source, unlabeled, replace(cfg, method=method, seed=cfg.seed + k), spec)
            rep = evaluate(state, target)
            row.accuracy.append(rep.accuracy)
            row.macro_f1.append(rep.macro_f1)
            row.reports.append(rep)
            if progress is not None:
                progress(method, cfg.seed + k, rep)
        rows.append(row)
    return AblationTable(rows)


def ablation_from_values(values: dict[str, list[float]], macro_f1: dict[str, list[float]] | None = None) -> AblationTable:
    macro_f1 = macro_f1 or {}
    return AblationTable([AblationRow(m, list(v), list(macro_f1.get(m, v))) for m, v in values.items()])


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path

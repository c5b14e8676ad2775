"""Detection and selective-classification metrics.

Scores are confidences: higher means "more likely positive" / "more
confident". Binary labels use 1 for the positive class. Rank metrics follow
fixed tie conventions so that they agree exactly with brute-force
enumeration:

* AUROC counts tied positive/negative pairs as one half.
* AUPR is step-wise average precision; tied scores keep input order.
* FPR at a TPR target uses the largest threshold reaching the target, with
  no interpolation.
* Risk-coverage curves sort by decreasing confidence, ties in input order.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "ScoredSet",
    "ProtocolError",
    "auroc",
    "aupr",
    "fpr_at_tpr",
    "ece",
    "brier",
    "nll",
    "risk_coverage",
    "aurc",
    "optimal_aurc",
    "e_aurc",
    "e_aurc_approx",
    "build_joint_set",
    "detection_metrics",
    "detection_report",
    "EvalReport",
    "aggregate_reports",
    "REPORT_FIELDS",
]

REPORT_FIELDS = ("auroc", "aupr_error", "aupr_success", "fpr95", "aurc", "e_aurc")
TASKS = ("mis", "ood", "joint")


class ProtocolError(ValueError):
    """The evaluation protocol cannot be applied to the given data."""


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.asarray(self.labels).astype(np.int64).ravel()
        if self.scores.shape != self.labels.shape or self.scores.size == 0:
            raise ValueError("scores and labels must be non-empty and of equal length")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise ValueError("labels must be binary")


def _check(y_true, scores, need_both=True):
    s = ScoredSet(scores, y_true)
    if need_both and (s.labels.min() == s.labels.max()):
        raise ValueError("rank metrics need at least one positive and one negative")
    return s.labels, s.scores


def auroc(y_true, scores) -> float:
    """Probability a random positive outscores a random negative."""
    y, s = _check(y_true, scores)
    ranks = rankdata(s)  # average ranks for ties
    n1 = int(y.sum())
    n0 = y.size - n1
    u = ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def aupr(y_true, scores, positive: str = "success") -> float:
    """Average precision.

    ``positive="error"`` treats label 0 as the positive class and ranks by
    negated scores (AUPR-Error); ``"success"`` keeps label 1 (AUPR-Success).
    """
    y, s = _check(y_true, scores)
    if positive == "error":
        y, s = 1 - y, -s
    elif positive != "success":
        raise ValueError("positive must be 'success' or 'error'")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, y.size + 1)
    return float(np.sum(precision * hits) / hits.sum())


def fpr_at_tpr(y_true, scores, tpr_target: float = 0.95) -> float:
    """False-positive rate at the largest threshold whose TPR >= target."""
    y, s = _check(y_true, scores)
    thresholds = np.unique(s)[::-1]
    pos = np.sort(s[y == 1])
    neg = np.sort(s[y == 0])
    # counts of scores >= t for every candidate threshold
    tp = pos.size - np.searchsorted(pos, thresholds, side="left")
    fp = neg.size - np.searchsorted(neg, thresholds, side="left")
    tpr = tp / pos.size
    ok = np.flatnonzero(tpr >= tpr_target)
    return float(fp[ok[0]] / neg.size)


def ece(confidences, correct, n_bins: int = 15) -> float:
    """Expected calibration error over equal-width bins on [0, 1]."""
    conf = np.asarray(confidences, dtype=np.float64).ravel()
    acc = np.asarray(correct, dtype=np.float64).ravel()
    if conf.shape != acc.shape or conf.size == 0:
        raise ValueError("confidences and correctness flags must align")
    if n_bins < 1:
        raise ValueError("need at least one bin")
    idx = np.clip(np.floor(conf * n_bins).astype(int), 0, n_bins - 1)
    total = 0.0
    for m in range(n_bins):
        mask = idx == m
        if mask.any():
            total += mask.sum() / conf.size * abs(acc[mask].mean() - conf[mask].mean())
    return float(total)


def brier(probs, labels) -> float:
    """Mean over samples of (1/K) * squared distance to the one-hot label."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels).astype(np.intp)
    onehot = np.zeros_like(p)
    onehot[np.arange(p.shape[0]), y] = 1.0
    return float(np.mean(np.mean((p - onehot) ** 2, axis=1)))


def nll(probs, labels, floor: float = 1e-12) -> float:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels).astype(np.intp)
    py = p[np.arange(p.shape[0]), y]
    if np.any(py <= 0):
        warnings.warn(
            f"{int(np.sum(py <= 0))} samples give zero probability to their label; "
            f"clamped at {floor}",
            RuntimeWarning,
        )
    return float(-np.mean(np.log(np.maximum(py, floor))))


def risk_coverage(confidences, costs):
    """Selective risk of every prefix of the confidence-sorted samples.

    Returns ``(coverage, risk)`` arrays of length N.
    """
    conf = np.asarray(confidences, dtype=np.float64).ravel()
    c = np.asarray(costs, dtype=np.float64).ravel()
    if conf.shape != c.shape or conf.size == 0:
        raise ValueError("confidences and costs must be non-empty and aligned")
    order = np.argsort(-conf, kind="stable")
    n = np.arange(1, conf.size + 1)
    return n / conf.size, np.cumsum(c[order]) / n


def aurc(confidences, costs) -> float:
    return float(np.mean(risk_coverage(confidences, costs)[1]))


def optimal_aurc(costs) -> float:
    """AURC of the ordering that accepts every zero-cost sample first."""
    c = np.sort(np.asarray(costs, dtype=np.float64).ravel())
    n = np.arange(1, c.size + 1)
    return float(np.mean(np.cumsum(c) / n))


def e_aurc(confidences, costs) -> float:
    return aurc(confidences, costs) - optimal_aurc(costs)


def e_aurc_approx(confidences, costs) -> float:
    """Excess AURC using the continuous approximation of the optimal area,
    ``r + (1 - r) log(1 - r)`` with ``r`` the overall risk."""
    r = float(np.mean(np.asarray(costs, dtype=np.float64)))
    opt = r + ((1.0 - r) * math.log(1.0 - r) if r < 1.0 else 0.0)
    return aurc(confidences, costs) - opt


def build_joint_set(id_scores, id_correct, ood_scores, kappa: float = 1.0, seed=0) -> ScoredSet:
    """Correct in-distribution predictions against misclassifications and OOD.

    ``round(kappa * n_ood)`` misclassified samples are drawn with replacement
    so that errors are not swamped by the OOD set.
    """
    id_scores = np.asarray(id_scores, dtype=np.float64).ravel()
    id_correct = np.asarray(id_correct).astype(bool).ravel()
    ood_scores = np.asarray(ood_scores, dtype=np.float64).ravel()
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    if ood_scores.size == 0:
        raise ProtocolError("joint detection needs at least one OOD sample")
    mis = id_scores[~id_correct]
    if mis.size == 0:
        raise ProtocolError("joint detection needs at least one misclassification")
    n_draw = int(round(kappa * ood_scores.size))
    rng = np.random.Generator(np.random.PCG64(seed))
    drawn = mis[rng.integers(0, mis.size, size=n_draw)]
    pos = id_scores[id_correct]
    scores = np.concatenate([pos, drawn, ood_scores])
    labels = np.concatenate([np.ones(pos.size), np.zeros(n_draw + ood_scores.size)])
    return ScoredSet(scores, labels)


def detection_metrics(y_true, scores) -> dict:
    """All rank and selective metrics for one binary task.

    The selective cost of a sample is 1 for negatives and 0 for positives.
    """
    y, s = _check(y_true, scores)
    costs = 1.0 - y
    return {
        "auroc": auroc(y, s),
        "aupr_error": aupr(y, s, positive="error"),
        "aupr_success": aupr(y, s, positive="success"),
        "fpr95": fpr_at_tpr(y, s, 0.95),
        "aurc": aurc(s, costs),
        "e_aurc": e_aurc(s, costs),
    }


def task_set(task, id_conf, id_correct, ood_conf=None, kappa=1.0, seed=0) -> ScoredSet:
    id_conf = np.asarray(id_conf, dtype=np.float64)
    id_correct = np.asarray(id_correct).astype(bool)
    if task == "mis":
        return ScoredSet(id_conf, id_correct.astype(int))
    if ood_conf is None:
        raise ProtocolError(f"task {task!r} needs OOD scores")
    ood_conf = np.asarray(ood_conf, dtype=np.float64)
    if task == "ood":
        return ScoredSet(
            np.concatenate([id_conf, ood_conf]),
            np.concatenate([np.ones(id_conf.size), np.zeros(ood_conf.size)]),
        )
    if task == "joint":
        return build_joint_set(id_conf, id_correct, ood_conf, kappa=kappa, seed=seed)
    raise ValueError(f"unknown task {task!r}")


@dataclass
class EvalReport:
    """Rows of ``(measure, task, metric values)`` plus optional model-level
    calibration figures."""

    rows: list = field(default_factory=list)
    calibration: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add(self, measure: str, task: str, values: Mapping[str, float]) -> None:
        row = {"measure": measure, "task": task}
        row.update({k: float(values[k]) for k in REPORT_FIELDS})
        self.rows.append(row)

    def get(self, measure: str, task: str) -> dict:
        for row in self.rows:
            if row["measure"] == measure and row["task"] == task:
                return row
        raise KeyError((measure, task))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["measure", "task", *REPORT_FIELDS])
            for row in self.rows:
                w.writerow([row["measure"], row["task"], *(f"{row[k]:.6f}" for k in REPORT_FIELDS)])

    def to_dict(self) -> dict:
        return {"rows": self.rows, "calibration": self.calibration, "meta": self.meta}

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_csv(cls, path) -> "EvalReport":
        rep = cls()
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rep.add(rec["measure"], rec["task"], {k: float(rec[k]) for k in REPORT_FIELDS})
        return rep


def detection_report(
    scores: Mapping[str, tuple],
    id_correct,
    tasks: Sequence[str] = TASKS,
    orientation: Optional[Mapping[str, bool]] = None,
    kappa: float = 1.0,
    seed=0,
) -> EvalReport:
    """Evaluate raw measure values on the mis / ood / joint tasks.

    ``scores`` maps a measure name to ``(id_values, ood_values)`` (the OOD
    entry may be None when only ``mis`` is requested). Values are flipped to
    the "higher = more confident" convention using ``orientation``, which
    defaults to the measure registry.
    """
    if orientation is None:
        from .measures import REGISTRY

        orientation = {name: m.higher_is_confident for name, m in REGISTRY.items()}
    report = EvalReport()
    for name, (id_vals, ood_vals) in scores.items():
        if name not in orientation:
            raise KeyError(f"no orientation registered for measure {name!r}")
        sign = 1.0 if orientation[name] else -1.0
        id_conf = sign * np.asarray(id_vals, dtype=np.float64)
        ood_conf = None if ood_vals is None else sign * np.asarray(ood_vals, dtype=np.float64)
        for task in tasks:
            s = task_set(task, id_conf, id_correct, ood_conf, kappa=kappa, seed=seed)
            report.add(name, task, detection_metrics(s.labels, s.scores))
    return report


def aggregate_reports(reports: Sequence[EvalReport]) -> list:
    """Mean and standard deviation of every metric across seeds.

    The standard deviation uses ``ddof=1`` and is 0 for a single report.
    """
    if not reports:
        raise ValueError("nothing to aggregate")
    keys = [(r["measure"], r["task"]) for r in reports[0].rows]
    out = []
    for measure, task in keys:
        vals = np.array([[rep.get(measure, task)[k] for k in REPORT_FIELDS] for rep in reports])
        mean = vals.mean(axis=0)
        std = vals.std(axis=0, ddof=1) if len(reports) > 1 else np.zeros(len(REPORT_FIELDS))
        row = {"measure": measure, "task": task, "n": len(reports)}
        for i, k in enumerate(REPORT_FIELDS):
            row[f"{k}_mean"] = float(mean[i])
            row[f"{k}_std"] = float(std[i])
        out.append(row)
    return out

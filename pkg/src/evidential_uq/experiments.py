"""End-to-end pipelines on the synthetic benchmark.

The functions here are what the command-line tool runs, split into the
same stages: generate data, train classifiers, train confidence heads,
score and evaluate. Every stage is a pure function of a
:class:`~evidential_uq.config.RunConfig` and a seed; the ``*_files``
helpers add the on-disk layout (seed-suffixed file names).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import auxiliary as aux
from . import dirichlet as dr
from .config import RunConfig, SEED_OFFSETS
from .data import Dataset, MixtureConfig, gen_mixture, gen_ring, load_csv, save_csv, split
from .measures import (
    REGISTRY,
    ConfigError,
    evidential_measures,
    fit_temperature,
    mahalanobis_fit,
    mahalanobis_score,
    odin_score,
)
from .metrics import (
    EvalReport,
    ScoredSet,
    brier,
    detection_metrics,
    detection_report,
    ece,
    nll,
    risk_coverage,
)
from .nn import Network, forward, init_network, load_network, save_network, softmax, train

__all__ = [
    "SYNTHETIC_TABLE",
    "TABLE_MEASURES",
    "SeedData",
    "make_data",
    "fit_classifier",
    "fit_head",
    "score_seed",
    "evaluate_seed",
    "run_synthetic",
    "compare_to_table",
    "ordering_checks",
    "write_rows_csv",
    "format_table",
]

# mean AUROC (%) over five runs: (mis, ood, joint)
SYNTHETIC_TABLE = {
    "mcp": (80.2, 15.9, 48.6),
    "entropy": (78.4, 11.0, 45.7),
    "mutual_information": (75.0, 2.2, 38.8),
    "differential_entropy": (74.2, 1.9, 38.0),
    "mahalanobis": (51.5, 98.5, 75.0),
    "klos": (79.4, 98.8, 89.2),
}
TABLE_MEASURES = tuple(SYNTHETIC_TABLE)
TABLE_TASKS = ("mis", "ood", "joint")

LABEL_MEASURES = ("tcp", "ntcp", "klos_star")
HEAD_MEASURES = ("confidnet", "klosnet")


@dataclass
class SeedData:
    train: Dataset
    test: Dataset
    ood: Dataset
    ood_train: Optional[Dataset] = None
    heldout: Optional[Dataset] = None


def make_data(cfg: RunConfig, seed: int) -> SeedData:
    train_set, test_set = gen_mixture(cfg.mixture(seed))
    ood = gen_ring(cfg.ring(seed, "ring_eval"))
    ood_train = gen_ring(cfg.ring(seed, "ring_train")) if cfg.train_ood else None
    heldout = None
    if cfg.head_train_set == "heldout":
        mix = MixtureConfig(sigma=cfg.sigma, n_train=cfg.n_heldout, n_test=0,
                            seed=SEED_OFFSETS["heldout"] + seed)
        heldout, _ = gen_mixture(mix)
    return SeedData(train_set, test_set, ood, ood_train, heldout)


def fit_classifier(cfg: RunConfig, seed: int, data: SeedData):
    """Train one classifier; returns ``(network, history)``."""
    K = int(data.train.labels.max()) + 1
    net = init_network(cfg.network_spec(data.train.dim, K, seed))
    X_ood = data.ood_train.features if data.ood_train is not None else None
    return train(net, data.train.features, data.train.labels, cfg.train_config(seed), X_ood=X_ood)


def fit_head(cfg: RunConfig, seed: int, net: Network, data: SeedData):
    """Two-phase confidence head. Phase 2 selects its checkpoint on a 20%
    validation split of the head's training data."""
    source = data.heldout if cfg.head_train_set == "heldout" else data.train
    if source is None:
        raise ConfigError("head_train_set = heldout but no held-out data was generated")
    sched = cfg.head_schedule()
    fit_part, val_part = split(source, (0.8, 0.2), seed=seed)
    head, hist1 = aux.train_head_phase1(
        net, fit_part.features, fit_part.labels, cfg.head_spec(seed),
        epochs=sched["epochs1"], lr=sched["lr1"], batch_size=cfg.head_batch_size, lam=cfg.lam,
    )
    head, hist2 = aux.finetune_phase2(
        head, net, fit_part.features, fit_part.labels, val_part.features, val_part.labels,
        epochs=sched["epochs2"], lr=sched["lr2"], batch_size=cfg.head_batch_size,
    )
    return head, hist1 + hist2


def score_seed(cfg: RunConfig, net: Network, data: SeedData, head=None, measures=None) -> dict:
    """Raw measure values ``{name: (id_values, ood_values or None)}``.

    Label-dependent measures (tcp, ntcp, klos_star) have no OOD values.
    """
    measures = cfg.measures if measures is None else measures
    tau = cfg.resolved_tau()
    li, fi = forward(net, data.test.features)
    lo, fo = forward(net, data.ood.features)
    plain = [m for m in measures if m not in LABEL_MEASURES + HEAD_MEASURES + ("mahalanobis", "odin", "variation_ratio")]
    mi = evidential_measures(li, plain, tau)
    mo = evidential_measures(lo, plain, tau)
    out = {m: (mi[m], mo[m]) for m in plain}
    labelled = [m for m in measures if m in LABEL_MEASURES]
    if labelled:
        ml = evidential_measures(li, labelled, tau, labels=data.test.labels)
        out.update({m: (ml[m], None) for m in labelled})
    if "mahalanobis" in measures:
        ftr = forward(net, data.train.features)[1]
        model = mahalanobis_fit(ftr, data.train.labels)
        out["mahalanobis"] = (mahalanobis_score(model, fi), mahalanobis_score(model, fo))
    if "odin" in measures:
        T = fit_temperature(forward(net, data.train.features)[0], data.train.labels)
        out["odin"] = (odin_score(li, T), odin_score(lo, T))
    for name in HEAD_MEASURES:
        if name in measures:
            if head is None:
                raise ConfigError(f"measure {name!r} needs a trained confidence head (train-aux)")
            want = "klos_star_sigmoid" if name == "klosnet" else ("tcp", "ntcp")
            if head.spec.target not in (want if isinstance(want, tuple) else (want,)):
                raise ConfigError(f"measure {name!r} does not match head target {head.spec.target!r}")
            # already oriented: higher = more confident for both heads
            out[name] = (aux.confidence_score(head, net, data.test.features),
                         aux.confidence_score(head, net, data.ood.features))
    if "variation_ratio" in measures:
        raise ConfigError("variation_ratio needs an ensemble and is not scored per seed")
    return out


def evaluate_seed(cfg: RunConfig, net: Network, data: SeedData, head=None, seed: int = 0):
    """Detection report for one seed plus risk-coverage curves.

    Returns ``(report, curves)`` where ``curves`` maps a measure name to
    ``(coverage, risk)`` when the selective task is requested.
    """
    scores = score_seed(cfg, net, data, head)
    logits = forward(net, data.test.features)[0]
    probs = softmax(logits)
    correct = np.argmax(logits, axis=1) == data.test.labels
    det_tasks = [t for t in cfg.tasks if t != "selective"]
    report = EvalReport()
    curves = {}
    for name, (iv, ov) in scores.items():
        tasks = det_tasks if ov is not None else [t for t in det_tasks if t == "mis"]
        sub = detection_report({name: (iv, ov)}, correct, tasks=tasks, kappa=cfg.kappa, seed=seed)
        report.rows.extend(sub.rows)
        if "selective" in cfg.tasks:
            sign = 1.0 if REGISTRY[name].higher_is_confident else -1.0
            conf = sign * np.asarray(iv)
            costs = 1.0 - correct
            if ov is not None:
                conf = np.concatenate([conf, sign * np.asarray(ov)])
                costs = np.concatenate([costs, np.ones(len(ov))])
            s = ScoredSet(conf, 1.0 - costs)
            report.add(name, "selective", detection_metrics(s.labels, s.scores))
            curves[name] = risk_coverage(conf, costs)
    report.calibration = {
        "accuracy": float(correct.mean()),
        "ece": ece(probs.max(axis=1), correct),
        "brier": brier(probs, data.test.labels),
        "nll": nll(probs, data.test.labels),
        "mean_train_alpha0": float(np.mean(dr.precision(np.exp(np.clip(
            forward(net, data.train.features)[0], -60, 60))))),
    }
    return report, curves


def run_synthetic(cfg: RunConfig):
    """Generate, train and evaluate every seed in memory.

    Returns ``(reports, networks)``.
    """
    reports, nets = [], []
    for seed in cfg.seeds:
        data = make_data(cfg, seed)
        net, _ = fit_classifier(cfg, seed, data)
        head = None
        if any(m in HEAD_MEASURES for m in cfg.measures):
            head, _ = fit_head(cfg, seed, net, data)
        report, _ = evaluate_seed(cfg, net, data, head, seed)
        reports.append(report)
        nets.append(net)
    return reports, nets


def compare_to_table(aggregate: list, tolerance: float = 5.0) -> list:
    """Rows ``measure, task, paper, ours, delta, ok`` against the reference
    table (AUROC in percent)."""
    lookup = {(r["measure"], r["task"]): r for r in aggregate}
    rows = []
    for measure, vals in SYNTHETIC_TABLE.items():
        for task, ref in zip(TABLE_TASKS, vals):
            rec = lookup.get((measure, task))
            if rec is None:
                raise KeyError(f"aggregate lacks {measure}/{task}")
            ours = 100.0 * rec["auroc_mean"]
            rows.append({
                "measure": measure, "task": task, "paper": ref,
                "ours": round(ours, 6), "delta": round(ours - ref, 6),
                "ok": abs(ours - ref) <= tolerance,
            })
    return rows


def ordering_checks(aggregate: list) -> dict:
    """The three ordering constraints attached to the reference table."""
    au = {(r["measure"], r["task"]): 100.0 * r["auroc_mean"] for r in aggregate}
    joint = {m: au[(m, "joint")] for m in TABLE_MEASURES if (m, "joint") in au}
    return {
        "klos_best_joint": joint.get("klos", -1.0) >= max(joint.values()),
        "mahalanobis_ood_ge_95": au[("mahalanobis", "ood")] >= 95.0,
        "mutual_information_ood_le_25": au[("mutual_information", "ood")] <= 25.0,
    }


def write_rows_csv(rows: list, path, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def format_table(aggregate: list) -> str:
    """Fixed-width text view of an aggregate (AUROC / AUPR-Error in %)."""
    head = f"{'measure':<22}{'task':<10}{'auroc':>14}{'aupr_err':>14}{'fpr95':>14}{'n':>4}"
    lines = [head, "-" * len(head)]
    for r in aggregate:
        lines.append(
            f"{r['measure']:<22}{r['task']:<10}"
            f"{100 * r['auroc_mean']:>7.1f} ±{100 * r['auroc_std']:>5.1f}"
            f"{100 * r['aupr_error_mean']:>7.1f} ±{100 * r['aupr_error_std']:>5.1f}"
            f"{100 * r['fpr95_mean']:>7.1f} ±{100 * r['fpr95_std']:>5.1f}"
            f"{r['n']:>4}"
        )
    return "\n".join(lines)


# ----------------------------------------------------------------------
# on-disk layout

def data_paths(out_dir, seed):
    return {k: os.path.join(out_dir, f"{k}_s{seed}.csv") for k in ("train", "test", "ood", "ood_train", "heldout")}


def model_path(out_dir, seed):
    return os.path.join(out_dir, f"model_s{seed}.txt")


def head_path(out_dir, seed):
    return os.path.join(out_dir, f"head_s{seed}.txt")


def write_manifest(cfg: RunConfig, out_dir, name="manifest.txt") -> str:
    fp = cfg.fingerprint()
    with open(os.path.join(out_dir, name), "w") as fh:
        fh.write(f"# fingerprint = {fp}\n")
        fh.write(cfg.to_text())
    return fp


def save_data(cfg: RunConfig, data: SeedData, out_dir, seed) -> list:
    paths = data_paths(out_dir, seed)
    written = []
    for key in ("train", "test", "ood", "ood_train", "heldout"):
        d = getattr(data, key)
        if d is not None:
            save_csv(d, paths[key])
            written.append(paths[key])
    return written


def load_data(cfg: RunConfig, out_dir, seed) -> SeedData:
    """Read the CSVs of one seed, generating any that are missing."""
    paths = data_paths(out_dir, seed)
    needed = ["train", "test", "ood"]
    if cfg.train_ood:
        needed.append("ood_train")
    if cfg.head_train_set == "heldout":
        needed.append("heldout")
    if not all(os.path.exists(paths[k]) for k in needed):
        return make_data(cfg, seed)
    parts = {k: load_csv(paths[k]) for k in needed}
    return SeedData(parts["train"], parts["test"], parts["ood"], parts.get("ood_train"), parts.get("heldout"))


def write_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(history):
            w.writerow([i, repr(float(v))])


def write_report(report: EvalReport, stem) -> None:
    report.to_csv(stem + ".csv")
    report.to_json(stem + ".json")


def write_aggregate(aggregate: list, stem, meta: dict) -> None:
    cols = ["measure", "task", "n"] + [k for k in aggregate[0] if k not in ("measure", "task", "n")]
    write_rows_csv(aggregate, stem + ".csv", cols)
    with open(stem + ".json", "w") as fh:
        json.dump({"rows": aggregate, "meta": meta}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_curve(coverage, risk, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coverage", "risk"])
        for c, r in zip(coverage, risk):
            w.writerow([f"{c:.6f}", f"{r:.6f}"])


def load_model(out_dir, seed) -> Network:
    path = model_path(out_dir, seed)
    if not os.path.exists(path):
        raise ConfigError(f"missing model file {path}; run 'train' first")
    return load_network(path)


def save_model(net: Network, out_dir, seed) -> str:
    path = model_path(out_dir, seed)
    save_network(net, path)
    return path

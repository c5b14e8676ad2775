"""Command-line entry point.

    evidential-uq synth-gen | train | train-aux | eval | repro-synthetic

Settings come from RunConfig defaults, then ``--config FILE`` (flat
``key = value`` lines), then ``--set key=value`` flags. Outputs go to
``--out-dir``, defaulting to ``$EVIDENTIAL_UQ_OUT`` or ``./runs``.

Exit codes: 0 ok, 1 usage or config error, 2 numeric failure (NaN during
training), 3 reproduction outside tolerance.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import auxiliary as aux
from . import experiments as ex
from .config import ConfigError, RunConfig, load_config
from .data import DataFormatError
from .metrics import ProtocolError, aggregate_reports
from .nn import TrainingDivergedError

log = logging.getLogger("evidential_uq")

OUT_ENV = "EVIDENTIAL_UQ_OUT"
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_TOLERANCE = 0, 1, 2, 3
FULL_TOLERANCE = 5.0
SMOKE_TOLERANCE = 15.0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable; wins over --config)")
    p.add_argument("--out-dir", help=f"output directory (default: ${OUT_ENV} or ./runs)")
    p.add_argument("--seeds", type=int, help="use seeds 0..N-1")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evidential-uq", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    for name, helptext in [
        ("synth-gen", "write train/test/ood CSVs per seed"),
        ("train", "train one classifier per seed"),
        ("train-aux", "train a ConfidNet/KLoSNet head per seed"),
        ("eval", "score measures and write per-seed and aggregate reports"),
        ("repro-synthetic", "run the synthetic benchmark and compare to the reference table"),
    ]:
        p = sub.add_parser(name, help=helptext)
        _common(p)
        if name == "repro-synthetic":
            p.add_argument("--tolerance", type=float,
                           help=f"AUROC points per cell (default {FULL_TOLERANCE}, "
                                f"{SMOKE_TOLERANCE} with a single seed)")
    return parser


def _resolve(args) -> tuple:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        overrides["seeds"] = ",".join(str(s) for s in range(args.seeds))
    cfg = load_config(args.config, overrides)
    out_dir = args.out_dir or os.environ.get(OUT_ENV) or "runs"
    os.makedirs(out_dir, exist_ok=True)
    return cfg, out_dir


def cmd_synth_gen(cfg: RunConfig, out_dir, force=False) -> int:
    ex.write_manifest(cfg, out_dir, "manifest_synth-gen.txt")
    for seed in cfg.seeds:
        data = ex.make_data(cfg, seed)
        for path in ex.save_data(cfg, data, out_dir, seed):
            log.info("wrote %s", path)
    return EXIT_OK


def cmd_train(cfg: RunConfig, out_dir, force=False) -> int:
    ex.write_manifest(cfg, out_dir, "manifest_train.txt")
    for seed in cfg.seeds:
        path = ex.model_path(out_dir, seed)
        if os.path.exists(path) and not force:
            log.info("skip %s (exists; use --force)", path)
            continue
        data = ex.load_data(cfg, out_dir, seed)
        net, history = ex.fit_classifier(cfg, seed, data)
        ex.save_model(net, out_dir, seed)
        ex.write_history(history, os.path.join(out_dir, f"history_s{seed}.csv"))
        log.info("seed %d: final loss %.6g -> %s", seed, history[-1] if history else float("nan"), path)
    return EXIT_OK


def cmd_train_aux(cfg: RunConfig, out_dir, force=False) -> int:
    ex.write_manifest(cfg, out_dir, "manifest_train-aux.txt")
    for seed in cfg.seeds:
        path = ex.head_path(out_dir, seed)
        if os.path.exists(path) and not force:
            log.info("skip %s (exists; use --force)", path)
            continue
        net = ex.load_model(out_dir, seed)
        data = ex.load_data(cfg, out_dir, seed)
        head, history = ex.fit_head(cfg, seed, net, data)
        aux.save_head(head, path)
        ex.write_history(history, os.path.join(out_dir, f"head_history_s{seed}.csv"))
        log.info("seed %d: head -> %s", seed, path)
    return EXIT_OK


def _evaluate(cfg: RunConfig, out_dir, fp, nets=None) -> list:
    reports = []
    needs_head = any(m in ex.HEAD_MEASURES for m in cfg.measures)
    for i, seed in enumerate(cfg.seeds):
        net = nets[i] if nets is not None else ex.load_model(out_dir, seed)
        data = ex.load_data(cfg, out_dir, seed) if nets is None else ex.make_data(cfg, seed)
        head = None
        if needs_head:
            hp = ex.head_path(out_dir, seed)
            if not os.path.exists(hp):
                raise ConfigError(f"missing head file {hp}; run 'train-aux' first")
            head = aux.load_head(hp)
        report, curves = ex.evaluate_seed(cfg, net, data, head, seed)
        report.meta = {"fingerprint": fp, "seed": seed}
        ex.write_report(report, os.path.join(out_dir, f"report_s{seed}"))
        for name, (cov, risk) in curves.items():
            ex.write_curve(cov, risk, os.path.join(out_dir, f"curve_{name}_s{seed}.csv"))
        reports.append(report)
    agg = aggregate_reports(reports)
    ex.write_aggregate(agg, os.path.join(out_dir, "aggregate"), {"fingerprint": fp, "seeds": list(cfg.seeds)})
    print(ex.format_table(agg))
    return agg


def cmd_eval(cfg: RunConfig, out_dir, force=False) -> int:
    fp = ex.write_manifest(cfg, out_dir, "manifest_eval.txt")
    _evaluate(cfg, out_dir, fp)
    return EXIT_OK


def cmd_repro_synthetic(cfg: RunConfig, out_dir, force=False, tolerance=None) -> int:
    fp = ex.write_manifest(cfg, out_dir, "manifest_repro-synthetic.txt")
    cfg = RunConfig(**{**cfg.__dict__, "measures": ex.TABLE_MEASURES, "tasks": ex.TABLE_TASKS})
    if tolerance is None:
        tolerance = SMOKE_TOLERANCE if len(cfg.seeds) == 1 else FULL_TOLERANCE
    nets = []
    for seed in cfg.seeds:
        data = ex.make_data(cfg, seed)
        net, history = ex.fit_classifier(cfg, seed, data)
        ex.save_model(net, out_dir, seed)
        ex.write_history(history, os.path.join(out_dir, f"history_s{seed}.csv"))
        nets.append(net)
    agg = _evaluate(cfg, out_dir, fp, nets=nets)
    rows = ex.compare_to_table(agg, tolerance)
    ex.write_rows_csv(rows, os.path.join(out_dir, "comparison.csv"), ["measure", "task", "paper", "ours", "delta"])
    orders = ex.ordering_checks(agg)
    bad = [r for r in rows if not r["ok"]]
    print(f"\ncomparison (tolerance ±{tolerance:g} AUROC points):")
    for r in rows:
        print(f"  {r['measure']:<22}{r['task']:<7}ref {r['paper']:>5.1f}  ours {r['ours']:>5.1f}"
              f"  delta {r['delta']:>+6.1f}  {'ok' if r['ok'] else 'OUT'}")
    for name, ok in orders.items():
        print(f"  ordering {name}: {'ok' if ok else 'FAIL'}")
    if bad or not all(orders.values()):
        sys.stdout.flush()
        print(f"{len(bad)} cell(s) out of tolerance, "
              f"{sum(not v for v in orders.values())} ordering check(s) failed", file=sys.stderr)
        return EXIT_TOLERANCE
    return EXIT_OK


COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "train": cmd_train,
    "train-aux": cmd_train_aux,
    "eval": cmd_eval,
    "repro-synthetic": cmd_repro_synthetic,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg, out_dir = _resolve(args)
        fn = COMMANDS[args.command]
        if args.command == "repro-synthetic":
            return fn(cfg, out_dir, args.force, args.tolerance)
        return fn(cfg, out_dir, args.force)
    except (TrainingDivergedError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataFormatError, ProtocolError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``hpsmeta {sweep,min-tasks,trace,adapt,rip-probe}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import adaptation, harness, metrics, synthetic
from .errors import ArgumentError, ConfigError, DataError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("hpsmeta")


def _out_dir(args, raw, default):
    return args.out or raw.get("output_dir") or default


def _seed(args, raw, key="seed_base"):
    return int(args.seed) if args.seed is not None else int(raw.get(key, 0))


def cmd_sweep(args):
    raw = harness.load_yaml(args.config)
    cfg = harness.experiment_from_dict(raw)
    cfg = harness.with_seed(cfg, _seed(args, raw))
    out = _out_dir(args, raw, os.path.join("out", cfg.name))
    rows = harness.run_sweep(cfg, threads=args.threads, out_dir=out)
    for s in harness.summarize(rows):
        print(f"{s['method']:>9} d={s['d']} s={s['s']} m={s['m']} T={s['T']} sigma={s['sigma']:g}"
              f"  dist1={s['dist1']:.4g}  dist2={s['dist2']:.4g}")
    print(f"wrote {os.path.join(out, 'results.csv')}")


def cmd_min_tasks(args):
    raw = harness.load_yaml(args.config)
    try:
        fixed = raw["fixed"]
        methods = harness.parse_methods(raw["methods"])
        ms = raw["m_values"]
    except KeyError as exc:
        raise ConfigError(f"min-tasks config lacks {exc}") from exc
    out = _out_dir(args, raw, os.path.join("out", str(raw.get("name", "min_tasks"))))
    os.makedirs(out, exist_ok=True)
    rows = []
    for method, params in methods.items():
        for m in ms:
            search = harness.MinTasksSearch(
                method, int(m), int(fixed["d"]), int(fixed["s"]), float(fixed["sigma"]),
                params=params,
                target=float(raw.get("target", 0.1)),
                granularity=raw.get("granularity"),
                trials=int(raw.get("trials", 5)),
                seed_base=_seed(args, raw),
                start=int(raw.get("start", 100)),
                ceiling=int(raw.get("ceiling", 100_000)),
                threads=args.threads,
            )
            found = search.run()
            rows.append([method, str(m), "/" if found is harness.NOT_FOUND else str(found)])
            print(f"{method:>9} m={m}: minimal T = {rows[-1][2]}")
    harness.write_csv(os.path.join(out, "min_tasks.csv"), ("method", "m", "min_T"), rows)


def cmd_trace(args):
    raw = harness.load_yaml(args.config)
    try:
        fixed = raw["fixed"]
        methods = harness.parse_methods(raw["methods"])
        cfg = synthetic.DgpConfig(d=int(fixed["d"]), s=int(fixed["s"]), T=int(fixed["T"]),
                                  m=int(fixed["m"]), sigma=float(fixed["sigma"]),
                                  seed=_seed(args, raw, "seed"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed trace config: {exc!r}") from exc
    gt, ds = synthetic.generate(cfg)
    rows = []
    for method, params in methods.items():
        rows.extend(harness.trace_run(method, params, gt, ds, seed=cfg.seed))
    out = _out_dir(args, raw, os.path.join("out", str(raw.get("name", "trace"))))
    harness.write_trace(rows, os.path.join(out, "trace.csv"))
    print(f"wrote {len(rows)} trace rows to {os.path.join(out, 'trace.csv')}")


def _adapt_dataset(raw, args):
    if args.table:
        if not args.schema:
            raise ConfigError("--table needs --schema")
        spec = adaptation.PreprocessSpec.load(args.schema)
        pre = adaptation.preprocess(adaptation.load_table(args.table), spec)
        if pre.rows_rejected or pre.tasks_dropped:
            log.warning("rejected %d rows, dropped %d tasks", pre.rows_rejected, pre.tasks_dropped)
        return pre.dataset
    try:
        syn = raw["synthetic"]
        cfg = synthetic.DgpConfig(d=int(syn["d"]), s=int(syn["s"]), T=int(syn["T"]), m=int(syn["m"]),
                                  sigma=float(syn["sigma"]), seed=_seed(args, raw, "seed"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("adapt needs --table/--schema or a 'synthetic' section in the config") from exc
    return synthetic.generate(cfg)[1]


def cmd_adapt(args):
    raw = harness.load_yaml(args.config) if args.config else {}
    ds = _adapt_dataset(raw, args)
    try:
        split = adaptation.SplitProtocol(
            train_points_per_task=int(raw.get("train_points_per_task", 30)),
            meta_fraction=float(raw.get("meta_fraction", 0.8)),
            seed=_seed(args, raw, "seed"),
        )
        rank = int(raw.get("rank", 6))
        methods = harness.parse_methods(raw.get("methods", ["Meta-SP", "Random-B", "Lsq-Pinv"]))
    except (TypeError, ValueError, ArgumentError) as exc:
        raise ConfigError(f"malformed adapt config: {exc}") from exc
    rows = []
    for method, params in methods.items():
        reports = adaptation.run_protocol(ds, split, method, rank, params=params or None,
                                          method_seed=split.seed, delog=bool(raw.get("delog", False)))
        for rep in reports:
            rows.append([method, rep.stage, harness.fmt_value(rep.m_mre), str(rep.per_task_mre.size)])
            print(f"{method:>9} {rep.stage:>10}  M-MRE = {rep.m_mre:.4f}")
    out = _out_dir(args, raw, os.path.join("out", "adapt"))
    os.makedirs(out, exist_ok=True)
    harness.write_csv(os.path.join(out, "adapt.csv"), ("method", "stage", "m_mre", "tasks"), rows)


def cmd_rip_probe(args):
    raw = harness.load_yaml(args.config) if args.config else {}
    try:
        cfg = synthetic.DgpConfig(d=int(raw.get("d", 100)), s=int(raw.get("r", 5)), T=int(raw.get("T", 10)),
                                  m=int(raw.get("m", 2000)), sigma=0.0, seed=_seed(args, raw, "seed"))
        r, samples = int(raw.get("r", 5)), int(raw.get("samples", 100))
        a, eps = float(raw.get("a", 10.0)), float(raw.get("eps", 0.1))
    except (TypeError, ValueError, ArgumentError) as exc:
        raise ConfigError(f"malformed rip-probe config: {exc}") from exc
    ds = synthetic.generate(cfg)[1]
    est = metrics.rip_probe(ds, r, samples, seed=cfg.seed, a=a, eps=eps)
    out = _out_dir(args, raw, os.path.join("out", "rip_probe"))
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "rip.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sample", "ratio"))
        w.writerows((i, repr(float(x))) for i, x in enumerate(est.ratios))
    print(f"r={r} m={cfg.m} samples={samples}: ratios in [{est.min_ratio:.4f}, {est.max_ratio:.4f}], "
          f"delta_hat={est.delta_hat:.4f}, bound={est.theory_bound:.4f}, "
          f"coverage={est.coverage():.2f}")


COMMANDS = {
    "sweep": cmd_sweep,
    "min-tasks": cmd_min_tasks,
    "trace": cmd_trace,
    "adapt": cmd_adapt,
    "rip-probe": cmd_rip_probe,
}


def _common_flags(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=default(None), help="YAML experiment configuration")
    parser.add_argument("--out", default=default(None), help="output directory (overrides the config)")
    parser.add_argument("--seed", type=int, default=default(None), help="base seed (overrides the config)")
    parser.add_argument("--threads", type=int, default=default(1), help="worker processes for trials")
    parser.add_argument("-v", "--verbose", action="store_true", default=default(False))
    return parser


def build_parser():
    """Global flags are accepted before or after the subcommand."""
    sub_flags = _common_flags(argparse.ArgumentParser(add_help=False), suppress=True)
    p = _common_flags(argparse.ArgumentParser(prog="hpsmeta", description=__doc__.splitlines()[0]),
                      suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("sweep", "min-tasks", "trace", "rip-probe"):
        sub.add_parser(name, parents=[sub_flags])
    adapt = sub.add_parser("adapt", parents=[sub_flags])
    adapt.add_argument("--table", help="raw task table CSV (task_id,<features...>,<response>)")
    adapt.add_argument("--schema", help="YAML preprocessing sidecar for --table")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("sweep", "min-tasks", "trace") and not args.config:
        print(f"error: {args.command} requires --config", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with np.errstate(over="ignore"):
            COMMANDS[args.command](args)
    except (ConfigError, ArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands::

    mvmc synth OUT_DIR [--spec spec.yaml] [--seed S] ...
    mvmc run CONFIG.yaml [--output DIR] [--workers N]
    mvmc eval PREDICTIONS.json [--truth truth.txt] [--report report.json]
    mvmc complete MATRIX.txt --labels M [--lam L] [--gamma G] [--output OUT.txt]

Exit status: 0 success, 2 configuration error, 3 data error, 4 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .completion import McParams, fpc_solve
from .core import FeatureMatrix, LabelMatrix, build_stacked
from .errors import ConfigError, DataError, MvmcError, SolverError
from .experiment import (ExperimentConfig, _build, check_report, evaluate_predictions,
                         format_table, run)
from .io import read_matrix, write_dataset, write_matrix
from .synthetic import SyntheticSpec, generate_synthetic

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, SolverError):
        return EXIT_SOLVER
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    return EXIT_SOLVER


def _cmd_synth(args):
    spec = {}
    if args.spec:
        try:
            spec = yaml.safe_load(Path(args.spec).read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot load spec {args.spec}: {exc}") from exc
    for key in ("V", "n", "m", "rank", "noise_sigma", "missing_feature_rate", "seed",
                "n_l_per_class"):
        value = getattr(args, key)
        if value is not None:
            spec[key] = value
    if args.informativeness is not None:
        spec["view_informativeness"] = args.informativeness
    ds = generate_synthetic(_build(SyntheticSpec, spec, "synthetic"))
    write_dataset(ds, args.out)
    print(f"wrote {ds.V} views, n={ds.n}, m={ds.m}, {ds.labeled.size} labeled to {args.out}")


def _cmd_run(args):
    env = dict(os.environ)
    if args.output:
        env["MVMC_OUTPUT"] = args.output
    if args.workers:
        env["MVMC_WORKERS"] = str(args.workers)
    config = ExperimentConfig.load(args.config, environ=env)
    report = run(config)
    print(format_table(report), end="")
    print(f"outputs written to {config.output}")


def _cmd_eval(args):
    try:
        predictions = json.loads(Path(args.predictions).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read predictions {args.predictions}: {exc}") from exc
    truth = read_matrix(args.truth) if args.truth else None
    try:
        metrics = evaluate_predictions(predictions, truth)
    except (KeyError, TypeError, IndexError) as exc:
        raise DataError(f"malformed predictions file: {exc!r}") from exc
    print(json.dumps(metrics, indent=1, sort_keys=True))
    if args.report:
        report = json.loads(Path(args.report).read_text(encoding="utf-8"))
        bad = check_report(report, metrics)
        if bad:
            raise DataError(f"{len(bad)} report entries disagree with predictions, e.g. {bad[0]}")
        print("report consistent with predictions")


def _cmd_complete(args):
    A = read_matrix(args.matrix)
    m = args.labels
    if not 0 <= m <= A.shape[0]:
        raise DataError(f"--labels {m} outside 0..{A.shape[0]}")
    Yraw, Xraw = A[:m], A[m:]
    known = ~np.isnan(Yraw)
    if not np.isin(Yraw[known], (-1.0, 1.0)).all():
        raise DataError("label rows may hold only -1, +1 or nan")
    Y = LabelMatrix.from_array(Yraw)
    X = FeatureMatrix(Xraw, ~np.isnan(Xraw))
    Z0, omega_x, omega_y = build_stacked(X, Y)
    params = McParams(lam=args.lam, gamma=args.gamma)
    sol = fpc_solve(Z0, omega_x, omega_y, params)
    out = sol.Z.Z if args.full else sol.soft_labels
    if args.output:
        write_matrix(args.output, out)
    else:
        _print_matrix(out)
    print(f"iterations={sol.iterations} stages={sol.stages} objective={sol.final_objective:.17g}",
          file=sys.stderr)


def _print_matrix(A):
    sys.stdout.write(f"{A.shape[0]} {A.shape[1]}\n")
    for row in A:
        sys.stdout.write(",".join("%.17g" % x for x in row) + "\n")


def build_parser():
    p = argparse.ArgumentParser(prog="mvmc", description="Multi-view matrix completion toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset directory")
    s.add_argument("out")
    s.add_argument("--spec", help="YAML file with SyntheticSpec fields")
    s.add_argument("--V", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--m", type=int)
    s.add_argument("--rank", type=int)
    s.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    s.add_argument("--missing-feature-rate", dest="missing_feature_rate", type=float)
    s.add_argument("--informativeness", type=float, nargs="+")
    s.add_argument("--n-l-per-class", dest="n_l_per_class", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=_cmd_synth)

    r = sub.add_parser("run", help="run an experiment from a YAML config")
    r.add_argument("config")
    r.add_argument("--output")
    r.add_argument("--workers", type=int)
    r.set_defaults(func=_cmd_run)

    e = sub.add_parser("eval", help="recompute metrics from a predictions file")
    e.add_argument("predictions")
    e.add_argument("--truth", help="m x n truth matrix file replacing the stored truth")
    e.add_argument("--report", help="report.json to check against the recomputed metrics")
    e.set_defaults(func=_cmd_eval)

    c = sub.add_parser("complete", help="complete one stacked [Y; X] matrix file")
    c.add_argument("matrix", help="(m+d) x n matrix file, nan for unobserved entries")
    c.add_argument("--labels", type=int, required=True, help="number m of leading label rows")
    c.add_argument("--lam", type=float, default=1.0)
    c.add_argument("--gamma", type=float, default=1.0)
    c.add_argument("--full", action="store_true", help="write the whole completed matrix")
    c.add_argument("--output")
    c.set_defaults(func=_cmd_complete)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except MvmcError as exc:
        if getattr(exc, "stage", None):
            print(f"mvmc {args.command}: error {exc}", file=sys.stderr)
        else:
            print(f"mvmc {args.command}: error [{args.command}]: {exc}", file=sys.stderr)
        return exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

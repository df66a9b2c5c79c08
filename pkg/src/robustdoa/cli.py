"""Command line entry point.

Subcommands::

    robustdoa simulate CONFIG [--profile desk|full] [--output PATH] [--timing]
    robustdoa estimate FILE --k K --loss NAME [--q Q] [--nu NU] [--mu MU] [--z Z]
                       [--jmax J] [--gamma-range R] [--grid-points M] [--csv]
    robustdoa crb CONFIG [--output PATH]

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
The number of worker processes for ``simulate`` comes from the
``ROBUSTDOA_WORKERS`` environment variable (default 1).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .datagen import read_snapshot_header, read_snapshots, read_snapshots_csv
from .estimator import EstimatorConfig, estimate_doas
from .experiment import (PROFILES, ConfigError, load_config, rows_to_csv, run_crb,
                         run_experiment)
from .geometry import ArrayGeometry, build_dictionary
from .loss import LossSpec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def run_estimate(path, n_sources: int, loss_name: str, q: float = 0.9, nu: float = 2.1,
                 config: EstimatorConfig = EstimatorConfig(), grid_points: int = 1801,
                 csv_input: bool = False) -> dict:
    """Estimate DOAs from a stored snapshot file and return the report.

    For binary files ``K >= N`` is rejected from the header, before the
    snapshot data are read.
    """
    if n_sources < 1:
        raise ConfigError("--k: need at least one source")
    if not csv_input:
        n, _ = read_snapshot_header(path)
        if n_sources >= n:
            raise ConfigError(f"--k: need fewer sources than sensors (K={n_sources}, N={n})")
    Y = read_snapshots_csv(path) if csv_input else read_snapshots(path)
    n = Y.n_sensors
    if n_sources >= n:
        raise ConfigError(f"--k: need fewer sources than sensors (K={n_sources}, N={n})")
    try:
        loss = LossSpec.from_name(loss_name, n, q=q, nu_loss=nu)
        dictionary = build_dictionary(ArrayGeometry(n), grid_points)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    res = estimate_doas(Y, dictionary, n_sources, loss, config)
    return {
        "doas_degrees": [round(float(d), 4) for d in res.doas_degrees],
        "sigma2": float(res.sigma2),
        "iterations": int(res.iterations),
        "converged": bool(res.converged),
        "loss": loss.name,
    }


def _write(text: str, output):
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robustdoa", description="Robust sparse DOA estimation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte-Carlo sweep from a config file")
    sim.add_argument("config")
    sim.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    sim.add_argument("--output", help="CSV path (overrides [output] path)")
    sim.add_argument("--timing", action="store_true", help="record seconds per run")

    est = sub.add_parser("estimate", help="estimate DOAs from a snapshot file")
    est.add_argument("file")
    est.add_argument("--k", type=int, required=True, help="number of sources")
    est.add_argument("--loss", default="mvt")
    est.add_argument("--q", type=float, default=0.9, help="Huber quantile")
    est.add_argument("--nu", type=float, default=2.1, help="MVT loss degrees of freedom")
    est.add_argument("--mu", type=float, default=1.0, help="stepsize")
    est.add_argument("--z", type=int, default=10, help="convergence window")
    est.add_argument("--jmax", type=int, default=1200, help="iteration cap")
    est.add_argument("--gamma-range", type=float, default=1e-3)
    est.add_argument("--grid-points", type=int, default=1801)
    est.add_argument("--csv", action="store_true", help="input is the text debug format")

    crb = sub.add_parser("crb", help="tabulate Cramer-Rao bounds over a config's sweep")
    crb.add_argument("config")
    crb.add_argument("--output")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            cfg = load_config(args.config, profile=args.profile)
            if args.timing:
                cfg = replace(cfg, timing=True)
            _write(rows_to_csv(run_experiment(cfg)), args.output or cfg.output)
        elif args.command == "crb":
            cfg = load_config(args.config)
            _write(run_crb(cfg), args.output or cfg.output)
        else:
            try:
                est_cfg = EstimatorConfig(stepsize=args.mu, conv_window=args.z, max_iters=args.jmax,
                                          gamma_range=args.gamma_range)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            report = run_estimate(args.file, args.k, args.loss, q=args.q, nu=args.nu,
                                  config=est_cfg, grid_points=args.grid_points,
                                  csv_input=args.csv)
            print("DOAs (deg): " + " ".join(f"{d:.4f}" for d in report["doas_degrees"]))
            print(json.dumps(report))
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, ArithmeticError, FloatingPointError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

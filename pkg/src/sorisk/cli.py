"""Command-line entry point.

Usage::

    sorisk toy --seed 42 --out results/
    sorisk frontier --config frontier.cfg --threads 4
    sorisk backtest --data returns.csv --config backtest.cfg

Exit status is 0 on success, 1 for invalid input or configuration and 2 for
runtime or numerical failures.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .backtest import TrimRule
from .config import config_from_mapping, default_config, parse_config
from .errors import SecondOrderRiskError
from .experiments import run_experiment
from .io import RunManifest, load_returns_csv, sha256_file, utc_now, write_result

SUBCOMMANDS = {
    "toy": "toy_model",
    "frontier": "frontier",
    "wishart": "wishart_oracle",
    "bias-grid": "asset_bias_grid",
    "factor-bias": "factor_bias",
    "backtest": "backtest",
}

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("sorisk")


def build_parser():
    p = argparse.ArgumentParser(prog="sorisk", description=(
        "Monte Carlo and backtest experiments on risk forecasts of optimized portfolios."))
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, experiment in SUBCOMMANDS.items():
        sp = sub.add_parser(name, help=f"run the {experiment} experiment")
        sp.add_argument("--config", help="INI config file or a manifest.json from a prior run")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out", default="results", help="output directory (default: results)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads; never changes the output")
        sp.add_argument("--data", help="returns CSV (date,<asset>,...); required for backtest")
    return p


class _Invalid(Exception):
    pass


def _load_config(args, experiment):
    manifest_data = None
    if args.config:
        if not os.path.exists(args.config):
            raise _Invalid(f"config file not found: {args.config}")
        cfg = parse_config(args.config)
        with open(args.config, encoding="utf-8") as fh:
            head = fh.read(1)
        if head == "{":
            with open(args.config, encoding="utf-8") as fh:
                manifest_data = json.load(fh)
        if cfg.experiment != experiment:
            raise _Invalid(f"config is for experiment {cfg.experiment!r}, "
                           f"subcommand needs {experiment!r}")
    else:
        cfg = default_config(experiment)
    if args.seed is not None:
        values = {k: v for k, v in cfg.as_dict().items() if v is not None}
        values["master_seed"] = args.seed
        cfg = config_from_mapping(values)
    return cfg, manifest_data


def _load_panel(args, cfg, manifest_data):
    path = args.data
    expected = None
    if path is None and manifest_data is not None:
        recorded = manifest_data.get("inputs", {}).get("data")
        if recorded:
            path, expected = recorded["path"], recorded["sha256"]
    if path is None:
        if cfg.experiment == "backtest":
            raise _Invalid("backtest needs --data PATH")
        return None, None
    if not os.path.exists(path):
        raise _Invalid(f"data file not found: {path}")
    digest = sha256_file(path)
    if expected is not None and digest != expected:
        raise _Invalid(f"data file {path} does not match the manifest digest")
    trim = None
    if cfg.experiment == "backtest" and cfg.trim_mode != "none":
        trim = TrimRule(cfg.trim_mode, cfg.trim_lower, cfg.trim_upper, cfg.trim_sigma_cap)
    return load_returns_csv(path, trim), {"path": path, "sha256": digest}


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s",
                        stream=sys.stderr)
    experiment = SUBCOMMANDS[args.command]
    started = utc_now()
    try:
        if args.threads < 1:
            raise _Invalid("--threads must be at least 1")
        cfg, manifest_data = _load_config(args, experiment)
        panel, data_info = _load_panel(args, cfg, manifest_data)
    except (_Invalid, SecondOrderRiskError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        with np.errstate(all="ignore"):
            result = run_experiment(cfg, panel=panel, threads=args.threads)
        outputs = write_result(result, args.out, args.command, args.format)
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SecondOrderRiskError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # numerical or I/O failure during the run
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    inputs = {}
    if args.config:
        inputs["config"] = {"path": args.config, "sha256": sha256_file(args.config)}
    if data_info:
        inputs["data"] = data_info
    manifest = RunManifest(config=cfg.as_dict(), library_version=__version__,
                           master_seed=int(cfg.master_seed), started_at=started,
                           finished_at=utc_now(), outputs=outputs, inputs=inputs,
                           command=args.command, seed_info=result.seed_info)
    manifest.write(os.path.join(args.out, "manifest.json"))
    print(result.headline)
    return EXIT_OK


def main(argv=None):
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())

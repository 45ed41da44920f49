"""Command-line entry point: one subcommand per experiment.

Exit codes: 0 pass, 1 suite assertion failed, 2 usage or config error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

import numpy as np

from ..spectrum import QuadratureError
from .experiments import EXPERIMENTS, ConfigError, ExperimentConfig, resolve_parameters, run

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="yatkernel", description="Yat-kernel experiments and property suites.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", help="JSON file with experiment, parameters, seed, output_path")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output directory for record.json and table.csv")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument(
        "--param", action="append", default=[], metavar="KEY=VALUE",
        help="override one parameter; VALUE is parsed as JSON when possible",
    )
    return ap


def load_config(args) -> ExperimentConfig:
    doc = {}
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
        extra = sorted(set(doc) - {"experiment", "parameters", "seed", "output_path"})
        if extra:
            raise ConfigError(f"unknown config field(s) {extra}")
        if doc.get("experiment", args.experiment) != args.experiment:
            raise ConfigError(
                f"config is for {doc['experiment']!r} but subcommand is {args.experiment!r}"
            )
    params = dict(doc.get("parameters", {}))
    for item in args.param:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        params[key] = _parse_value(value)
    resolve_parameters(args.experiment, params)
    return ExperimentConfig(
        experiment=args.experiment,
        parameters=params,
        seed=args.seed if args.seed is not None else int(doc.get("seed", 0)),
        output_path=args.out or doc.get("output_path"),
        threads=args.threads,
    )


def write_outputs(rec, out: str) -> None:
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "record.json"), "w") as fh:
        fh.write(rec.to_json() + "\n")
    if rec.table is not None:
        with open(os.path.join(out, "table.csv"), "w") as fh:
            fh.write(rec.table)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"yatkernel: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            rec = run(cfg)
    except (ConfigError, OSError) as exc:
        print(f"yatkernel: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, np.linalg.LinAlgError, QuadratureError) as exc:
        print(f"yatkernel: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        if cfg.output_path:
            os.makedirs(cfg.output_path, exist_ok=True)
            with open(os.path.join(cfg.output_path, "record.json"), "w") as fh:
                json.dump(
                    {"experiment": cfg.experiment, "parameters": cfg.parameters, "seed": cfg.seed,
                     "pass": False, "error": f"{type(exc).__name__}: {exc}"},
                    fh, indent=2,
                )
        return EXIT_NUMERIC
    if cfg.output_path:
        write_outputs(rec, cfg.output_path)
    print(rec.to_json())
    return EXIT_PASS if rec.passed in (True, None) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

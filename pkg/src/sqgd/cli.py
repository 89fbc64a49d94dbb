"""Command-line entry point: ``sqgd <experiment> [options]``."""

from __future__ import annotations

import argparse
import json
import sys

from .harness import DEFAULTS, EXPERIMENTS, ConfigError, ExperimentConfig, run_experiment


def _value(text: str):
    """Parse an override as JSON, falling back to a bare string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqgd", description="Seeded experiments on adaptive statistical queries and GD simulation.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", help="JSON config file; command-line flags override it")
        sp.add_argument("--seed", type=int, help="root seed (non-negative integer)")
        sp.add_argument("--out", help="directory for CSV and JSON outputs")
        sp.add_argument("--trials", type=int, help="number of seeded trials")
        sp.add_argument("--workers", type=int, help="parallel worker processes")
        group = sp.add_argument_group("experiment parameters (values are parsed as JSON)")
        for key, default in DEFAULTS[name].items():
            group.add_argument(f"--{key.replace('_', '-')}", dest=f"param_{key}", type=_value, metavar="VALUE", help=f"default: {json.dumps(default)}")
    return parser


def config_from_args(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        if cfg.experiment != args.experiment:
            raise ConfigError(f"config file is for {cfg.experiment!r}, not {args.experiment!r}")
        data = cfg.to_dict()
    else:
        data = {"experiment": args.experiment, "params": {}}
    for key in ("seed", "out", "trials", "workers"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    for key in DEFAULTS[args.experiment]:
        v = getattr(args, f"param_{key}")
        if v is not None:
            data["params"][key] = v
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args).validate()
    except ConfigError as exc:
        print(f"sqgd: {exc}", file=sys.stderr)
        return 2
    table = run_experiment(cfg)
    if cfg.out:
        for path in table.write(cfg.out):
            print(f"wrote {path}")
    else:
        sys.stdout.write(table.to_csv())
    print(table.summary())
    return 0 if table.passed else 1


if __name__ == "__main__":
    sys.exit(main())

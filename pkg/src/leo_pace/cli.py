"""Command-line entry point: ``leo-pace run|validate|bench <config>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .config import ConfigError, ExperimentType, load_config

log = logging.getLogger("leo_pace")


def _config_type(path):
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
        return (data.get("experiment") or {}).get("type")
    except (OSError, yaml.YAMLError, AttributeError):
        return None


def _overrides(args) -> dict:
    exp = {}
    if args.seed is not None:
        exp["seed"] = args.seed
    if args.trials is not None:
        exp["trials"] = args.trials
    if args.out is not None:
        exp["output_dir"] = str(args.out)
    return {"experiment": exp} if exp else {}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leo-pace", description="Positioning-aided channel estimation experiments for multi-LEO downlink.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("run", "run the experiment described by a config file"),
        ("validate", "check a config file and report every problem"),
        ("bench", "time the fast and dense beamforming solvers"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", type=Path)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--trials", type=int, default=None)
        sp.add_argument("--out", type=Path, default=None, help="output directory (overrides experiment.output_dir)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for trials")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    bench = args.command == "bench"
    try:
        overrides = _overrides(args)
        if bench and _config_type(args.config) != ExperimentType.SOLVER_BENCHMARK.value:
            # Sweep axes of other experiment types do not apply; use the benchmark defaults.
            overrides.setdefault("experiment", {}).update(type=ExperimentType.SOLVER_BENCHMARK.value, sweep=None)
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        for msg in exc.errors:
            print(msg, file=sys.stderr)
        return 2
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg['experiment']['type']})")
        return 0
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return 2

    from .experiments import run_experiment
    from .output import write_result

    result = run_experiment(cfg, threads=args.threads)
    for path in write_result(result, cfg["experiment"]["output_dir"]):
        print(path)
    if result.provenance["excluded_trials"]:
        print(f"{result.provenance['excluded_trials']} trial(s) excluded", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())

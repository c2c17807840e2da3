from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from analytics.reports import dumps, to_plain, write_csv, write_json, write_xlsx
from ingestion.config_loader import DEFAULT_CONFIG, RunConfig, load_config
from logic.errors import ConfigError, NumericalError, QFPMEError
from pipeline.common import TaskOutput
from pipeline.dynamics import run_evolve
from pipeline.feedback import run_perturb
from pipeline.fisher import run_fisher
from pipeline.signal import (
    run_correlation,
    run_covariance,
    run_distribution,
    run_moments,
    run_mutual_information,
)
from pipeline.steady import run_steady
from pipeline.trajectories import run_trajectories
from pipeline.validate import run_validate

logger = logging.getLogger("qfpme")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

COMMANDS: dict[str, Callable[[RunConfig], TaskOutput]] = {
    "steady": run_steady,
    "evolve": run_evolve,
    "distribution": run_distribution,
    "moments": run_moments,
    "mutual-info": run_mutual_information,
    "covariance": run_covariance,
    "correlation": run_correlation,
    "fisher": run_fisher,
    "perturb": run_perturb,
    "trajectories": run_trajectories,
    "validate": run_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qfpme",
        description="Quantum Fokker-Planck master equation solver for continuously monitored systems.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS), help="task to run")
    parser.add_argument("--config", default=DEFAULT_CONFIG,
                        help="YAML/JSON run config, or a CSV/JSON output whose header holds one")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path override, e.g. --set model.params.lam=1.5 (repeatable)")
    parser.add_argument("--out", help="output directory (overrides output.dir)")
    parser.add_argument("--seed", type=int, help="RNG seed (overrides seed)")
    parser.add_argument("--threads", type=int, help="worker threads for sweeps and trajectory batches")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _flag_overrides(args: argparse.Namespace) -> list[str]:
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"output.dir={json.dumps(args.out)}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    return overrides


def write_outputs(command: str, cfg: RunConfig, result: TaskOutput) -> list[Path]:
    """One CSV per table plus a JSON report, all carrying the resolved config and health metrics."""
    out_dir = Path(cfg.output.dir)
    prefix = cfg.output.prefix
    header = {"command": command, "config": cfg.to_dict(), "health": result.health}
    written = []
    for name, frame in result.tables.items():
        written.append(write_csv(frame, out_dir / f"{prefix}{name}.csv", header))
    report = {**header, "results": result.summary, "passed": result.passed}
    written.append(write_json(report, out_dir / f"{prefix}{command}.json"))
    if cfg.output.xlsx:
        written.append(write_xlsx(result.tables, out_dir / f"{prefix}{command}.xlsx"))
    return written


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        cfg = load_config(args.config, _flag_overrides(args))
        try:
            result = COMMANDS[args.command](cfg)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"linear algebra failure: {exc}") from exc
        try:
            written = write_outputs(args.command, cfg, result)
        except OSError as exc:
            raise ConfigError(f"cannot write outputs to {cfg.output.dir}: {exc}", path=str(cfg.output.dir)) from exc
    except QFPMEError as exc:
        code = EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_NUMERICAL
        logger.error("%s failed: %s", args.command, exc)
        sys.stderr.write(dumps(exc.to_report()) + "\n")
        return code

    if args.command == "steady":
        sys.stdout.write(dumps(result.summary, indent=2) + "\n")
    if not args.quiet:
        print(f"✅ {args.command}: wrote {len(written)} file(s) to {cfg.output.dir}", file=sys.stderr)
        for key, value in result.summary.items():
            print(f"   {key}: {to_plain(value)}", file=sys.stderr)
    if not result.passed:
        logger.error("%s reported failed checks", args.command)
        return EXIT_NUMERICAL
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

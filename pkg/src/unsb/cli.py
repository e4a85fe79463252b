"""Command-line front end: ``unsb-bench <subcommand> [--config F] [--seed S] [--out DIR] [--check]``.

Exit codes: 0 success, 1 other package error, 2 config error, 3 numerical
abort, 4 threshold failure under ``--check``.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from .bench import BenchReport, ExperimentAbort, ExperimentConfig, preset, run
from .errors import ConfigError, NumericalAbort, UnsbError

SUBCOMMANDS = {
    "cod-sweep": "cod_sweep",
    "shells": "shells_unsb",
    "gaussians": "gaussians",
    "transport-cost": "transport_cost",
    "validate": "validate",
}

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3, 4


def load_config(experiment: str, path: str | None, seed: int | None) -> ExperimentConfig:
    """Preset for ``experiment`` overlaid with the YAML file at ``path`` and the seed flag."""
    cfg = preset(experiment)
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        if data.get("experiment", experiment) != experiment:
            raise ConfigError(f"config is for {data['experiment']!r}, not {experiment!r}")
        cfg = ExperimentConfig.from_dict(data, base=cfg)
    if seed is not None:
        if seed < 0 or seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        cfg = replace(cfg, seed=seed)
    return cfg


def write_report(report: BenchReport, out: str | None) -> None:
    if out is None:
        sys.stdout.write(report.to_json())
        return
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    (path / f"{report.experiment}.json").write_text(report.to_json())
    (path / f"{report.experiment}.csv").write_text(report.to_csv())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file overriding the experiment preset")
    common.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    common.add_argument("--out", help="directory for <experiment>.json/.csv and checkpoints; stdout if omitted")
    common.add_argument("--check", action="store_true", help="exit 4 unless every acceptance threshold holds")
    common.add_argument("--timing", action="store_true", help="record wall-clock seconds in the report")
    parser = argparse.ArgumentParser(prog="unsb-bench", description="Schrodinger-bridge toy experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "cod-sweep": "cosine similarity of Sinkhorn pairs between shells as dimension grows",
        "shells": "train on radius-1 to radius-2 shells and report norm/cosine per nfe",
        "gaussians": "moment errors of Sinkhorn and trained samples between two Gaussians",
        "transport-cost": "input-output distance of chain translation vs Sinkhorn pairs",
        "validate": "oracle convention check and invariant self-tests",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    experiment = SUBCOMMANDS[args.command]
    try:
        cfg = load_config(experiment, args.config, args.seed)
        if args.out is not None:
            cfg = replace(cfg, out=args.out)
        report = run(cfg, timing=args.timing)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentAbort as e:
        write_report(e.partial, args.out)
        print(f"numerical abort: {e} {e.diagnostics}", file=sys.stderr)
        return EXIT_NUMERIC
    except NumericalAbort as e:
        print(f"numerical abort: {e} {e.diagnostics}", file=sys.stderr)
        return EXIT_NUMERIC
    except UnsbError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR

    write_report(report, args.out)
    if args.check:
        results = report.check()
        for r in results:
            print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}", file=sys.stderr)
        if not all(r.passed for r in results):
            return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

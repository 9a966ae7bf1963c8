"""Command line entry point: ``bandloc <experiment> --config <path> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import math
import subprocess
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema

from . import __version__
from .config import EXPERIMENTS, ConfigError, ExperimentConfig, config_echo, load_config
from .errors import CapExceeded
from .experiments import ExperimentResult, Table, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_CAP, EXIT_ASSERT = 0, 2, 3, 4


def artifact_version() -> str:
    """Package version plus the short commit hash when run from a checkout."""
    try:
        sha = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"{__version__}+g{sha}" if sha else __version__


def report_schema() -> dict:
    return json.loads(resources.files("bandloc").joinpath("report.schema.json").read_text())


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "item"):  # numpy scalar
        return _cell(v.item())
    return v


def write_csv(path: Path, table: Table) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.header)
        for row in table.rows:
            w.writerow([_cell(v) for v in row])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if hasattr(v, "item"):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def build_report(cfg: ExperimentConfig, res: ExperimentResult, wall: float, files: list[str]) -> dict:
    report = {
        "version": artifact_version(),
        "experiment": cfg.experiment,
        "config": config_echo(cfg),
        "seed": cfg.seed,
        "threads": cfg.threads,
        "wall_time_s": wall,
        "results": _jsonable(res.results),
        "checks": {k: bool(v) for k, v in res.checks.items()},
        "passed": res.passed,
        "exclusions": int(res.exclusions),
        "files": files,
    }
    jsonschema.validate(report, report_schema())
    return report


def emit(cfg: ExperimentConfig, res: ExperimentResult, wall: float) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name, table in res.tables.items():
        write_csv(out / f"{name}.csv", table)
        files.append(f"{name}.csv")
    report = build_report(cfg, res, wall, files)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return report


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bandloc", description="Random band matrix localization experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="flat JSON config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="worker threads (default: config, BANDLOC_THREADS, cores)")
    p.add_argument("--out", help="output directory (default: config 'out')")
    p.add_argument("--assert", dest="assert_", action="store_true",
                   help="exit with status 4 if any acceptance check fails")
    return p


def resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if cfg.experiment != args.experiment:
        raise ConfigError(f"config is for {cfg.experiment!r}, not {args.experiment!r}")
    updates = {k: v for k, v in (("seed", args.seed), ("threads", args.threads), ("out", args.out))
               if v is not None}
    if updates.get("threads", 1) < 1:
        raise ConfigError("threads must be >= 1")
    return cfg.model_copy(update=updates)


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = resolve(args)
    except ConfigError as exc:
        print(f"bandloc: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        res = run_experiment(cfg)
    except CapExceeded as exc:
        print(f"bandloc: resource cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAP
    report = emit(cfg, res, time.perf_counter() - t0)
    for name, ok in report["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"wrote {len(report['files'])} tables and report.json to {cfg.out}")
    if args.assert_ and not res.passed:
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command-line runner.

``qtimedelay run <config> [--suite NAME] [--out DIR] [--threads K] [--seed S]``
executes suites and writes ``report.json``, ``results.csv`` and
``manifest.json`` into the output directory. ``qtimedelay list-suites``
prints the check catalogue.

Exit codes: 0 all verdicts pass, 1 internal error, 2 invalid config,
3 inconclusive suite (report still written), 4 a verdict failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
import time
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import SUITE_NAMES, ExperimentConfig, load_config
from .errors import ConfigError
from .suites import GROUPS, catalog_lines, run_suite

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_INCONCLUSIVE, EXIT_FAILED = 0, 1, 2, 3, 4
CSV_HEADER = ("suite", "model", "r", "quantity", "value", "tail", "verdict")


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow([_cell(x) for x in row])


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n")


def overall_status(statuses) -> str:
    statuses = list(statuses)
    if "inconclusive" in statuses:
        return "inconclusive"
    if "fail" in statuses:
        return "fail"
    return "pass"


def run_experiment(cfg: ExperimentConfig, out_dir: Path, threads: int = 1) -> tuple:
    """Run the configured suites, write the three artifacts and return ``(status, results)``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = GROUPS if cfg.suite == "all" else (cfg.suite,)
    t_start = time.perf_counter()
    grid = cfg.build_grid()
    U0 = cfg.build_free(grid)
    phi = cfg.build_state(grid, U0.components)
    results, wall = [], {}
    for name in groups:
        # one independent stream per group, so a single-suite run matches the full run
        rng = np.random.default_rng([cfg.seed, GROUPS.index(name)])
        t0 = time.perf_counter()
        results.append(run_suite(name, cfg, U0, phi, rng, threads))
        wall[name] = time.perf_counter() - t0
    status = overall_status(r.status for r in results)
    report = {
        "config": cfg.as_dict(),
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "status": status,
        "suites": {r.name: {"status": r.status, **r.details} for r in results},
    }
    write_json(out_dir / "report.json", report)
    write_csv(out_dir / "results.csv", [row for r in results for row in r.rows])
    manifest = {
        "config_hash": cfg.config_hash(),
        "config_name": cfg.name,
        "version": __version__,
        "seed": cfg.seed,
        "threads": threads,
        "suites": list(groups),
        "status": status,
        "wall_time_s": {**wall, "total": time.perf_counter() - t_start},
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    write_json(out_dir / "manifest.json", manifest)
    return status, results


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qtimedelay", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the suites of a config file")
    run.add_argument("config", help="TOML config file")
    run.add_argument("--suite", choices=SUITE_NAMES, help="override the config's suite selection")
    run.add_argument("--out", help="output directory (default: the config's [run] out)")
    run.add_argument("--threads", type=int, default=1, help="worker threads for per-r and per-probe jobs")
    run.add_argument("--seed", type=int, help="override the config's seed")
    sub.add_parser("list-suites", help="print the catalogue of checks")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-suites":
        for line in catalog_lines():
            print(line)
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = replace(cfg, suite=args.suite or cfg.suite, out=args.out or cfg.out,
                      seed=cfg.seed if args.seed is None else args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        status, results = run_experiment(cfg, Path(cfg.out), args.threads)
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL
    for r in results:
        print(f"{r.name}: {r.status}")
    print(f"overall: {status} ({cfg.out})")
    return {"pass": EXIT_OK, "inconclusive": EXIT_INCONCLUSIVE}.get(status, EXIT_FAILED)


if __name__ == "__main__":
    sys.exit(main())

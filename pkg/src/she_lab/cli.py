"""Command line entry point.

::

    she-lab <experiment> --config PATH [--seeds N] [--out DIR] [--workers N]
    she-lab plot --report PATH

Exit codes: 0 all asserted verdicts pass, 2 a verdict failed, 3 configuration
error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import EXPERIMENTS, load_config
from .errors import ConfigError, NumericalAbort, SheLabError
from .experiments import run_experiment
from .io import read_series_csv
from .report import write_report

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="she-lab", description="Stochastic heat equation lattice experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        e = sub.add_parser(name, help=f"run the {name} experiment")
        e.add_argument("--config", required=True, help="TOML config file")
        e.add_argument("--seeds", type=int, help="override the seed count (keeps the base seed)")
        e.add_argument("--out", help="output directory (overrides OUTPUT_DIR and the config)")
        e.add_argument("--workers", type=int, help="worker processes for per-seed work")
        e.add_argument("-v", "--verbose", action="store_true")
    pl = sub.add_parser("plot", help="render the CSV series of a report as PNG files")
    pl.add_argument("--report", required=True, help="path to report.json")
    return p


def _run(args) -> int:
    cfg = load_config(args.config)
    if cfg.experiment != args.command:
        raise ConfigError(f"config describes {cfg.experiment!r}, not {args.command!r}")
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        cfg = cfg.with_seed_count(args.seeds)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    out = Path(args.out or cfg.output_dir)
    started = time.time()
    report = run_experiment(cfg)
    path = write_report(report, out)
    # wall-clock data lives beside the report so the report itself stays byte-stable
    meta = {"wall_clock_seconds": round(time.time() - started, 3), "finished_unix": int(time.time()),
            "package_version": __version__, "workers": cfg.workers}
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for v in report.verdicts:
        tag = "PASS" if v.passed else ("FAIL" if v.asserted else "INFO")
        print(f"{tag} {v.criterion} {v.name}")
    print(f"report: {path}")
    return EXIT_OK if report.passed else EXIT_FAILED


def _plot(args) -> int:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise ConfigError("plotting needs matplotlib (pip install 'artifact[plot]')") from None
    report_path = Path(args.report)
    if not report_path.exists():
        raise ConfigError(f"report not found: {report_path}")
    report = json.loads(report_path.read_text())
    series_dir = report_path.parent / "series"
    for name in report.get("series", []):
        cols = read_series_csv(series_dir / f"{name}.csv")
        names = list(cols)
        x_name = names[0]
        fig, ax = plt.subplots(figsize=(6, 4))
        xs = cols[x_name]
        for y_name in names[1:]:
            ys = cols[y_name]
            if all(isinstance(v, float) for v in ys):
                ax.plot(range(len(ys)) if not all(isinstance(v, float) for v in xs) else xs, ys, "o-", ms=3, label=y_name)
        ax.set_xlabel(x_name)
        ax.set_title(f"{report.get('experiment')}: {name}")
        ax.legend()
        fig.tight_layout()
        target = series_dir / f"{name}.png"
        fig.savefig(target, dpi=120)
        plt.close(fig)
        print(f"wrote {target}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot":
            return _plot(args)
        return _run(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except SheLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command line: ``fedkernel {list, run, check, plot}``.

Exit codes: 0 success, 1 a theory check failed, 2 bad input or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Optional, Sequence

from ..exceptions import FedKernelError
from .config import _SCENARIO_KEYS as SCENARIO_KEYS
from .config import EXPERIMENTS, config_from_dict, default_config, load_config
from .experiments import plot_specs, run_experiment
from .plotting import write_plots
from .results import ResultTable

__all__ = ["main", "build_parser", "resolve_out_dir"]

ENV_OUT = "FEDKERNEL_OUT"
LOCK_NAME = ".lock"
LOG_NAME = "run.log"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedkernel", description="Federated kernel regression experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="print the registered experiment ids")

    run = sub.add_parser("run", help="run one experiment")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="TOML or JSON config file")
    src.add_argument("--experiment", choices=EXPERIMENTS, help="run with default settings")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help=f"output directory (overrides ${ENV_OUT} and the config)")
    run.add_argument("--trials", type=int)
    run.add_argument("--workers", type=int)

    chk = sub.add_parser("check", help="run the theory-check suite")
    chk.add_argument("--seed", type=int, default=0)
    chk.add_argument("--out", help="also write the suite's result table here")

    plot = sub.add_parser("plot", help="redraw plots from a run directory")
    plot.add_argument("run_dir", help="directory holding results.csv")
    plot.add_argument("--out", help="where to write the SVG files (default: the run directory)")
    return p


def resolve_out_dir(cli_out: Optional[str], config_out: Optional[str], experiment: str, seed: int) -> Path:
    """``--out`` beats ``$FEDKERNEL_OUT`` beats the config's ``out``."""
    for cand in (cli_out, os.environ.get(ENV_OUT), config_out):
        if cand:
            return Path(cand)
    return Path("runs") / f"{experiment}-seed{seed}"


@contextmanager
def _owned(out: Path):
    """Hold the run directory's lock file and route log records to ``run.log``."""
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise FedKernelError(f"run directory {out} is locked by another process (remove {lock} if stale)")
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    handler = logging.FileHandler(out / LOG_NAME, mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("fedkernel")
    old_level = root.level
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    try:
        yield
    finally:
        root.removeHandler(handler)
        root.setLevel(old_level)
        handler.close()
        lock.unlink(missing_ok=True)


def _cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else default_config(args.experiment)
    overrides = {k: getattr(args, k) for k in ("seed", "trials", "workers") if getattr(args, k) is not None}
    if overrides:
        cfg = cfg.with_(**overrides)
    out = resolve_out_dir(args.out, cfg.out, cfg.experiment, cfg.seed)
    with _owned(out):
        table = run_experiment(cfg, out_dir=out)
    print(f"{cfg.experiment}: {len(table)} rows written to {out}")
    return 0


def _cmd_check(args) -> int:
    cfg = default_config("theory-check-suite").with_(seed=args.seed)
    if args.out:
        with _owned(Path(args.out)):
            table = run_experiment(cfg, out_dir=args.out)
    else:
        table = run_experiment(cfg)
    for line in table.meta["checks"]:
        print(line)
    ok = table.meta["all_passed"]
    print("all checks passed" if ok else "some checks FAILED")
    return 0 if ok else 1


def _cmd_plot(args) -> int:
    run_dir = Path(args.run_dir)
    results = run_dir / "results.csv"
    if not results.is_file():
        raise FileNotFoundError(f"no results.csv in {run_dir}")
    table = ResultTable.from_csv(results, run_dir / "summary.csv")
    manifest = run_dir / "run-manifest.json"
    if manifest.is_file():
        data = json.loads(manifest.read_text())
        flat = {k: v for k, v in data["config"].items() if k != "scenario"}
        flat.update({k: v for k, v in data["config"]["scenario"].items() if k in SCENARIO_KEYS})
        table.meta = data.get("meta", {})
        cfg = config_from_dict({**flat, "experiment": data["experiment"]})
    else:
        cfg = default_config(table.experiment)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    names = write_plots(table, plot_specs(cfg, table), out)
    for n in names:
        print(out / n)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "list":
        for name in EXPERIMENTS:
            print(name)
        return 0
    handler = {"run": _cmd_run, "check": _cmd_check, "plot": _cmd_plot}[args.command]
    try:
        return handler(args)
    except (FedKernelError, OSError, ValueError, TypeError, KeyError, ArithmeticError) as exc:
        print(f"fedkernel: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line driver: ``ciofuse gen|run|sweep --config PATH --out PATH``.

Exit codes: 0 success, 1 configuration error, 2 runtime or data error.
Results go to files; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from ._rng import derive_seed
from .bench import AXES, BenchError, make_split, run_all, run_seed, summarize, sweep
from .config import ConfigError, RunConfig, load_config
from .dataset import DataError, Dataset
from .fuse import FuseError
from .models import ModelError

log = logging.getLogger("ciofuse")

DETAIL_COLUMNS = ("dataset", "method", "base_model", "p_r", "beta", "os_control_count",
                  "run_index", "seed", "sqrt_pehe")
SUMMARY_COLUMNS = ("dataset", "method", "base_model", "p_r", "beta", "os_control_count",
                   "n_runs", "mean_sqrt_pehe", "std_sqrt_pehe")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        if np.isnan(v):
            return ""
        return f"{v:.6f}"
    return str(v)


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header(cfg: RunConfig) -> str:
    return (f"# ciofuse {__version__} config_sha256={cfg.digest} "
            f"base_seed={cfg.experiment.base_seed}\n")


def dataset_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x_{j}" for j in range(ds.p)] + ["t", "s", "y", "y0_true", "y1_true", "tau_true"])
    for i in range(len(ds)):
        w.writerow([fmt(v) for v in ds.X[i]] + [
            str(int(ds.t[i])), str(int(ds.s[i])),
            fmt(ds.y[i]), fmt(ds.y0[i]), fmt(ds.y1[i]), fmt(ds.tau[i]),
        ])
    return buf.getvalue()


def cmd_gen(cfg: RunConfig, out) -> None:
    """Write os.csv, rct.csv and test.csv for run 0 of the configured recipe."""
    exp = cfg.experiment
    split = make_split(exp, derive_seed(run_seed(exp, 0), "data"))
    out = Path(out)
    for name in ("os", "rct", "test"):
        atomic_write(out / f"{name}.csv", dataset_csv(getattr(split, name)))
    log.info("wrote %d/%d/%d OS/RCT/test rows to %s",
             len(split.os), len(split.rct), len(split.test), out)


def results_csv(cfg: RunConfig, rows) -> str:
    buf = io.StringIO()
    buf.write(_header(cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DETAIL_COLUMNS)
    for r in rows:
        w.writerow([fmt(getattr(r, c)) for c in DETAIL_COLUMNS])
    buf.write("# summary\n")
    w.writerow(SUMMARY_COLUMNS)
    for s in summarize(rows):
        w.writerow([fmt(v) for v in (s.dataset, s.method, s.base_model, s.p_r, s.beta,
                                     s.os_control_count, s.n_runs, s.mean, s.std)])
    return buf.getvalue()


def _notice_missing(cfg: RunConfig, rows) -> None:
    seen = {(r.method, r.base_model) for r in rows}
    for spec in cfg.experiment.base_models:
        for m in cfg.experiment.methods:
            if (m, spec.tag) not in seen:
                print(f"notice: {m}/{spec.tag} produced no rows on recipe "
                      f"{cfg.experiment.recipe} (not applicable to this data)", file=sys.stderr)


def cmd_run(cfg: RunConfig, out) -> None:
    rows = run_all(cfg.experiment, cfg.n_runs, cfg.workers)
    _notice_missing(cfg, rows)
    atomic_write(out, results_csv(cfg, rows))


def parse_values(axis: str, text: str):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values: not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise ConfigError("--values: empty list")
    if axis == "os_control_count":
        if any(v != int(v) or v < 0 for v in vals):
            raise ConfigError("--values: os_control_count values must be nonnegative integers")
        return [int(v) for v in vals]
    if axis == "p_r" and any(not 0 < v <= 1 for v in vals):
        raise ConfigError("--values: p_r values must lie in (0, 1]")
    if axis == "beta" and any(v < 0 for v in vals):
        raise ConfigError("--values: beta values must be >= 0")
    return vals


def sweep_csv(cfg: RunConfig, axis: str, table) -> str:
    buf = io.StringIO()
    buf.write(_header(cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("axis", "axis_value") + SUMMARY_COLUMNS)
    for value, summaries in table:
        for s in summaries:
            w.writerow([axis, fmt(value)] + [fmt(v) for v in (
                s.dataset, s.method, s.base_model, s.p_r, s.beta, s.os_control_count,
                s.n_runs, s.mean, s.std)])
    return buf.getvalue()


def cmd_sweep(cfg: RunConfig, axis: str, values, out) -> None:
    if axis not in AXES:
        raise ConfigError(f"--axis: expected one of {list(AXES)}, got {axis!r}")
    exp = cfg.experiment
    if axis == "beta" and exp.recipe != "simulation":
        raise ConfigError("beta axis requires simulation recipe")
    if axis == "os_control_count" and exp.recipe.startswith("nsw"):
        raise ConfigError("os_control_count axis requires OS controls; the nsw recipes have none")
    table = sweep(exp, axis, values, cfg.n_runs, cfg.workers)
    atomic_write(out, sweep_csv(cfg, axis, table))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ciofuse", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"ciofuse {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("gen", "write os/rct/test CSVs for the configured dataset"),
                        ("run", "run every method and base model, write results CSV"),
                        ("sweep", "repeat the experiment along one axis")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", required=True,
                       help="output directory (gen) or CSV file (run, sweep)")
        p.add_argument("--seed", type=int, default=None, help="override base_seed")
        p.add_argument("--workers", type=int, default=None,
                       help="parallel worker processes (overrides config)")
        p.add_argument("-v", "--verbose", action="store_true", help="log diagnostics to stderr")
        if name == "sweep":
            p.add_argument("--axis", required=True, help="one of " + ", ".join(AXES))
            p.add_argument("--values", required=True, help="comma-separated axis values")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.seed)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            cfg = RunConfig(cfg.experiment, cfg.n_runs, args.workers, cfg.digest)
        if args.command == "gen":
            cmd_gen(cfg, args.out)
        elif args.command == "run":
            cmd_run(cfg, args.out)
        else:
            cmd_sweep(cfg, args.axis, parse_values(args.axis, args.values), args.out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except (BenchError, DataError, FuseError, ModelError, OSError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

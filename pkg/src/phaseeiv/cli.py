"""Command-line interface: CSV ingestion, hourly de-trending and estimator runs.

Subcommands ``fit``, ``bootstrap``, ``gmm``, ``simulate`` and ``detrend``.
Fits read a CSV, divide the W columns by ``--w-divisor``, keep complete rows
for the chosen roles and, when ``--hour-col`` is given, subtract hour-of-day
means from every role column before estimation.  On failure a one-line JSON
error record is written to stderr and the exit status is non-zero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ecf import WeightKernel
from .errors import ConfigError, DataError, DomainError, ParseError, PhaseEIVError
from .estimator import FitOptions, RegressionData, fit_naive, fit_phase, refit_options, variance_components
from .gmm import GMMOptions, fit_gmm
from .inference import BootstrapConfig, full_bootstrap, plugin_bootstrap
from .simulation import ERR_DISTS, X_DISTS, ScenarioConfig, load_scenarios, run_scenario, write_report_rows

__all__ = [
    "Dataset",
    "RunConfig",
    "load_csv",
    "write_csv",
    "complete_cases",
    "detrend_hourly",
    "build_regression",
    "run",
    "main",
    "load_schema",
]

log = logging.getLogger("phaseeiv")

DEFAULT_SENTINEL = -200.0


@dataclass
class Dataset:
    """Named float columns with NaN marking missing cells, plus optional hour classes."""

    columns: dict
    hour_index: np.ndarray | None = None
    missing_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if self.hour_index is not None:
            self.hour_index = np.asarray(self.hour_index, dtype=int)
            lengths.add(self.hour_index.size)
            if self.hour_index.size and (self.hour_index.min() < 1 or self.hour_index.max() > 24):
                raise DataError("hour index values must lie in [1, 24]")
        if len(lengths) > 1:
            raise DataError("all columns must have equal length")
        if not self.missing_counts:
            self.missing_counts = {k: int(np.isnan(v).sum()) for k, v in self.columns.items()}

    @property
    def n_rows(self) -> int:
        if self.columns:
            return len(next(iter(self.columns.values())))
        return 0 if self.hour_index is None else self.hour_index.size

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise ConfigError(f"column {name!r} not found; available: {sorted(self.columns)}") from None


def _parse_cell(text: str, sentinel, decimal: str, row: int, column: str) -> float:
    s = text.strip()
    if s == "":
        return math.nan
    if decimal != ".":
        s = s.replace(decimal, ".")
    try:
        v = float(s)
    except ValueError:
        raise ParseError(f"cannot parse {text!r} at row {row}, column {column!r}", row=row, column=column) from None
    if sentinel is not None and v == sentinel:
        return math.nan
    return v


def load_csv(path, *, sentinel: float | None = DEFAULT_SENTINEL, delimiter: str = ",",
             decimal: str = ".", columns=None, hour_col: str | None = None) -> Dataset:
    """Read a headed CSV into a :class:`Dataset`.

    Empty cells and cells equal to ``sentinel`` become NaN.  Only ``columns``
    (default: all) are parsed, so unrelated text columns are ignored.  Row
    numbers in errors count the header as row 1.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise ParseError(f"{path} is empty or has no header", row=1)
        header = [h.strip() for h in header]
        wanted = list(header) if columns is None else list(dict.fromkeys(columns))
        if hour_col is not None and hour_col not in wanted:
            wanted.append(hour_col)
        missing = [c for c in wanted if c not in header]
        if missing:
            raise ConfigError(f"columns not found in {path}: {missing}")
        pos = {c: header.index(c) for c in wanted}
        data = {c: [] for c in wanted}
        for r, rec in enumerate(reader, start=2):
            if not rec or all(not x.strip() for x in rec):
                continue
            for c, j in pos.items():
                cell = rec[j] if j < len(rec) else ""
                data[c].append(_parse_cell(cell, sentinel, decimal, r, c))
    cols = {c: np.asarray(v, dtype=float) for c, v in data.items()}
    hours = None
    if hour_col is not None:
        h = cols[hour_col]
        bad = ~np.isfinite(h) | (h != np.round(h)) | (h < 1) | (h > 24)
        if bad.any():
            r = int(np.flatnonzero(bad)[0]) + 2
            raise ParseError(f"hour column {hour_col!r} must hold integers in [1, 24] (row {r})",
                             row=r, column=hour_col)
        hours = h.astype(int)
    ds = Dataset(cols, hours)
    log.info("loaded %d rows from %s (missing sentinel %r); missing per column: %s",
             ds.n_rows, path, sentinel, ds.missing_counts)
    return ds


def _fmt(v: float) -> str:
    return "" if not math.isfinite(v) else format(v, ".17g")


def write_csv(ds: Dataset, path, *, delimiter: str = ",", hour_col: str | None = None) -> None:
    """Write columns with 17 significant digits; missing cells are left empty."""
    names = list(ds.columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        hour_extra = hour_col is not None and hour_col not in ds.columns and ds.hour_index is not None
        w.writerow(names + ([hour_col] if hour_extra else []))
        for i in range(ds.n_rows):
            row = [_fmt(float(ds.columns[c][i])) for c in names]
            if hour_extra:
                row.append(str(int(ds.hour_index[i])))
            w.writerow(row)


def complete_cases(ds: Dataset, roles) -> Dataset:
    """Rows where every role column is present, in original order."""
    roles = list(roles)
    keep = np.ones(ds.n_rows, dtype=bool)
    for c in roles:
        keep &= np.isfinite(ds.column(c))
    if not keep.any():
        raise DataError(f"no complete rows for columns {roles}")
    cols = {k: v[keep] for k, v in ds.columns.items()}
    hours = None if ds.hour_index is None else ds.hour_index[keep]
    log.info("complete cases for %s: %d of %d rows", roles, int(keep.sum()), ds.n_rows)
    return Dataset(cols, hours)


def detrend_hourly(ds: Dataset, column: str, hour_index=None) -> np.ndarray:
    """Subtract each hour class's mean (over its non-missing entries); NaN stays NaN."""
    x = ds.column(column).astype(float)
    h = ds.hour_index if hour_index is None else np.asarray(hour_index, dtype=int)
    if h is None:
        raise ConfigError("detrending needs an hour column")
    if h.size != x.size:
        raise DataError("hour index length does not match the column")
    out = x.copy()
    for k in np.unique(h):
        cls = h == k
        vals = x[cls & np.isfinite(x)]
        if vals.size == 0:
            raise DataError(f"hour class {int(k)} has no observed values in column {column!r}")
        out[cls] = x[cls] - math.fsum(vals) / vals.size
    return out


def build_regression(ds: Dataset, y_col: str, w_cols, z_cols=()) -> RegressionData:
    W = np.column_stack([ds.column(c) for c in w_cols]) if w_cols else np.zeros((ds.n_rows, 0))
    Z = np.column_stack([ds.column(c) for c in z_cols]) if z_cols else None
    return RegressionData(W, ds.column(y_col), Z)


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    input: str | None = None
    output: str | None = None
    y_col: str | None = None
    w_cols: tuple = ()
    z_cols: tuple = ()
    hour_col: str | None = None
    detrend_cols: tuple = ()
    kernel: str = "k1"
    tstar_step: float | None = None
    tstar_max: float | None = None
    intercept: bool = True
    n_starts: int = 9
    bootstrap: str = "plugin"
    block_length: int | None = None
    B: int = 100
    seed: int = 0
    missing_sentinel: float | None = DEFAULT_SENTINEL
    w_divisor: float = 1.0
    delimiter: str = ","
    decimal: str = "."
    scenario_file: str | None = None
    scenario: dict = field(default_factory=dict)
    replicates: int | None = None
    methods: tuple = ("phase", "naive", "disattenuated", "gmm")
    n_jobs: int = 1

    def __post_init__(self):
        if self.subcommand not in ("fit", "bootstrap", "gmm", "simulate", "detrend"):
            raise ConfigError(f"unknown subcommand {self.subcommand!r}")
        if not self.w_divisor > 0:
            raise ConfigError("--w-divisor must be positive")
        if self.subcommand in ("fit", "bootstrap", "gmm"):
            if not self.input or not self.y_col or not self.w_cols:
                raise ConfigError(f"{self.subcommand} needs --input, --y-col and --w-cols")
        if self.subcommand == "detrend" and (not self.input or not self.hour_col):
            raise ConfigError("detrend needs --input and --hour-col")
        if self.subcommand == "simulate" and not self.output:
            raise ConfigError("simulate needs --output")
        if self.bootstrap not in ("full", "plugin"):
            raise ConfigError("--bootstrap must be 'full' or 'plugin'")
        if self.block_length is not None and self.block_length < 1:
            raise ConfigError("--block-length must be at least 1")
        WeightKernel.coerce(self.kernel)

    def fit_options(self) -> FitOptions:
        return FitOptions(kernel=self.kernel, tstar_step=self.tstar_step, tstar_max=self.tstar_max,
                          intercept=self.intercept, seed=self.seed, n_starts=self.n_starts)


def _prepare(cfg: RunConfig) -> tuple:
    roles = [cfg.y_col, *cfg.w_cols, *cfg.z_cols]
    ds = load_csv(cfg.input, sentinel=cfg.missing_sentinel, delimiter=cfg.delimiter,
                  decimal=cfg.decimal, columns=roles, hour_col=cfg.hour_col)
    if cfg.w_divisor != 1.0:
        for c in cfg.w_cols:
            ds.columns[c] = ds.columns[c] / cfg.w_divisor
    ds = complete_cases(ds, roles)
    if cfg.hour_col is not None:
        for c in dict.fromkeys(roles):
            ds.columns[c] = detrend_hourly(ds, c)
        log.info("removed hour-of-day means from %s", list(dict.fromkeys(roles)))
    return ds, build_regression(ds, cfg.y_col, cfg.w_cols, cfg.z_cols)


def _naive_block(data: RegressionData, intercept: bool) -> dict:
    if intercept:
        res = fit_naive(data)
        return res.coefficients.as_dict()
    coef, *_ = np.linalg.lstsq(data.design[:, 1:], data.y, rcond=None)
    return {"b0": 0.0, "b1": coef[:data.p1].tolist(), "b2": coef[data.p1:].tolist()}


def _fit_record(cfg: RunConfig, data: RegressionData, res) -> dict:
    rec = res.to_dict()
    rec["n"] = data.n
    rec["kernel"] = WeightKernel.coerce(cfg.kernel).value
    rec["intercept"] = cfg.intercept
    rec["naive"] = _naive_block(data, cfg.intercept)
    if data.p1 == 1 and data.p2 == 0 and res.coefficients.b1[0] != 0:
        s2x, s2u, s2e = variance_components(data, res.coefficients.b1[0])
        rec["variance_components"] = {"sigma2_X": s2x, "sigma2_U": s2u, "sigma2_eps": s2e}
    return rec


def load_schema(name: str) -> dict:
    """Published JSON schema for a subcommand record (``fit``, ``bootstrap``, ``gmm``, ``simulate``, ``error``)."""
    from importlib.resources import files

    return json.loads(files("phaseeiv").joinpath("schemas", f"{name}.schema.json").read_text())


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, allow_nan=False) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def run(cfg: RunConfig) -> int:
    """Execute one subcommand; returns 0 on success and raises package errors otherwise."""
    if cfg.subcommand in ("fit", "bootstrap"):
        _, data = _prepare(cfg)
        opts = cfg.fit_options()
        res = fit_phase(data, opts)
        rec = _fit_record(cfg, data, res)
        if cfg.subcommand == "bootstrap":
            mode = "block" if cfg.block_length is not None else "iid"
            bcfg = BootstrapConfig(B=cfg.B, seed=cfg.seed, block_length=cfg.block_length, mode=mode,
                                   n_jobs=cfg.n_jobs)
            if cfg.bootstrap == "plugin":
                cov = plugin_bootstrap(data, res, bcfg, opts)
            else:
                warm = refit_options(res, opts)
                cov = full_bootstrap(data, lambda d: fit_phase(d, warm), bcfg)
            rec["covariance"] = cov.to_dict()
            rec["bootstrap"] = {"kind": cfg.bootstrap, "mode": mode, "B": cfg.B,
                                "block_length": cfg.block_length, "seed": cfg.seed}
        _write_json(rec, cfg.output)
        return 0
    if cfg.subcommand == "gmm":
        if cfg.z_cols or len(cfg.w_cols) != 1:
            raise ConfigError("gmm supports exactly one W column and no Z columns")
        _, data = _prepare(cfg)
        res = fit_gmm(data, 3, GMMOptions(seed=cfg.seed, intercept=cfg.intercept))
        rec = res.to_dict()
        rec["n"] = data.n
        rec["intercept"] = cfg.intercept
        _write_json(rec, cfg.output)
        return 0
    if cfg.subcommand == "simulate":
        scenarios = load_scenarios(cfg.scenario_file) if cfg.scenario_file else [
            ScenarioConfig.from_dict(cfg.scenario)]
        if cfg.replicates is not None:
            scenarios = [replace(s, replicates=cfg.replicates) for s in scenarios]
        fopts = FitOptions(kernel=cfg.kernel, tstar_step=cfg.tstar_step, tstar_max=cfg.tstar_max,
                           n_starts=cfg.n_starts)
        reports = []
        for s in scenarios:
            log.info("running scenario %s (%d replicates)", s.scenario_id, s.replicates)
            reports.append(run_scenario(s, cfg.methods, fit_options=fopts, n_jobs=cfg.n_jobs,
                                        reference="disattenuated" if "disattenuated" in cfg.methods else None))
        out = Path(cfg.output)
        with open(out, "w", newline="") as fh:
            write_report_rows(fh, reports)
        json_path = out.with_suffix(".json")
        _write_json({"reports": [r.to_dict() for r in reports]}, json_path)
        log.info("wrote %s and %s", out, json_path)
        return 0
    # detrend
    cols = list(cfg.detrend_cols) or [c for c in [cfg.y_col, *cfg.w_cols, *cfg.z_cols] if c]
    if not cols:
        raise ConfigError("detrend needs --columns (or --y-col/--w-cols)")
    ds = load_csv(cfg.input, sentinel=cfg.missing_sentinel, delimiter=cfg.delimiter,
                  decimal=cfg.decimal, columns=cols, hour_col=cfg.hour_col)
    for c in cols:
        if c != cfg.hour_col:
            ds.columns[c] = detrend_hourly(ds, c)
    if cfg.output is None or cfg.output == "-":
        raise ConfigError("detrend needs --output")
    write_csv(ds, cfg.output, delimiter=cfg.delimiter)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("usage", ConfigError(message))
        self.print_usage(sys.stderr)
        raise SystemExit(2)


def _split(v):
    return tuple(c.strip() for c in v.split(",") if c.strip()) if v else ()


def _sentinel(v):
    return None if v.lower() in ("none", "") else float(v)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input")
    common.add_argument("--output", help="output path ('-' or omitted: stdout for JSON)")
    common.add_argument("--y-col")
    common.add_argument("--w-cols", type=_split, default=(), help="comma-separated error-prone columns")
    common.add_argument("--z-cols", type=_split, default=(), help="comma-separated error-free columns")
    common.add_argument("--hour-col", help="hour-of-day column (1..24); enables de-trending")
    common.add_argument("--kernel", choices=[k.value for k in WeightKernel], default="k1")
    common.add_argument("--tstar-step", type=float)
    common.add_argument("--tstar-max", type=float)
    common.add_argument("--no-intercept", action="store_true", help="pin the intercept at 0")
    common.add_argument("--n-starts", type=int, default=9)
    common.add_argument("--bootstrap", choices=["full", "plugin"], default="plugin")
    common.add_argument("--block-length", type=int, help="moving-block length (enables block mode)")
    common.add_argument("--B", type=int, default=100, help="bootstrap replicates")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--missing-sentinel", type=_sentinel, default=DEFAULT_SENTINEL,
                        help="value read as missing ('none' disables)")
    common.add_argument("--w-divisor", type=float, default=1.0)
    common.add_argument("--delimiter", default=",")
    common.add_argument("--decimal", default=".")
    common.add_argument("--n-jobs", type=int, default=1)
    common.add_argument("--quiet", action="store_true")

    p = _Parser(prog="phaseeiv", description="Phase-function estimation for errors-in-variables regression.")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    sub.add_parser("fit", parents=[common], help="phase-function fit")
    sub.add_parser("bootstrap", parents=[common], help="fit plus bootstrap covariance")
    sub.add_parser("gmm", parents=[common], help="method-of-moments comparator")
    sp = sub.add_parser("simulate", parents=[common], help="Monte Carlo scenario run")
    sp.add_argument("--scenario-file")
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--x-dist", choices=X_DISTS, default="half_normal")
    sp.add_argument("--err-dist", choices=ERR_DISTS, default="normal")
    sp.add_argument("--n", type=int, default=500)
    sp.add_argument("--p-w", type=float, default=0.25)
    sp.add_argument("--p-y", type=float, default=0.40)
    sp.add_argument("--methods", type=_split, default=("phase", "naive", "disattenuated", "gmm"))
    dp = sub.add_parser("detrend", parents=[common], help="subtract hour-of-day means")
    dp.add_argument("--columns", type=_split, default=())
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    scenario = {}
    if ns.subcommand == "simulate":
        scenario = {"x_dist": ns.x_dist, "err_dist": ns.err_dist, "n": ns.n, "p_W": ns.p_w,
                    "p_Y": ns.p_y, "seed": ns.seed}
        if ns.replicates is not None:
            scenario["replicates"] = ns.replicates
    return RunConfig(
        subcommand=ns.subcommand, input=ns.input, output=ns.output, y_col=ns.y_col,
        w_cols=ns.w_cols, z_cols=ns.z_cols, hour_col=ns.hour_col,
        detrend_cols=getattr(ns, "columns", ()), kernel=ns.kernel, tstar_step=ns.tstar_step,
        tstar_max=ns.tstar_max, intercept=not ns.no_intercept, n_starts=ns.n_starts,
        bootstrap=ns.bootstrap, block_length=ns.block_length, B=ns.B, seed=ns.seed,
        missing_sentinel=ns.missing_sentinel, w_divisor=ns.w_divisor, delimiter=ns.delimiter,
        decimal=ns.decimal, scenario_file=getattr(ns, "scenario_file", None), scenario=scenario,
        replicates=getattr(ns, "replicates", None),
        methods=getattr(ns, "methods", ("phase", "naive", "disattenuated", "gmm")), n_jobs=ns.n_jobs,
    )


def _emit_error(subcommand, exc) -> None:
    rec = {"error": type(exc).__name__, "message": str(exc), "subcommand": subcommand}
    for attr in ("row", "column", "t", "modulus", "t_max", "min_modulus", "node"):
        v = getattr(exc, attr, None)
        if v is not None:
            rec[attr] = v
    sys.stderr.write(json.dumps(rec, default=float) + "\n")


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if ns.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return run(config_from_args(ns))
    except (ConfigError, ParseError, DomainError) as exc:
        _emit_error(ns.subcommand, exc)
        return 2
    except PhaseEIVError as exc:
        _emit_error(ns.subcommand, exc)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

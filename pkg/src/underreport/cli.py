"""Command-line front end: fit, sweep, simulate, experiment and mi."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .effects import sensitivity_sweep
from .estimator import FitConfig, Mode, bootstrap, estimands, fit, parameter_names
from .model import Dataset
from .synthlab import Axis, SynthConfig, generate, mutual_information, run_experiment

log = logging.getLogger("underreport")

RESERVED = ("y", "a_obs", "a_obs2", "a_true")
EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2


class InputError(Exception):
    """Bad flags or malformed input; maps to exit code 1."""


# --- serialization ---------------------------------------------------------

def _encode(obj) -> str:
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return format(value, ".17g") if math.isfinite(value) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_record(record: dict) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _encode(record) + "\n"


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# --- ingestion -------------------------------------------------------------

def _parse_binary(text: str, row: int, col: str) -> int:
    try:
        value = float(text)
    except ValueError:
        value = math.nan
    if value not in (0.0, 1.0):
        raise InputError(f"row {row}, column {col!r}: expected 0 or 1, got {text!r}")
    return int(value)


def read_table(path, covariates: Optional[Sequence[str]] = None) -> Dataset:
    """Load a CSV with columns y, a_obs, optional a_obs2 and numeric covariates."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: empty file, header row required")
    header = [h.strip() for h in rows[0]]
    for required in ("y", "a_obs"):
        if required not in header:
            raise InputError(f"{path}: missing required column {required!r}")
    if len(set(header)) != len(header):
        raise InputError(f"{path}: duplicate column names")
    if covariates is None:
        covariates = [h for h in header if h not in RESERVED]
    else:
        missing = [c for c in covariates if c not in header]
        if missing:
            raise InputError(f"--covariates: unknown column(s) {', '.join(missing)}")
    index = {h: j for j, h in enumerate(header)}
    body = rows[1:]
    if not body:
        raise InputError(f"{path}: no data rows")
    y, a1, a2, x = [], [], [], []
    has_a2 = "a_obs2" in index
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise InputError(f"row {i}: expected {len(header)} fields, got {len(row)}")
        for j, cell in enumerate(row):
            if cell.strip() == "":
                raise InputError(f"row {i}, column {header[j]!r}: missing value")
        y.append(_parse_binary(row[index["y"]], i, "y"))
        a1.append(_parse_binary(row[index["a_obs"]], i, "a_obs"))
        if has_a2:
            a2.append(_parse_binary(row[index["a_obs2"]], i, "a_obs2"))
        values = []
        for c in covariates:
            cell = row[index[c]]
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"row {i}, column {c!r}: not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise InputError(f"row {i}, column {c!r}: non-finite value {cell!r}")
            values.append(v)
        x.append(values)
    x_arr = np.array(x, dtype=float).reshape(len(body), len(covariates))
    return Dataset(
        x=x_arr,
        y=np.array(y),
        a_obs=np.array(a1),
        a_obs2=np.array(a2) if has_a2 else None,
        covariate_names=tuple(covariates),
    )


def _standardize(data: Dataset) -> tuple[Dataset, dict]:
    mean = data.x.mean(axis=0)
    sd = data.x.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    scaled = Dataset((data.x - mean) / sd, data.y, data.a_obs, data.a_obs2, data.covariate_names)
    info = {c: {"mean": float(m), "sd": float(s)} for c, m, s in zip(data.covariate_names, mean, sd)}
    return scaled, info


def _load(args) -> tuple[Dataset, Optional[dict]]:
    covs = args.covariates.split(",") if args.covariates else None
    data = read_table(args.csv_path, covs)
    if args.standardize:
        return _standardize(data)
    return data, None


# --- shared pieces ---------------------------------------------------------

def _fit_config(args, mode: Mode, tau: Optional[float]) -> FitConfig:
    try:
        return FitConfig(
            mode=mode,
            tau=tau,
            link_propensity=args.link_propensity,
            link_outcome=args.link_outcome,
            restarts=args.restarts,
            max_iterations=args.max_iterations,
            seed=args.seed,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _base_record(command: str, args, argv: Sequence[str]) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
    return {
        "tool": "underreport",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": args.seed,
    }


def _fit_section(result, data: Dataset, config: FitConfig) -> dict:
    values = estimands(result, data, config)
    names = parameter_names(data, config)
    return {
        "params": {k: values[k] for k in names},
        "fixed_tau": config.tau if config.mode is Mode.KNOWN_TAU else None,
        "log_likelihood": result.log_likelihood_at_opt,
        "diagnostics": {
            "converged": result.converged,
            "gradient_norm": result.gradient_norm,
            "n_restarts_agreeing": result.n_restarts_agreeing,
            "restarts": config.restarts,
            "boundary_suspect": result.boundary_suspect,
            "restart_log_likelihoods": list(result.restart_log_likelihoods),
            "n_iterations": result.n_iterations,
        },
        "estimands": {k: values[k] for k in ("rd", "or") if k in values},
    }


def _emit(record: dict, out: Optional[str]) -> None:
    text = dumps_record(record)
    if out:
        _atomic_write(Path(out), text)
    else:
        sys.stdout.write(text)


def _check_grid_value(text: str, flag: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise InputError(f"{flag}: not a number: {text!r}") from None


def parse_tau_grid(spec: str) -> list[float]:
    """Either ``start:stop:count`` with inclusive endpoints or a comma list."""
    spec = spec.strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise InputError("--tau-grid: expected start:stop:count")
        start, stop = (_check_grid_value(p, "--tau-grid") for p in parts[:2])
        try:
            count = int(parts[2])
        except ValueError:
            raise InputError(f"--tau-grid: count must be an integer, got {parts[2]!r}") from None
        if count < 1:
            raise InputError("--tau-grid: count must be positive")
        grid = np.linspace(start, stop, count).tolist() if count > 1 else [start]
    else:
        grid = [_check_grid_value(p, "--tau-grid") for p in spec.split(",") if p.strip()]
    if not grid:
        raise InputError("--tau-grid: empty grid")
    for t in grid:
        if not 0.0 <= t < 1.0:
            raise InputError(f"--tau-grid: value {t} outside [0, 1)")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InputError("--tau-grid: values must be strictly increasing")
    return grid


# --- commands --------------------------------------------------------------

def cmd_fit(args, argv) -> int:
    mode = Mode(args.mode)
    if mode is Mode.KNOWN_TAU and args.tau is None:
        raise InputError("--tau is required with --mode known-tau")
    if mode is not Mode.KNOWN_TAU and args.tau is not None:
        raise InputError("--tau is only valid with --mode known-tau")
    data, scaling = _load(args)
    if mode is Mode.DUAL and not data.dual:
        raise InputError(f"--mode dual requires column 'a_obs2' in {args.csv_path}")
    config = _fit_config(args, mode, args.tau)
    record = _base_record("fit", args, argv)
    record["standardization"] = scaling
    if args.bootstrap:
        try:
            boot = bootstrap(data, config, replicates=args.bootstrap, ci_level=args.ci)
        except ValueError as exc:
            raise InputError(f"--bootstrap: {exc}") from None
        except RuntimeError as exc:
            log.error("%s", exc)
            record.update(_fit_section(fit(data, config), data, config))
            record["ci"] = None
            record["bootstrap_error"] = str(exc)
            _emit(record, args.out)
            return EXIT_NOT_CONVERGED
        result = boot.point
        record.update(_fit_section(result, data, config))
        record["ci"] = {
            "level": args.ci,
            "replicates": boot.replicates,
            "n_failed": boot.n_failed,
            "intervals": {k: list(v) for k, v in boot.intervals.items()},
        }
    else:
        result = fit(data, config)
        record.update(_fit_section(result, data, config))
        record["ci"] = None
    _emit(record, args.out)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_sweep(args, argv) -> int:
    grid = parse_tau_grid(args.tau_grid)
    data, scaling = _load(args)
    config = _fit_config(args, Mode.KNOWN_TAU, grid[0])
    opts = dict(replicates=args.bootstrap, ci_level=args.ci) if args.bootstrap else None
    if opts and args.bootstrap < 10:
        raise InputError("--bootstrap: need at least 10 replicates")
    band = sensitivity_sweep(data, config, grid, opts)
    rows = []
    for i, tau in enumerate(band.tau_grid):
        lo = band.ci_lower[i] if band.ci_lower is not None else math.nan
        hi = band.ci_upper[i] if band.ci_upper is not None else math.nan
        rows.append([float(tau), float(band.rd_estimates[i]), float(lo), float(hi),
                     int(bool(band.converged[i]))])
    _atomic_write(Path(args.out), _csv_text(["tau", "rd", "ci_lo", "ci_hi", "converged"], rows))
    record = _base_record("sweep", args, argv)
    record["standardization"] = scaling
    record["band"] = {
        "tau": band.tau_grid,
        "rd": band.rd_estimates,
        "ci_lo": band.ci_lower,
        "ci_hi": band.ci_upper,
        "converged": band.converged.tolist(),
    }
    if args.record:
        _atomic_write(Path(args.record), dumps_record(record))
    return EXIT_OK if band.converged.all() else EXIT_NOT_CONVERGED


def truth_path(out: Path) -> Path:
    return out.with_suffix(".truth.json")


def cmd_simulate(args, argv) -> int:
    try:
        config = SynthConfig(
            n=args.n, d=args.d, tau=args.tau, theta_a=args.theta_a, phi_scale=args.phi_scale,
            seed=args.seed, tau2=args.tau2, propensity_scale=args.propensity_scale,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None
    sample = generate(config)
    data = sample.data
    header = ["y", "a_obs"] + (["a_obs2"] if data.dual else []) + list(data.covariate_names)
    if args.emit_truth_column:
        header.append("a_true")
    rows = []
    for i in range(data.n):
        row = [int(data.y[i]), int(data.a_obs[i])]
        if data.dual:
            row.append(int(data.a_obs2[i]))
        row += [float(v) for v in data.x[i]]
        if args.emit_truth_column:
            row.append(int(sample.a_true[i]))
        rows.append(row)
    out = Path(args.out)
    _atomic_write(out, _csv_text(header, rows))
    p = sample.params
    truth = _base_record("simulate", args, argv)
    truth["truth"] = {
        "tau": list(p.tau),
        "phi_0": p.propensity.intercept,
        "phi_w": p.propensity.weights,
        "theta_0": p.outcome.intercept,
        "theta_w": p.outcome.weights,
        "theta_a": p.outcome.exposure_coef,
        "rd": sample.true_rd,
    }
    _atomic_write(truth_path(out), dumps_record(truth))
    return EXIT_OK


def cmd_experiment(args, argv) -> int:
    axis = Axis(args.axis)
    grid = [_check_grid_value(v, "--grid") for v in args.grid.split(",") if v.strip()]
    if not grid:
        raise InputError("--grid: empty grid")
    if args.replicates < 2:
        raise InputError("--replicates: need at least 2")
    try:
        base = SynthConfig(n=args.n, d=args.d, tau=args.tau, theta_a=args.theta_a,
                           phi_scale=args.phi_scale, seed=args.seed)
        for value in grid:
            if axis is Axis.TAU:
                SynthConfig(tau=value)
            elif axis is Axis.SIZE:
                if value != int(value) or value < 1:
                    raise ValueError(f"sample size must be a positive integer, got {value}")
            else:
                SynthConfig(phi_scale=value)
    except ValueError as exc:
        raise InputError(f"--grid: {exc}") from None
    fit_config = _fit_config(args, Mode.SINGLE, None)
    report = run_experiment(axis, grid, base, args.replicates, fit_config, args.seed)
    prefix = Path(args.out_prefix)
    rows = [
        [float(g), float(a), float(u), int(f)]
        for g, a, u, f in zip(report.grid, report.mse_adjusted, report.mse_unadjusted, report.n_failed)
    ]
    _atomic_write(prefix.with_name(prefix.name + ".csv"),
                  _csv_text(["grid_value", "mse_adjusted", "mse_unadjusted", "n_failed"], rows))
    record = _base_record("experiment", args, argv)
    record["report"] = report.to_dict()
    _atomic_write(prefix.with_name(prefix.name + ".json"), dumps_record(record))
    return EXIT_OK


def cmd_mi(args, argv) -> int:
    data, scaling = _load(args)
    if getattr(data, args.target) is None:
        raise InputError(f"--target: column {args.target!r} not found in {args.csv_path}")
    try:
        value = mutual_information(data, args.target)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    sys.stdout.write(f"{value:.6f}\n")
    if args.record:
        record = _base_record("mi", args, argv)
        record["standardization"] = scaling
        record["mutual_information_nats"] = value
        _atomic_write(Path(args.record), dumps_record(record))
    return EXIT_OK


# --- argument parsing ------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("csv_path")
    p.add_argument("--link-propensity", choices=["logit", "probit", "cloglog"], default="logit")
    p.add_argument("--link-outcome", choices=["logit", "probit", "cloglog"], default="logit")
    p.add_argument("--bootstrap", type=int, default=0, metavar="N")
    p.add_argument("--ci", type=float, default=0.95)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="underreport", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit the outcome model")
    _add_fit_flags(p)
    p.add_argument("--mode", choices=[m.value for m in Mode], default="single")
    p.add_argument("--tau", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep", help="risk difference over a grid of fixed tau")
    _add_fit_flags(p)
    p.add_argument("--tau-grid", required=True)
    p.add_argument("--out", required=True, help="band CSV path")
    p.add_argument("--record", help="run record JSON path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--tau2", type=float)
    p.add_argument("--theta-a", type=float, default=1.0)
    p.add_argument("--phi-scale", type=float, default=1.0)
    p.add_argument("--propensity-scale", type=float, default=1.0)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--emit-truth-column", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="Monte-Carlo MSE study")
    p.add_argument("--axis", choices=[a.value for a in Axis], required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--tau", type=float, default=0.25)
    p.add_argument("--theta-a", type=float, default=1.0)
    p.add_argument("--phi-scale", type=float, default=1.0)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--link-propensity", choices=["logit", "probit", "cloglog"], default="logit")
    p.add_argument("--link-outcome", choices=["logit", "probit", "cloglog"], default="logit")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("mi", help="plug-in mutual information between exposure report and x")
    p.add_argument("csv_path")
    p.add_argument("--target", choices=["a_obs", "a_obs2"], default="a_obs")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--covariates")
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--record")
    p.set_defaults(func=cmd_mi)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except InputError as exc:
        print(f"underreport: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except InputError as exc:
        print(f"underreport: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

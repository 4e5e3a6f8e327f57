"""Command-line interface.

Exit codes: 0 ok, 2 quadrature failure, 3 simulation failure, 4 bad input,
5 fit failure, 6 diagnostics failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from datetime import datetime, timezone
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .diagnostics import diagnose
from .errors import DiagnosticError, FitError, QuadratureError, SimulationError
from .estimate import fit_cml_hard, fit_complete, fit_full_ml, fit_ignore_em, FitResult
from .information import table_report
from .model import MissingnessParams, PartialSample
from .simulate import RNG_ID, SimConfig, draw, rng_for, simulate_re, simulate_tables

EXIT_OK = 0
EXIT_QUADRATURE = 2
EXIT_SIMULATION = 3
EXIT_INPUT = 4
EXIT_FIT = 5
EXIT_DIAGNOSTICS = 6


class InputError(ValueError):
    """Malformed command-line arguments or input files."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; here 2 means quadrature failure
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# --- serialization ---------------------------------------------------------


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


def manifest(command: str, params: dict, seed: Optional[int]) -> dict:
    return {
        "command": command,
        "parameters": _plain(params),
        "seed": seed,
        "tool_version": __version__,
        "rng": RNG_ID,
        "timestamp": _timestamp(),
    }


def _plain(obj):
    """JSON-ready copy: numpy scalars and arrays unwrapped, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_json(obj) -> str:
    # repr-based float output is the shortest string that round-trips exactly
    return json.dumps(_plain(obj), indent=2, allow_nan=False) + "\n"


def fmt_float(v: float) -> str:
    return "" if v is None or not math.isfinite(v) else f"{v:.17g}"


def _write(text: str, path: Optional[str]) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _write_csv(rows: list[list], path: Optional[str], man: dict) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([fmt_float(v) if isinstance(v, float) else v for v in row])
    _write(buf.getvalue(), path)
    if path not in (None, "-"):
        _write(dumps_json(man), path + ".manifest.json")


def read_sample_csv(path: str) -> PartialSample:
    """Read ``f1,...,fp,label``; labels are 1, 2 or empty."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    p = len(header) - 1
    if p < 1 or header != [f"f{i + 1}" for i in range(p)] + ["label"]:
        raise InputError(f"{path}: header must be f1,...,fp,label; got {','.join(header)}")
    feats, labels = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != p + 1:
            raise InputError(f"{path}: row {r} has {len(row)} columns, expected {p + 1}")
        vals = []
        for c, cell in enumerate(row[:p]):
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{path}: row {r}, column {header[c]}: not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise InputError(f"{path}: row {r}, column {header[c]}: non-finite value")
            vals.append(v)
        lab = row[p].strip()
        if lab not in ("", "1", "2"):
            raise InputError(f"{path}: row {r}, column label: must be 1, 2 or empty, got {lab!r}")
        feats.append(vals)
        labels.append(int(lab) if lab else None)
    if not feats:
        raise InputError(f"{path}: no data rows")
    return PartialSample(np.array(feats), labels)


def sample_csv_rows(sample: PartialSample) -> list[list]:
    rows = [[f"f{i + 1}" for i in range(sample.p)] + ["label"]]
    for y, lab in zip(sample.features, sample.labels):
        rows.append([float(v) for v in y] + [str(lab) if lab else ""])
    return rows


# --- commands --------------------------------------------------------------

_TABLE_DIGITS = {"table1": 4, "table2": 1, "table3": 2}


def _table_text(rep) -> str:
    digits = _TABLE_DIGITS[rep.which]
    out = []
    if rep.which == "table1":
        out.append("pi1   " + "".join(f"{'Delta=' + format(c.key[1], 'g'):>10}" for c in rep.cells))
        out.append("0.5   " + "".join(f"{c.value:>10.{digits}f}" for c in rep.cells))
    else:
        xi1s = sorted({c.key[2] for c in rep.cells}, reverse=True)
        out.append(f"{'xi0':>5} {'Delta':>5} " + "".join(f"{'xi1=' + format(x, 'g'):>10}" for x in xi1s))
        seen = []
        for c in rep.cells:
            if c.key[:2] not in seen:
                seen.append(c.key[:2])
        for x0, d in seen:
            vals = [rep.lookup((x0, d, x1)).value for x1 in xi1s]
            out.append(f"{x0:>5g} {d:>5g} " + "".join(f"{v:>10.{digits}f}" for v in vals))
    err = max(c.error_estimate for c in rep.cells)
    out.append(f"max quadrature error estimate: {err:.2e}")
    return "\n".join(out) + "\n"


def cmd_tables(args) -> int:
    which = f"table{args.which}"
    rep = table_report(which)
    bad = rep.failed()
    if bad:
        for c in bad:
            key = ", ".join(f"{n}={v:g}" for n, v in zip(rep.key_names, c.key))
            print(f"quadrature failed at ({key}): {c.message}", file=sys.stderr)
        return EXIT_QUADRATURE
    man = manifest("tables", {"which": args.which, "format": args.format}, None)
    if args.format == "text":
        _write(_table_text(rep), args.output)
    elif args.format == "json":
        cells = [
            dict(zip(rep.key_names, c.key), value=c.value, quadrature_error_estimate=c.error_estimate)
            for c in rep.cells
        ]
        _write(dumps_json({"manifest": man, "table": which, "cells": cells}), args.output)
    else:
        rows = [list(rep.key_names) + ["value", "quadrature_error_estimate"]]
        rows += [[float(k) for k in c.key] + [c.value, c.error_estimate] for c in rep.cells]
        _write_csv(rows, args.output, man)
    return EXIT_OK


_SIM_FIELDS = ("re_hat", "bootstrap_se", "mean_excess_full", "mean_excess_ignore", "failures", "reps_used", "degenerate")


def _parse_cell(text: str) -> tuple[float, float, float]:
    try:
        x0, d, x1 = (float(v) for v in text.split(","))
    except ValueError:
        raise InputError(f"cell must be 'xi0,delta,xi1', got {text!r}") from None
    return x0, d, x1


def cmd_simulate(args) -> int:
    params = {k: v for k, v in vars(args).items() if k not in ("func", "output", "threads", "command")}
    man = manifest("simulate", params, args.seed)
    if args.table is not None:
        cells = [_parse_cell(c) for c in args.cell] if args.cell else None
        reports = simulate_tables(
            f"table{args.table}", seed=args.seed, reps=args.reps, threads=args.threads,
            cells=cells, bootstrap_reps=args.bootstrap_reps,
        )
        records = [dict(xi0=k[0], delta=k[1], xi1=k[2], **_summary(r)) for k, r in reports.items()]
    else:
        cfg = SimConfig(
            n=args.n, delta=args.delta, xi=MissingnessParams(args.xi0, args.xi1), p=args.p,
            pi1=args.pi1, reps=args.reps, seed=args.seed, bootstrap_reps=args.bootstrap_reps,
        )
        records = [dict(xi0=args.xi0, delta=args.delta, xi1=args.xi1, **_summary(simulate_re(cfg, args.threads)))]
    if args.format == "json":
        _write(dumps_json({"manifest": man, "results": records}), args.output)
    else:
        keys = ["xi0", "delta", "xi1", *_SIM_FIELDS]
        rows = [keys] + [[_csv_value(r[k]) for k in keys] for r in records]
        _write_csv(rows, args.output, man)
    return EXIT_OK


def _summary(rep) -> dict:
    d = rep.summary()
    return {k: d[k] for k in _SIM_FIELDS}


def _csv_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    return float(v)


def _fit_record(fit: FitResult) -> dict:
    th = fit.theta
    beta = fit.beta
    rec = {
        "method": fit.method,
        "theta": {"mu1": th.mu1, "mu2": th.mu2, "sigma": th.sigma, "pi1": th.pi1},
        "beta": {"beta0": beta.beta0, "beta1": beta.beta1},
        "loglik": fit.loglik,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "trace": list(fit.trace),
    }
    if fit.xi is not None:
        rec["xi"] = {"xi0": fit.xi.xi0, "xi1": fit.xi.xi1}
    if fit.beta_trace:
        rec["beta_trace"] = [b.as_vector() for b in fit.beta_trace]
    return rec


def cmd_fit(args) -> int:
    sample = read_sample_csv(args.input)
    opts = {}
    if args.max_iter is not None:
        opts["max_iter"] = args.max_iter
    if args.tol is not None:
        if args.method in ("cc", "cml"):
            raise InputError(f"--tol does not apply to method {args.method}")
        opts["tol"] = args.tol
    fitters = {"cc": fit_complete, "ig": fit_ignore_em, "full": fit_full_ml, "cml": fit_cml_hard}
    if args.method == "cc" and opts:
        raise InputError("method cc takes no iteration options")
    try:
        with np.errstate(all="ignore"):
            fit = fitters[args.method](sample, **opts)
    except (FitError, np.linalg.LinAlgError) as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    params = {"input": os.path.basename(args.input), "method": args.method, **opts}
    rec = {"manifest": manifest("fit", params, None), **_fit_record(fit)}
    _write(dumps_json(rec), args.output)
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.n < 1:
        raise InputError("n must be at least 1")
    if args.p < 1:
        raise InputError("p must be at least 1")
    if not (args.delta > 0 and 0 < args.pi1 < 1):
        raise InputError("need delta > 0 and 0 < pi1 < 1")
    if not (math.isfinite(args.xi0) and math.isfinite(args.xi1)):
        raise InputError("xi0 and xi1 must be finite")
    if not 0 <= args.seed < 2**64:
        raise InputError("seed must be a 64-bit unsigned integer")
    cfg = SimConfig(
        n=max(args.n, 10), delta=args.delta, xi=MissingnessParams(args.xi0, args.xi1),
        p=args.p, pi1=args.pi1, seed=args.seed,
    )
    y, z, m = draw(cfg, rng_for(args.seed, 0), n=args.n)
    sample = PartialSample(y, np.where(m == 1, 0, z))
    params = {k: v for k, v in vars(args).items() if k not in ("func", "output", "command")}
    _write_csv(sample_csv_rows(sample), args.output, manifest("gen", params, args.seed))
    return EXIT_OK


def diagnostics_schema() -> dict:
    text = resources.files("ssl_nmar").joinpath("schemas/diagnostics.schema.json").read_text("utf-8")
    return json.loads(text)


def cmd_diagnose(args) -> int:
    sample = read_sample_csv(args.input)
    try:
        with np.errstate(all="ignore"):
            diag = diagnose(sample, bandwidth=args.bandwidth)
    except DiagnosticError as exc:
        print(f"diagnostics failed: {exc}", file=sys.stderr)
        return EXIT_DIAGNOSTICS
    except FitError as exc:
        print(f"mixture fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    params = {"input": os.path.basename(args.input), "bandwidth": args.bandwidth}
    rec = {"manifest": manifest("diagnose", params, None), **diag.to_dict()}
    _write(dumps_json(rec), args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ssl-nmar", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("tables", help="recompute an asymptotic relative efficiency table")
    t.add_argument("--which", type=int, choices=(1, 2, 3), required=True)
    t.add_argument("--format", choices=("text", "json", "csv"), default="text")
    t.add_argument("--output", "-o")
    t.set_defaults(func=cmd_tables)

    s = sub.add_parser("simulate", help="Monte Carlo relative efficiency")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--p", type=int, default=1)
    s.add_argument("--delta", type=float, default=1.0)
    s.add_argument("--pi1", type=float, default=0.5)
    s.add_argument("--xi0", type=float, default=3.0)
    s.add_argument("--xi1", type=float, default=-5.0)
    s.add_argument("--reps", "-B", type=int, default=1000)
    s.add_argument("--bootstrap-reps", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--table", type=int, choices=(4, 5), help="sweep the grid at n=500 (4) or n=100 (5)")
    s.add_argument("--cell", action="append", help="restrict a sweep to xi0,delta,xi1 (repeatable)")
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.add_argument("--threads", type=int)
    s.add_argument("--output", "-o")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a model to a partially labelled CSV")
    f.add_argument("input")
    f.add_argument("--method", choices=("cc", "ig", "full", "cml"), default="full")
    f.add_argument("--tol", type=float)
    f.add_argument("--max-iter", type=int)
    f.add_argument("--output", "-o")
    f.set_defaults(func=cmd_fit)

    g = sub.add_parser("gen", help="generate a partially labelled CSV")
    g.add_argument("--n", type=int, default=500)
    g.add_argument("--p", type=int, default=1)
    g.add_argument("--delta", type=float, default=2.0)
    g.add_argument("--pi1", type=float, default=0.5)
    g.add_argument("--xi0", type=float, default=1.5)
    g.add_argument("--xi1", type=float, default=-1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--output", "-o")
    g.set_defaults(func=cmd_gen)

    d = sub.add_parser("diagnose", help="entropy diagnostics of the missing-label pattern")
    d.add_argument("input")
    d.add_argument("--bandwidth", type=float)
    d.add_argument("--output", "-o")
    d.set_defaults(func=cmd_diagnose)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except QuadratureError as exc:
        print(f"quadrature failed: {exc}", file=sys.stderr)
        return EXIT_QUADRATURE
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except ValueError as exc:
        # invalid parameter combinations from the library
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT

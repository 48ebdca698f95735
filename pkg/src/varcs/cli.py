"""Command-line entry point: ``varcs {simulate,estimate,select,forecast,benchmark}``.

Diagnostics go to stderr.  Stdout carries only the paths of the files a
command wrote, one per line.  Exit codes: 0 success, 2 usage or
specification error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import model as vm
from .estimator import (
    GdConfig,
    Problem,
    SparsityLevels,
    fit_sparse_var1,
    fit_var1,
    fit_varl,
    lagged_design,
)
from .exceptions import RankError, ShapeError, SpecError, VarcsError
from .forecaster import forecast
from .initializer import (
    rank_constrained_varl,
    reduced_rank_var1,
    sparse_init_var1,
    spectral_init_var1,
    spectral_init_varl,
)
from .selector import SelectionConfig, select_pipeline
from .simulator import (
    DgpSpec,
    ExperimentSpec,
    make_dgp123,
    make_var1_cs_dgp,
    make_varl_cs_dgp,
    run_experiment,
    simulate,
)

log = logging.getLogger("varcs")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    """Bad input file or flag combination (exit code 2)."""


# -- panel files ----------------------------------------------------------------

@dataclass
class PanelFile:
    """A ``p x N`` panel read from CSV plus its optional header and date column."""

    values: np.ndarray
    names: list
    dates: Optional[list] = None

    @property
    def p(self) -> int:
        return self.values.shape[0]


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_panel(path: str) -> PanelFile:
    """One row per time point; an optional header row and an optional leading date column."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise UsageError(f"cannot read panel {path}: {exc}") from exc
    if not rows:
        raise UsageError(f"panel {path} is empty")
    header = None
    if not all(_is_number(c) for c in rows[0][1:]) or (
        not _is_number(rows[0][0]) and len(rows) > 1 and _is_number(rows[1][0])
    ):
        header, rows = rows[0], rows[1:]
    if not rows:
        raise UsageError(f"panel {path} has a header but no data")
    has_dates = not _is_number(rows[0][0])
    width = len(rows[0])
    dates, data = ([], []) if has_dates else (None, [])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise UsageError(f"panel {path}: row {i + 1} has {len(row)} cells, expected {width}")
        if has_dates:
            dates.append(row[0])
            row = row[1:]
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise UsageError(f"panel {path}: row {i + 1}: {exc}") from exc
        if not all(math.isfinite(v) for v in vals):
            raise UsageError(f"panel {path}: row {i + 1} has a non-finite cell")
        data.append(vals)
    values = np.asarray(data, dtype=float).T
    p = values.shape[0]
    if header is not None:
        names = header[1:] if has_dates else header
        if len(names) != p:
            raise UsageError(f"panel {path}: header has {len(names)} names for {p} columns")
    else:
        names = [f"y{i + 1}" for i in range(p)]
    return PanelFile(values=values, names=list(names), dates=dates)


def write_panel(path: str, values: np.ndarray, names=None, dates=None):
    values = np.asarray(values, dtype=float)
    names = names or [f"y{i + 1}" for i in range(values.shape[0])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["date"] if dates is not None else []) + list(names))
        for t in range(values.shape[1]):
            cells = [format(v, ".17g") for v in values[:, t]]
            w.writerow(([dates[t]] if dates is not None else []) + cells)


def _write_json(path: str, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _read_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read JSON {path}: {exc}") from exc


def _out_path(out_dir: str, name: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)


def _int_list(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc


def _finite_or_none(v):
    return float(v) if v is not None and math.isfinite(v) else None


# -- commands ---------------------------------------------------------------------

def cmd_simulate(args) -> list:
    obj = _read_json(args.spec)
    spec = DgpSpec.from_dict(obj)
    seed = spec.seed if spec.seed is not None else 0
    rng = np.random.default_rng(seed)
    if spec.kind == "var1_cs":
        truth, coef = make_var1_cs_dgp(spec, rng)
        panel = simulate(coef, spec.T, spec.noise, spec.burn_in, rng)
        truth_obj = vm.to_dict(truth)
    elif spec.kind == "varl_cs":
        truth, coef = make_varl_cs_dgp(spec, rng)
        panel = simulate(coef, spec.T, spec.noise, spec.burn_in, rng)
        truth_obj = vm.to_dict(truth)
    else:
        state = make_dgp123(spec, rng)
        panel = state.simulate(spec.T, rng, spec.burn_in)
        if state.truth is not None:
            truth_obj = vm.to_dict(state.truth)
        else:
            coef = state.var_coefficient
            truth_obj = {
                "model_type": "factor",
                "loading": vm._arr(state.loading),
                "transition": vm._arr(state.transition),
                "var_coefficient": None if coef is None else vm._arr(coef),
            }
    truth_obj["dgp"] = spec.to_dict()
    panel_path = _out_path(args.out, "panel.csv")
    truth_path = _out_path(args.out, "truth.json")
    write_panel(panel_path, panel)
    _write_json(truth_path, truth_obj)
    log.info("simulated %s: p=%d, %d time points", spec.kind, panel.shape[0], panel.shape[1])
    return [panel_path, truth_path]


def _gd_config(args) -> GdConfig:
    kw = {}
    if args.eta is not None:
        kw["step_size"] = args.eta
    if args.max_iters is not None:
        kw["max_iters"] = args.max_iters
    try:
        return GdConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _check_length(panel: PanelFile, lag: int):
    if panel.values.shape[1] < lag + 2:
        raise UsageError(f"panel has {panel.values.shape[1]} time points; lag {lag} needs at least {lag + 2}")


def _fit_fixed(series, lag, ranks, d, gd, sparse):
    prob = Problem.from_series(series, lag)
    b = gd.reg_scale
    if lag == 1:
        if len(ranks) != 1:
            raise UsageError("lag 1 takes a single --rank")
        y, x = lagged_design(series, 1)
        r = ranks[0]
        if sparse is not None:
            levels = SparsityLevels(*sparse)
            levels.validate(prob.p)
            if min(sparse) >= prob.p:
                # budgets that keep every row leave the dense starting point untouched
                init = spectral_init_var1(reduced_rank_var1(y, x, r, problem=prob), d, b)
            else:
                init = sparse_init_var1(y, x, r, d, levels=levels, b=b, problem=prob)
            return fit_sparse_var1(y, x, levels, init, gd, problem=prob)
        init = spectral_init_var1(reduced_rank_var1(y, x, r, problem=prob), d, b)
        return fit_var1(y, x, init, gd, problem=prob)
    if sparse is not None:
        raise UsageError("--sparse is only available for lag 1")
    if len(ranks) != 3:
        raise UsageError("lag > 1 takes three ranks, e.g. --ranks 3,3,2")
    rc = rank_constrained_varl(series, tuple(ranks), problem=prob)
    return fit_varl(series, spectral_init_varl(rc, d, b), gd, problem=prob)


def cmd_estimate(args) -> list:
    panel = read_panel(args.panel)
    _check_length(panel, args.lag)
    gd = _gd_config(args)
    ranks = args.ranks
    sparse = _int_list(args.sparse) if args.sparse else None
    if sparse is not None and len(sparse) != 3:
        raise UsageError("--sparse expects three budgets s_c,s_r,s_p")
    selection = None
    if ranks is None or args.common_dim is None:
        if sparse is not None and ranks is None:
            raise UsageError("--sparse needs --rank (selection is dense only)")
        rep, fit = select_pipeline(panel.values, args.lag, SelectionConfig(gd=gd))
        selection = rep.to_dict()
        if ranks is not None and list(ranks) != list(rep.ranks):
            raise UsageError("--rank given without --common-dim; pass both or neither")
        ranks = list(rep.ranks)
        d = rep.common_dim
        if sparse is not None:
            fit = _fit_fixed(panel.values, args.lag, ranks, d, gd, sparse)
    else:
        d = args.common_dim
        fit = _fit_fixed(panel.values, args.lag, ranks, d, gd, sparse)
    model_path = _out_path(args.out, "model.json")
    report_path = _out_path(args.out, "fit_report.json")
    model_obj = vm.to_dict(fit.params)
    model_obj["variables"] = panel.names
    _write_json(model_path, model_obj)
    report = {
        "iterations_used": fit.iterations_used,
        "converged": bool(fit.converged),
        "final_gradient_norm": _finite_or_none(fit.final_gradient_norm),
        "halvings": fit.halvings,
        "loss_trajectory": [_finite_or_none(v) for v in fit.loss_trajectory],
        "config": {
            "panel": args.panel, "lag": args.lag, "ranks": list(ranks), "common_dim": d,
            "sparse": sparse, "eta": gd.step_size, "max_iters": gd.max_iters, "seed": args.seed,
            "gd": asdict(gd),
        },
        "selection": selection,
        "sample": {
            "p": panel.p, "n_obs": int(panel.values.shape[1]),
            "first_date": panel.dates[0] if panel.dates else None,
            "last_date": panel.dates[-1] if panel.dates else None,
        },
    }
    _write_json(report_path, report)
    log.info("fitted ranks=%s d=%d in %d iterations", ranks, d, fit.iterations_used)
    return [model_path, report_path]


def cmd_select(args) -> list:
    panel = read_panel(args.panel)
    _check_length(panel, args.lag)
    r_bar = None
    if args.r_bar is not None:
        vals = _int_list(args.r_bar)
        r_bar = vals[0] if len(vals) == 1 else tuple(vals)
    cfg = SelectionConfig(r_bar=r_bar, ridge_override=args.ridge)
    rep, _ = select_pipeline(panel.values, args.lag, cfg)
    out = rep.to_dict()
    out["r_bar"] = list(r_bar) if isinstance(r_bar, tuple) else r_bar
    path = _out_path(args.out, "selection.json")
    _write_json(path, out)
    log.info("selected ranks=%s d=%d", list(rep.ranks), rep.common_dim)
    return [path]


def cmd_forecast(args) -> list:
    panel = read_panel(args.panel)
    params = vm.from_dict(_read_json(args.model))
    if params.dim != panel.p:
        raise UsageError(f"model has dimension {params.dim}, panel has {panel.p} columns")
    horizons = _int_list(args.horizons)
    if not horizons or min(horizons) < 1:
        raise UsageError("--horizons must be positive integers")
    fc = forecast(params, panel.values, max(horizons))
    path = _out_path(args.out, "forecasts.csv")
    origin = panel.dates[-1] if panel.dates else str(panel.values.shape[1])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin", "horizon"] + panel.names)
        for h in horizons:
            w.writerow([origin, h] + [format(v, ".17g") for v in fc[:, h - 1]])
    return [path]


def cmd_benchmark(args) -> list:
    spec = ExperimentSpec.load(args.experiment)
    summary = run_experiment(spec, reps=args.reps, jobs=args.jobs)
    path = _out_path(args.out, f"{spec.name}_summary.csv")
    summary.write_csv(path)
    rec_path = _out_path(args.out, f"{spec.name}_records.json")
    _write_json(rec_path, _clean(summary.records))
    n_fail = sum(1 for r in summary.records if not r["ok"])
    log.info("%s: %d records, %d failed", spec.name, len(summary.records), n_fail)
    return [path, rec_path]


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        return _finite_or_none(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="varcs", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a panel and its ground truth from a DGP spec")
    s.add_argument("spec", help="DGP spec JSON")
    s.add_argument("--out", default=".", help="output directory")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="fit a common-subspace VAR")
    e.add_argument("panel")
    e.add_argument("--lag", type=int, default=1)
    e.add_argument("--rank", "--ranks", dest="ranks", type=_int_list, default=None,
                   help="r for lag 1, or r1,r2,r3; omitted means automatic selection")
    e.add_argument("--common-dim", type=int, default=None)
    e.add_argument("--sparse", default=None, help="row budgets s_c,s_r,s_p (lag 1)")
    e.add_argument("--eta", type=float, default=None, help="step size")
    e.add_argument("--max-iters", type=int, default=None)
    e.add_argument("--seed", type=int, default=0, help="recorded for provenance; fitting is deterministic")
    e.add_argument("--out", default=".")
    e.set_defaults(func=cmd_estimate)

    c = sub.add_parser("select", help="choose ranks and common dimension")
    c.add_argument("panel")
    c.add_argument("--lag", type=int, default=1)
    c.add_argument("--r-bar", default=None, help="upper bound(s) for the ranks")
    c.add_argument("--ridge", type=float, default=None, help="override the ridge constant s(p, T)")
    c.add_argument("--out", default=".")
    c.set_defaults(func=cmd_select)

    f = sub.add_parser("forecast", help="iterated forecasts from a fitted model")
    f.add_argument("panel")
    f.add_argument("model", help="model JSON written by estimate")
    f.add_argument("--horizons", default="1,2,3")
    f.add_argument("--out", default=".")
    f.set_defaults(func=cmd_forecast)

    b = sub.add_parser("benchmark", help="run a Monte-Carlo experiment")
    b.add_argument("experiment", help="experiment JSON or a packaged name such as table1_desk")
    b.add_argument("--reps", type=int, default=None)
    b.add_argument("--jobs", type=int, default=None, help="worker processes (default: $VARCS_JOBS or 1)")
    b.add_argument("--out", default=".")
    b.set_defaults(func=cmd_benchmark)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="varcs: %(message)s", stream=sys.stderr,
    )
    try:
        paths = args.func(args)
    except (UsageError, SpecError, ShapeError, RankError) as exc:
        print(f"varcs: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (VarcsError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"varcs: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

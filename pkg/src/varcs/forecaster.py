"""Iterated multi-step forecasts and rolling-origin evaluation.

Time indices are 0-based column positions in a ``p x N`` panel.  A forecast
origin ``t`` means the model is fitted on columns ``0 .. t-1`` only, and the
``h``-step forecast targets column ``t + h - 1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .estimator import GdConfig, Problem, fit_var1, fit_varl, lagged_design
from .exceptions import ShapeError, VarcsError
from .initializer import (
    rank_constrained_varl,
    reduced_rank_var1,
    spectral_init_var1,
    spectral_init_varl,
)
from .model import Var1CsParams, VarLCsParams, coefficient_slices
from .selector import SelectionConfig, select_pipeline, select_rank_var1, select_ranks_varl


def _as_slices(model):
    if isinstance(model, (Var1CsParams, VarLCsParams)) or hasattr(model, "coefficient"):
        model = model.coefficient()
    return coefficient_slices(np.asarray(model, dtype=float))


def forecast(model, history: np.ndarray, h: int) -> np.ndarray:
    """Forecasts ``y_{N+1}, ..., y_{N+h}`` given ``history`` (``p x N``), as a ``p x h`` array.

    ``model`` is a coefficient matrix/tensor or any object with a
    ``coefficient()`` method.  Later steps plug in earlier forecasts.
    """
    slices = _as_slices(model)
    lag = len(slices)
    history = np.asarray(history, dtype=float)
    if history.ndim == 1:
        history = history[:, None]
    p = slices[0].shape[0]
    if history.shape[0] != p:
        raise ShapeError(f"history has {history.shape[0]} rows, model has dimension {p}")
    if history.shape[1] < lag:
        raise ShapeError(f"need at least {lag} past observations, got {history.shape[1]}")
    if h < 1:
        raise ValueError("h must be at least 1")
    buf = [history[:, -k] for k in range(lag, 0, -1)]
    out = np.empty((p, h))
    for j in range(h):
        y_next = sum(a @ buf[-1 - k] for k, a in enumerate(slices))
        out[:, j] = y_next
        buf.append(y_next)
    return out


# -- rolling evaluation ------------------------------------------------------------

@dataclass(frozen=True)
class RollingSpec:
    """Origins ``first_origin..last_origin`` (inclusive, 0-based columns) and horizons."""

    first_origin: int
    last_origin: int
    horizons: tuple = (1, 2, 3)
    lag: int = 1
    refit_each_origin: bool = True
    reselect_each_origin: bool = True
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    fixed_ranks: Optional[tuple] = None
    fixed_d: Optional[int] = None

    def validate(self, n: int):
        if not self.lag < self.first_origin <= self.last_origin < n:
            raise ValueError(
                f"origins [{self.first_origin}, {self.last_origin}] must lie in ({self.lag}, {n})"
            )
        if not self.horizons or min(self.horizons) < 1:
            raise ValueError("horizons must be positive")


@dataclass
class Choice:
    """Ranks (and ``d`` for the common-subspace model) chosen at some origin."""

    ranks: tuple
    d: Optional[int] = None


def _ranks_by_ratio(train, lag, cfg):
    prob = Problem.from_series(train, lag)
    if lag == 1:
        y, x = lagged_design(train, 1)
        return (select_rank_var1(y, x, cfg, prob)[0],)
    return select_ranks_varl(train, lag, cfg, prob)[0]


def var_cs_method(train, lag, cfg: SelectionConfig, choice: Optional[Choice] = None):
    """Fit the common-subspace VAR; with ``choice`` the ranks and ``d`` are held fixed."""
    if choice is None:
        rep, fit = select_pipeline(train, lag, cfg)
        return fit.coefficient, Choice(tuple(rep.ranks), rep.common_dim)
    prob = Problem.from_series(train, lag)
    b = cfg.gd.reg_scale
    if lag == 1:
        y, x = lagged_design(train, 1)
        rr = reduced_rank_var1(y, x, choice.ranks[0], problem=prob)
        fit = fit_var1(y, x, spectral_init_var1(rr, choice.d, b), cfg.gd, problem=prob)
    else:
        rc = rank_constrained_varl(train, choice.ranks, problem=prob)
        fit = fit_varl(train, spectral_init_varl(rc, choice.d, b), cfg.gd, problem=prob)
    return fit.coefficient, choice


def var_rr_method(train, lag, cfg: SelectionConfig, choice: Optional[Choice] = None):
    """Reduced-rank (or Tucker-rank-constrained) VAR with ridge-ratio ranks."""
    ranks = choice.ranks if choice is not None else _ranks_by_ratio(train, lag, cfg)
    prob = Problem.from_series(train, lag)
    if lag == 1:
        y, x = lagged_design(train, 1)
        coef = reduced_rank_var1(y, x, ranks[0], problem=prob).a_hat
    else:
        coef = rank_constrained_varl(train, ranks, problem=prob).tensor
    return coef, Choice(tuple(ranks))


def dfm_var_method(train, lag, cfg: SelectionConfig, choice: Optional[Choice] = None):
    """Factor model with a VAR on the factors; the factor count comes from the eigenvalue ratio."""
    from .simulator import dfm_var_baseline

    r = choice.ranks[0] if choice is not None else None
    r_bar = cfg.r_bar if isinstance(cfg.r_bar, int) else 10
    fit = dfm_var_baseline(train, r, lag, r_max=min(r_bar, train.shape[0] - 1))
    return fit.coefficient(), Choice((fit.n_factors,))


DEFAULT_METHODS = {"VAR-CS": var_cs_method, "VAR-RR": var_rr_method, "DFM-VAR": dfm_var_method}


@dataclass
class RollingResult:
    rows: list
    per_origin: list
    failures: list

    def table(self) -> dict:
        """``{(method, horizon): mean_error}``."""
        return {(r["method"], r["horizon"]): r["mean_error"] for r in self.rows}

    def write_csv(self, path: str):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "horizon", "mean_error", "n_origins"])
            for r in self.rows:
                w.writerow([r["method"], r["horizon"], format(r["mean_error"], ".17g"), r["n_origins"]])


def rolling_evaluate(panel: np.ndarray, spec: RollingSpec, methods: dict = None) -> RollingResult:
    """Average ``||y_hat_{t+h-1} - y_{t+h-1}||_2`` over origins ``t`` for each method and horizon.

    Only ``panel[:, :t]`` is handed to a method at origin ``t``.  Targets past
    the end of the panel are skipped, so ``n_origins`` may shrink with ``h``.
    With ``refit_each_origin`` off, the model fitted at the first origin is
    reused.  With ``reselect_each_origin`` off, ranks and ``d`` are chosen at
    the first origin and the model is refitted with them at later origins.
    """
    panel = np.asarray(panel, dtype=float)
    if panel.ndim != 2:
        raise ShapeError("panel must be a p x N array")
    p, n = panel.shape
    spec.validate(n)
    methods = DEFAULT_METHODS if methods is None else methods
    h_max = max(spec.horizons)
    errors = {(m, h): [] for m in methods for h in spec.horizons}
    per_origin, failures = [], []
    state = {}
    for t in range(spec.first_origin, spec.last_origin + 1):
        train = panel[:, :t]
        for name, method in methods.items():
            try:
                if not spec.refit_each_origin and name in state:
                    coef = state[name][0]
                else:
                    choice = None
                    if name in state and not spec.reselect_each_origin:
                        choice = state[name][1]
                    elif spec.fixed_ranks is not None:
                        choice = Choice(tuple(spec.fixed_ranks), spec.fixed_d)
                    coef, chosen = method(train, spec.lag, spec.selection, choice)
                    if name not in state:
                        state[name] = (coef, chosen)
                    elif spec.refit_each_origin:
                        state[name] = (coef, state[name][1] if not spec.reselect_each_origin else chosen)
                fc = forecast(coef, train, h_max)
            except (VarcsError, np.linalg.LinAlgError, ValueError) as exc:
                failures.append({"origin": t, "method": name, "error": f"{type(exc).__name__}: {exc}"})
                continue
            for h in spec.horizons:
                target = t + h - 1
                if target >= n:
                    continue
                err = float(np.linalg.norm(fc[:, h - 1] - panel[:, target]))
                errors[(name, h)].append(err)
                per_origin.append({"origin": t, "method": name, "horizon": h, "error": err})
    rows = []
    for name in methods:
        for h in spec.horizons:
            vals = errors[(name, h)]
            rows.append({
                "method": name, "horizon": h,
                "mean_error": float(np.mean(vals)) if vals else math.nan,
                "n_origins": len(vals),
            })
    return RollingResult(rows=rows, per_origin=per_origin, failures=failures)

"""Rank and common-dimension selection.

Stage one fits a reduced-rank (or Tucker-rank-constrained) estimator at
generous upper bounds and picks the rank(s) with a ridge-type singular-value
ratio.  Stage two runs gradient descent for every candidate common dimension
and keeps the BIC minimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as ta
from .estimator import FitReport, GdConfig, Problem, fit_var1, fit_varl, lagged_design
from .exceptions import RankError, ShapeError, VarcsError
from .initializer import (
    rank_constrained_varl,
    reduced_rank_var1,
    spectral_init_var1,
    spectral_init_varl,
)
from .model import param_count_cs, param_count_cs_tensor

DEFAULT_R_BAR = 10


@dataclass(frozen=True)
class SelectionConfig:
    """``r_bar`` is an int for VAR(1) or a triple for VAR(lag); ``None`` means ``min(10, p)`` per mode."""

    r_bar: object = None
    ridge_override: Optional[float] = None
    gd: GdConfig = field(default_factory=GdConfig)
    joint_search: bool = False


@dataclass
class SelectionReport:
    ranks: tuple
    common_dim: int
    bic_table: dict
    singular_value_profile: list
    ridge_param_used: float
    lag: int = 1
    failures: dict = field(default_factory=dict)
    exact_fit: bool = False
    fits: dict = field(default_factory=dict, repr=False)

    @property
    def rank(self) -> int:
        return self.ranks[0]

    def to_dict(self) -> dict:
        return {
            "lag": self.lag,
            "ranks": list(self.ranks),
            "common_dim": self.common_dim,
            "bic_table": {str(k): _jsonable(v) for k, v in self.bic_table.items()},
            "singular_value_profile": [[float(s) for s in prof] for prof in self.singular_value_profile],
            "ridge_param_used": self.ridge_param_used,
            "failures": {str(k): v for k, v in self.failures.items()},
            "exact_fit": self.exact_fit,
        }


def _jsonable(v):
    return None if not math.isfinite(v) else float(v)


def ridge_param(p: int, T: int) -> float:
    """``sqrt(p ln T / (10 T))``."""
    if p < 1 or T < 1:
        raise ValueError("p and T must be positive")
    return math.sqrt(p * math.log(T) / (10 * T))


def ridge_ratio_rank(singular_values, s_pt: float) -> int:
    """Index ``i`` in ``1..len-1`` minimizing ``(s_{i+1} + s) / (s_i + s)``; ties go to the smallest ``i``."""
    sv = np.asarray(singular_values, dtype=float)
    if sv.ndim != 1 or sv.size < 2:
        raise RankError("need at least two singular values (r_bar >= 2)")
    if np.any(sv < 0) or np.any(np.diff(sv) > 1e-12 * max(sv[0], 1.0)):
        raise ValueError("singular values must be non-negative and non-increasing")
    ratios = (sv[1:] + s_pt) / (sv[:-1] + s_pt)
    return int(np.argmin(ratios)) + 1


def _ridge(config: SelectionConfig, p: int, T: int) -> float:
    return config.ridge_override if config.ridge_override is not None else ridge_param(p, T)


def _r_bar_var1(config: SelectionConfig, p: int) -> int:
    r_bar = config.r_bar
    if isinstance(r_bar, (tuple, list)):
        r_bar = r_bar[0]
    r_bar = min(DEFAULT_R_BAR, p) if r_bar is None else int(r_bar)
    if not 1 < r_bar <= p:
        raise RankError(f"r_bar={r_bar} must satisfy 1 < r_bar <= {p}")
    return r_bar


def select_rank_var1(y, x, config: SelectionConfig = SelectionConfig(), problem: Problem = None):
    """Ridge-ratio rank from the reduced-rank fit at ``r_bar``.  Returns ``(r_hat, fit_at_r_bar)``."""
    prob = problem if problem is not None else Problem(y, x)
    r_bar = _r_bar_var1(config, prob.p)
    rr = reduced_rank_var1(y, x, r_bar, problem=prob)
    return ridge_ratio_rank(rr.s, _ridge(config, prob.p, prob.T)), rr


def _bic(rss: float, p: int, T: int, dof: int):
    if rss <= 0:
        return -math.inf
    return T * p * math.log(rss) + dof * math.log(T)


def bic_var1(y, x, a_hat, p: int, r: int, d: int, T: int) -> float:
    """``T p ln ||Y - A X||_F^2 + d_CS(p, r, d) ln T``; an exact fit gives ``-inf``."""
    resid = np.asarray(y, dtype=float) - np.asarray(a_hat, dtype=float) @ np.asarray(x, dtype=float)
    return _bic(float(np.sum(resid * resid)), p, T, param_count_cs(p, r, d))


def bic_varl(y, x, coef_t, p: int, lag: int, ranks, d: int, T: int) -> float:
    resid = np.asarray(y, dtype=float) - ta.unfold(coef_t, 1) @ np.asarray(x, dtype=float)
    return _bic(float(np.sum(resid * resid)), p, T, param_count_cs_tensor(p, lag, *ranks, d))


def _select_d(candidates, fit_one, bic_of):
    """Fit each candidate ``d``; failed fits are recorded and skipped."""
    table, failures, fits = {}, {}, {}
    for d in candidates:
        try:
            rep = fit_one(d)
        except (VarcsError, np.linalg.LinAlgError, FloatingPointError) as exc:
            failures[d] = f"{type(exc).__name__}: {exc}"
            continue
        fits[d] = rep
        table[d] = bic_of(d, rep)
    if not table:
        raise VarcsError(f"every candidate fit failed: {failures}")
    best = min(table, key=lambda k: (table[k], k))
    return best, table, failures, fits


def select_common_dim_var1(y, x, r_hat: int, config: SelectionConfig = SelectionConfig(),
                           problem: Problem = None, rr=None, b: float = None) -> SelectionReport:
    """Fit every ``d`` in ``0..r_hat`` and keep the BIC minimizer."""
    prob = problem if problem is not None else Problem(y, x)
    if rr is None or rr.rank != r_hat:
        rr = reduced_rank_var1(y, x, r_hat, problem=prob)
    b = config.gd.reg_scale if b is None else b

    def fit_one(d):
        return fit_var1(y, x, spectral_init_var1(rr, d, b), config.gd, problem=prob)

    def bic_of(d, rep):
        return _bic(prob.rss(rep.coefficient), prob.p, prob.T, param_count_cs(prob.p, r_hat, d))

    best, table, failures, fits = _select_d(range(r_hat + 1), fit_one, bic_of)
    return SelectionReport(
        ranks=(r_hat,), common_dim=best, bic_table=table, singular_value_profile=[list(rr.s)],
        ridge_param_used=_ridge(config, prob.p, prob.T), failures=failures,
        exact_fit=any(v == -math.inf for v in table.values()), fits=fits,
    )


def _r_bar_varl(config: SelectionConfig, p: int, lag: int):
    r_bar = config.r_bar
    if r_bar is None:
        r_bar = (min(DEFAULT_R_BAR, p),) * 3
    elif not isinstance(r_bar, (tuple, list)):
        r_bar = (int(r_bar),) * 3
    r1, r2, r3 = (int(r) for r in r_bar)
    # the lag mode cannot exceed the lag order
    r3 = min(r3, lag)
    if not (1 < r1 <= p and 1 < r2 <= p and r3 >= 1):
        raise RankError(f"invalid rank bounds {(r1, r2, r3)} for p={p}")
    return r1, r2, r3


def select_ranks_varl(series, lag: int, config: SelectionConfig = SelectionConfig(),
                      problem: Problem = None):
    """Per-mode ridge-ratio ranks from the rank-constrained fit at the upper bounds.

    Returns ``((r1, r2, r3), fit_at_bounds)``.
    """
    prob = problem if problem is not None else Problem.from_series(series, lag)
    bounds = _r_bar_varl(config, prob.p, lag)
    rc = rank_constrained_varl(series, bounds, problem=prob)
    s = _ridge(config, prob.p, prob.T)
    ranks = []
    for mode, rb in enumerate(bounds, start=1):
        if rb < 2:
            ranks.append(1)
            continue
        sv = np.linalg.svd(ta.unfold(rc.tensor, mode), compute_uv=False)[:rb]
        ranks.append(ridge_ratio_rank(sv, s))
    return tuple(ranks), rc


def _profiles(t, bounds):
    return [list(np.linalg.svd(ta.unfold(t, m), compute_uv=False)[:rb]) for m, rb in zip((1, 2, 3), bounds)]


def select_common_dim_varl(series, ranks, config: SelectionConfig = SelectionConfig(),
                           problem: Problem = None, rc=None, lag: int = None) -> SelectionReport:
    if problem is None:
        problem = Problem.from_series(series, lag)
    prob = problem
    lag = prob.q // prob.p
    ranks = tuple(int(r) for r in ranks)
    if rc is None or tuple(rc.ranks) != ranks:
        rc = rank_constrained_varl(series, ranks, problem=prob)
    b = config.gd.reg_scale

    def fit_one(d):
        return fit_varl(series, spectral_init_varl(rc, d, b), config.gd, problem=prob)

    def bic_of(d, rep):
        rss = prob.rss(ta.unfold(rep.coefficient, 1))
        return _bic(rss, prob.p, prob.T, param_count_cs_tensor(prob.p, lag, *ranks, d))

    best, table, failures, fits = _select_d(range(min(ranks[0], ranks[1]) + 1), fit_one, bic_of)
    return SelectionReport(
        ranks=ranks, common_dim=best, bic_table=table, singular_value_profile=_profiles(rc.tensor, ranks),
        ridge_param_used=_ridge(config, prob.p, prob.T), lag=lag, failures=failures,
        exact_fit=any(v == -math.inf for v in table.values()), fits=fits,
    )


def _joint_var1(y, x, config, prob, r_bar):
    best = None
    merged_table, merged_fail, merged_fits = {}, {}, {}
    for r in range(1, r_bar + 1):
        rep = select_common_dim_var1(y, x, r, config, problem=prob)
        for d, v in rep.bic_table.items():
            merged_table[(r, d)] = v
            merged_fits[(r, d)] = rep.fits[d]
        merged_fail.update({(r, d): msg for d, msg in rep.failures.items()})
    key = min(merged_table, key=lambda k: (merged_table[k], k[0], k[1]))
    return key, merged_table, merged_fail, merged_fits


def select_pipeline(series, lag: int = 1, config: SelectionConfig = SelectionConfig(),
                    problem: Problem = None):
    """Two-stage procedure: rank(s) by ridge ratio, then ``d`` by BIC over gradient-descent fits.

    ``series`` is a ``p x N`` panel.  Alternatively pass ``series=None`` and a
    ``problem`` built from any response/design pair (with ``lag`` matching
    its design).  Returns ``(SelectionReport, FitReport)`` where the fit is
    the one at the selected ``(ranks, d)``.
    """
    if problem is None:
        series = np.asarray(series, dtype=float)
        if series.ndim != 2:
            raise ShapeError("series must be a p x N array")
        if not np.all(np.isfinite(series)):
            raise ValueError("series contains NaN or Inf")
        prob = Problem.from_series(series, lag)
    else:
        prob = problem
        if prob.q != prob.p * lag:
            raise ShapeError(f"design has {prob.q} rows, expected {prob.p * lag} for lag {lag}")
    if lag == 1:
        y, x = lagged_design(series, 1) if problem is None else (None, None)
        r_bar = _r_bar_var1(config, prob.p)
        if config.joint_search:
            (r, d), table, failures, fits = _joint_var1(y, x, config, prob, r_bar)
            rr_bar = reduced_rank_var1(y, x, r_bar, problem=prob)
            report = SelectionReport(
                ranks=(r,), common_dim=d, bic_table=table, singular_value_profile=[list(rr_bar.s)],
                ridge_param_used=_ridge(config, prob.p, prob.T), failures=failures,
                exact_fit=any(v == -math.inf for v in table.values()), fits=fits,
            )
            return report, fits[(r, d)]
        r_hat, rr_bar = select_rank_var1(y, x, config, problem=prob)
        report = select_common_dim_var1(y, x, r_hat, config, problem=prob)
        report.singular_value_profile = [list(rr_bar.s)]
        return report, report.fits[report.common_dim]
    if config.joint_search:
        raise NotImplementedError("joint rank/common-dimension search is only available for lag 1")
    ranks, rc_bar = select_ranks_varl(series, lag, config, problem=prob)
    report = select_common_dim_varl(series, ranks, config, problem=prob)
    report.singular_value_profile = _profiles(rc_bar.tensor, _r_bar_varl(config, prob.p, lag))
    return report, report.fits[report.common_dim]

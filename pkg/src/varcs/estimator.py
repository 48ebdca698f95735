"""Regularized least squares for factored VAR models and its gradient-descent solvers.

The regression is ``Y = A X + E`` with ``Y`` of shape ``p x T`` and ``X`` of
shape ``q x T`` (``q = p * lag``; for a VAR(lag) the rows of ``X`` stack
``y_{t-1}, ..., y_{t-lag}``).  The fitting loops work on sufficient statistics
so that one iteration costs O(p^2 q) regardless of ``T``:

    L(A) = rss_min / (2T) + tr(Delta Sxx Delta') / 2,   Delta = A - A_ls,

where ``A_ls = Y X^+`` is the minimum-norm least-squares fit and ``Sxx = XX'/T``.
The identity holds because the least-squares residual is orthogonal to the
rows of ``X``.  It also keeps the loss accurate when it is close to zero.

Penalty scaling: the factor updates below carry ``eta * a * [...]`` exactly as
in the standard algorithm statement.  Those brackets are the gradient of
``(a/4) * ||W'W - b^2 I||_F^2``, so that is the penalty reported by
:func:`objective_var1` / :func:`objective_varl` and monitored by step halving.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import tensor as ta
from .exceptions import ConvergenceError, DivergenceError, RankError, ShapeError
from .model import Var1CsParams, VarLCsParams, reconstruct_var1, reconstruct_varl


@dataclass(frozen=True)
class GdConfig:
    """Gradient-descent settings.  ``a = b = 1`` is the usual choice."""

    step_size: float = 0.01
    reg_weight: float = 1.0
    reg_scale: float = 1.0
    max_iters: int = 500
    rel_tol: float = 1e-6
    step_halving: bool = True
    max_halvings: int = 40
    divergence_factor: float = 1e6

    def __post_init__(self):
        if not (self.step_size > 0 and self.reg_weight > 0 and self.reg_scale > 0):
            raise ValueError("step_size, reg_weight and reg_scale must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True)
class SparsityLevels:
    """Row budgets for C, R and P."""

    s_c: int
    s_r: int
    s_p: int

    def validate(self, p: int):
        for name, s in (("s_c", self.s_c), ("s_r", self.s_r), ("s_p", self.s_p)):
            if not 1 <= s <= p:
                raise RankError(f"{name}={s} must lie in [1, {p}]")


@dataclass
class FitReport:
    params: object
    loss_trajectory: list
    iterations_used: int
    converged: bool
    final_gradient_norm: float
    halvings: int = 0
    config: Optional[GdConfig] = None

    @property
    def coefficient(self) -> np.ndarray:
        return self.params.coefficient()


# -- data handling ------------------------------------------------------------

def lagged_design(series: np.ndarray, lag: int = 1):
    """Split a ``p x N`` series into responses ``Y`` (``p x (N-lag)``) and stacked lags ``X``.

    Column ``t`` of ``X`` is ``[y_{t-1}; ...; y_{t-lag}]`` for response ``y_t``.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 2:
        raise ShapeError("series must be a p x N array")
    p, n = series.shape
    if lag < 1 or n <= lag:
        raise ShapeError(f"need more than lag={lag} observations, got {n}")
    y = series[:, lag:]
    x = np.vstack([series[:, lag - k:n - k] for k in range(1, lag + 1)])
    return y, x


class Problem:
    """Sufficient statistics of a least-squares VAR problem ``Y ~ A X``."""

    def __init__(self, y: np.ndarray, x: np.ndarray, rcond: float = ta.PINV_RCOND):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        if y.ndim != 2 or x.ndim != 2 or y.shape[1] != x.shape[1]:
            raise ShapeError(f"Y {y.shape} and X {x.shape} must share the time dimension")
        self.p, self.T = y.shape
        self.q = x.shape[0]
        self.sxx = x @ x.T / self.T
        self.syx = y @ x.T / self.T
        self.syy_trace = float(np.sum(y * y)) / self.T
        self.sxx_pinv = ta.pinv(self.sxx, rcond)
        self.a_ls = self.syx @ self.sxx_pinv
        resid = y - self.a_ls @ x
        self.rss_min = float(np.sum(resid * resid))

    @classmethod
    def from_series(cls, series, lag=1):
        return cls(*lagged_design(series, lag))

    def loss(self, a_mat: np.ndarray) -> float:
        delta = a_mat - self.a_ls
        return self.rss_min / (2 * self.T) + 0.5 * float(np.sum((delta @ self.sxx) * delta))

    def rss(self, a_mat: np.ndarray) -> float:
        return 2 * self.T * self.loss(a_mat)

    def grad(self, a_mat: np.ndarray) -> np.ndarray:
        return (a_mat - self.a_ls) @ self.sxx


# -- VAR(1) ---------------------------------------------------------------------

def _check_xy(y, x):
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.shape != x.shape:
        raise ShapeError(f"Y {y.shape} and X {x.shape} must have the same shape")
    return y, x


def loss_var1(params: Var1CsParams, y, x) -> float:
    """Squared loss ``||Y - A X||_F^2 / (2T)`` evaluated directly."""
    y, x = _check_xy(y, x)
    if params.dim != y.shape[0]:
        raise ShapeError("parameter dimension does not match the data")
    resid = y - reconstruct_var1(params) @ x
    return float(np.sum(resid * resid)) / (2 * y.shape[1])


def _penalty(w, b):
    m = w.T @ w - b * b * np.eye(w.shape[1])
    return float(np.sum(m * m))


def regularizer_var1(params: Var1CsParams, a=1.0, b=1.0) -> float:
    return 0.25 * a * (_penalty(params.left, b) + _penalty(params.right, b))


def objective_var1(params: Var1CsParams, y, x, a=1.0, b=1.0) -> float:
    """Loss plus the orthogonality penalty (see the module docstring for its scale)."""
    return loss_var1(params, y, x) + regularizer_var1(params, a, b)


def grad_full_var1(a_mat, y, x) -> np.ndarray:
    """Gradient ``(A X - Y) X' / T`` of the unpenalized loss with respect to ``A``."""
    y, x = _check_xy(y, x)
    a_mat = np.asarray(a_mat, dtype=float)
    if a_mat.shape != (y.shape[0], x.shape[0]):
        raise ShapeError(f"A has shape {a_mat.shape}, expected {(y.shape[0], x.shape[0])}")
    return (a_mat @ x - y) @ x.T / y.shape[1]


def _split_d(params: Var1CsParams):
    d = params.common_dim
    dc = params.d_core
    return dc[:d, :d], dc[:d, d:], dc[d:, :d], dc[d:, d:]


def partial_grads_var1(params: Var1CsParams, grad_a: np.ndarray):
    """Loss partials ``(dC, dR, dP, dD)`` given ``grad_a`` = gradient with respect to ``A``."""
    grad_a = np.asarray(grad_a, dtype=float)
    p = params.dim
    if grad_a.shape != (p, p):
        raise ShapeError(f"grad_a must be {p}x{p}")
    c, r, pp = params.c, params.r, params.p_
    d11, d12, d21, d22 = _split_d(params)
    g_c = grad_a @ (c @ d11.T + pp @ d12.T) + grad_a.T @ (c @ d11 + r @ d21)
    g_r = grad_a @ params.right @ np.hstack([d21, d22]).T
    g_p = grad_a.T @ params.left @ np.hstack([d12.T, d22.T]).T
    g_d = params.left.T @ grad_a @ params.right
    return g_c, g_r, g_p, g_d


def regularizer_grads_var1(params: Var1CsParams, a=1.0, b=1.0):
    """Penalty gradients with respect to ``(C, R, P)``; D is not penalized."""
    c, r, pp = params.c, params.r, params.p_
    b2 = b * b
    rc = c @ (c.T @ c - b2 * np.eye(c.shape[1]))
    g_c = a * (2 * rc + r @ (r.T @ c) + pp @ (pp.T @ c))
    g_r = a * (r @ (r.T @ r - b2 * np.eye(r.shape[1])) + c @ (c.T @ r))
    g_p = a * (pp @ (pp.T @ pp - b2 * np.eye(pp.shape[1])) + c @ (c.T @ pp))
    return g_c, g_r, g_p


def gd_step_var1(params: Var1CsParams, grads, config: GdConfig) -> Var1CsParams:
    """One simultaneous update of C, R, P, D with step ``config.step_size``."""
    eta, a, b = config.step_size, config.reg_weight, config.reg_scale
    g_c, g_r, g_p, g_d = grads
    h_c, h_r, h_p = regularizer_grads_var1(params, a, b)
    return params.replace(
        c=params.c - eta * g_c - eta * h_c,
        r=params.r - eta * g_r - eta * h_r,
        p_=params.p_ - eta * g_p - eta * h_p,
        d_core=params.d_core - eta * g_d,
    )


def hard_threshold_rows(m: np.ndarray, s: int) -> np.ndarray:
    """Keep the ``s`` rows of largest Euclidean norm and zero the rest.

    Ties go to the smaller row index.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    if not 1 <= s <= n:
        raise RankError(f"s={s} must lie in [1, {n}]")
    if s == n or m.shape[1] == 0:
        return m.copy()
    norms = np.linalg.norm(m, axis=1)
    order = np.lexsort((np.arange(n), -norms))
    out = np.zeros_like(m)
    keep = order[:s]
    out[keep] = m[keep]
    return out


def _threshold_params(params: Var1CsParams, levels: SparsityLevels) -> Var1CsParams:
    return params.replace(
        c=hard_threshold_rows(params.c, levels.s_c) if params.c.shape[1] else params.c,
        r=hard_threshold_rows(params.r, levels.s_r) if params.r.shape[1] else params.r,
        p_=hard_threshold_rows(params.p_, levels.s_p) if params.p_.shape[1] else params.p_,
    )


def _run_gd(params, coef, objective, grads_of, step, config, project=None, callback=None):
    """Shared descent loop with objective-guarded step halving."""
    a_cur = coef(params)
    obj = objective(params, a_cur)
    if not math.isfinite(obj):
        raise DivergenceError("initial objective is not finite", iterations=0, trajectory=[obj])
    obj0 = max(abs(obj), np.finfo(float).tiny)
    traj = [obj]
    converged = False
    total_halvings = 0
    it = 0
    gnorm = float("nan")
    for it in range(1, config.max_iters + 1):
        grads = grads_of(params, a_cur)
        gnorm = float(math.sqrt(sum(float(np.sum(g * g)) for g in grads)))
        eta = config.step_size
        accepted = None
        for _ in range(config.max_halvings + 1):
            cand = step(params, grads, config if eta == config.step_size else _with_eta(config, eta))
            if project is not None:
                cand = project(cand)
            a_new = coef(cand)
            obj_new = objective(cand, a_new)
            if not config.step_halving:
                accepted = (cand, a_new, obj_new)
                break
            if math.isfinite(obj_new) and obj_new <= obj:
                accepted = (cand, a_new, obj_new)
                break
            eta *= 0.5
            total_halvings += 1
        if accepted is None:
            # no step along the update direction lowers the objective: numerically stationary
            converged = project is None
            it -= 1
            break
        cand, a_new, obj_new = accepted
        if not math.isfinite(obj_new) or obj_new > config.divergence_factor * obj0:
            traj.append(obj_new)
            raise DivergenceError(
                f"objective diverged at iteration {it} (value {obj_new!r})",
                iterations=it, trajectory=traj,
            )
        change = float(np.linalg.norm(a_new - a_cur)) / max(1.0, float(np.linalg.norm(a_cur)))
        params, a_cur, obj = cand, a_new, obj_new
        traj.append(obj)
        if callback is not None:
            callback(it, params)
        if change < config.rel_tol:
            converged = True
            break
    return FitReport(
        params=params, loss_trajectory=traj, iterations_used=it, converged=converged,
        final_gradient_norm=gnorm, halvings=total_halvings, config=config,
    )


def _with_eta(config: GdConfig, eta: float) -> GdConfig:
    return GdConfig(
        step_size=eta, reg_weight=config.reg_weight, reg_scale=config.reg_scale,
        max_iters=config.max_iters, rel_tol=config.rel_tol, step_halving=config.step_halving,
        max_halvings=config.max_halvings, divergence_factor=config.divergence_factor,
    )


def _var1_closures(prob: Problem, config: GdConfig):
    a, b = config.reg_weight, config.reg_scale

    def objective(params, a_mat):
        return prob.loss(a_mat) + regularizer_var1(params, a, b)

    def grads_of(params, a_mat):
        return partial_grads_var1(params, prob.grad(a_mat))

    return objective, grads_of


def fit_var1(y, x, init: Var1CsParams, config: GdConfig = GdConfig(), problem: Problem = None,
             callback: Callable = None) -> FitReport:
    """Gradient descent for the VAR(1) common-subspace model with known rank and common dimension.

    Stops after ``config.max_iters`` iterations or when the relative change of
    the reconstructed coefficient drops below ``config.rel_tol``.
    """
    prob = problem if problem is not None else Problem(y, x)
    if init.dim != prob.p or prob.q != prob.p:
        raise ShapeError("initial parameters do not match the data dimension")
    objective, grads_of = _var1_closures(prob, config)
    return _run_gd(init, reconstruct_var1, objective, grads_of, gd_step_var1, config, callback=callback)


def fit_sparse_var1(y, x, levels: SparsityLevels, init: Var1CsParams,
                    config: GdConfig = GdConfig(), problem: Problem = None,
                    callback: Callable = None) -> FitReport:
    """Gradient descent with row hard-thresholding of C, R and P after every step."""
    prob = problem if problem is not None else Problem(y, x)
    levels.validate(prob.p)
    objective, grads_of = _var1_closures(prob, config)
    start = _threshold_params(init, levels)
    return _run_gd(
        start, reconstruct_var1, objective, grads_of, gd_step_var1, config,
        project=lambda prm: _threshold_params(prm, levels), callback=callback,
    )


# -- VAR(lag) -------------------------------------------------------------------

def loss_varl(params: VarLCsParams, y, x) -> float:
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    a1 = ta.unfold(reconstruct_varl(params), 1)
    if a1.shape != (y.shape[0], x.shape[0]):
        raise ShapeError("parameter dimensions do not match the data")
    resid = y - a1 @ x
    return float(np.sum(resid * resid)) / (2 * y.shape[1])


def regularizer_varl(params: VarLCsParams, a=1.0, b=1.0) -> float:
    return 0.25 * a * (
        _penalty(params.left, b) + _penalty(params.right, b) + _penalty(params.l, b)
    )


def objective_varl(params: VarLCsParams, y, x, a=1.0, b=1.0) -> float:
    return loss_varl(params, y, x) + regularizer_varl(params, a, b)


def _split_g(g, d):
    return g[:d, :d, :], g[:d, d:, :], g[d:, :d, :], g[d:, d:, :]


def partial_grads_varl(params: VarLCsParams, grad_t: np.ndarray):
    """Loss partials ``(dC, dR, dP, dL, dG)`` given the gradient tensor with respect to the coefficients."""
    grad_t = np.asarray(grad_t, dtype=float)
    p, lag = params.dim, params.lag_order
    if grad_t.shape != (p, p, lag):
        raise ShapeError(f"grad_t must have shape {(p, p, lag)}, got {grad_t.shape}")
    c, r, pp, l, g = params.c, params.r, params.p_, params.l, params.g
    d = params.common_dim
    g11, g12, g21, g22 = _split_g(g, d)
    n1, n2, n3 = (ta.unfold(grad_t, i) for i in (1, 2, 3))
    u = ta.unfold
    l_c, l_r, l_p = ta.kronecker(l, c), ta.kronecker(l, r), ta.kronecker(l, pp)
    g_c = (
        n1 @ (l_c @ u(g11, 1).T + l_p @ u(g12, 1).T)
        + n2 @ (l_c @ u(g11, 2).T + l_r @ u(g21, 2).T)
    )
    g_r = n1 @ (l_c @ u(g21, 1).T + l_p @ u(g22, 1).T)
    g_p = n2 @ (l_c @ u(g12, 2).T + l_r @ u(g22, 2).T)
    g_l = n3 @ ta.kronecker(params.right, params.left) @ u(g, 3).T
    g_g = ta.tucker_to_tensor(grad_t, params.left.T, params.right.T, l.T)
    return g_c, g_r, g_p, g_l, g_g


def regularizer_grads_varl(params: VarLCsParams, a=1.0, b=1.0):
    """Penalty gradients with respect to ``(C, R, P, L)``; G is not penalized."""
    g_c, g_r, g_p = regularizer_grads_var1(params, a, b)
    l = params.l
    g_l = a * l @ (l.T @ l - b * b * np.eye(l.shape[1]))
    return g_c, g_r, g_p, g_l


def gd_step_varl(params: VarLCsParams, grads, config: GdConfig) -> VarLCsParams:
    eta, a, b = config.step_size, config.reg_weight, config.reg_scale
    g_c, g_r, g_p, g_l, g_g = grads
    h_c, h_r, h_p, h_l = regularizer_grads_varl(params, a, b)
    return params.replace(
        c=params.c - eta * (g_c + h_c),
        r=params.r - eta * (g_r + h_r),
        p_=params.p_ - eta * (g_p + h_p),
        l=params.l - eta * (g_l + h_l),
        g=params.g - eta * g_g,
    )


def tensor_gradient(prob: Problem, coef_t: np.ndarray) -> np.ndarray:
    """Gradient of the loss with respect to the coefficient tensor."""
    grad1 = prob.grad(ta.unfold(coef_t, 1))
    return ta.fold(grad1, 1, coef_t.shape)


def fit_varl(series, init: VarLCsParams, config: GdConfig = GdConfig(), problem: Problem = None,
             callback: Callable = None) -> FitReport:
    """Gradient descent for the VAR(lag) common-subspace model with known ranks and common dimension.

    ``series`` is the ``p x (T + lag)`` panel; pass ``problem`` to reuse
    precomputed statistics (``series`` may then be ``None``).
    """
    lag = init.lag_order
    prob = problem if problem is not None else Problem.from_series(series, lag)
    if prob.p != init.dim or prob.q != init.dim * lag:
        raise ShapeError("initial parameters do not match the data dimension")
    a, b = config.reg_weight, config.reg_scale

    def objective(params, coef_t):
        return prob.loss(ta.unfold(coef_t, 1)) + regularizer_varl(params, a, b)

    def grads_of(params, coef_t):
        return partial_grads_varl(params, tensor_gradient(prob, coef_t))

    return _run_gd(init, reconstruct_varl, objective, grads_of, gd_step_varl, config, callback=callback)


# -- L1-penalized least squares ---------------------------------------------------

def soft_threshold(m, tau):
    return np.sign(m) * np.maximum(np.abs(m) - tau, 0.0)


def lasso_var1(y, x, lam: float, tol: float = 1e-8, max_iters: int = 50000,
               problem: Problem = None) -> np.ndarray:
    """Entrywise L1-penalized least squares ``argmin ||Y - A X||^2/(2T) + lam*||A||_1``.

    Accelerated proximal gradient (FISTA with function-value restart) at the
    fixed step ``1/Lip``, ``Lip`` the top eigenvalue of ``XX'/T``.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    prob = problem if problem is not None else Problem(y, x)
    sxx, syx = prob.sxx, prob.syx
    lip = float(np.linalg.eigvalsh(sxx)[-1])
    if lip <= 0:
        raise ConvergenceError("design has no variation")
    step = 1.0 / lip

    def objective(a_mat):
        return 0.5 * float(np.sum((a_mat @ sxx) * a_mat)) - float(np.sum(a_mat * syx)) \
            + 0.5 * prob.syy_trace + lam * float(np.sum(np.abs(a_mat)))

    a_cur = np.zeros((prob.p, prob.q))
    z = a_cur.copy()
    t = 1.0
    f_cur = objective(a_cur)
    for it in range(1, max_iters + 1):
        a_new = soft_threshold(z - step * (z @ sxx - syx), step * lam)
        f_new = objective(a_new)
        if f_new > f_cur:
            # restart momentum from the last iterate
            t = 1.0
            z = a_cur
            a_new = soft_threshold(z - step * (z @ sxx - syx), step * lam)
            f_new = objective(a_new)
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        z = a_new + ((t - 1) / t_new) * (a_new - a_cur)
        da = float(np.linalg.norm(a_new - a_cur))
        rel_obj = abs(f_cur - f_new) / max(1.0, abs(f_new))
        a_scale = max(1.0, float(np.linalg.norm(a_new)))
        a_cur, f_cur, t = a_new, f_new, t_new
        if rel_obj < tol and da < tol * a_scale:
            return a_cur
    raise ConvergenceError(f"lasso did not converge in {max_iters} iterations", iterations=max_iters)

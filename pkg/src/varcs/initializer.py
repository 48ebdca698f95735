"""Spectral starting values for the gradient-descent solvers."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as ta
from .estimator import Problem, SparsityLevels, hard_threshold_rows, lasso_var1
from .exceptions import ConvergenceError, RankError, ShapeError
from .model import Var1CsParams, VarLCsParams

EIG_FLOOR = 1e-10


@dataclass(frozen=True)
class ReducedRankFit:
    """Rank-``rank`` least-squares VAR coefficient and its thin SVD (top ``rank`` triplets)."""

    a_hat: np.ndarray
    rank: int
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


def _problem(y, x, problem):
    return problem if problem is not None else Problem(y, x)


def reduced_rank_var1(y, x, r: int, problem: Problem = None) -> ReducedRankFit:
    """Reduced-rank least squares ``H H' Y X'(XX')^+``, ``H`` = top-r eigenvectors of ``YX'(XX')^+XY'``."""
    prob = _problem(y, x, problem)
    if not 1 <= r <= prob.p:
        raise RankError(f"rank {r} must lie in [1, {prob.p}]")
    if not np.any(np.abs(prob.sxx_pinv) > 0):
        raise RankError("degenerate design: X X' has no singular value above the cutoff")
    m = prob.a_ls @ prob.syx.T
    h = ta.top_k_eigvecs_sym(m, r)
    a_hat = h @ (h.T @ prob.a_ls)
    dec = ta.svd(a_hat)
    return ReducedRankFit(a_hat=a_hat, rank=r, u=dec.u[:, :r], s=dec.s[:r], v=dec.v[:, :r])


def extract_common(u: np.ndarray, v: np.ndarray, d: int):
    """Split two orthonormal bases into common, response-specific and predictor-specific blocks.

    ``u`` is ``p x r1`` and ``v`` is ``p x r2``.  Returns ``(C, R, P)`` with
    ``d``, ``r1 - d`` and ``r2 - d`` orthonormal columns.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    p, r1 = u.shape
    r2 = v.shape[1]
    if v.shape[0] != p:
        raise ShapeError("u and v must have the same number of rows")
    if not 0 <= d <= min(r1, r2):
        raise RankError(f"common dimension {d} must lie in [0, {min(r1, r2)}]")
    pu = u @ u.T
    pv = v @ v.T
    eye = np.eye(p)
    r_t = ta.top_left_singular_vectors(pu @ (eye - pv), r1 - d)
    p_t = ta.top_left_singular_vectors(pv @ (eye - pu), r2 - d)
    if d == 0:
        return np.zeros((p, 0)), r_t, p_t
    qr_ = eye - r_t @ r_t.T
    qp_ = eye - p_t @ p_t.T
    left = qr_ @ qp_
    m = left @ (pu + pv) @ left
    m = 0.5 * (m + m.T)
    w = np.linalg.eigvalsh(m)
    if np.sum(w > EIG_FLOOR) < d:
        warnings.warn(
            f"fewer than {d} eigenvalues above {EIG_FLOOR}; common block is weakly determined",
            RuntimeWarning, stacklevel=2,
        )
    c_t = ta.top_k_eigvecs_sym(m, d)
    return c_t, r_t, p_t


def spectral_init_var1(rr: ReducedRankFit, d: int, b: float = 1.0) -> Var1CsParams:
    c_t, r_t, p_t = extract_common(rr.u, rr.v, d)
    left = np.hstack([c_t, r_t])
    right = np.hstack([c_t, p_t])
    d_t = left.T @ rr.a_hat @ right
    return Var1CsParams(c=b * c_t, r=b * r_t, p_=b * p_t, d_core=d_t / b**2, scale_b=b)


# -- rank-constrained VAR(lag) --------------------------------------------------

@dataclass(frozen=True)
class RankConstrainedFit:
    """Tucker-rank-constrained least squares fit with its HOSVD factors."""

    tensor: np.ndarray
    core: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray
    ranks: tuple
    objective: float
    sweeps: int
    objective_trajectory: tuple = ()


def _lag_blocks(mat, p, lag):
    return [mat[:, k * p:(k + 1) * p] for k in range(lag)]


def rank_constrained_varl(series, ranks, lag: int = None, problem: Problem = None,
                          tol: float = 1e-8, max_sweeps: int = 200) -> RankConstrainedFit:
    """Least squares over coefficient tensors with mode ranks ``ranks`` (alternating least squares).

    Starts from the HOSVD truncation of the unconstrained least-squares tensor
    and cycles through exact block updates of ``U1``, ``U2``, ``U3`` and the
    core, re-orthonormalizing with an HOSVD after every sweep.  Each block
    update minimizes the loss over that block, so the objective never rises.
    """
    if problem is None:
        if lag is None:
            raise ValueError("lag is required when no problem is given")
        problem = Problem.from_series(series, lag)
    prob = problem
    p = prob.p
    lag = prob.q // p
    if lag * p != prob.q:
        raise ShapeError("design rows are not a multiple of the dimension")
    r1, r2, r3 = (int(r) for r in ranks)
    if not (1 <= r1 <= p and 1 <= r2 <= p and 1 <= r3 <= lag):
        raise RankError(f"ranks {ranks} out of range for p={p}, lag={lag}")
    dims = (p, p, lag)
    sxx, syx = prob.sxx, prob.syx

    def loss_of(t):
        return prob.loss(ta.unfold(t, 1))

    core, u1, u2, u3 = ta.hosvd(ta.fold(prob.a_ls, 1, dims), (r1, r2, r3))
    t_cur = ta.tucker_to_tensor(core, u1, u2, u3)
    obj = loss_of(t_cur)
    traj = [obj]
    sxx_blocks = [[sxx[k * p:(k + 1) * p, j * p:(j + 1) * p] for j in range(lag)] for k in range(lag)]
    syx_blocks = _lag_blocks(syx, p, lag)
    full = (r1, r2, r3) == dims
    sweeps = 0
    for sweeps in range(1, 0 if full else max_sweeps + 1):
        # U1 and core jointly: reduced-rank regression on W x_t, W = kron(U3, U2)'
        w = ta.kronecker(u3, u2).T
        wsw = w @ sxx @ w.T
        b_ls = syx @ w.T @ ta.pinv(wsw)
        h = ta.top_k_eigvecs_sym(b_ls @ wsw @ b_ls.T, r1)
        b1 = h @ (h.T @ b_ls)
        u1 = h
        core = ta.fold(h.T @ b1, 1, (r1, r2, r3))

        # U2 given U1, U3, core
        gk = np.einsum("abc,kc->kab", core, u3)
        hk = [u1 @ gk[k] for k in range(lag)]
        nmat = np.zeros((p * r2, p * r2))
        rhs = np.zeros(p * r2)
        for k in range(lag):
            for j in range(lag):
                nmat += np.kron(sxx_blocks[k][j], hk[k].T @ hk[j])
            rhs += (hk[k].T @ syx_blocks[k]).ravel(order="F")
        u2t = ta.solve_psd(nmat, rhs).reshape((r2, p), order="F")
        u2 = u2t.T

        # U3 given U1, U2, core
        fc = [u1 @ core[:, :, c] @ u2.T for c in range(r3)]
        nm3 = np.zeros((lag * r3, lag * r3))
        rhs3 = np.zeros(lag * r3)
        for k in range(lag):
            for c in range(r3):
                i = k + lag * c
                rhs3[i] = float(np.sum(fc[c] * syx_blocks[k]))
                for j in range(lag):
                    for e in range(r3):
                        nm3[i, j + lag * e] = float(np.sum((fc[c].T @ fc[e]) * sxx_blocks[j][k]))
        u3 = ta.solve_psd(nm3, rhs3).reshape((lag, r3), order="F")

        # core given U1, U2, U3
        w = ta.kronecker(u3, u2).T
        wsw = w @ sxx @ w.T
        g1 = ta.pinv(u1.T @ u1) @ u1.T @ syx @ w.T @ ta.pinv(wsw)
        core = ta.fold(g1, 1, (r1, r2, r3))

        t_new = ta.tucker_to_tensor(core, u1, u2, u3)
        new_obj = loss_of(t_new)
        if not np.isfinite(new_obj):
            raise ConvergenceError("ALS produced a non-finite objective", iterations=sweeps, trajectory=traj)
        if new_obj > obj * (1 + 1e-12) + 1e-300:
            # round-off only; keep the previous iterate
            break
        core, u1, u2, u3 = ta.hosvd(t_new, (r1, r2, r3))
        t_cur = ta.tucker_to_tensor(core, u1, u2, u3)
        rel = abs(obj - new_obj) / max(abs(obj), np.finfo(float).tiny)
        obj = new_obj
        traj.append(obj)
        if rel < tol:
            break
    core, u1, u2, u3 = ta.hosvd(t_cur, (r1, r2, r3))
    return RankConstrainedFit(
        tensor=t_cur, core=core, u1=u1, u2=u2, u3=u3, ranks=(r1, r2, r3),
        objective=obj, sweeps=sweeps, objective_trajectory=tuple(traj),
    )


def spectral_init_varl(rc: RankConstrainedFit, d: int, b: float = 1.0) -> VarLCsParams:
    """Starting values from the rank-constrained fit.

    The core is ``b^-3 * A x1 [C R]' x2 [C P]' x3 U3'`` so that the starting
    coefficient tensor equals the projection of ``A`` onto the factor spans.
    """
    c_t, r_t, p_t = extract_common(rc.u1, rc.u2, d)
    left = np.hstack([c_t, r_t])
    right = np.hstack([c_t, p_t])
    g = ta.tucker_to_tensor(rc.tensor, left.T, right.T, rc.u3.T) / b**3
    return VarLCsParams(c=b * c_t, r=b * r_t, p_=b * p_t, l=b * rc.u3, g=g, scale_b=b)


# -- sparse ---------------------------------------------------------------------

def default_lambda(y, x, problem: Problem = None, ridge: float = None) -> float:
    """``2 * sigma * sqrt(log p / T)`` with ``sigma`` a robust residual scale from a ridge pre-fit."""
    prob = _problem(y, x, problem)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if ridge is None:
        ridge = float(np.trace(prob.sxx)) / prob.q
    a_ridge = prob.syx @ np.linalg.inv(prob.sxx + ridge * np.eye(prob.q))
    resid = y - a_ridge @ x
    sigma = 1.4826 * float(np.median(np.abs(resid)))
    return 2.0 * sigma * float(np.sqrt(np.log(prob.p) / prob.T))


def _trim_basis(u, s):
    """Keep the ``s`` largest rows of ``u`` and re-orthonormalize; falls back to ``u`` if rank is lost."""
    if s >= u.shape[0]:
        return u
    t = hard_threshold_rows(u, s)
    try:
        return ta.orthonormalize(t)
    except RankError:
        return u


def sparse_init_var1(y, x, r: int, d: int, lam: float = None, levels: SparsityLevels = None,
                     b: float = 1.0, problem: Problem = None, a_l1: np.ndarray = None) -> Var1CsParams:
    """Spectral starting values built from an L1-penalized fit, then row hard-thresholded."""
    prob = _problem(y, x, problem)
    if lam is None:
        lam = default_lambda(y, x, problem=prob)
    if a_l1 is None:
        a_l1 = lasso_var1(y, x, lam, problem=prob)
    if levels is None:
        levels = SparsityLevels(prob.p, prob.p, prob.p)
    levels.validate(prob.p)
    dec = ta.svd(a_l1)
    u, v = dec.u[:, :r], dec.v[:, :r]
    # rows of [C R] and [C P] lie in the supports of u and v, so trim those first
    u = _trim_basis(u, min(prob.p, levels.s_c + levels.s_r))
    v = _trim_basis(v, min(prob.p, levels.s_c + levels.s_p))
    c_t, r_t, p_t = extract_common(u, v, d)
    d_t = np.hstack([c_t, r_t]).T @ a_l1 @ np.hstack([c_t, p_t])

    def ht(m, s):
        return hard_threshold_rows(m, s) if m.shape[1] else m

    return Var1CsParams(
        c=ht(b * c_t, levels.s_c), r=ht(b * r_t, levels.s_r), p_=ht(b * p_t, levels.s_p),
        d_core=d_t / b**2, scale_b=b,
    )

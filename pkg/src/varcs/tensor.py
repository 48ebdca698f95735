"""Dense matrix and order-3 tensor kernels.

Matrices and tensors are plain ``numpy.ndarray`` objects.  Tensor modes are
numbered 1, 2, 3 as in the usual Tucker notation.

Unfolding convention
--------------------
``unfold(t, n)`` places mode ``n`` along the rows and orders the remaining
modes with the lower-numbered mode varying fastest (Kolda and Bader).  For a
``p x p x lag`` coefficient tensor this gives::

    unfold(t, 1) == [A_1, A_2, ..., A_lag]
    unfold(t, 2) == [A_1.T, A_2.T, ..., A_lag.T]

and for a Tucker tensor ``g x1 U1 x2 U2 x3 U3``::

    unfold(t, 1) == U1 @ unfold(g, 1) @ kron(U3, U2).T
    unfold(t, 2) == U2 @ unfold(g, 2) @ kron(U3, U1).T
    unfold(t, 3) == U3 @ unfold(g, 3) @ kron(U2, U1).T

Every other module relies on this single convention.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .exceptions import ConvergenceError, RankError, ShapeError

PINV_RCOND = 1e-10


class Svd(NamedTuple):
    """Thin SVD ``m = u @ diag(s) @ v.T`` with a fixed sign convention."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


def _check_finite(m, name="input"):
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN or Inf")


def _sign_fix(u, v=None):
    """Flip columns so the largest-magnitude entry of each column of ``u`` is positive."""
    if u.size == 0:
        return u, v
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    u = u * signs
    if v is not None:
        v = v * signs
    return u, v


def svd(m: np.ndarray) -> Svd:
    """Thin SVD with deterministic signs.

    Singular values come back non-increasing.  For each left singular vector
    the entry of largest absolute value is made positive and the matching
    right singular vector is flipped with it.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ShapeError(f"svd expects a matrix, got ndim={m.ndim}")
    _check_finite(m)
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        # LAPACK gesdd does not report its sweep count through numpy
        raise ConvergenceError(f"SVD did not converge: {exc}", iterations=None) from exc
    u, v = _sign_fix(u, vt.T)
    return Svd(u, s, v)


def top_left_singular_vectors(m: np.ndarray, k: int) -> np.ndarray:
    """Top-``k`` left singular vectors of ``m`` (``k == 0`` gives an empty block)."""
    m = np.asarray(m, dtype=float)
    if not 0 <= k <= min(m.shape):
        raise RankError(f"k={k} out of range for a {m.shape} matrix")
    if k == 0:
        return np.zeros((m.shape[0], 0))
    return svd(m).u[:, :k]


def top_k_eigvecs_sym(m: np.ndarray, k: int) -> np.ndarray:
    """Eigenvectors of the ``k`` algebraically largest eigenvalues of a symmetric matrix.

    The input is symmetrized as ``(m + m.T) / 2`` first.  ``k = 0`` returns a
    ``p x 0`` array.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got {m.shape}")
    n = m.shape[0]
    if not 0 <= k <= n:
        raise RankError(f"k={k} out of range for dimension {n}")
    if k == 0:
        return np.zeros((n, 0))
    _check_finite(m)
    w, vecs = np.linalg.eigh(0.5 * (m + m.T))
    order = np.argsort(w, kind="stable")[::-1][:k]
    out, _ = _sign_fix(vecs[:, order])
    return out


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization (modes are 1-based)."""
    t = np.asarray(t)
    if t.ndim != 3:
        raise ShapeError(f"unfold expects an order-3 tensor, got ndim={t.ndim}")
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    ax = mode - 1
    rest = int(np.prod([d for i, d in enumerate(t.shape) if i != ax]))
    return np.reshape(np.moveaxis(t, ax, 0), (t.shape[ax], rest), order="F")


def fold(m: np.ndarray, mode: int, dims) -> np.ndarray:
    """Inverse of :func:`unfold` for a tensor of shape ``dims``."""
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    dims = tuple(int(d) for d in dims)
    ax = mode - 1
    m = np.asarray(m)
    rest = tuple(d for i, d in enumerate(dims) if i != ax)
    if m.shape != (dims[ax], int(np.prod(rest))):
        raise ShapeError(f"matrix of shape {m.shape} cannot fold to {dims} along mode {mode}")
    return np.moveaxis(np.reshape(m, (dims[ax],) + rest, order="F"), 0, ax)


def mode_product(t: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` product ``t x_mode m``; ``m.shape[1]`` must equal ``t.shape[mode-1]``."""
    t = np.asarray(t, dtype=float)
    m = np.asarray(m, dtype=float)
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    ax = mode - 1
    if m.ndim != 2 or m.shape[1] != t.shape[ax]:
        raise ShapeError(
            f"cannot multiply mode {mode} of size {t.shape[ax]} by a {m.shape} matrix"
        )
    out = np.tensordot(m, t, axes=(1, ax))
    return np.moveaxis(out, 0, ax)


def tucker_to_tensor(core, u1, u2, u3) -> np.ndarray:
    """``core x1 u1 x2 u2 x3 u3``."""
    out = mode_product(core, u1, 1)
    out = mode_product(out, u2, 2)
    return mode_product(out, u3, 3)


def hosvd(t: np.ndarray, ranks):
    """Truncated higher-order SVD.

    Returns ``(core, u1, u2, u3)`` where ``u_i`` holds the top ``ranks[i]``
    left singular vectors of ``unfold(t, i)`` and
    ``core = t x1 u1.T x2 u2.T x3 u3.T``.
    """
    t = np.asarray(t, dtype=float)
    if t.ndim != 3:
        raise ShapeError("hosvd expects an order-3 tensor")
    ranks = tuple(int(r) for r in ranks)
    for i, (r, dim) in enumerate(zip(ranks, t.shape), start=1):
        if not 0 <= r <= dim:
            raise RankError(f"rank {r} exceeds dimension {dim} on mode {i}")
    us = [top_left_singular_vectors(unfold(t, i), r) for i, r in enumerate(ranks, start=1)]
    core = tucker_to_tensor(t, us[0].T, us[1].T, us[2].T)
    return core, us[0], us[1], us[2]


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def orthonormalize(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis for the column space of a full-column-rank matrix (QR)."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ShapeError("orthonormalize expects a matrix")
    if m.shape[1] == 0:
        return np.zeros((m.shape[0], 0))
    if m.shape[1] > m.shape[0]:
        raise RankError("more columns than rows; cannot be full column rank")
    q, r = np.linalg.qr(m)
    diag = np.abs(np.diag(r))
    scale = max(np.max(np.linalg.norm(m, axis=0)), np.finfo(float).tiny)
    if np.any(diag <= tol * scale):
        raise RankError("input is rank deficient")
    # make R's diagonal positive so the result does not depend on LAPACK's sign choices
    q = q * np.sign(np.diag(r))
    return q


def projector(u: np.ndarray) -> np.ndarray:
    """Orthogonal projector ``u @ u.T`` onto the span of orthonormal columns ``u``."""
    return u @ u.T


def span_projector(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Projector onto the column space of an arbitrary matrix (rank read off the SVD)."""
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return np.zeros((m.shape[0], m.shape[0]))
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    k = int(np.sum(s > tol * max(s[0], np.finfo(float).tiny)))
    return u[:, :k] @ u[:, :k].T


def _is_orthonormal(u, tol):
    return np.linalg.norm(u.T @ u - np.eye(u.shape[1])) <= tol


def sin_theta_dist(u: np.ndarray, v: np.ndarray, check: bool = True) -> float:
    """Frobenius sin-theta distance ``||uu' - vv'||_F / sqrt(2)`` between two subspaces."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ShapeError(f"shape mismatch {u.shape} vs {v.shape}")
    if check and not (_is_orthonormal(u, 1e-8) and _is_orthonormal(v, 1e-8)):
        raise ValueError("sin_theta_dist requires orthonormal columns")
    return float(np.linalg.norm(u @ u.T - v @ v.T) / np.sqrt(2.0))


def spectral_radius(a: np.ndarray) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got {a.shape}")
    if a.size == 0:
        return 0.0
    _check_finite(a)
    try:
        w = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigenvalue iteration did not converge: {exc}") from exc
    return float(np.max(np.abs(w)))


def solve_psd(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``m x = rhs`` for symmetric positive semi-definite ``m``.

    Uses a Cholesky factorization and falls back to the pseudo-inverse when
    ``m`` is singular or badly conditioned.
    """
    m = np.asarray(m, dtype=float)
    try:
        factor = cho_factor(m)
        diag = np.abs(np.diag(factor[0]))
        if diag.min() > np.sqrt(PINV_RCOND) * diag.max():
            return cho_solve(factor, rhs)
    except np.linalg.LinAlgError:
        pass
    return pinv(m) @ rhs


def pinv(m: np.ndarray, rcond: float = PINV_RCOND) -> np.ndarray:
    """Pseudo-inverse dropping singular values below ``rcond * s_max``."""
    return np.linalg.pinv(np.asarray(m, dtype=float), rcond=rcond)

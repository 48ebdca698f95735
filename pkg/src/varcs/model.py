"""Factored VAR coefficient models.

A VAR(1) coefficient matrix is stored as ``A = [C R] D [C P]'`` and a VAR(lag)
coefficient tensor as ``A = G x1 [C R] x2 [C P] x3 L``.  Here C spans the
subspace shared by the response and predictor spaces.  R and P span the
response-specific and predictor-specific parts.  An empty block (``d = 0`` or
``d = r``) is a matrix with zero columns.

The factors are only identified up to block rotations, so fitted models are
compared through reconstructed coefficients or projectors, never through raw
factor entries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as ta
from .exceptions import ShapeError


def _as2d(m, cols=None):
    m = np.asarray(m, dtype=float)
    if m.ndim == 1 and cols == 0:
        m = m.reshape(-1, 0)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class Var1CsParams:
    """Factors of ``A = [C R] D [C P]'`` for a VAR(1) with a common subspace.

    ``c`` is ``p x d``, ``r`` and ``p_`` are ``p x (rank - d)`` and ``d_core``
    is ``rank x rank`` with blocks ``D11 (d x d)``, ``D12``, ``D21``, ``D22``.
    """

    c: np.ndarray
    r: np.ndarray
    p_: np.ndarray
    d_core: np.ndarray
    scale_b: float = 1.0

    def __post_init__(self):
        c, r, p_, dc = (_as2d(x) for x in (self.c, self.r, self.p_, self.d_core))
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "p_", p_)
        object.__setattr__(self, "d_core", dc)
        p = c.shape[0]
        if r.shape[0] != p or p_.shape[0] != p:
            raise ShapeError("C, R and P must have the same number of rows")
        if r.shape[1] != p_.shape[1]:
            raise ShapeError("R and P must have the same number of columns")
        rank = c.shape[1] + r.shape[1]
        if dc.shape != (rank, rank):
            raise ShapeError(f"D must be {rank}x{rank}, got {dc.shape}")
        if rank > p:
            raise ShapeError(f"rank {rank} exceeds dimension {p}")

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    @property
    def rank(self) -> int:
        return self.d_core.shape[0]

    @property
    def common_dim(self) -> int:
        return self.c.shape[1]

    @property
    def left(self) -> np.ndarray:
        """``[C R]``."""
        return np.hstack([self.c, self.r])

    @property
    def right(self) -> np.ndarray:
        """``[C P]``."""
        return np.hstack([self.c, self.p_])

    def coefficient(self) -> np.ndarray:
        return reconstruct_var1(self)

    def replace(self, **kw) -> "Var1CsParams":
        vals = dict(c=self.c, r=self.r, p_=self.p_, d_core=self.d_core, scale_b=self.scale_b)
        vals.update(kw)
        return Var1CsParams(**vals)


@dataclass(frozen=True)
class VarLCsParams:
    """Factors of ``A = G x1 [C R] x2 [C P] x3 L`` for a VAR(lag).

    ``g`` has shape ``(r1, r2, r3)``; ``l`` is ``lag x r3``.
    """

    c: np.ndarray
    r: np.ndarray
    p_: np.ndarray
    l: np.ndarray
    g: np.ndarray
    scale_b: float = 1.0

    def __post_init__(self):
        c, r, p_, l = (_as2d(x) for x in (self.c, self.r, self.p_, self.l))
        g = np.asarray(self.g, dtype=float)
        for name, val in (("c", c), ("r", r), ("p_", p_), ("l", l), ("g", g)):
            object.__setattr__(self, name, val)
        p = c.shape[0]
        if r.shape[0] != p or p_.shape[0] != p:
            raise ShapeError("C, R and P must have the same number of rows")
        if g.ndim != 3:
            raise ShapeError("core G must be an order-3 tensor")
        r1 = c.shape[1] + r.shape[1]
        r2 = c.shape[1] + p_.shape[1]
        if g.shape != (r1, r2, l.shape[1]):
            raise ShapeError(f"core G must have shape {(r1, r2, l.shape[1])}, got {g.shape}")
        if l.shape[1] > l.shape[0]:
            raise ShapeError("r3 cannot exceed the lag order")

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    @property
    def ranks(self) -> tuple:
        return tuple(self.g.shape)

    @property
    def common_dim(self) -> int:
        return self.c.shape[1]

    @property
    def lag_order(self) -> int:
        return self.l.shape[0]

    @property
    def left(self) -> np.ndarray:
        return np.hstack([self.c, self.r])

    @property
    def right(self) -> np.ndarray:
        return np.hstack([self.c, self.p_])

    def coefficient(self) -> np.ndarray:
        return reconstruct_varl(self)

    def replace(self, **kw) -> "VarLCsParams":
        vals = dict(c=self.c, r=self.r, p_=self.p_, l=self.l, g=self.g, scale_b=self.scale_b)
        vals.update(kw)
        return VarLCsParams(**vals)


@dataclass(frozen=True)
class ModelDiagnostics:
    sigma1: float
    sigma_r: float
    kappa: float
    g_min: float
    spectral_radius: float
    extra: dict = field(default_factory=dict)

    @property
    def stationary(self) -> bool:
        return self.spectral_radius < 1.0


def reconstruct_var1(params: Var1CsParams) -> np.ndarray:
    return params.left @ params.d_core @ params.right.T


def reconstruct_varl(params: VarLCsParams) -> np.ndarray:
    return ta.tucker_to_tensor(params.g, params.left, params.right, params.l)


def coefficient_slices(t: np.ndarray) -> list:
    """Frontal slices ``A_1, ..., A_lag`` of a ``p x p x lag`` coefficient tensor."""
    t = np.asarray(t, dtype=float)
    if t.ndim == 2:
        return [t]
    if t.ndim != 3 or t.shape[0] != t.shape[1]:
        raise ShapeError(f"expected a p x p x lag tensor, got {t.shape}")
    return [t[:, :, k] for k in range(t.shape[2])]


def slices_to_tensor(slices) -> np.ndarray:
    return np.stack([np.asarray(a, dtype=float) for a in slices], axis=2)


def param_count_rr(p: int, r: int) -> int:
    return r * (2 * p - r)


def param_count_cs(p: int, r: int, d: int) -> int:
    # d(p - (d+1)/2) == d(2p - d - 1)/2, and d(2p-d-1) is always even
    return r * (2 * p - r) - d * (2 * p - d - 1) // 2


def param_count_cs_tensor(p: int, lag: int, r1: int, r2: int, r3: int, d: int) -> int:
    return (
        r1 * r2 * r3
        + r1 * (p - r1)
        + r2 * (p - r2)
        + r3 * (lag - r3)
        - d * (2 * p - d - 1) // 2
    )


def companion(slices) -> np.ndarray:
    """Companion matrix of a VAR(lag) with coefficient matrices ``slices``."""
    slices = [np.asarray(a, dtype=float) for a in slices]
    p = slices[0].shape[0]
    lag = len(slices)
    top = np.hstack(slices)
    if lag == 1:
        return top
    bottom = np.hstack([np.eye(p * (lag - 1)), np.zeros((p * (lag - 1), p))])
    return np.vstack([top, bottom])


def stationarity_check(slices) -> float:
    """Spectral radius of the companion matrix; the model is stationary iff it is below 1."""
    if isinstance(slices, np.ndarray):
        slices = coefficient_slices(slices)
    for a in slices:
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape != slices[0].shape:
            raise ShapeError("slices must be square matrices of a common size")
    return ta.spectral_radius(companion(slices))


def _specific_bases(c, m):
    """Orthonormal bases for span([c m]) split into the common part and its complement."""
    d = c.shape[1]
    q = ta.orthonormalize(np.hstack([c, m])) if c.shape[1] + m.shape[1] else np.zeros((c.shape[0], 0))
    return q[:, :d], q[:, d:]


def canonical_g_min(c, r, p_) -> float:
    """Sine of the smallest canonical angle between the specific subspaces."""
    if r.shape[1] == 0:
        return 1.0
    _, rb = _specific_bases(c, r)
    _, pb = _specific_bases(c, p_)
    s1 = np.linalg.svd(rb.T @ pb, compute_uv=False)[0]
    return float(np.sqrt(max(0.0, 1.0 - min(s1, 1.0) ** 2)))


def diagnostics(params) -> ModelDiagnostics:
    """Singular-value, canonical-angle and stationarity summaries of a model."""
    g_min = canonical_g_min(params.c, params.r, params.p_)
    if isinstance(params, Var1CsParams):
        a = reconstruct_var1(params)
        s = np.linalg.svd(a, compute_uv=False)
        sigma1 = float(s[0])
        sigma_r = float(s[params.rank - 1]) if params.rank else 0.0
        rho = ta.spectral_radius(a)
    elif isinstance(params, VarLCsParams):
        t = reconstruct_varl(params)
        per_mode = [np.linalg.svd(ta.unfold(t, i), compute_uv=False) for i in (1, 2, 3)]
        sigma1 = float(max(s[0] for s in per_mode))
        sigma_r = float(min(s[r - 1] for s, r in zip(per_mode, params.ranks)))
        rho = stationarity_check(coefficient_slices(t))
    else:
        raise TypeError(f"unsupported parameter type {type(params).__name__}")
    kappa = sigma1 / sigma_r if sigma_r > 0 else float("inf")
    return ModelDiagnostics(sigma1=sigma1, sigma_r=sigma_r, kappa=kappa, g_min=g_min, spectral_radius=rho)


# -- JSON serialization -------------------------------------------------------

def _arr(m):
    m = np.asarray(m, dtype=float)
    return {"shape": list(m.shape), "data": m.ravel(order="C").tolist()}


def _unarr(obj):
    return np.asarray(obj["data"], dtype=float).reshape(obj["shape"], order="C")


def to_dict(params) -> dict:
    if isinstance(params, Var1CsParams):
        return {
            "model_type": "var1_cs",
            "dims": {"p": params.dim},
            "ranks": [params.rank],
            "common_dim": params.common_dim,
            "scale_b": float(params.scale_b),
            "c": _arr(params.c),
            "r": _arr(params.r),
            "p": _arr(params.p_),
            "d": _arr(params.d_core),
        }
    if isinstance(params, VarLCsParams):
        return {
            "model_type": "varl_cs",
            "dims": {"p": params.dim, "lag": params.lag_order},
            "ranks": list(params.ranks),
            "common_dim": params.common_dim,
            "scale_b": float(params.scale_b),
            "c": _arr(params.c),
            "r": _arr(params.r),
            "p": _arr(params.p_),
            "l": _arr(params.l),
            "g": _arr(params.g),
        }
    raise TypeError(f"unsupported parameter type {type(params).__name__}")


def from_dict(obj: dict):
    kind = obj.get("model_type")
    if kind == "var1_cs":
        return Var1CsParams(
            c=_unarr(obj["c"]), r=_unarr(obj["r"]), p_=_unarr(obj["p"]),
            d_core=_unarr(obj["d"]), scale_b=float(obj.get("scale_b", 1.0)),
        )
    if kind == "varl_cs":
        return VarLCsParams(
            c=_unarr(obj["c"]), r=_unarr(obj["r"]), p_=_unarr(obj["p"]),
            l=_unarr(obj["l"]), g=_unarr(obj["g"]), scale_b=float(obj.get("scale_b", 1.0)),
        )
    raise ValueError(f"unknown model_type {kind!r}")


def dumps(params, **kw) -> str:
    return json.dumps(to_dict(params), **kw)


def loads(text: str):
    return from_dict(json.loads(text))

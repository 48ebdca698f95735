"""Simulation designs, the factor-model baseline and a reproducible Monte-Carlo harness."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from typing import Optional

import numpy as np

from . import tensor as ta
from .estimator import GdConfig, Problem, lagged_design
from .exceptions import RankError, SpecError, StationarityError, VarcsError
from .initializer import rank_constrained_varl, reduced_rank_var1
from .model import Var1CsParams, VarLCsParams, coefficient_slices, stationarity_check

MAX_RADIUS = 0.98
MAX_TRIES = 1000
DGP_KINDS = ("var1_cs", "varl_cs", "dfm1", "dfm2", "cs_d1")


@dataclass(frozen=True)
class DgpSpec:
    """Data-generating process description.

    ``noise`` is ``None`` (identity), a scalar variance or a ``p x p``
    covariance.  ``core_scale`` is the diagonal of D for ``cs_d1``.
    """

    kind: str = "var1_cs"
    p: int = 40
    T: int = 800
    lag: int = 1
    ranks: tuple = (3,)
    d: int = 1
    sv_range: tuple = (0.8, 1.5)
    noise: object = None
    burn_in: int = 200
    seed: Optional[int] = None
    n_factors: int = 3
    factor_ar: float = 0.8
    idio_var: float = 0.5
    core_scale: float = 0.95
    row_sparsity: Optional[int] = None

    def __post_init__(self):
        if self.kind not in DGP_KINDS:
            raise SpecError(f"unknown kind {self.kind!r}; expected one of {DGP_KINDS}")
        ranks = tuple(int(r) for r in np.atleast_1d(self.ranks))
        object.__setattr__(self, "ranks", ranks)
        object.__setattr__(self, "sv_range", tuple(float(v) for v in self.sv_range))
        if self.p < 1 or self.T < 1 or self.lag < 1 or self.burn_in < 0:
            raise SpecError("p, T and lag must be positive and burn_in non-negative")
        lo, hi = self.sv_range
        if not 0 < lo <= hi:
            raise SpecError(f"singular-value range {self.sv_range} must be positive and ordered")
        if self.kind in ("var1_cs", "cs_d1"):
            r = ranks[0]
            if not 0 <= self.d <= r:
                raise SpecError(f"common dimension d={self.d} must satisfy 0 <= d <= r={r}")
            if 2 * r - self.d > self.p:
                raise SpecError(f"2r - d = {2 * r - self.d} exceeds p = {self.p}")
            s = self.row_sparsity
            if s is not None and not (r <= s and 3 * s <= self.p):
                raise SpecError(f"row_sparsity={s} needs r <= s and 3s <= p")
        if self.kind == "varl_cs":
            if len(ranks) != 3:
                raise SpecError("varl_cs needs three ranks")
            if len(set(ranks)) != 1:
                raise SpecError("varl_cs uses a super-diagonal core, so the three ranks must be equal")
            if ranks[2] > self.lag:
                raise SpecError(f"r3={ranks[2]} exceeds the lag order {self.lag}")
            if not 0 <= self.d <= ranks[0] or 2 * ranks[0] - self.d > self.p:
                raise SpecError(f"common dimension d={self.d} invalid for ranks {ranks}, p={self.p}")
        if self.kind in ("dfm1", "dfm2") and not 1 <= self.n_factors < self.p:
            raise SpecError("n_factors must lie in [1, p)")

    @classmethod
    def from_dict(cls, obj: dict) -> "DgpSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise SpecError(f"unknown DGP fields: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ranks"] = list(self.ranks)
        out["sv_range"] = list(self.sv_range)
        if isinstance(self.noise, np.ndarray):
            out["noise"] = self.noise.tolist()
        return out


# -- random factors ---------------------------------------------------------------

def random_orthonormal(p: int, k: int, rng: np.random.Generator) -> np.ndarray:
    if not 0 <= k <= p:
        raise RankError(f"cannot draw {k} orthonormal columns in dimension {p}")
    while True:
        try:
            return ta.orthonormalize(rng.standard_normal((p, k)))
        except RankError:
            continue


def random_orthonormal_complement(c: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal ``p x k`` block orthogonal to the orthonormal columns of ``c``."""
    c = np.asarray(c, dtype=float)
    p, d = c.shape
    if k > p - d:
        raise RankError(f"complement of a {d}-dimensional subspace in R^{p} has no room for {k} columns")
    if d == 0:
        return random_orthonormal(p, k, rng)
    while True:
        z = rng.standard_normal((p, k))
        z -= c @ (c.T @ z)
        try:
            q = ta.orthonormalize(z)
        except RankError:
            continue
        # second projection removes the round-off left by the first
        q -= c @ (c.T @ q)
        return ta.orthonormalize(q)


def _cs_factors(p, r, d, rng, row_sparsity=None):
    if row_sparsity is None:
        q = random_orthonormal(p, 2 * r - d, rng)
        return q[:, :d], q[:, d:r], q[:, r:]
    # disjoint row supports make the blocks orthogonal automatically
    s = row_sparsity
    rows = rng.permutation(p)[:3 * s]
    blocks = []
    for i, k in enumerate((d, r - d, r - d)):
        m = np.zeros((p, k))
        if k:
            m[np.sort(rows[i * s:(i + 1) * s])] = _active_rows(s, k, rng)
        blocks.append(m)
    return tuple(blocks)


def _active_rows(s, k, rng, floor=0.5):
    """Orthonormal ``s x k`` block whose row norms are all at least ``floor * sqrt(k / s)``."""
    for _ in range(MAX_TRIES):
        q = random_orthonormal(s, k, rng)
        if np.linalg.norm(q, axis=1).min() >= floor * math.sqrt(k / s):
            return q
    raise StationarityError("could not draw active rows with the required minimum strength")


def make_var1_cs_dgp(spec: DgpSpec, rng: np.random.Generator, max_tries: int = MAX_TRIES):
    """Draw ``A = [C R] O1' S O2 [C P]'`` until its spectral radius is below 0.98.

    The returned truth has orthonormal ``[C R]`` and ``[C P]`` and core ``O1' S O2``.
    """
    r, d = spec.ranks[0], spec.d
    lo, hi = spec.sv_range
    for _ in range(max_tries):
        c, rr, pp = _cs_factors(spec.p, r, d, rng, spec.row_sparsity)
        o1 = random_orthonormal(r, r, rng)
        o2 = random_orthonormal(r, r, rng)
        s = np.diag(rng.uniform(lo, hi, size=r))
        truth = Var1CsParams(c=c, r=rr, p_=pp, d_core=o1.T @ s @ o2)
        a = truth.coefficient()
        if ta.spectral_radius(a) < MAX_RADIUS:
            return truth, a
    raise StationarityError(f"no stationary draw in {max_tries} attempts; the spec is likely infeasible")


def make_varl_cs_dgp(spec: DgpSpec, rng: np.random.Generator, max_tries: int = MAX_TRIES):
    """Draw ``G x1 [C R] x2 [C P] x3 L`` with ``G = S x1 O1 x2 O2 x3 O3`` and ``S`` super-diagonal."""
    r1, r2, r3 = spec.ranks
    d = spec.d
    lo, hi = spec.sv_range
    for _ in range(max_tries):
        c, rr, pp = _cs_factors(spec.p, r1, d, rng)
        l = random_orthonormal(spec.lag, r3, rng)
        s = np.zeros((r1, r2, r3))
        idx = np.arange(r1)
        s[idx, idx, idx] = rng.uniform(lo, hi, size=r1)
        os_ = [random_orthonormal(r, r, rng) for r in (r1, r2, r3)]
        g = ta.tucker_to_tensor(s, *os_)
        truth = VarLCsParams(c=c, r=rr, p_=pp, l=l, g=g)
        t = truth.coefficient()
        if stationarity_check(coefficient_slices(t)) < MAX_RADIUS:
            return truth, t
    raise StationarityError(f"no stationary draw in {max_tries} attempts; the spec is likely infeasible")


# -- simulation ---------------------------------------------------------------------

def _noise_factor(noise, p):
    if noise is None:
        return None
    if np.isscalar(noise):
        if noise < 0:
            raise SpecError("noise variance must be non-negative")
        return math.sqrt(float(noise))
    cov = np.asarray(noise, dtype=float)
    if cov.shape != (p, p):
        raise SpecError(f"noise covariance must be {p}x{p}")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # allow singular covariances through a symmetric square root
        w, v = np.linalg.eigh(0.5 * (cov + cov.T))
        if w.min() < -1e-10 * max(w.max(), 1.0):
            raise SpecError("noise covariance is not positive semi-definite")
        return v * np.sqrt(np.clip(w, 0, None))


def draw_noise(noise, p: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``p x n`` Gaussian innovations with the requested covariance."""
    z = rng.standard_normal((p, n))
    f = _noise_factor(noise, p)
    if f is None:
        return z
    if np.isscalar(f):
        return f * z
    return f @ z


def simulate(coefficients, T: int, noise=None, burn_in: int = 200, rng: np.random.Generator = None,
             innovations: np.ndarray = None) -> np.ndarray:
    """Simulate ``y_t = sum_k A_k y_{t-k} + e_t`` from a zero start.

    ``coefficients`` is a ``p x p`` matrix or a ``p x p x lag`` tensor.  The
    first ``burn_in`` values are discarded and ``T + lag`` observations are
    returned as a ``p x (T + lag)`` panel.  ``innovations`` may supply the
    ``p x (burn_in + T + lag)`` noise directly.
    """
    slices = coefficient_slices(np.asarray(coefficients, dtype=float))
    p, lag = slices[0].shape[0], len(slices)
    if T < 1:
        raise ValueError("T must be at least 1")
    rho = stationarity_check(slices)
    if rho >= 1.0:
        raise StationarityError(f"coefficients are not stationary (spectral radius {rho:.6g})")
    n = burn_in + T + lag
    if innovations is None:
        rng = rng if rng is not None else np.random.default_rng()
        innovations = draw_noise(noise, p, n, rng)
    elif innovations.shape != (p, n):
        raise ValueError(f"innovations must have shape {(p, n)}")
    y = np.zeros((p, n + lag))
    stacked = np.hstack(slices)
    for t in range(lag, n + lag):
        past = y[:, t - lag:t][:, ::-1].ravel(order="F")
        y[:, t] = stacked @ past + innovations[:, t - lag]
    return y[:, lag + burn_in:]


@dataclass
class FactorDgp:
    """Generative state for the factor-model and common-subspace comparison designs."""

    kind: str
    p: int
    loading: Optional[np.ndarray] = None
    transition: Optional[np.ndarray] = None
    complement: Optional[np.ndarray] = None
    idio_var: float = 0.5
    truth: Optional[Var1CsParams] = None

    @property
    def var_coefficient(self) -> Optional[np.ndarray]:
        """Exact VAR(1) coefficient when the design has one (``dfm2`` and ``cs_d1``)."""
        if self.kind == "cs_d1":
            return self.truth.coefficient()
        if self.kind == "dfm2":
            return self.loading @ self.transition @ self.loading.T
        return None

    @property
    def factor_space(self) -> np.ndarray:
        """Orthonormal basis of the true factor (response) space."""
        if self.kind == "cs_d1":
            return self.truth.left
        return self.loading

    def simulate(self, T: int, rng: np.random.Generator, burn_in: int = 200) -> np.ndarray:
        """``p x (T + 1)`` panel."""
        if self.kind == "cs_d1":
            return simulate(self.truth.coefficient(), T, None, burn_in, rng)
        k = self.loading.shape[1]
        n = burn_in + T + 1
        xi = rng.standard_normal((k, n))
        f = np.zeros((k, n))
        prev = np.zeros(k)
        for t in range(n):
            prev = self.transition @ prev + xi[:, t]
            f[:, t] = prev
        if self.kind == "dfm1":
            eps = math.sqrt(self.idio_var) * rng.standard_normal((self.p, n))
        else:
            eps = self.complement @ (math.sqrt(self.idio_var) * rng.standard_normal((self.complement.shape[1], n)))
        y = self.loading @ f + eps
        return y[:, burn_in:]

    def conditional_mean(self, panel: np.ndarray) -> np.ndarray:
        """``E[y_{T+1} | y_1, ..., y_T]`` for the last column ``y_T`` of ``panel``."""
        panel = np.asarray(panel, dtype=float)
        if self.kind != "dfm1":
            return self.var_coefficient @ panel[:, -1]
        return self.loading @ (self.transition @ self._filter(panel))

    def _filter(self, panel):
        """Kalman-filtered factor mean at the last time point (stationary prior)."""
        lam, b = self.loading, self.transition
        k = lam.shape[1]
        info_obs = lam.T @ lam / self.idio_var
        m = np.zeros(k)
        # stationary factor covariance solves S = B S B' + I
        s = np.linalg.solve(np.eye(k * k) - np.kron(b, b), np.eye(k).ravel()).reshape(k, k)
        cov_pred = s
        for t in range(panel.shape[1]):
            prec_pred = np.linalg.inv(cov_pred)
            cov_post = np.linalg.inv(prec_pred + info_obs)
            m = cov_post @ (prec_pred @ (b @ m if t else m) + lam.T @ panel[:, t] / self.idio_var)
            cov_pred = b @ cov_post @ b.T + np.eye(k)
        return m


def make_dgp123(spec: DgpSpec, rng: np.random.Generator) -> FactorDgp:
    """Factor-model designs ``dfm1``/``dfm2`` and the common-subspace design ``cs_d1``."""
    p = spec.p
    if spec.kind == "cs_d1":
        r, d = spec.ranks[0], spec.d
        for _ in range(MAX_TRIES):
            c, rr, pp = _cs_factors(p, r, d, rng)
            truth = Var1CsParams(c=c, r=rr, p_=pp, d_core=spec.core_scale * np.eye(r))
            if ta.spectral_radius(truth.coefficient()) < MAX_RADIUS:
                return FactorDgp(kind="cs_d1", p=p, truth=truth)
        raise StationarityError("cs_d1 core scale gives no stationary draw")
    if spec.kind not in ("dfm1", "dfm2"):
        raise SpecError(f"make_dgp123 does not handle kind {spec.kind!r}")
    k = spec.n_factors
    q = random_orthonormal(p, p, rng) if spec.kind == "dfm2" else random_orthonormal(p, k, rng)
    lam = q[:, :k]
    comp = q[:, k:] if spec.kind == "dfm2" else None
    return FactorDgp(
        kind=spec.kind, p=p, loading=lam, transition=spec.factor_ar * np.eye(k),
        complement=comp, idio_var=spec.idio_var,
    )


# -- factor-model baseline -----------------------------------------------------------

@dataclass
class DfmVarFit:
    """Loadings, factor VAR and the implied VAR on the observed series."""

    loading: np.ndarray
    factor_coef: np.ndarray
    n_factors: int
    lag: int
    eigenvalues: np.ndarray

    def coefficient(self) -> np.ndarray:
        """Implied ``p x p x lag`` coefficients ``Lambda B_k Lambda'`` (a ``p x p`` matrix for lag 1)."""
        r = self.n_factors
        slices = [self.loading @ self.factor_coef[:, k * r:(k + 1) * r] @ self.loading.T for k in range(self.lag)]
        return slices[0] if self.lag == 1 else np.stack(slices, axis=2)

    def forecast(self, history: np.ndarray, h: int = 1) -> np.ndarray:
        from .forecaster import forecast

        return forecast(self.coefficient(), history, h)


def _autocov(panel, k):
    n = panel.shape[1]
    return panel[:, k:] @ panel[:, :n - k].T / n


def eigen_ratio_count(eigenvalues, upper: int) -> int:
    """Eigenvalue-ratio factor count ``argmin_{i <= upper} lambda_{i+1} / lambda_i``."""
    w = np.asarray(eigenvalues, dtype=float)
    upper = min(upper, w.size - 1)
    if upper < 1:
        return 1
    floor = np.finfo(float).tiny
    ratios = w[1:upper + 1] / np.maximum(w[:upper], floor)
    return int(np.argmin(ratios)) + 1


def dfm_var_baseline(panel: np.ndarray, r: Optional[int] = None, lag: int = 1, k0: int = 2,
                     r_max: int = 10) -> DfmVarFit:
    """Autocovariance-eigen factor loadings, projected factors and an OLS VAR on the factors.

    ``panel`` is ``p x N``.  With ``r=None`` the factor count comes from the
    eigenvalue ratio with upper bound ``r_max``.
    """
    panel = np.asarray(panel, dtype=float)
    p, n = panel.shape
    if n <= k0 + lag:
        raise ValueError("panel too short for the requested autocovariance lags")
    m = np.zeros((p, p))
    for k in range(1, k0 + 1):
        s = _autocov(panel, k)
        m += s @ s.T
    w, vecs = np.linalg.eigh(m)
    order = np.argsort(w)[::-1]
    w = w[order]
    if not w[0] > 0:
        raise VarcsError("degenerate autocovariance: all eigenvalues are zero")
    if r is None:
        r = eigen_ratio_count(w, min(r_max, p - 1))
    if not 1 <= r <= p:
        raise RankError(f"factor count {r} must lie in [1, {p}]")
    loading, _ = ta._sign_fix(vecs[:, order[:r]])
    factors = loading.T @ panel
    fy, fx = lagged_design(factors, lag)
    coef = Problem(fy, fx).a_ls
    return DfmVarFit(loading=loading, factor_coef=coef, n_factors=r, lag=lag, eigenvalues=w)


# -- Monte-Carlo harness ---------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    """A grid of Monte-Carlo cells over ``T_values x d_values``."""

    name: str = "experiment"
    kind: str = "var1_cs"
    p: int = 40
    T_values: tuple = (800,)
    d_values: tuple = (0,)
    lag: int = 1
    ranks: tuple = (3,)
    reps: int = 100
    seed: int = 0
    methods: tuple = ("cs", "rr")
    r_bar: object = None
    sv_range: tuple = (0.8, 1.5)
    burn_in: int = 200
    step_size: float = 0.01
    max_iters: int = 500
    rel_tol: float = 1e-6
    core_scale: float = 0.95

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise SpecError(f"unknown experiment fields: {sorted(unknown)}")
        vals = dict(obj)
        for key in ("T_values", "d_values", "ranks", "methods", "sv_range"):
            if key in vals:
                vals[key] = tuple(vals[key])
        if isinstance(vals.get("r_bar"), list):
            vals["r_bar"] = tuple(vals["r_bar"])
        spec = cls(**vals)
        spec.dgp(spec.T_values[0], spec.d_values[0])  # validates the design
        return spec

    @classmethod
    def load(cls, path_or_name: str) -> "ExperimentSpec":
        """Read a JSON file, or a packaged experiment such as ``"table1_desk"``."""
        if os.path.exists(path_or_name):
            with open(path_or_name) as fh:
                return cls.from_dict(json.load(fh))
        res = resources.files("varcs").joinpath("experiments", f"{path_or_name}.json")
        if not res.is_file():
            raise SpecError(f"no experiment file or packaged experiment named {path_or_name!r}")
        return cls.from_dict(json.loads(res.read_text()))

    def dgp(self, T: int, d: int) -> DgpSpec:
        return DgpSpec(
            kind=self.kind, p=self.p, T=T, lag=self.lag, ranks=self.ranks, d=d,
            sv_range=self.sv_range, burn_in=self.burn_in, core_scale=self.core_scale,
        )

    def gd_config(self) -> GdConfig:
        return GdConfig(step_size=self.step_size, max_iters=self.max_iters, rel_tol=self.rel_tol)


CELL_METRICS = ("est_error", "pred_error", "space_error")


@dataclass
class McSummary:
    """Per-(method, T, d) aggregates plus the raw replication records."""

    name: str
    cells: list
    records: list = field(default_factory=list, repr=False)

    def cell(self, method: str, T: int, d: int) -> dict:
        for c in self.cells:
            if c["method"] == method and c["T"] == T and c["d"] == d:
                return c
        raise KeyError((method, T, d))

    def write_csv(self, path: str):
        cols = list(self.cells[0].keys()) if self.cells else []
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for c in self.cells:
                w.writerow([_fmt(c[k]) for k in cols])


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else format(v, ".17g")
    return str(v)


def _rep_rng(seed: int, cell: int, rep: int) -> np.random.Generator:
    # counter-based stream keyed by (cell, rep): independent of scheduling
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(cell, rep))
    return np.random.Generator(np.random.Philox(ss))


def _frob(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


def run_replication(spec: ExperimentSpec, T: int, d: int, cell: int, rep: int) -> list:
    """One replication of one cell; returns a record per method."""
    from .selector import SelectionConfig, select_pipeline, select_rank_var1, select_ranks_varl

    rng = _rep_rng(spec.seed, cell, rep)
    dgp = spec.dgp(T, d)
    sel_cfg = SelectionConfig(r_bar=spec.r_bar, gd=spec.gd_config())
    base = {"T": T, "d": d, "rep": rep}
    out = []

    def failed(method, exc):
        return dict(base, method=method, ok=False, error=f"{type(exc).__name__}: {exc}")

    if spec.kind in ("var1_cs", "varl_cs"):
        if spec.kind == "var1_cs":
            truth, coef = make_var1_cs_dgp(dgp, rng)
        else:
            truth, coef = make_varl_cs_dgp(dgp, rng)
        panel = simulate(coef, T, None, spec.burn_in, rng)
        true_ranks = tuple(spec.ranks)
        sel = None
        if "cs" in spec.methods:
            try:
                sel, fit = select_pipeline(panel, spec.lag, sel_cfg)
                out.append(dict(
                    base, method="cs", ok=True, ranks=list(sel.ranks), d_hat=sel.common_dim,
                    rank_ok=tuple(sel.ranks) == true_ranks, d_ok=sel.common_dim == d,
                    est_error=_frob(fit.coefficient, coef),
                ))
            except (VarcsError, np.linalg.LinAlgError) as exc:
                out.append(failed("cs", exc))
        if "rr" in spec.methods:
            try:
                prob = Problem.from_series(panel, spec.lag)
                if spec.lag == 1:
                    y, x = lagged_design(panel, 1)
                    r_hat = sel.ranks[0] if sel is not None else select_rank_var1(y, x, sel_cfg, prob)[0]
                    est = reduced_rank_var1(y, x, r_hat, problem=prob).a_hat
                    ranks = (r_hat,)
                else:
                    ranks = sel.ranks if sel is not None else select_ranks_varl(panel, spec.lag, sel_cfg, prob)[0]
                    est = rank_constrained_varl(panel, ranks, problem=prob).tensor
                out.append(dict(
                    base, method="rr", ok=True, ranks=list(ranks), rank_ok=tuple(ranks) == true_ranks,
                    est_error=_frob(est, coef),
                ))
            except (VarcsError, np.linalg.LinAlgError) as exc:
                out.append(failed("rr", exc))
        return out

    state = make_dgp123(dgp, rng)
    panel = state.simulate(T, rng, spec.burn_in)
    target = state.conditional_mean(panel)
    truth_coef = state.var_coefficient
    space = state.factor_space
    proj_true = space @ space.T
    if "cs" in spec.methods:
        try:
            sel, fit = select_pipeline(panel, 1, sel_cfg)
            a_hat = fit.coefficient
            rec = dict(
                base, method="cs", ok=True, ranks=list(sel.ranks), d_hat=sel.common_dim,
                pred_error=float(np.linalg.norm(a_hat @ panel[:, -1] - target)),
                space_error=_frob(ta.span_projector(fit.params.left), proj_true),
            )
            if truth_coef is not None:
                rec["est_error"] = _frob(a_hat, truth_coef)
            out.append(rec)
        except (VarcsError, np.linalg.LinAlgError) as exc:
            out.append(failed("cs", exc))
    if "dfm" in spec.methods:
        try:
            r_max = spec.r_bar if isinstance(spec.r_bar, int) else min(10, spec.p)
            dfm = dfm_var_baseline(panel, None, 1, r_max=r_max)
            a_hat = dfm.coefficient()
            rec = dict(
                base, method="dfm", ok=True, ranks=[dfm.n_factors],
                pred_error=float(np.linalg.norm(a_hat @ panel[:, -1] - target)),
                space_error=_frob(dfm.loading @ dfm.loading.T, proj_true),
            )
            if truth_coef is not None:
                rec["est_error"] = _frob(a_hat, truth_coef)
            out.append(rec)
        except (VarcsError, np.linalg.LinAlgError) as exc:
            out.append(failed("dfm", exc))
    return out


def _run_task(args):
    return run_replication(*args)


def _quantiles(vals):
    if not vals:
        return float("nan"), float("nan"), float("nan")
    q = np.quantile(np.asarray(vals, dtype=float), [0.25, 0.5, 0.75])
    return float(q[0]), float(q[1]), float(q[2])


def summarize(name: str, spec: ExperimentSpec, records: list) -> McSummary:
    cells = []
    for T in spec.T_values:
        for d in spec.d_values:
            for method in spec.methods:
                recs = [r for r in records if r["T"] == T and r["d"] == d and r["method"] == method]
                ok = [r for r in recs if r["ok"]]
                row = {"method": method, "T": T, "d": d, "n_reps": len(recs), "n_failed": len(recs) - len(ok)}
                n = max(len(recs), 1)
                row["rank_correct_pct"] = (
                    100.0 * sum(bool(r.get("rank_ok")) for r in ok) / n if any("rank_ok" in r for r in ok) else float("nan")
                )
                row["d_correct_pct"] = (
                    100.0 * sum(bool(r.get("d_ok")) for r in ok) / n if any("d_ok" in r for r in ok) else float("nan")
                )
                for metric in CELL_METRICS:
                    q25, q50, q75 = _quantiles([r[metric] for r in ok if metric in r])
                    row[f"{metric}_q25"], row[f"{metric}_median"], row[f"{metric}_q75"] = q25, q50, q75
                cells.append(row)
    return McSummary(name=name, cells=cells, records=records)


def default_jobs() -> int:
    env = os.environ.get("VARCS_JOBS")
    if env:
        return max(1, int(env))
    return 1


def run_experiment(spec: ExperimentSpec, reps: Optional[int] = None, jobs: Optional[int] = None) -> McSummary:
    """Run every cell of ``spec``; replication failures are counted, not fatal.

    Each replication draws from its own counter-based stream keyed by
    ``(seed, cell, rep)``, so the summary does not depend on ``jobs``.
    """
    reps = spec.reps if reps is None else reps
    if reps < 1:
        raise ValueError("reps must be at least 1")
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    tasks = []
    cell = 0
    for T in spec.T_values:
        for d in spec.d_values:
            tasks.extend((spec, T, d, cell, rep) for rep in range(reps))
            cell += 1
    if jobs == 1:
        results = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    records = [rec for batch in results for rec in batch]
    return summarize(spec.name, spec, records)

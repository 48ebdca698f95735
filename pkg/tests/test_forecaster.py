import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varcs.exceptions import ShapeError
from varcs.forecaster import Choice, RollingSpec, forecast, rolling_evaluate
from varcs.model import companion
from varcs.simulator import random_orthonormal

from conftest import random_var1_params


def test_zero_model_forecasts_zero(rng):
    out = forecast(np.zeros((3, 3)), rng.standard_normal((3, 5)), 4)
    assert out.shape == (3, 4) and np.all(out == 0)


def test_scalar_geometric():
    assert np.allclose(forecast(np.array([[0.5]]), np.array([[7.0, 2.0]]), 3), [[1.0, 0.5, 0.25]])


def test_var2_matches_companion_power(rng):
    a1, a2 = 0.3 * rng.standard_normal((3, 3)), 0.2 * rng.standard_normal((3, 3))
    hist = rng.standard_normal((3, 6))
    out = forecast(np.stack([a1, a2], axis=2), hist, 2)
    comp = companion([a1, a2])
    state = np.concatenate([hist[:, -1], hist[:, -2]])
    for h in (1, 2):
        assert np.allclose(out[:, h - 1], (np.linalg.matrix_power(comp, h) @ state)[:3])


def test_insufficient_history():
    with pytest.raises(ShapeError):
        forecast(np.zeros((2, 2, 3)), np.zeros((2, 2)), 1)
    with pytest.raises(ValueError):
        forecast(np.zeros((2, 2)), np.zeros((2, 2)), 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_forecasts_are_gauge_invariant(seed):
    rng = np.random.default_rng(seed)
    prm = random_var1_params(rng, p=6, r=3, d=1, scale=0.3)
    o_r, o_p = random_orthonormal(2, 2, rng), random_orthonormal(2, 2, rng)
    lr = np.block([[np.eye(1), np.zeros((1, 2))], [np.zeros((2, 1)), o_r]])
    rr = np.block([[np.eye(1), np.zeros((1, 2))], [np.zeros((2, 1)), o_p]])
    moved = prm.replace(r=prm.r @ o_r, p_=prm.p_ @ o_p, d_core=lr.T @ prm.d_core @ rr)
    hist = rng.standard_normal((6, 3))
    assert np.allclose(forecast(prm, hist, 3), forecast(moved, hist, 3), atol=1e-12)


def _fixed_method(coef):
    def method(train, lag, cfg, choice=None):
        return coef, Choice((1,))
    return method


def test_bookkeeping_origins_horizons_and_training_windows(rng):
    panel = rng.standard_normal((4, 194))
    seen = []

    def spy(train, lag, cfg, choice=None):
        seen.append(train.shape[1])
        return np.zeros((4, 4)), Choice((1,))

    spec = RollingSpec(first_origin=162, last_origin=191)
    res = rolling_evaluate(panel, spec, {"spy": spy})
    assert seen == list(range(162, 192))
    tab = res.table()
    assert set(tab) == {("spy", h) for h in (1, 2, 3)}
    assert all(r["n_origins"] == 30 for r in res.rows)
    for h in (1, 2, 3):
        expected = np.mean([np.linalg.norm(panel[:, t + h - 1]) for t in range(162, 192)])
        assert tab[("spy", h)] == pytest.approx(expected)


def test_targets_past_the_end_are_skipped(rng):
    panel = rng.standard_normal((2, 50))
    res = rolling_evaluate(panel, RollingSpec(first_origin=45, last_origin=49), {"z": _fixed_method(np.zeros((2, 2)))})
    counts = {r["horizon"]: r["n_origins"] for r in res.rows}
    assert counts == {1: 5, 2: 4, 3: 3}


def test_no_leakage_canary(rng):
    panel = rng.standard_normal((3, 60))
    canary = 1e9

    def guarded(train, lag, cfg, choice=None):
        assert not np.any(train == canary)
        return 0.1 * np.eye(3), Choice((1,))

    for t in range(40, 50):
        p = panel.copy()
        p[:, t:] = canary
        res = rolling_evaluate(p, RollingSpec(first_origin=t, last_origin=t, horizons=(1,)), {"g": guarded})
        assert not res.failures


def test_single_origin_equals_direct_error(rng):
    a = 0.4 * np.eye(3)
    panel = rng.standard_normal((3, 30))
    res = rolling_evaluate(panel, RollingSpec(first_origin=20, last_origin=20, horizons=(1,)), {"a": _fixed_method(a)})
    assert res.table()[("a", 1)] == pytest.approx(np.linalg.norm(a @ panel[:, 19] - panel[:, 20]))


def test_perfect_foresight_on_noiseless_panel():
    a = np.array([[0.0, -0.9], [0.9, 0.0]])
    panel = np.zeros((2, 40))
    panel[:, 0] = [1.0, 2.0]
    for t in range(1, 40):
        panel[:, t] = a @ panel[:, t - 1]
    res = rolling_evaluate(panel, RollingSpec(first_origin=10, last_origin=30), {"a": _fixed_method(a)})
    assert max(res.table().values()) < 1e-12


def test_default_methods_table_shape(rng):
    from varcs.simulator import DgpSpec, make_dgp123

    state = make_dgp123(DgpSpec(kind="cs_d1", p=12, T=10, ranks=(2,), d=1), rng)
    panel = state.simulate(260, rng, 100)
    spec = RollingSpec(first_origin=255, last_origin=258, reselect_each_origin=False)
    res = rolling_evaluate(panel, spec)
    assert {m for m, _ in res.table()} == {"VAR-CS", "VAR-RR", "DFM-VAR"}
    assert len(res.rows) == 9
    assert not res.failures


def test_failures_are_recorded(rng):
    def broken(train, lag, cfg, choice=None):
        raise np.linalg.LinAlgError("boom")

    res = rolling_evaluate(rng.standard_normal((2, 20)), RollingSpec(first_origin=10, last_origin=12), {"b": broken})
    assert len(res.failures) == 3
    assert all(np.isnan(r["mean_error"]) and r["n_origins"] == 0 for r in res.rows)


def test_spec_validation():
    with pytest.raises(ValueError):
        RollingSpec(first_origin=5, last_origin=50).validate(20)
    with pytest.raises(ValueError):
        RollingSpec(first_origin=5, last_origin=6, horizons=(0,)).validate(20)


def test_csv_columns(tmp_path, rng):
    res = rolling_evaluate(rng.standard_normal((2, 20)), RollingSpec(first_origin=10, last_origin=12),
                           {"z": _fixed_method(np.zeros((2, 2)))})
    path = tmp_path / "r.csv"
    res.write_csv(str(path))
    assert path.read_text().splitlines()[0] == "method,horizon,mean_error,n_origins"

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varcs import tensor as ta
from varcs.exceptions import RankError, ShapeError

dims = st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4))


def _tensor(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


@settings(max_examples=40, deadline=None)
@given(dims, st.integers(0, 10_000), st.sampled_from([1, 2, 3]))
def test_fold_inverts_unfold(shape, seed, mode):
    t = _tensor(shape, seed)
    assert np.array_equal(ta.fold(ta.unfold(t, mode), mode, shape), t)


def test_unfold_layout_matches_lag_blocks(rng):
    t = rng.standard_normal((3, 3, 2))
    assert np.array_equal(ta.unfold(t, 1), np.hstack([t[:, :, 0], t[:, :, 1]]))
    assert np.array_equal(ta.unfold(t, 2), np.hstack([t[:, :, 0].T, t[:, :, 1].T]))


def test_unfold_hand_example():
    t = np.arange(8).reshape((2, 2, 2), order="F")
    assert ta.unfold(t, 1).tolist() == [[0, 2, 4, 6], [1, 3, 5, 7]]
    assert ta.unfold(t, 3).tolist() == [[0, 1, 2, 3], [4, 5, 6, 7]]


@settings(max_examples=30, deadline=None)
@given(dims, st.integers(0, 10_000))
def test_tucker_unfolding_identities(shape, seed):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(shape)
    us = [rng.standard_normal((n + 1, n)) for n in shape]
    t = ta.tucker_to_tensor(g, *us)
    u1, u2, u3 = us
    assert np.allclose(ta.unfold(t, 1), u1 @ ta.unfold(g, 1) @ np.kron(u3, u2).T)
    assert np.allclose(ta.unfold(t, 2), u2 @ ta.unfold(g, 2) @ np.kron(u3, u1).T)
    assert np.allclose(ta.unfold(t, 3), u3 @ ta.unfold(g, 3) @ np.kron(u2, u1).T)


@settings(max_examples=30, deadline=None)
@given(dims, st.integers(0, 10_000), st.sampled_from([1, 2, 3]))
def test_mode_product_matches_unfolded_product(shape, seed, mode):
    rng = np.random.default_rng(seed)
    t = rng.standard_normal(shape)
    m = rng.standard_normal((3, shape[mode - 1]))
    out = ta.mode_product(t, m, mode)
    assert np.allclose(ta.unfold(out, mode), m @ ta.unfold(t, mode))


def test_mode_products_on_distinct_modes_commute(rng):
    t = rng.standard_normal((3, 4, 2))
    a, b = rng.standard_normal((5, 3)), rng.standard_normal((2, 4))
    lhs = ta.mode_product(ta.mode_product(t, a, 1), b, 2)
    rhs = ta.mode_product(ta.mode_product(t, b, 2), a, 1)
    assert np.allclose(lhs, rhs)


def test_mode_product_shape_error(rng):
    with pytest.raises(ShapeError):
        ta.mode_product(rng.standard_normal((2, 3, 4)), np.eye(2), 2)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_hosvd_recovers_exact_low_rank_tensor(seed):
    rng = np.random.default_rng(seed)
    ranks = (2, 2, 2)
    g = rng.standard_normal(ranks)
    us = [ta.orthonormalize(rng.standard_normal((n, 2))) for n in (5, 4, 3)]
    t = ta.tucker_to_tensor(g, *us)
    core, v1, v2, v3 = ta.hosvd(t, ranks)
    assert np.allclose(ta.tucker_to_tensor(core, v1, v2, v3), t, atol=1e-10)
    for u, v in zip(us, (v1, v2, v3)):
        assert ta.sin_theta_dist(u, v) < 1e-8


def test_hosvd_full_rank_is_lossless(rng):
    t = rng.standard_normal((3, 4, 2))
    core, u1, u2, u3 = ta.hosvd(t, t.shape)
    assert np.allclose(ta.tucker_to_tensor(core, u1, u2, u3), t)


def test_svd_signs_are_deterministic(rng):
    m = rng.standard_normal((6, 4))
    a, b = ta.svd(m), ta.svd(-m)
    assert np.allclose(a.u, b.u)
    assert np.allclose(a.v, -b.v)
    assert np.allclose(a.u * a.s @ a.v.T, m)
    idx = np.argmax(np.abs(a.u), axis=0)
    assert np.all(a.u[idx, np.arange(4)] > 0)


def test_svd_rejects_nan():
    with pytest.raises(ValueError):
        ta.svd(np.array([[1.0, np.nan]]))


def test_top_k_eigvecs_symmetrizes_and_orders():
    m = np.diag([1.0, 3.0, 2.0])
    v = ta.top_k_eigvecs_sym(m, 2)
    assert np.allclose(np.abs(v), np.eye(3)[:, [1, 2]])
    assert ta.top_k_eigvecs_sym(m, 0).shape == (3, 0)


def test_orthonormalize_detects_rank_deficiency():
    m = np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]])
    with pytest.raises(RankError):
        ta.orthonormalize(m)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000))
def test_orthonormalize_spans_input(p, seed):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((p, max(1, p // 2)))
    q = ta.orthonormalize(m)
    assert np.allclose(q.T @ q, np.eye(q.shape[1]), atol=1e-12)
    assert np.allclose(ta.projector(q) @ m, m)


def test_sin_theta_extremes():
    e = np.eye(2)
    assert ta.sin_theta_dist(e[:, :1], e[:, :1]) == pytest.approx(0.0)
    assert ta.sin_theta_dist(e[:, :1], e[:, 1:]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ta.sin_theta_dist(2 * e[:, :1], e[:, :1])


def test_spectral_radius_rotation():
    th = 0.3
    rot = 0.9 * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    assert ta.spectral_radius(rot) == pytest.approx(0.9)


def test_solve_psd_singular_falls_back_to_pinv():
    m = np.diag([2.0, 0.0])
    x = ta.solve_psd(m, np.array([4.0, 0.0]))
    assert np.allclose(x, [2.0, 0.0])


def test_pinv_drops_tiny_singular_values():
    m = np.diag([1.0, 1e-12])
    assert np.allclose(ta.pinv(m), np.diag([1.0, 0.0]))

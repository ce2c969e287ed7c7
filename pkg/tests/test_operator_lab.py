import numpy as np
import pytest

from nngp_gauge import operator_lab as ol
from nngp_gauge.kernel_engine import limit_kernel
from nngp_gauge.net_sampler import NetworkConfig, draw_cond_covs
from nngp_gauge.stein_gauge import bures_w2


def test_grid_weights_cover_ball_volume():
    g = ol.Grid((0.5, 1.0), 0.7, 40)
    assert g.weights.sum() == pytest.approx(np.pi * 0.49, rel=1e-14)
    assert np.all(np.linalg.norm(g.nodes - [0.5, 1.0], axis=1) < 0.7)
    assert not g.contains_origin and ol.Grid((0.1,), 0.5, 4).contains_origin
    assert ol.Grid.from_dict(g.to_dict()).digest() == g.digest()
    g1 = ol.Grid((0.5, 1.0), 0.7, 8, order=1)
    assert g1.input_set().n_columns == 3 * g1.size
    with pytest.raises(ValueError):
        ol.Grid((0.0,), -1.0, 4)


def test_constant_kernel_is_rank_one():
    g = ol.Grid((0.0, 0.0, 2.0), 1.0, 10)
    op = ol.discretize(np.full((g.size, g.size), 3.0), g)
    lam = op.eigenvalues()
    vol = 4 / 3 * np.pi
    assert lam[0] == pytest.approx(3 * vol, rel=1e-12)
    assert np.max(np.abs(lam[1:])) < 1e-10
    assert op.trace == pytest.approx(3 * vol, rel=1e-12)


def _min_kernel_op(per_axis):
    g = ol.Grid((0.5,), 0.5, per_axis)
    x = g.nodes[:, 0]
    return ol.discretize(np.minimum.outer(x, x), g)


def test_min_kernel_eigenvalues_refine():
    coarse = _min_kernel_op(512).eigenvalues()[:10]
    fine = _min_kernel_op(2048).eigenvalues()[:10]
    np.testing.assert_allclose(coarse, fine, rtol=1e-3)
    exact = 1 / ((np.arange(1, 11) - 0.5) ** 2 * np.pi ** 2)
    np.testing.assert_allclose(fine, exact, rtol=1e-4)


def test_min_kernel_square_root_spectrum_is_not_summable():
    rep = ol.eigen_summability(_min_kernel_op(256))
    assert rep["fit"]["gamma"] == pytest.approx(2.0, abs=0.1)
    assert rep["non_summable_flag"]
    ps = rep["partial_sums"]
    assert ps[64] < ps[128] < ps[256]


def test_traces_agree_three_ways():
    cfg = NetworkConfig.uniform(2, 2, 8, "relu", c_w=2.0, c_b=0.1)
    g = ol.Grid((1.0, 0.5), 0.4, 12)
    op = ol.limit_operator(cfg, g)
    diag = np.diag(limit_kernel(cfg, g.input_set()).output)
    direct = float(np.sum(g.weights * diag))
    assert op.trace == pytest.approx(direct, rel=1e-10)
    assert op.eigenvalues().sum() == pytest.approx(direct, rel=1e-8)


def test_limit_operator_origin_and_shape_checks():
    cfg = NetworkConfig.uniform(1, 1, 8, "tanh")
    with pytest.raises(ValueError, match="origin"):
        ol.limit_operator(cfg, ol.Grid((0.2,), 0.5, 8), require_origin_free=True)
    with pytest.raises(ValueError):
        ol.limit_operator(cfg, ol.Grid((1.0, 1.0), 0.5, 4))


def test_discretize_rejects_bad_kernels():
    g = ol.Grid((1.0,), 0.5, 4)
    k = np.eye(4)
    k[0, 1] = 0.5
    with pytest.raises(ValueError, match="symmetric"):
        ol.discretize(k, g)
    with pytest.raises(ValueError, match="PSD"):
        ol.discretize(-np.eye(4), g)
    with pytest.raises(ValueError):
        ol.discretize(np.eye(3), g)


def test_powers_stormer_examples():
    r = ol.powers_stormer([[4.0]], [[1.0]])
    assert r["lhs"] == pytest.approx(1.0)
    assert r["rhs"] == pytest.approx(np.sqrt(3) + np.sqrt(2) * 3 ** 0.25, rel=1e-14)
    assert r["rhs"] == pytest.approx(3.593, abs=5e-4)
    z = ol.powers_stormer(np.eye(3), np.eye(3))
    assert z == {"lhs": 0.0, "rhs": 0.0}
    with pytest.raises(ValueError):
        ol.powers_stormer(np.eye(2), np.eye(3))


def test_gelbrich_dominates_bures_and_d2_formula():
    g = np.random.default_rng(5)
    a, b = g.normal(size=(2, 5, 5))
    s1, s2 = a @ a.T, b @ b.T
    assert ol.gelbrich_w2(s1, s2) >= bures_w2(s1, s2)["w2"] - 1e-8
    assert ol.d2_bound(s1, s2) == pytest.approx(0.5 * np.linalg.norm(s1 - s2))


def test_functional_bound_examples():
    K = ol.DiscreteOperator(np.array([[1.0]]), np.array([1.0]))
    r = ol.functional_w2_bound(np.array([[[2.0]]]), K)
    assert r["d2_rhs"] == pytest.approx(0.5)
    assert r["w2_rhs"] == pytest.approx(1 + np.sqrt(2))
    same = ol.functional_w2_bound(np.broadcast_to(K.matrix, (5, 1, 1)), K)
    assert same["d2_rhs"] == 0.0 and same["w2_rhs"] == 0.0
    with pytest.raises(ValueError, match="grids"):
        ol.functional_w2_bound(np.zeros((3, 2, 2)), K)


def test_functional_bound_stable_under_grid_refinement():
    cfg = NetworkConfig.uniform(2, 1, 32, "tanh", c_w=1.0)
    out = []
    for m in (32, 64):
        g = ol.Grid((1.0,), 0.5, m)
        K = ol.limit_operator(cfg, g)
        # the weights sampler draws the same networks on any grid
        b = draw_cond_covs(cfg, g.input_set(), 2000, 3, "weights")
        out.append(ol.functional_w2_bound(ol.discretize_batch(b.sigma, g), K))
    for key in ("d2_rhs", "w2_rhs"):
        assert out[1][key] == pytest.approx(out[0][key], rel=0.05)


def test_coupling_examples():
    K = ol.DiscreteOperator(np.array([[4.0]]), np.array([1.0]))
    S = ol.DiscreteOperator(np.array([[1.0]]), np.array([1.0]))
    r = ol.couple_fields(K, S, 50000, 3)
    assert r["exact"] == pytest.approx(1.0)
    assert abs(r["z_score"]) < 4
    same = ol.couple_fields(K, K, 100, 3)
    assert same["mean_sq"] == 0.0 and same["exact"] == 0.0 and same["z_score"] == 0.0


def test_coupling_random_pair():
    g = np.random.default_rng(30)
    a, b = g.normal(size=(2, 30, 30)) / 6
    K = ol.DiscreteOperator(a @ a.T, np.ones(30))
    S = ol.DiscreteOperator(b @ b.T, np.ones(30))
    r = ol.couple_fields(K, S, 100000, 11)
    assert abs(r["z_score"]) < 4
    again = ol.couple_fields(K, S, 100000, 11)
    assert again == r


def test_operator_serialization_and_spectral_csv():
    op = _min_kernel_op(16)
    back = ol.DiscreteOperator.from_dict(op.to_dict())
    np.testing.assert_array_equal(back.matrix, op.matrix)
    lines = ol.spectral_csv(op).splitlines()
    assert lines[0] == "k,eigenvalue,partial_sum" and len(lines) == 17
    dec = ol.spectrum(op)
    assert dec.values[0] == pytest.approx(op.eigenvalues()[0])

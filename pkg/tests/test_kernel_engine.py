import numpy as np
import pytest

from nngp_gauge.kernel_engine import (QuadratureRule, angular_expect, gh_expect,
                                      limit_kernel, nondegeneracy_check, recursion_step,
                                      value_expectation, value_layers, variance_map)
from nngp_gauge.net_sampler import InputSet, NetworkConfig
from nngp_gauge.nonlinearity import from_spec

from oracles import arccos1, gauss2, relu_layers

X3 = np.array([[1.0, 0.5, -0.2], [0.3, -1.0, 0.8], [-0.7, 0.1, 0.4]])


def test_relu_value_layers_match_arc_cosine_recursion():
    cfg = NetworkConfig.uniform(4, 3, 16, "relu", c_w=2.0, c_b=0.1)
    got = value_layers(cfg, X3)
    ref = relu_layers(X3, 4, 2.0, 0.1)
    for g, r in zip(got, ref):
        np.testing.assert_allclose(g, r, rtol=1e-13, atol=1e-14)


def test_relu_closed_form_agrees_with_angular_quadrature():
    relu = from_spec("relu")
    s = (1.3, np.array([-1.2, -0.4, 0.0, 0.7, 1.29999]), 1.3)
    cf, _ = value_expectation(relu, *s, method="closed-form")
    q, _ = value_expectation(relu, *s, method="quadrature")
    np.testing.assert_allclose(cf, q, rtol=1e-13)
    np.testing.assert_allclose(cf, arccos1(*s), rtol=1e-12)


def test_leaky_relu_closed_form_by_decomposition():
    # leaky(u) = relu(u) - a relu(-u)
    a = 0.2
    leaky = from_spec(f"leaky_relu:{a}")
    s11, s12, s22 = 0.9, 0.35, 1.6
    ref = (1 + a * a) * arccos1(s11, s12, s22) - 2 * a * arccos1(s11, -s12, s22)
    got, method = value_expectation(leaky, s11, s12, s22)
    assert method == "closed-form"
    assert got == pytest.approx(ref, rel=1e-13)


@pytest.mark.parametrize("name", ["tanh", "gelu"])
@pytest.mark.parametrize("block", [(0.5, 0.2, 1.1), (3.0, -2.5, 2.5), (40.0, 30.0, 45.0)])
def test_smooth_value_expectation_matches_2d_quadrature(name, block):
    f = from_spec(name)
    got, method = value_expectation(f, *block)
    assert method == "quadrature"
    ref = gauss2(lambda u, v: f(u) * f(v), *block)
    assert got == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_polynomial_moments_exact():
    # E[(1 + u^2)(1 + v^2)] = 1 + s11 + s22 + s11 s22 + 2 s12^2
    p = from_spec("polynomial:1,0,1")
    s11, s12, s22 = 0.7, -0.3, 1.9
    got, method = value_expectation(p, s11, s12, s22)
    assert method == "moments"
    assert got == pytest.approx(1 + s11 + s22 + s11 * s22 + 2 * s12 ** 2, rel=1e-14)


def test_angular_and_gh_helpers():
    # E[u v 1{u > 0, v > 0}] via the two helpers agrees with the arc-cosine kernel
    s = (1.0, 0.4, 2.0)
    a = angular_expect(*s, lambda u, v: u * v * (u > 0) * (v > 0), 2)
    assert a == pytest.approx(arccos1(*s), rel=1e-13)
    g = gh_expect(*s, lambda u, v: u * v, QuadratureRule(8, adaptive=False))
    assert g == pytest.approx(0.4, rel=1e-13)


@pytest.mark.parametrize("method,rtol", [("propagation", 1e-13), ("finite-difference", 1e-7)])
def test_identity_network_is_affine_recursion(method, rtol):
    cfg = NetworkConfig.uniform(3, 3, 8, "identity", c_w=1.5, c_b=0.2)
    V = np.eye(3)[:2]
    t = limit_kernel(cfg, InputSet(X3[:2], V), derivatives=method)
    K = 0.2 + 1.5 * X3[:2] @ X3[:2].T / 3
    D = 1.5 * V @ V.T / 3
    for l in range(1, t.n_layers + 1):
        full = t.full[l - 1]
        np.testing.assert_allclose(full[:2, :2], K, rtol=1e-13)
        # derivative entries between the two directions at any pair of inputs
        np.testing.assert_allclose(full[2:4, 4:6], D[0, 1] * np.ones((2, 2)), atol=rtol)
        np.testing.assert_allclose(full[2:4, 2:4], D[0, 0] * np.ones((2, 2)), rtol=rtol)
        K, D = 0.2 + 1.5 * K, 1.5 * D


def _fd_mixed(fn, h):
    return (fn(h, h) - fn(h, -h) - fn(-h, h) + fn(-h, -h)) / (4 * h * h)


def test_relu_derivative_entries_match_differentiated_oracle():
    x, y = X3[0], X3[1]
    v, w = np.array([0.3, -0.5, 1.0]), np.array([1.0, 0.2, 0.1])
    cfg = NetworkConfig.uniform(2, 3, 8, "relu", c_w=2.0, c_b=0.05)
    t = limit_kernel(cfg, InputSet(np.stack([x, y]), np.stack([v, w])))

    def k(s, u):
        return relu_layers(np.stack([x + s * v, y + u * w]), 2, 2.0, 0.05)[-1][0, 1]

    # column of (direction j, input a) is j * 2 + a
    assert t.output[2, 5] == pytest.approx(_fd_mixed(k, 1e-4), rel=1e-6)

    def kv(s, u):
        return relu_layers(np.stack([x + s * v, y]), 2, 2.0, 0.05)[-1][0, 1]

    d1 = (kv(1e-6, 0) - kv(-1e-6, 0)) / 2e-6
    assert t.output[2, 1] == pytest.approx(d1, rel=1e-6)


@pytest.mark.parametrize("method", ["propagation", "finite-difference"])
def test_tanh_derivative_entries_match_differentiated_quadrature(method):
    x, y = np.array([0.8, -0.3]), np.array([0.2, 0.9])
    v, w = np.array([1.0, 0.5]), np.array([-0.4, 1.0])
    cfg = NetworkConfig.uniform(1, 2, 8, "tanh", c_w=1.3, c_b=0.1)
    t = limit_kernel(cfg, InputSet(np.stack([x, y]), np.stack([v, w])), derivatives=method)

    def k(s, u):
        a, b = x + s * v, y + u * w
        s11, s12, s22 = (0.1 + 1.3 * p @ q / 2 for p, q in ((a, a), (a, b), (b, b)))
        return 0.1 + 1.3 * gauss2(lambda p, q: np.tanh(p) * np.tanh(q), s11, s12, s22)

    assert t.output[2, 5] == pytest.approx(_fd_mixed(k, 2e-3), abs=5e-6)


def test_recursion_step_and_validation():
    cfg = NetworkConfig.uniform(1, 2, 4, "relu", c_w=2.0)
    k = np.array([[1.0, 0.3], [0.3, 2.0]])
    assert recursion_step(k, cfg) == pytest.approx(2 * arccos1(1.0, 0.3, 2.0))
    with pytest.raises(ValueError):
        recursion_step(np.array([[1.0, 0.3], [0.2, 2.0]]), cfg)
    with pytest.raises(ValueError):
        value_expectation(from_spec("relu"), 1.0, 2.0, 1.0)  # not PSD
    with pytest.raises(ValueError):
        limit_kernel(cfg, InputSet(np.ones((1, 3))))


def test_variance_map_and_derivative():
    cfg = NetworkConfig.uniform(1, 1, 4, "tanh", c_w=1.2, c_b=0.1)
    s = np.array([0.0, 0.5, 2.0])
    f, df = variance_map(cfg, s)
    ref = [0.1 + 1.2 * gauss2(lambda u, v: np.tanh(u) ** 2 + 0 * v, si, 0.0, 1.0)
           if si > 0 else 0.1 for si in s]
    np.testing.assert_allclose(f, ref, rtol=1e-10, atol=1e-14)
    h = 1e-5
    fd = (variance_map(cfg, s[1:] + h)[0] - variance_map(cfg, s[1:] - h)[0]) / (2 * h)
    np.testing.assert_allclose(df[1:], fd, rtol=1e-6)
    assert df[0] == pytest.approx(1.2, rel=1e-6)  # tanh'(0)^2 C_W
    relu = NetworkConfig.uniform(1, 1, 4, "relu", c_w=2.0, c_b=0.3)
    f, df = variance_map(relu, np.array([1.5]))
    assert f[0] == pytest.approx(1.8) and df[0] == pytest.approx(1.0)


def test_relu_nondegeneracy_pass_fail_pair():
    x = np.array([0.6, -0.8, 0.5])
    cfg = NetworkConfig.uniform(2, 3, 8, "relu", c_w=2.0)
    # value at x together with all coordinate derivatives: Euler's identity
    # f(x) = <grad f(x), x> makes the Gram matrix singular
    full = nondegeneracy_check(limit_kernel(cfg, InputSet(x[None], np.eye(3))))
    assert not full["pass"]
    # derivatives only along the orthogonal complement of x: invertible
    q, _ = np.linalg.qr(np.column_stack([x, np.eye(3)[:, :2]]))
    perp = q[:, 1:].T
    part = nondegeneracy_check(limit_kernel(cfg, InputSet(x[None], perp)))
    assert part["pass"]
    assert len(part["layers"]) == 3


def test_kernel_table_json_roundtrip():
    cfg = NetworkConfig.uniform(2, 3, 8, "tanh")
    t = limit_kernel(cfg, InputSet(X3[:2], np.eye(3)[:1]))
    from nngp_gauge.kernel_engine import KernelTable
    back = KernelTable.from_dict(t.to_dict())
    np.testing.assert_array_equal(back.output, t.output)


def test_tanh_value_against_monte_carlo():
    cfg = NetworkConfig.uniform(1, 1, 4, "tanh", c_w=1.0, c_b=0.0)
    got = recursion_step(np.array([[1.0, 0.5], [0.5, 1.0]]), cfg)
    g = np.random.default_rng(2024)
    prods = np.empty(10)
    n = 10 ** 6
    for i in range(10):
        x1, x2 = g.standard_normal((2, n))
        prods[i] = np.mean(np.tanh(x1) * np.tanh(0.5 * x1 + np.sqrt(0.75) * x2))
    se = np.std(np.tanh(x1) * np.tanh(0.5 * x1 + np.sqrt(0.75) * x2)) / np.sqrt(10 * n)
    assert abs(got - prods.mean()) < 4 * se


def test_tanh_finite_differences_are_richardson_consistent(monkeypatch):
    import nngp_gauge.kernel_engine as ke

    cfg = NetworkConfig.uniform(2, 3, 8, "tanh", c_w=1.4, c_b=0.1)
    inp = InputSet(X3[:2], np.eye(3)[:2])
    coarse = limit_kernel(cfg, inp, derivatives="finite-difference").output
    monkeypatch.setattr(ke, "FD_REL_STEP", ke.FD_REL_STEP / 2)
    fine = limit_kernel(cfg, inp, derivatives="finite-difference").output
    np.testing.assert_allclose(coarse, fine, atol=1e-5)
    prop = limit_kernel(cfg, inp, derivatives="propagation").output
    np.testing.assert_allclose(fine, prop, atol=1e-6)


@pytest.mark.parametrize("m", [1, 8, 64])
def test_gauss_hermite_rule_integrates_monomials(m):
    from math import prod
    x, w = QuadratureRule(m).points
    for k in range(2 * m):
        exact = 0.0 if k % 2 else float(prod(range(k - 1, 0, -2)))
        # relative to the absolute moment, since odd moments cancel exactly
        scale = np.dot(w, np.abs(x) ** k)
        assert abs(np.dot(w, x ** k) - exact) <= 1e-12 * scale


def test_relu_unit_diagonal_example():
    cfg = NetworkConfig.uniform(3, 2, 8, "relu", c_w=2.0)
    t = limit_kernel(cfg, InputSet(np.array([[1.0, 1.0]]), np.eye(2)))
    for l in range(1, t.n_layers + 1):
        m = t.matrix(l)
        assert m[0, 0] == pytest.approx(2.0, rel=1e-14)
        assert m[1, 1] == pytest.approx(1.0, rel=1e-14)
        assert m[2, 2] == pytest.approx(1.0, rel=1e-14)
        assert np.linalg.eigvalsh(m)[0] > -1e-10

"""Independent reference implementations used only by the tests."""

import math

import numpy as np
from scipy import integrate, stats


def arccos1(s11, s12, s22):
    """E[relu(u) relu(v)] (first-order arc-cosine kernel)."""
    r = np.sqrt(s11 * s22)
    c = np.clip(s12 / r, -1.0, 1.0)
    t = np.arccos(c)
    return r / (2 * np.pi) * (np.sin(t) + (np.pi - t) * c)


def relu_layers(X, depth, c_w=2.0, c_b=0.0):
    X = np.atleast_2d(X)
    K = c_b + c_w * X @ X.T / X.shape[1]
    out = [K]
    for _ in range(depth):
        d = np.diag(K)
        K = c_b + c_w * arccos1(d[:, None], K, d[None, :])
        out.append(K)
    return out


def gauss2(f, s11, s12, s22, lim=11.0):
    """E[f(u, v)] for a centered Gaussian pair, by adaptive 2-D quadrature."""
    a = np.sqrt(s11)
    rho = s12 / np.sqrt(s11 * s22)
    b = np.sqrt(s22)
    c = np.sqrt(max(1 - rho * rho, 0.0))

    def g(y, x):
        return f(a * x, b * (rho * x + c * y)) * math.exp(-0.5 * (x * x + y * y)) / (2 * math.pi)

    val, _ = integrate.dblquad(g, -lim, lim, -lim, lim, epsabs=1e-13, epsrel=1e-12)
    return val


def mixture_tv_w1(atoms, weights, s2):
    """TV and W1 between sum_k w_k N(0, a_k) and N(0, s2) by 1-D quad."""
    atoms = np.asarray(atoms, float)
    weights = np.asarray(weights, float)

    def dens(t):
        return np.sum(weights * stats.norm.pdf(t, scale=np.sqrt(atoms))) - stats.norm.pdf(
            t, scale=np.sqrt(s2))

    def cdf_gap(t):
        return np.sum(weights * stats.norm.sf(t, scale=np.sqrt(atoms))) - stats.norm.sf(
            t, scale=np.sqrt(s2))

    hi = 14 * np.sqrt(max(atoms.max(), s2))
    tv, _ = integrate.quad(lambda t: abs(dens(t)), 0, hi, limit=400, epsabs=1e-14)
    w1, _ = integrate.quad(lambda t: abs(cdf_gap(t)), 0, hi, limit=400, epsabs=1e-14)
    # both functions are even, so the full-line integrals double the half-line ones;
    # TV carries an extra factor 1/2
    return tv, 2 * w1


def gauss_tv(a, b):
    """TV between N(0, a) and N(0, b)."""
    lo, hi = sorted((a, b))
    if lo == hi:
        return 0.0
    t = np.sqrt(lo * hi * np.log(hi / lo) / (hi - lo))
    return 2 * (stats.norm.cdf(t / np.sqrt(lo)) - stats.norm.cdf(t / np.sqrt(hi)))

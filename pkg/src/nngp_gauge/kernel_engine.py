"""Infinite-width covariances ``K^(l)`` and their first-derivative entries.

Value recursion::

    K^(1)_ab     = C_b + C_W / n_0 * <x_a, x_b>
    K^(l+1)_ab   = C_b + C_W * E[sigma(u) sigma(v)],  (u, v) ~ N(0, K^(l)[a, b])

The Gaussian average is evaluated by the arc-cosine closed form for
ReLU/LeakyReLU, by exact Gaussian moments for polynomial nonlinearities and
by tensor Gauss-Hermite quadrature otherwise.

Derivative entries (``V_a^{J1} V_b^{J2} K``, ``|J| <= 1``) are exact at layer 1.
For deeper layers they come from one of two routes:

``"propagation"``
    the limit field and its tangents are jointly Gaussian, and tangents at
    layer ``l + 1`` are ``W sigma'(z) dz``. Conditioning the tangents on the
    values reduces every entry to a bivariate Gaussian average of
    ``sigma' sigma`` or ``sigma' sigma'`` times a quadratic. Closed form for
    piecewise-linear nonlinearities, Gauss-Hermite otherwise.
``"finite-difference"``
    central differences of the value recursion on an input mesh.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.special import roots_hermitenorm

from .net_sampler import InputSet, NetworkConfig
from .nonlinearity import Nonlinearity

log = logging.getLogger(__name__)

PSD_TOL = 1e-10
FD_REL_STEP = 1e-4


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule for the standard normal weight.

    ``nodes`` is the starting count per axis. With ``adaptive`` set the
    count is doubled (up to ``max_nodes``) until two successive estimates
    agree within ``tol`` relative to the integrand scale; only unconverged
    entries are re-evaluated. Integrands with complex poles near the real
    axis (tanh at large variance) need this.
    """

    nodes: int = 64
    adaptive: bool = True
    # the accepted value is the finer of the two compared estimates, which for
    # the analytic integrands here is several orders more accurate than tol
    tol: float = 1e-10
    max_nodes: int = 1024

    def __post_init__(self):
        if self.nodes < 1:
            raise ValueError("need at least one node")

    @property
    def points(self):
        return _gh(self.nodes)


@lru_cache(maxsize=16)
def _gh(m):
    x, w = roots_hermitenorm(m)
    w = w / np.sqrt(2.0 * np.pi)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=4)
def _gl(m):
    return np.polynomial.legendre.leggauss(m)


# --------------------------------------------------------------------------
# bivariate Gaussian averages


def _check_block(s11, s12, s22):
    s11, s12, s22 = (np.asarray(v, dtype=float) for v in (s11, s12, s22))
    scale = np.maximum(np.maximum(np.abs(s11), np.abs(s22)), 1e-300)
    bad = (s11 < -PSD_TOL * scale) | (s22 < -PSD_TOL * scale) | (
        s11 * s22 - s12 ** 2 < -PSD_TOL * scale ** 2)
    if np.any(bad):
        k = np.argwhere(np.atleast_1d(bad))[0]
        vals = [float(np.atleast_1d(np.broadcast_to(v, bad.shape))[tuple(k)])
                for v in (s11, s12, s22)]
        raise ValueError(
            "covariance block not PSD: K_aa=%.6g K_ab=%.6g K_bb=%.6g" % tuple(vals))
    return np.maximum(s11, 0.0), s12, np.maximum(s22, 0.0)


def _correlation(s11, s12, s22):
    den = np.sqrt(s11 * s22)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(den > 0, s12 / np.where(den > 0, den, 1.0), 0.0)
    clipped = np.abs(rho) > 1.0
    if np.any(np.abs(rho) > 1.0 + 1e-12):
        log.info("clipped %d correlations outside [-1, 1]", int(np.sum(clipped)))
    return np.clip(rho, -1.0, 1.0)


def _gh_fixed(a, c, d, func, m, chunk_elems=4_000_000):
    """Tensor rule with ``m`` nodes per axis; returns the estimates and the
    largest integrand magnitude per entry. Chunked over entries."""
    x, w = _gh(m)
    a, c, d = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, c, d)))
    shape = a.shape
    a, c, d = a.ravel(), c.ravel(), d.ravel()
    est = np.empty(a.size)
    scale = np.empty(a.size)
    step = max(1, chunk_elems // (m * m))
    for i in range(0, a.size, step):
        sl = slice(i, i + step)
        u = a[sl, None, None] * x[:, None]
        v = c[sl, None, None] * x[:, None] + d[sl, None, None] * x[None, :]
        vals = func(u, v)
        est[sl] = np.einsum("kij,i,j->k", vals, w, w)
        scale[sl] = np.max(np.abs(vals), axis=(-2, -1))
    return est.reshape(shape), scale.reshape(shape)


def _cholesky_2x2(s11, s12, s22):
    a = np.sqrt(s11)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(a > 0, s12 / np.where(a > 0, a, 1.0), 0.0)
        d = np.where(a > 0, np.sqrt(np.maximum(s11 * s22 - s12 * s12, 0.0)
                                    / np.where(a > 0, s11, 1.0)), np.sqrt(s22))
    return a, c, d


def gh_expect(s11, s12, s22, func, rule: QuadratureRule = None):
    """``E[func(u, v)]`` for ``(u, v) ~ N(0, [[s11, s12], [s12, s22]])``.

    Cholesky substitution ``u = sqrt(s11) x1``,
    ``v = s12 / sqrt(s11) x1 + sqrt(s22 - s12^2 / s11) x2``; when ``s11 == 0``
    the ``u = 0`` branch is used. Broadcasts over the block entries.
    """
    rule = rule or QuadratureRule()
    s11, s12, s22 = _check_block(s11, s12, s22)
    a, c, d = np.broadcast_arrays(*_cholesky_2x2(s11, s12, s22))
    m = rule.nodes
    est, scale = _gh_fixed(a, c, d, func, m)
    if not rule.adaptive:
        return est if est.ndim else float(est)
    est = np.array(est, dtype=float)
    todo = np.ones(est.shape, dtype=bool)
    while m < rule.max_nodes and np.any(todo):
        m = min(2 * m, rule.max_nodes)
        new, scale = _gh_fixed(a[todo], c[todo], d[todo], func, m)
        done = np.abs(new - est[todo]) <= rule.tol * np.maximum(scale, 1e-300)
        est[todo] = new
        idx = np.flatnonzero(todo.ravel())
        flat = todo.ravel()
        flat[idx[done.ravel()]] = False
        todo = flat.reshape(todo.shape)
    if np.any(todo):
        # nearly discontinuous integrands (tanh at large variance): nested
        # adaptive quadrature on the few entries Gauss-Hermite cannot resolve
        log.info("Gauss-Hermite not converged at %d nodes for %d entries; using nested quad",
                 rule.max_nodes, int(np.sum(todo)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IntegrationWarning)
            for i in np.flatnonzero(todo.ravel()):
                est.flat[i] = _nested_quad(a.flat[i], c.flat[i], d.flat[i], func)
    return est if est.ndim else float(est)


_QUAD_LIM = 10.0


def _nested_quad(a, c, d, func):
    def phi(t):
        return np.exp(-0.5 * t * t) / np.sqrt(2.0 * np.pi)

    def inner(x):
        u = np.array(a * x)
        if d == 0:
            return float(func(u, np.array(c * x)))
        val, _ = quad(lambda y: float(func(u, np.array(c * x + d * y))) * phi(y),
                      -_QUAD_LIM, _QUAD_LIM, epsabs=1e-15, epsrel=1e-13, limit=200)
        return val

    val, _ = quad(lambda x: inner(x) * phi(x), -_QUAD_LIM, _QUAD_LIM,
                  epsabs=1e-15, epsrel=1e-13, limit=200)
    return val


def angular_expect(s11, s12, s22, func, degree, points=32):
    """``E[func(u, v)]`` for ``func`` positively homogeneous of ``degree``
    (0 or 2) and piecewise smooth in the angle.

    Writes ``(u, v) = r (a cos t, c cos t + d sin t)``, so the expectation is
    ``E[r^degree] / (2 pi) * integral over t``; the angular integral uses
    Gauss-Legendre on the arcs between the zero-crossing angles of ``u``
    and ``v``. Scalar blocks only.
    """
    s11, s12, s22 = (float(v) for v in _check_block(s11, s12, s22))
    a, c, d = (float(v) for v in _cholesky_2x2(s11, s12, s22))
    cuts = [0.5 * np.pi, 1.5 * np.pi, 0.0, 2 * np.pi]
    if c != 0 or d != 0:
        t0 = np.arctan2(-c, d) % np.pi
        cuts += [t0, t0 + np.pi]
    cuts = np.unique(np.clip(cuts, 0.0, 2 * np.pi))
    x, w = _gl(points)
    tot = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo < 1e-15:
            continue
        t = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        u = a * np.cos(t)
        v = c * np.cos(t) + d * np.sin(t)
        tot += 0.5 * (hi - lo) * float(np.dot(w, func(u, v)))
    moment = {0: 1.0, 2: 2.0}[degree]
    return moment * tot / (2 * np.pi)


def _orthant_moments(s11, s12, s22):
    """Moments over the four sign orthants of ``(u, v)``.

    Returns dict orthant -> (P, E[u^2 1], E[v^2 1], E[uv 1]) with orthants
    keyed ``(su, sv)`` in ``{+1, -1}``. The value 0 counts as negative,
    matching sigma'(0) = slope below the kink.
    """
    s11, s12, s22 = (np.asarray(v, dtype=float) for v in (s11, s12, s22))
    rho = _correlation(s11, s12, s22)
    sd1, sd2 = np.sqrt(s11), np.sqrt(s22)
    # angle via atan2: arccos loses half the digits near |rho| = 1
    sin_th = np.sqrt(np.maximum(s11 * s22 - s12 * s12, 0.0))
    out = {}
    for su in (1, -1):
        for sv in (1, -1):
            th = np.where(sd1 * sd2 > 0, np.arctan2(sin_th, s12 * su * sv),
                          np.arccos(rho * su * sv))
            p = (np.pi - th) / (2 * np.pi)
            x2 = (np.pi - th + np.sin(th) * np.cos(th)) / (2 * np.pi)
            xy = ((np.pi - th) * np.cos(th) + np.sin(th)) / (2 * np.pi)
            out[(su, sv)] = [p, x2 * s11, x2 * s22, xy * su * sv * sd1 * sd2]
    # a zero-variance coordinate sits at 0, which counts as the negative side
    z1, z2 = s11 == 0, s22 == 0
    if np.any(z1 | z2):
        for (su, sv), m in out.items():
            neg_u, neg_v = float(su < 0), float(sv < 0)
            p = np.where(z1 & z2, neg_u * neg_v,
                         np.where(z1, 0.5 * neg_u, np.where(z2, 0.5 * neg_v, m[0])))
            uu = np.where(z1, 0.0, np.where(z2, 0.5 * neg_v * s11, m[1]))
            vv = np.where(z2, 0.0, np.where(z1, 0.5 * neg_u * s22, m[2]))
            uv = np.where(z1 | z2, 0.0, m[3])
            out[(su, sv)] = [p, uu, vv, uv]
    return out


def _slopes(sigma: Nonlinearity):
    if sigma.tag == "relu":
        return 1.0, 0.0
    return 1.0, float(sigma.params[0])


def _pl_quadratic(sigma, s11, s12, s22, q0, quu, qvv, quv):
    """``E[sigma'(u) sigma'(v) (q0 + quu u^2 + qvv v^2 + quv u v)]`` for
    piecewise-linear sigma with slopes (1 above 0, a below)."""
    up, lo = _slopes(sigma)
    tot = 0.0
    for (su, sv), (p, uu, vv, uv) in _orthant_moments(s11, s12, s22).items():
        k = (up if su > 0 else lo) * (up if sv > 0 else lo)
        tot = tot + k * (q0 * p + quu * uu + qvv * vv + quv * uv)
    return tot


def _poly_moments(coeffs_u, coeffs_v, s11, s12, s22):
    """``E[p(u) q(v)]`` by expanding Gaussian moments exactly."""
    a = np.sqrt(s11)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(a > 0, s12 / np.where(a > 0, a, 1.0), 0.0)
    d = np.sqrt(np.maximum(s22 - c * c, 0.0))

    def gm(k):  # E[xi^k]
        if k % 2:
            return 0.0
        return float(np.prod(np.arange(k - 1, 0, -2))) if k else 1.0

    tot = 0.0
    for i, pi in enumerate(coeffs_u):
        if pi == 0:
            continue
        for j, qj in enumerate(coeffs_v):
            if qj == 0:
                continue
            for k in range(j + 1):
                m1, m2 = gm(i + k), gm(j - k)
                if m1 == 0 or m2 == 0:
                    continue
                tot = tot + pi * qj * comb(j, k) * a ** i * c ** k * d ** (j - k) * m1 * m2
    return tot


def _pl_angular(sigma, s11, s12, s22, q0, quu, qvv, quv):
    """Angular-quadrature counterpart of :func:`_pl_quadratic` (scalar)."""
    d = sigma.deriv
    e0 = angular_expect(s11, s12, s22, lambda u, v: d(u) * d(v), 0) if q0 else 0.0
    e2 = angular_expect(
        s11, s12, s22,
        lambda u, v: d(u) * d(v) * (quu * u * u + qvv * v * v + quv * u * v), 2)
    return q0 * e0 + e2


def value_expectation(sigma: Nonlinearity, s11, s12, s22, rule: QuadratureRule = None,
                      method="auto"):
    """``E[sigma(u) sigma(v)]`` and the evaluation path used.

    ``method``: ``"closed-form"`` (ReLU/LeakyReLU), ``"moments"``
    (identity/polynomial), ``"quadrature"`` (Gauss-Hermite; angular
    Gauss-Legendre for piecewise-linear sigma) or ``"auto"``.
    """
    s11, s12, s22 = _check_block(s11, s12, s22)
    if method == "auto":
        if sigma.piecewise_linear:
            method = "closed-form"
        elif sigma.tag in ("identity", "polynomial"):
            method = "moments"
        else:
            method = "quadrature"
    if method == "closed-form":
        if not sigma.piecewise_linear:
            raise ValueError(f"no closed form for {sigma.tag}")
        # sigma(u) = u sigma'(u) for positively homogeneous sigma
        return _pl_quadratic(sigma, s11, s12, s22, 0.0, 0.0, 0.0, 1.0), method
    if method == "moments":
        if sigma.tag not in ("identity", "polynomial"):
            raise ValueError(f"no moment formula for {sigma.tag}")
        coeffs = (0.0, 1.0) if sigma.tag == "identity" else sigma.params
        return _poly_moments(coeffs, coeffs, s11, s12, s22), method
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    if sigma.piecewise_linear:
        f = np.vectorize(lambda a, b, c: _pl_angular(sigma, a, b, c, 0.0, 0.0, 0.0, 1.0))
        return f(s11, s12, s22), method
    return gh_expect(s11, s12, s22, lambda u, v: sigma(u) * sigma(v), rule), method


def recursion_step(k_prev, config: NetworkConfig, rule: QuadratureRule = None,
                   method="auto") -> float:
    """``C_b + C_W E[sigma(u) sigma(v)]`` for a 2x2 block ``k_prev``."""
    rule = rule or QuadratureRule()
    k = np.asarray(k_prev, dtype=float)
    if k.shape != (2, 2):
        raise ValueError("k_prev must be a 2x2 block")
    if abs(k[0, 1] - k[1, 0]) > 1e-12 * max(1.0, np.abs(k).max()):
        raise ValueError("k_prev must be symmetric")
    e, _ = value_expectation(config.nonlinearity, k[0, 0], k[0, 1], k[1, 1], rule, method)
    return float(config.c_b + config.c_w * e)


def _value_next(config, K, rule, method="auto"):
    dg = np.diag(K)
    e, used = value_expectation(config.nonlinearity, dg[:, None], K, dg[None, :], rule, method)
    out = config.c_b + config.c_w * np.asarray(e)
    return 0.5 * (out + out.T), used


def value_layers(config: NetworkConfig, X, rule: QuadratureRule = None, method="auto"):
    """Value kernels ``K^(1), ..., K^(L+1)`` on the rows of ``X``."""
    rule = rule or QuadratureRule()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    K = config.c_b + config.c_w / config.n_in * (X @ X.T)
    out = [K]
    for _ in range(config.depth):
        K, _ = _value_next(config, K, rule, method)
        out.append(K)
    return out


# --------------------------------------------------------------------------
# derivative entries by propagation


def _propagate_full(config, T, inputs: InputSet, rule, method="auto"):
    """Next-layer table over all columns from the current full table ``T``.

    Tangent ``D`` at input ``a`` given the values ``(u_a, u_b)`` is Gaussian
    with mean ``x . (u_a, u_b)`` and variance from the Schur complement.
    """
    sigma = config.nonlinearity
    A = inputs.n_inputs
    ncol = inputs.n_columns
    out = np.empty((ncol, ncol))
    Kv, _ = _value_next(config, T[:A, :A], rule, method)
    out[:A, :A] = Kv
    pl = sigma.piecewise_linear
    if pl:
        quad = _pl_angular if method == "quadrature" else _pl_quadratic
    d, f = sigma.deriv, sigma
    for c1 in range(A, ncol):
        a = c1 % A
        for c2 in range(ncol):
            if A <= c2 < c1:
                continue
            b = c2 % A
            S = np.array([[T[a, a], T[a, b]], [T[b, a], T[b, b]]])
            Sp = np.linalg.pinv(S, rcond=1e-12, hermitian=True)
            g1 = np.array([T[c1, a], T[c1, b]])
            x1 = g1 @ Sp
            s11, s12, s22 = S[0, 0], S[0, 1], S[1, 1]
            if c2 < A:
                # E[sigma'(u) D1 sigma(v)], E[D1 | u, v] = x1 . (u, v)
                if pl:
                    e = quad(sigma, s11, s12, s22, 0.0, 0.0, x1[1], x1[0])
                else:
                    e = gh_expect(s11, s12, s22, lambda u, v: d(u) * f(v)
                                  * (x1[0] * u + x1[1] * v), rule)
            else:
                g2 = np.array([T[c2, a], T[c2, b]])
                x2 = g2 @ Sp
                r = T[c1, c2] - g1 @ Sp @ g2
                if pl:
                    e = quad(sigma, s11, s12, s22, r, x1[0] * x2[0], x1[1] * x2[1],
                             x1[0] * x2[1] + x1[1] * x2[0])
                else:
                    e = gh_expect(s11, s12, s22, lambda u, v: d(u) * d(v)
                                  * (r + (x1[0] * u + x1[1] * v) * (x2[0] * u + x2[1] * v)), rule)
            val = config.c_w * float(e)
            out[c1, c2] = val
            out[c2, c1] = val
    return out


def _fd_layers(config, inputs: InputSet, rule, h_rel=None):
    """Full tables for all layers with derivative entries from central
    differences of the value recursion."""
    h_rel = FD_REL_STEP if h_rel is None else h_rel
    X, V = inputs.inputs, inputs.directions
    A, p = len(X), len(V)
    scale = float(np.max(np.linalg.norm(X, axis=1))) or 1.0
    h = h_rel * scale / np.linalg.norm(V, axis=1)
    pts = [X]
    for k in range(p):
        pts += [X + h[k] * V[k], X - h[k] * V[k]]
    P = np.concatenate(pts)
    layers = value_layers(config, P, rule)

    def plus(k):
        return A * (1 + 2 * k) + np.arange(A)

    def minus(k):
        return A * (2 + 2 * k) + np.arange(A)

    ncol = inputs.n_columns
    out = []
    for K in layers:
        T = np.empty((ncol, ncol))
        base = np.arange(A)
        T[:A, :A] = K[np.ix_(base, base)]
        for k in range(p):
            rows = slice(A * (k + 1), A * (k + 2))
            dv = (K[np.ix_(plus(k), base)] - K[np.ix_(minus(k), base)]) / (2 * h[k])
            T[rows, :A] = dv
            T[:A, rows] = dv.T
            for k2 in range(p):
                cols = slice(A * (k2 + 1), A * (k2 + 2))
                T[rows, cols] = (K[np.ix_(plus(k), plus(k2))] - K[np.ix_(plus(k), minus(k2))]
                                 - K[np.ix_(minus(k), plus(k2))]
                                 + K[np.ix_(minus(k), minus(k2))]) / (4 * h[k] * h[k2])
        out.append(0.5 * (T + T.T))
    return out


def _base_table(config, inputs: InputSet):
    F = inputs.base_features()
    mask = inputs.value_mask
    return config.c_b * np.outer(mask, mask) + config.c_w / config.n_in * (F.T @ F)


# --------------------------------------------------------------------------
# tables


@dataclass
class KernelTable:
    """Per-layer limit covariances over an index set.

    ``full[l - 1]`` covers every (direction, input) column; ``matrix(l)``
    restricts to the index set ``B`` of ``inputs``.
    """

    config: NetworkConfig
    inputs: InputSet
    full: list
    methods: list
    flags: list = field(default_factory=list)
    rule_nodes: int = 64

    @property
    def n_layers(self) -> int:
        return len(self.full)

    def matrix(self, layer: int, index=None) -> np.ndarray:
        inp = self.inputs if index is None else self.inputs.restrict(index)
        c = inp.columns
        return self.full[layer - 1][np.ix_(c, c)]

    @property
    def output(self) -> np.ndarray:
        """``K^(L+1)`` over ``B``."""
        return self.matrix(self.n_layers)

    def to_dict(self) -> dict:
        return {
            "schema": "nngp-gauge/kernel-table/1",
            "config": self.config.to_dict(),
            "inputs": self.inputs.to_dict(),
            "index": [list(p) for p in self.inputs.index],
            "quadrature_nodes": self.rule_nodes,
            "layers": [
                {"layer": l + 1, "method": self.methods[l],
                 "matrix": self.matrix(l + 1).tolist()}
                for l in range(self.n_layers)
            ],
            "flags": self.flags,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d) -> "KernelTable":
        """Rebuild from :meth:`to_dict` output. Only the ``B`` block is
        stored, so the rebuilt table's inputs use ``B`` columns only when it
        covers every column."""
        cfg = NetworkConfig.from_dict(d["config"])
        inp = InputSet.from_dict(d["inputs"])
        if len(inp.index) != inp.n_columns:
            raise ValueError("table JSON does not cover every column; cannot rebuild")
        order = np.argsort(inp.columns)
        full = [np.asarray(l["matrix"])[np.ix_(order, order)] for l in d["layers"]]
        inp = InputSet(inp.inputs, inp.directions, None)
        return cls(cfg, inp, full, [l["method"] for l in d["layers"]],
                   d.get("flags", []), d.get("quadrature_nodes", 64))


def limit_kernel(config: NetworkConfig, inputs: InputSet, rule: QuadratureRule = None,
                 derivatives: str = "auto") -> KernelTable:
    """Limit covariance table ``K^(1..L+1)`` over ``inputs``.

    ``derivatives``: ``"auto"`` (closed form for ReLU/LeakyReLU, finite
    differences otherwise), ``"finite-difference"`` or ``"propagation"``.
    """
    rule = rule or QuadratureRule()
    if inputs.inputs.shape[1] != config.n_in:
        raise ValueError("input dimension does not match the network")
    sigma = config.nonlinearity
    has_d = inputs.n_directions > 0
    if derivatives == "auto":
        derivatives = "closed-form" if sigma.piecewise_linear else "finite-difference"
    if derivatives == "closed-form" and not sigma.piecewise_linear:
        raise ValueError("closed-form derivative kernels exist only for ReLU/LeakyReLU")
    flags = []
    T = _base_table(config, inputs)
    full = [T]
    value_method = value_expectation(sigma, 1.0, 0.0, 1.0, rule)[1]
    methods = [{"value": "exact", "derivative": "exact" if has_d else None}]
    if has_d and derivatives == "finite-difference":
        fd = _fd_layers(config, inputs, rule)
        A = inputs.n_inputs
        for l in range(1, config.depth + 1):
            T, _ = _value_next(config, T[:A, :A], rule)
            Tf = fd[l].copy()
            Tf[:A, :A] = T
            T = Tf
            full.append(T)
            methods.append({"value": value_method, "derivative": "finite-difference"})
        if not sigma.smooth:
            flags.append({"layers": list(range(2, config.depth + 2)),
                          "reason": "finite differences of a non-smooth nonlinearity"})
    else:
        for _ in range(config.depth):
            if has_d:
                T = _propagate_full(config, T, inputs, rule)
                dm = "closed-form" if sigma.piecewise_linear else "propagation"
            else:
                T, _ = _value_next(config, T, rule)
                dm = None
            full.append(T)
            methods.append({"value": value_method, "derivative": dm})
    if np.any(np.linalg.norm(inputs.inputs, axis=1) == 0) and config.c_b == 0:
        flags.append({"reason": "zero input with C_b = 0: base kernel vanishes"})
    return KernelTable(config, inputs, full, methods, flags, rule.nodes)


def nondegeneracy_check(table: KernelTable, order: int = None, tolerance=None) -> dict:
    """Smallest eigenvalue of ``K^(l)`` restricted to entries of order ``<= q``."""
    q = table.inputs.order if order is None else order
    index = [(j, a) for j, a in table.inputs.index if (1 if j else 0) <= q]
    layers = []
    ok = True
    for l in range(1, table.n_layers + 1):
        M = table.matrix(l, index)
        M = 0.5 * (M + M.T)
        lam = float(np.linalg.eigvalsh(M)[0])
        tol = tolerance if tolerance is not None else 1e-8 * float(np.max(np.diag(M)))
        passed = bool(lam > tol)
        ok &= passed
        layers.append({"layer": l, "min_eigenvalue": lam, "tolerance": tol, "pass": passed})
    return {"order": q, "pass": ok, "layers": layers}


def variance_map(config: NetworkConfig, s, rule: QuadratureRule = None):
    """Single-input recursion ``F(s) = C_b + C_W E[sigma(sqrt(s) xi)^2]`` and its
    derivative ``F'(s) = C_W E[sigma(u) sigma'(u) u] / s``, vectorized over ``s``."""
    sigma = config.nonlinearity
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("variances must be >= 0")
    if sigma.piecewise_linear:
        up, lo = _slopes(sigma)
        c = 0.5 * (up * up + lo * lo)
        return config.c_b + config.c_w * c * s, np.full(s.shape, config.c_w * c)
    rule = rule or QuadratureRule()
    m = rule.nodes
    prev = None
    while True:
        x, w = _gh(m)
        u = np.sqrt(s)[..., None] * x
        f = sigma(u)
        val = (f * f) @ w
        # at s = 0: d/ds E[h(sqrt(s) xi)] = h''(0) / 2 with h = sigma^2
        d2 = (sigma.deriv(1e-5) - sigma.deriv(-1e-5)) / 2e-5
        at0 = float(sigma.deriv(0.0) ** 2 + sigma(0.0) * d2)
        with np.errstate(invalid="ignore", divide="ignore"):
            der = np.where(s > 0, ((f * sigma.deriv(u) * u) @ w) / np.where(s > 0, s, 1.0), at0)
        cur = np.stack([val, der])
        if prev is not None and np.all(np.abs(cur - prev) <= rule.tol * np.maximum(1.0, np.abs(cur))):
            break
        if not rule.adaptive or m >= rule.max_nodes:
            break
        prev, m = cur, min(2 * m, rule.max_nodes)
    return config.c_b + config.c_w * cur[0], config.c_w * cur[1]

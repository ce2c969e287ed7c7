"""Distances between a Gaussian scale mixture and a Gaussian, and the
bounds that control them.

The output of a random network at one input is centered Gaussian given the
conditional variance ``A = Sigma_aa``. A batch of draws ``A_1..A_S`` therefore
represents the output law exactly as the mixture ``(1/S) sum_s N(0, A_s)``,
and TV/W1 to ``N(0, sigma^2)`` are computed on that representation.

Both distributions are symmetric, so every integral is taken over
``[0, inf)`` and doubled. Between consecutive sign changes of the
integrand the integral has a closed form in Gaussian survival functions
(TV) or their antiderivatives (W1). Sign changes are located on a
Simpson-style grid of ``(SIMPSON_POINTS + 1) // 2`` nodes on
``[0, c * sqrt(max(sigma^2, max A))]`` and refined by Brent's method.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_simpson, simpson
from scipy.optimize import brentq
from scipy.special import ndtr

from .jackknife import DEFAULT_GROUPS, group_sums, jackknife
from .linalg import psd_sqrt, repair_psd, symmetrize
from .net_sampler import CondCovBatch, InputSet, NetworkConfig, draw_cond_covs

log = logging.getLogger(__name__)

SIMPSON_POINTS = 8193
DOMAIN_C = 12.0
FLUSH_REL = 1e-24
_PHI0 = 1.0 / np.sqrt(2.0 * np.pi)
# sign changes of |integrand| below this fraction of its scale are ignored
_SIGN_THRESHOLD = 1e-12
_CHUNK = 4_000_000


@dataclass(frozen=True)
class MixtureVarianceSample:
    """Draws of the conditional variance ``A`` and the target ``sigma^2``.

    ``target=None`` means ``sigma^2`` is the sample mean of the draws, and
    every jackknife replicate recomputes it.
    """

    samples: np.ndarray
    target: Optional[float] = None
    width: Optional[int] = None

    def __post_init__(self):
        a = np.asarray(self.samples, dtype=float).ravel()
        if a.size < 2:
            raise ValueError("need at least 2 variance draws")
        if not np.all(np.isfinite(a)):
            raise ValueError("variance draws must be finite")
        tiny = 1e-12 * max(1.0, float(np.max(np.abs(a))))
        if np.any(a < -tiny):
            raise ValueError(f"negative variance draw {a.min():.3g}")
        a = np.maximum(a, 0.0)
        # draws this small act as atoms at zero (TV/W1 change by ~1e-12)
        a[a < FLUSH_REL * a.max()] = 0.0
        object.__setattr__(self, "samples", a)
        if self.target is not None and not self.target > 0:
            raise ValueError("target variance must be > 0")
        if self.target is None and not np.mean(a) > 0:
            raise ValueError("all variance draws are zero; the target would be degenerate")

    @property
    def size(self) -> int:
        return self.samples.size

    @property
    def sigma2(self) -> float:
        return float(self.target) if self.target is not None else float(np.mean(self.samples))

    @classmethod
    def from_batch(cls, batch: CondCovBatch, i: int = 0, target=None):
        return cls(batch.entry(i), target, batch.width)


@dataclass
class Estimate:
    """A scalar result with its error bars, as emitted in JSON rows."""

    estimate: float
    std_error: float
    method: str
    clip_flags: list = field(default_factory=list)
    error_bound: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MomentSummary:
    k2: float
    k3: float
    k4: float
    se2: float
    se3: float
    se4: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# Gaussian kernels on [0, inf)


def _pdf(t, s):
    return np.exp(-0.5 * (t / s) ** 2) * (_PHI0 / s)


def _sf(t, s):
    return ndtr(-t / s)


def _q(t, s):
    """``int_t^inf P(|s Z| > u) / 2 du``, i.e. the antiderivative of the survival."""
    return s * _PHI0 * np.exp(-0.5 * (t / s) ** 2) - t * ndtr(-t / s)


def _mix_sum(kernel, t, scales):
    """``sum_s kernel(t, scales[s])`` on the vector ``t``."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape)
    step = max(1, _CHUNK // max(1, t.size))
    for i in range(0, scales.size, step):
        s = scales[i:i + step, None]
        out += kernel(t[None, :], s).sum(axis=0)
    return out


def _pdf_grid(t, scales):
    """``sum_s pdf(t; 0, scales[s]^2)`` on a large grid: one exp per entry
    and a matrix-vector product."""
    half_t2 = -0.5 * np.asarray(t, dtype=float) ** 2
    inv = 1.0 / scales ** 2
    out = np.zeros(half_t2.shape)
    step = max(1, _CHUNK // max(1, half_t2.size))
    for i in range(0, scales.size, step):
        out += (_PHI0 / scales[i:i + step]) @ np.exp(np.multiply.outer(inv[i:i + step], half_t2))
    return out


def _per_draw(kernel, t, scales):
    """``kernel(t_k, scales[s])`` as an ``(S, len(t))`` matrix (zeros for atoms)."""
    out = np.zeros((scales.size, len(t)))
    pos = scales > 0
    if len(t):
        out[pos] = kernel(np.asarray(t)[None, :], scales[pos, None])
    return out


def _roots(g_grid, t, g_fn, thr):
    """Sign changes of ``g`` on the grid (ignoring ``|g| <= thr``), refined
    by Brent's method on the exact function."""
    sgn = np.where(np.abs(g_grid) > thr, np.sign(g_grid), 0.0)
    idx = np.flatnonzero(sgn)
    roots = []
    for i, j in zip(idx[:-1], idx[1:]):
        if sgn[i] != sgn[j]:
            roots.append(brentq(g_fn, t[i], t[j], xtol=1e-15, rtol=1e-15, maxiter=200))
    return np.array(roots)


class _Mixture:
    """Grid evaluations shared by the TV and W1 estimators."""

    def __init__(self, mix: MixtureVarianceSample):
        self.mix = mix
        a = mix.samples
        self.scales = np.sqrt(a)
        self.pos = self.scales[self.scales > 0]
        self.n = a.size
        self.n0 = int(np.sum(a == 0))
        self.p0 = self.n0 / self.n
        smax = np.sqrt(max(mix.sigma2, float(a.max())))
        self.T = DOMAIN_C * smax
        self.t = t = np.linspace(0.0, self.T, (SIMPSON_POINTS + 1) // 2)
        self.sigma = sig = np.sqrt(mix.sigma2)
        self.f = _pdf_grid(t, self.pos) / self.n
        self.g = self.f - _pdf(t, sig)
        # survival difference F_bar - Phi_bar = int_t^inf g; only used to
        # locate sign changes and for the Kolmogorov sanity value
        rev = cumulative_simpson(self.g[::-1], dx=t[1] - t[0], initial=0.0)
        self.h = -rev[::-1]
        self.h_err = float(np.max(np.abs(
            self.h[::2] + cumulative_simpson(self.g[::-2], dx=2 * (t[1] - t[0]),
                                             initial=0.0)[::-1])))

    def base_rows(self):
        a = self.mix.samples
        return np.column_stack([np.ones(self.n), (a == 0).astype(float), a, self.scales])

    def sigma_of(self, stats):
        if self.mix.target is not None:
            return np.sqrt(self.mix.target)
        return np.sqrt(stats[2] / stats[0])

    def tail_mass(self):
        return float(_sf(self.T, self.sigma) + _mix_sum(_sf, [self.T], self.pos)[0] / self.n)

    def tail_q(self):
        return float(_q(self.T, self.sigma) + _mix_sum(_q, [self.T], self.pos)[0] / self.n)


def _finish(est, se, method, bound, extra):
    flags = []
    if est > 1.0:
        flags.append("clipped_to_1")
        est = 1.0
    if est < 0.0:
        flags.append("clipped_to_0")
        est = 0.0
    return Estimate(float(est), float(se), method, flags, float(bound), extra)


def _tv(m: _Mixture, groups, method):
    t, sig, p0 = m.t, m.sigma, m.p0
    if method == "simpson":
        est = 0.5 * p0 + simpson(np.abs(m.g), x=t)
        coarse = 0.5 * p0 + simpson(np.abs(m.g[::2]), x=t[::2])
        bound = abs(est - coarse) / 15 + 2 * m.tail_mass()
        return _finish(est, float("nan"), "simpson", bound,
                       {"sigma2": m.mix.sigma2, "p0": p0})
    if method != "segments":
        raise ValueError(f"unknown method {method!r}")

    def g(x):
        return float(_mix_sum(_pdf, [x], m.pos)[0] / m.n - _pdf(x, sig))

    thr = _SIGN_THRESHOLD * max(float(m.f.max()), float(_pdf(0.0, sig)))
    roots = _roots(m.g, t, g, thr)
    rows = np.column_stack([m.base_rows(), _per_draw(_sf, roots, m.scales)])

    def fn(st):
        n, n0 = st[0], st[1]
        s = m.sigma_of(st)
        h = np.concatenate([[(n - n0) / (2 * n) - 0.5],
                            st[4:] / n - _sf(roots, s), [0.0]])
        return 0.5 * n0 / n + np.sum(np.abs(np.diff(h)))

    est, se = jackknife(group_sums(rows, groups), fn)
    kol = max(float(np.max(np.abs(m.h))) + m.h_err, 0.5 * p0)
    bound = 2 * m.tail_mass() + thr * m.T + 1e-14 * (len(roots) + 1)
    return _finish(est, se, "segments", bound,
                   {"sigma2": m.mix.sigma2, "p0": p0, "crossings": roots.tolist(),
                    "kolmogorov": kol})


def _w1(m: _Mixture, groups, method):
    t, sig = m.t, m.sigma
    if method == "simpson":
        # exact survival functions here: Simpson of a cumulative Simpson is
        # not a fair cross-check
        gw = _sf(t, sig) - _mix_sum(_sf, t, m.pos) / m.n
        est = 2 * simpson(np.abs(gw), x=t)
        coarse = 2 * simpson(np.abs(gw[::2]), x=t[::2])
        bound = abs(est - coarse) / 15 + 2 * m.tail_q()
        return Estimate(float(est), float("nan"), "simpson", [], float(bound),
                        {"sigma2": m.mix.sigma2})
    if method != "segments":
        raise ValueError(f"unknown method {method!r}")

    def g(x):
        return float(_sf(x, sig) - _mix_sum(_sf, [x], m.pos)[0] / m.n)

    thr = max(_SIGN_THRESHOLD, 2 * m.h_err)
    roots = _roots(-m.h, t, g, thr)
    rows = np.column_stack([m.base_rows(), _per_draw(_q, roots, m.scales)])

    def fn(st):
        n = st[0]
        s = m.sigma_of(st)
        q_sig = np.concatenate([[s * _PHI0], _q(roots, s), [0.0]])
        q_mix = np.concatenate([[st[3] * _PHI0 / n], st[4:] / n, [0.0]])
        return 2 * np.sum(np.abs(np.diff(q_mix - q_sig)))

    est, se = jackknife(group_sums(rows, groups), fn)
    bound = 4 * m.tail_q() + 2 * thr * m.T + 1e-14 * m.sigma * (len(roots) + 1)
    return Estimate(float(est), float(se), "segments", [], float(bound),
                    {"sigma2": m.mix.sigma2, "crossings": roots.tolist()})


def tv_mixture_vs_gaussian(mix: MixtureVarianceSample, groups: int = DEFAULT_GROUPS,
                           method: str = "segments") -> Estimate:
    """``d_TV`` between ``(1/S) sum_s N(0, A_s)`` and ``N(0, sigma^2)``.

    Draws with ``A_s = 0`` are point masses at 0; their total mass ``p0``
    is added as ``p0 / 2`` (half of the L1 mass difference). ``method``
    ``"segments"`` integrates exactly between sign changes; ``"simpson"``
    applies composite Simpson on the grid (kept as a cross-check).
    """
    return _tv(_Mixture(mix), groups, method)


def w1_mixture_vs_gaussian(mix: MixtureVarianceSample, groups: int = DEFAULT_GROUPS,
                           method: str = "segments") -> Estimate:
    """``W_1 = int |F_mix - Phi_sigma|``, same grid policy as the TV estimator."""
    return _w1(_Mixture(mix), groups, method)


def mixture_distances(mix: MixtureVarianceSample, groups: int = DEFAULT_GROUPS) -> dict:
    """TV and W1 sharing one grid evaluation."""
    m = _Mixture(mix)
    return {"tv": _tv(m, groups, "segments"), "w1": _w1(m, groups, "segments")}


def stein_upper_bounds(var_a: float, sigma2: float) -> dict:
    """Stein bounds for a centered Gaussian scale mixture with ``E A = sigma^2``:
    ``TV <= 8 Var(A) / sigma^4`` (clipped at 1) and ``W1 <= 4 Var(A) / sigma^3``."""
    if not sigma2 > 0:
        raise ValueError("sigma^2 must be > 0")
    if var_a < 0:
        raise ValueError("variance must be >= 0")
    raw = 8.0 * var_a / sigma2 ** 2
    return {"tv_bound": min(1.0, raw), "w1_bound": 4.0 * var_a / sigma2 ** 1.5,
            "tv_bound_raw": raw, "clipped": raw > 1.0}


def stein_bounds_estimate(mix: MixtureVarianceSample, groups: int = DEFAULT_GROUPS) -> dict:
    """Stein bounds with the unbiased sample variance of ``A`` plugged in,
    each with a jackknife error."""
    a = mix.samples
    rows = np.column_stack([np.ones(a.size), a, a * a])

    def var(st):
        n = st[0]
        return (st[2] - st[1] ** 2 / n) / (n - 1)

    def s2(st):
        return mix.target if mix.target is not None else st[1] / st[0]

    blocks = group_sums(rows, groups)
    tv = jackknife(blocks, lambda st: 8 * var(st) / s2(st) ** 2)
    w1 = jackknife(blocks, lambda st: 4 * var(st) / s2(st) ** 1.5)
    v = jackknife(blocks, var)
    return {"var_a": v[0], "var_a_se": v[1], "tv_bound": min(1.0, tv[0]),
            "tv_bound_raw": tv[0], "tv_bound_se": tv[1],
            "w1_bound": w1[0], "w1_bound_se": w1[1]}


def cosine_lower_bound(mix: MixtureVarianceSample, groups: int = DEFAULT_GROUPS) -> Estimate:
    """``|mean_s exp(-A_s / 2) - exp(-sigma^2 / 2)|``.

    ``|E cos F - E cos Z|`` with ``F`` the mixture and ``Z`` the Gaussian;
    since ``cos`` is 1-Lipschitz and bounded by 1 it lower-bounds both
    ``W1`` and ``2 TV``.
    """
    a = mix.samples
    rows = np.column_stack([np.ones(a.size), a, np.exp(-0.5 * a)])

    def fn(st):
        s2 = mix.target if mix.target is not None else st[1] / st[0]
        return abs(st[2] / st[0] - np.exp(-0.5 * s2))

    est, se = jackknife(group_sums(rows, groups), fn)
    return Estimate(est, se, "cosine", [])


# --------------------------------------------------------------------------
# cumulants


def _kstats(st):
    """k-statistics ``k2, k3, k4`` from power sums ``(n, S1, S2, S3, S4)``."""
    n, s1, s2, s3, s4 = st
    k2 = (n * s2 - s1 ** 2) / (n * (n - 1))
    k3 = (2 * s1 ** 3 - 3 * n * s1 * s2 + n ** 2 * s3) / (n * (n - 1) * (n - 2))
    k4 = (-6 * s1 ** 4 + 12 * n * s1 ** 2 * s2 - 3 * n * (n - 1) * s2 ** 2
          - 4 * n * (n + 1) * s1 * s3 + n ** 2 * (n + 1) * s4) / (
        n * (n - 1) * (n - 2) * (n - 3))
    return k2, k3, k4


def _power_rows(x):
    x = np.asarray(x, dtype=float)
    c = x - x.mean()  # k-statistics of order >= 2 are shift invariant
    return np.column_stack([np.ones(x.size), c, c ** 2, c ** 3, c ** 4])


def cumulants(samples, groups: int = DEFAULT_GROUPS) -> MomentSummary:
    """Unbiased k-statistics with delete-a-group jackknife errors."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 8:
        raise ValueError(f"need at least 8 samples, got {x.size}")
    if np.ptp(x) == 0:
        return MomentSummary(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, x.size)
    blocks = group_sums(_power_rows(x), groups)
    # leave-one-group-out needs >= 4 samples left; guaranteed by x.size >= 8
    out = [jackknife(blocks, lambda st, i=i: _kstats(st)[i]) for i in range(3)]
    k2 = max(out[0][0], 0.0)
    return MomentSummary(k2, out[1][0], out[2][0], out[0][1], out[1][1], out[2][1], x.size)


def cum4_identity_check(config: NetworkConfig, x, width: int, replicas: int, seed: int,
                        sampler: str = "gram", groups: int = DEFAULT_GROUPS,
                        workers=None) -> dict:
    """Compare ``3 Var(Sigma_aa)`` with the fourth cumulant of the output ``z``.

    Given ``Sigma``, ``z ~ N(0, Sigma_aa)``, so ``kappa_4(z) = 3 Var(Sigma_aa)``.
    Both sides come from the same draws; the z-score uses the jackknife
    error of their difference.
    """
    if width < 2:
        raise ValueError("width must be >= 2")
    if replicas < 1000:
        raise ValueError("need at least 1000 replicas")
    cfg = config.with_width(width)
    inputs = InputSet(np.atleast_2d(np.asarray(x, dtype=float)))
    batch = draw_cond_covs(cfg, inputs, replicas, seed, sampler=sampler,
                           with_output=True, workers=workers)
    return cum4_from_draws(batch.entry(0), batch.outputs[:, 0], groups)


def cum4_from_draws(a, z, groups: int = DEFAULT_GROUPS) -> dict:
    rows = np.column_stack([_power_rows(a), _power_rows(z)[:, 1:]])
    blocks = group_sums(rows, groups)

    def lhs(st):
        return 3 * _kstats(st[:5])[0]

    def rhs(st):
        return _kstats(np.concatenate([st[:1], st[5:]]))[2]

    l, lse = jackknife(blocks, lhs)
    r, rse = jackknife(blocks, rhs)
    d, dse = jackknife(blocks, lambda st: lhs(st) - rhs(st))
    z_score = d / dse if dse > 0 else (0.0 if d == 0 else float("inf"))
    return {"lhs": l, "lhs_se": lse, "rhs": r, "rhs_se": rse, "diff": d,
            "diff_se": dse, "z_score": float(z_score), "replicas": int(len(a))}


# --------------------------------------------------------------------------
# finite-dimensional bounds


def convex_bound_raw(var_matrix_sum: float, rank: int, lambda_plus: float) -> float:
    if not lambda_plus > 0:
        raise ValueError("lambda_plus must be > 0")
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if var_matrix_sum < 0:
        raise ValueError("variance sum must be >= 0")
    return 402.0 * (lambda_plus ** -1.5 + 1.0) * rank ** (41.0 / 24.0) * np.sqrt(var_matrix_sum)


def convex_bound(var_matrix_sum: float, rank: int, lambda_plus: float) -> float:
    """Upper bound on the convex distance, clipped at 1."""
    return float(min(1.0, convex_bound_raw(var_matrix_sum, rank, lambda_plus)))


def spectrum_summary(c, rel_threshold: float = 1e-8):
    """Rank and smallest positive eigenvalue, threshold relative to the trace."""
    w = np.linalg.eigvalsh(symmetrize(c))
    keep = w > rel_threshold * max(float(np.trace(c)), 0.0)
    if not np.any(keep):
        raise ValueError("covariance has no positive eigenvalue")
    return int(np.sum(keep)), float(w[keep].min())


def convex_bound_estimate(sigmas, groups: int = DEFAULT_GROUPS) -> dict:
    """Raw and clipped convex bound from a stack of ``Sigma`` draws, with
    ``rank``/``lambda_plus`` taken from the sample mean covariance."""
    s = np.asarray(sigmas, dtype=float)
    R, m, _ = s.shape
    flat = s.reshape(R, -1)
    rows = np.column_stack([np.ones(R), flat, flat ** 2])
    rank, lam = spectrum_summary(flat.mean(axis=0).reshape(m, m))

    def vsum(st):
        n = st[0]
        mu, sq = st[1:1 + m * m], st[1 + m * m:]
        return max(float(np.sum((sq - mu ** 2 / n) / (n - 1))), 0.0)

    blocks = group_sums(rows, groups)
    v, vse = jackknife(blocks, vsum)
    raw, rse = jackknife(blocks, lambda st: convex_bound_raw(vsum(st), rank, lam))
    return {"var_matrix_sum": v, "var_matrix_sum_se": vse, "rank": rank,
            "lambda_plus": lam, "raw": raw, "raw_se": rse, "bound": min(1.0, raw)}


def bures_w2(c1, c2) -> dict:
    """``W_2(N(0, C1), N(0, C2))`` and the pairing bound ``||sqrt C1 - sqrt C2||_HS``."""
    c1 = symmetrize(c1, tol=1e-8, what="C1")
    c2 = symmetrize(c2, tol=1e-8, what="C2")
    if c1.shape != c2.shape:
        raise ValueError(f"shape mismatch {c1.shape} vs {c2.shape}")
    c1, r1 = repair_psd(c1)
    c2, r2 = repair_psd(c2)
    s1, s2 = psd_sqrt(c1), psd_sqrt(c2)
    # W2 = min_U ||s1 - s2 U||_F, attained at the polar factor of s1 s2; this
    # avoids the cancellation in Tr C1 + Tr C2 - 2 Tr (s1 C2 s1)^{1/2}
    p, _, qt = np.linalg.svd(s1 @ s2)
    w2 = float(np.linalg.norm(s1 - s2 @ qt.T @ p.T))
    hs = float(np.linalg.norm(s1 - s2))
    # rounding-level eigenvalues enter the square roots at O(sqrt(eps))
    if w2 > hs + 1e-7 * np.sqrt(1.0 + np.trace(c1) + np.trace(c2)):
        raise AssertionError(f"Bures W2 {w2:.6g} exceeds the pairing bound {hs:.6g}")
    return {"w2": w2, "hs_bound": hs, "repair": max(r1, r2)}


def variance_aggregates(draws, table, weights, groups: int = DEFAULT_GROUPS) -> dict:
    """Weighted aggregates of ``Sigma`` fluctuations:

    ``A_n = sum w_i w_j Var(Sigma_ij)``, ``B_n = sum w_i w_j E (Sigma_ij - K_ij)^2``,
    ``C_n = sum w_i E (Sigma_ii - K_ii)^2``.

    ``draws`` is a :class:`CondCovBatch`, a sequence of draws or an array of
    shape ``(R, m, m)``; ``table`` a kernel table (its output layer is used)
    or an ``(m, m)`` matrix.
    """
    if isinstance(draws, CondCovBatch):
        s = draws.sigma
    elif isinstance(draws, np.ndarray):
        s = draws
    else:
        s = np.stack([d.sigma for d in draws])
    s = np.asarray(s, dtype=float)
    if s.ndim != 3 or len(s) == 0:
        raise ValueError("need a nonempty stack of square draws")
    k = np.asarray(table.output if hasattr(table, "output") else table, dtype=float)
    w = np.asarray(weights, dtype=float)
    m = s.shape[1]
    if k.shape != (m, m) or w.shape != (m,):
        raise ValueError(f"index mismatch: draws {s.shape[1:]}, table {k.shape}, "
                         f"weights {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be nonnegative and finite")
    ww = np.outer(w, w)
    R = len(s)
    d = s - k
    rows = np.column_stack([
        np.ones(R), d.reshape(R, -1), (d ** 2).reshape(R, -1),
    ])

    def a_n(st):
        n = st[0]
        mu, sq = st[1:1 + m * m], st[1 + m * m:]
        if n < 2:
            return 0.0
        return float(np.sum(ww.ravel() * (sq - mu ** 2 / n) / (n - 1)))

    def b_n(st):
        return float(np.sum(ww.ravel() * st[1 + m * m:]) / st[0])

    diag = np.arange(m) * (m + 1)

    def c_n(st):
        return float(np.sum(w * st[1 + m * m:][diag]) / st[0])

    if R >= 2:
        blocks = group_sums(rows, groups)
        out = {}
        for name, fn in (("A_n", a_n), ("B_n", b_n), ("C_n", c_n)):
            out[name], out[name + "_se"] = jackknife(blocks, fn)
        return out
    tot = rows.sum(axis=0)
    return {"A_n": 0.0, "A_n_se": 0.0, "B_n": b_n(tot), "B_n_se": 0.0,
            "C_n": c_n(tot), "C_n_se": 0.0}


def gaussian_pair_bounds(s1sq: float, s2sq: float) -> dict:
    """Coupling bounds between ``N(0, s1sq)`` and ``N(0, s2sq)``:
    ``TV <= 2 |s1sq - s2sq| / max`` (clipped at 1) and ``W1 <= |s1 - s2|``."""
    if not (s1sq > 0 and s2sq > 0):
        raise ValueError("variances must be > 0")
    tv = 2.0 * abs(s1sq - s2sq) / max(s1sq, s2sq)
    return {"tv_bound": min(1.0, tv), "w1_bound": abs(np.sqrt(s1sq) - np.sqrt(s2sq))}

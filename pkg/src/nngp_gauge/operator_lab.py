"""Covariance operators discretized on a grid over a ball, and the
functional bounds built from their square roots.

A kernel ``K((J, x), (J', y))`` on the grid becomes the weighted symmetric
matrix ``D^{1/2} K D^{1/2}`` (``D`` = quadrature weights). In that form the
matrix trace, Hilbert-Schmidt norm and eigenvalues are quadrature
approximations of the operator's. Outputs with ``n_{L+1} > 1`` independent
coordinates are carried as a multiplicity instead of a block-diagonal
matrix.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from math import gamma, pi

import numpy as np

from . import rng as _rng
from .kernel_engine import QuadratureRule, limit_kernel
from .linalg import psd_sqrt, repair_psd, symmetrize
from .net_sampler import CondCovBatch, InputSet, NetworkConfig

log = logging.getLogger(__name__)

SYM_TOL = 1e-10
NEG_EIG_TOL = 1e-8
_COUPLE_CHUNK = 4096


def ball_volume(dim: int, radius: float) -> float:
    return pi ** (dim / 2) / gamma(dim / 2 + 1) * radius ** dim


@dataclass(frozen=True)
class Grid:
    """Tensor midpoint rule on the open ball ``|x - center| < radius``.

    Nodes outside the ball are rejected and the remaining weights are
    rescaled to the exact ball volume. ``order`` 1 adds one derivative
    direction per coordinate axis (index ``j = 1..n_0``); ``multiplicity``
    is the number of output coordinates.
    """

    center: tuple
    radius: float
    per_axis: int
    order: int = 0
    multiplicity: int = 1
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = tuple(float(v) for v in np.atleast_1d(self.center))
        object.__setattr__(self, "center", c)
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        if self.per_axis < 1:
            raise ValueError("need at least one node per axis")
        if self.order not in (0, 1):
            raise ValueError("derivative order must be 0 or 1")
        if self.multiplicity < 1:
            raise ValueError("multiplicity must be >= 1")
        d, m, r = len(c), self.per_axis, float(self.radius)
        h = 2 * r / m
        axis = -r + h * (np.arange(m) + 0.5)
        mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), -1).reshape(-1, d)
        inside = np.linalg.norm(mesh, axis=1) < r
        if not np.any(inside):
            raise ValueError("no grid node falls inside the ball")
        nodes = mesh[inside] + np.asarray(c)
        w = np.full(len(nodes), h ** d)
        w *= ball_volume(d, r) / w.sum()
        nodes.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def volume(self) -> float:
        return ball_volume(self.dim, self.radius)

    @property
    def contains_origin(self) -> bool:
        return float(np.linalg.norm(self.center)) < self.radius

    @property
    def directions(self):
        return np.eye(self.dim) if self.order else None

    @property
    def n_index(self) -> int:
        """Number of derivative indices ``|M_q|`` (the value counts as one)."""
        return 1 + (self.dim if self.order else 0)

    @property
    def index_weights(self) -> np.ndarray:
        """Quadrature weight of every (index, node) column, index-major."""
        return np.tile(self.weights, self.n_index)

    def input_set(self) -> InputSet:
        return InputSet(self.nodes, self.directions)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.nodes).tobytes())
        h.update(np.ascontiguousarray(self.weights).tobytes())
        h.update(f"{self.order}/{self.multiplicity}".encode())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius,
                "per_axis": self.per_axis, "order": self.order,
                "multiplicity": self.multiplicity, "nodes": self.size,
                "digest": self.digest()}

    @classmethod
    def from_dict(cls, d) -> "Grid":
        return cls(tuple(d["center"]), d["radius"], d["per_axis"], d.get("order", 0),
                   d.get("multiplicity", 1))


@dataclass
class DiscreteOperator:
    """Weighted symmetric matrix ``D^{1/2} K D^{1/2}`` (one output coordinate)
    with the output multiplicity carried separately."""

    matrix: np.ndarray
    weights: np.ndarray
    multiplicity: int = 1
    repair: float = 0.0
    grid_digest: str = ""

    @property
    def dim(self) -> int:
        return len(self.matrix)

    @property
    def trace(self) -> float:
        return self.multiplicity * float(np.trace(self.matrix))

    @property
    def hs_norm(self) -> float:
        return float(np.sqrt(self.multiplicity) * np.linalg.norm(self.matrix))

    def eigenvalues(self) -> np.ndarray:
        """Descending, each repeated ``multiplicity`` times."""
        w = np.linalg.eigvalsh(self.matrix)[::-1]
        return np.repeat(w, self.multiplicity)

    def sqrt(self) -> np.ndarray:
        return psd_sqrt(self.matrix)

    def kernel_values(self) -> np.ndarray:
        """Undo the weighting: the kernel on the grid columns."""
        s = 1.0 / np.sqrt(self.weights)
        return self.matrix * np.outer(s, s)

    def to_dict(self) -> dict:
        return {"schema": "nngp-gauge/operator/1", "grid_digest": self.grid_digest,
                "multiplicity": self.multiplicity, "repair": self.repair,
                "weights": self.weights.tolist(), "dim": self.dim,
                "matrix": self.matrix.ravel().tolist()}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d) -> "DiscreteOperator":
        n = d["dim"]
        return cls(np.asarray(d["matrix"], dtype=float).reshape(n, n),
                   np.asarray(d["weights"], dtype=float), d["multiplicity"],
                   d.get("repair", 0.0), d.get("grid_digest", ""))


@dataclass
class SpectralDecomp:
    values: np.ndarray
    vectors: np.ndarray
    reconstruction_error: float

    def functions(self, weights) -> np.ndarray:
        """Eigenfunctions on the grid, orthonormal in the weighted inner product."""
        return self.vectors / np.sqrt(np.asarray(weights))[:, None]


def discretize(kernel, grid: Grid = None, weights=None, multiplicity=None,
               tol: float = SYM_TOL) -> DiscreteOperator:
    """Weighted operator from kernel values on the grid columns.

    Either ``grid`` or explicit ``weights`` (one per column) must be given.
    """
    k = symmetrize(kernel, tol=tol, what="kernel")
    if grid is not None:
        w = grid.index_weights
        mult = grid.multiplicity if multiplicity is None else multiplicity
        digest = grid.digest()
    else:
        if weights is None:
            raise ValueError("need a grid or weights")
        w = np.asarray(weights, dtype=float)
        mult = multiplicity or 1
        digest = ""
    if k.shape != (len(w), len(w)):
        raise ValueError(f"kernel shape {k.shape} does not match {len(w)} grid columns")
    if np.any(w <= 0):
        raise ValueError("quadrature weights must be positive")
    sw = np.sqrt(w)
    m = symmetrize(k * np.outer(sw, sw))
    lam = np.linalg.eigvalsh(m)
    tr = max(float(np.trace(m)), 0.0)
    if lam[0] < -NEG_EIG_TOL * max(tr, 1e-300):
        raise ValueError(f"operator not PSD: eigenvalue {lam[0]:.3g} vs trace {tr:.3g}")
    mag = 0.0
    if lam[0] < 0:
        m, mag = repair_psd(m)
        log.debug("operator PSD repair %.3g", mag)
    return DiscreteOperator(m, w, int(mult), mag, digest)


def discretize_batch(sigmas, grid: Grid) -> np.ndarray:
    """Weighted matrices for a stack of kernel draws (no per-draw repair;
    Gram-form draws are PSD by construction)."""
    s = np.asarray(sigmas, dtype=float)
    sw = np.sqrt(grid.index_weights)
    return symmetrize(s * np.outer(sw, sw))


def limit_operator(config: NetworkConfig, grid: Grid, rule: QuadratureRule = None,
                   require_origin_free: bool = False) -> DiscreteOperator:
    """Discretized limit kernel ``K^(L+1)`` of ``config`` on ``grid``."""
    if require_origin_free and grid.contains_origin:
        raise ValueError("the input ball contains the origin")
    if config.n_in != grid.dim:
        raise ValueError("grid dimension does not match the network input")
    table = limit_kernel(config, grid.input_set(), rule)
    return discretize(table.output, grid)


def spectrum(op: DiscreteOperator) -> SpectralDecomp:
    """Eigenpairs of one output coordinate, descending."""
    w, u = np.linalg.eigh(op.matrix)
    w, u = w[::-1], u[:, ::-1]
    rec = float(np.linalg.norm(op.matrix - (u * w) @ u.T))
    scale = float(np.linalg.norm(op.matrix))
    if rec > 1e-8 * max(scale, 1e-300):
        raise ArithmeticError(f"eigendecomposition reconstruction error {rec:.3g}")
    return SpectralDecomp(w, u, rec)


def _pair(s1, s2):
    def mat(s):
        if isinstance(s, DiscreteOperator):
            return s.matrix, s.multiplicity
        return symmetrize(np.atleast_2d(np.asarray(s, dtype=float)), tol=1e-8), 1

    (m1, k1), (m2, k2) = mat(s1), mat(s2)
    if m1.shape != m2.shape or k1 != k2:
        raise ValueError(f"dimension mismatch: {m1.shape}x{k1} vs {m2.shape}x{k2}")
    return m1, m2, k1


def powers_stormer(s1, s2) -> dict:
    """Both sides of
    ``||sqrt S1 - sqrt S2||_HS <= |Tr S1 - Tr S2|^{1/2}
    + sqrt(2) ||S1 - S2||_HS^{1/4} min(Tr sqrt S1, Tr sqrt S2)^{1/2}``."""
    m1, m2, k = _pair(s1, s2)
    r1, r2 = psd_sqrt(m1), psd_sqrt(m2)
    lhs = np.sqrt(k) * np.linalg.norm(r1 - r2)
    rhs = (np.sqrt(abs(k * (np.trace(m1) - np.trace(m2))))
           + np.sqrt(2.0) * (np.sqrt(k) * np.linalg.norm(m1 - m2)) ** 0.25
           * np.sqrt(k * min(np.trace(r1), np.trace(r2))))
    if lhs > rhs + 1e-8:
        raise AssertionError(f"Powers-Stormer violated: {lhs:.6g} > {rhs:.6g}")
    return {"lhs": float(lhs), "rhs": float(rhs)}


def gelbrich_w2(s1, s2) -> float:
    """``||sqrt S1 - sqrt S2||_HS``, an upper bound on ``W_2`` of the two
    centered Gaussians."""
    m1, m2, k = _pair(s1, s2)
    return float(np.sqrt(k) * np.linalg.norm(psd_sqrt(m1) - psd_sqrt(m2)))


def d2_bound(s1, s2) -> float:
    m1, m2, k = _pair(s1, s2)
    return float(0.5 * np.sqrt(k) * np.linalg.norm(m1 - m2))


def functional_w2_bound(draws, K: DiscreteOperator, groups: int = 64) -> dict:
    """``d2_rhs = B^{1/2} / 2`` and ``w2_rhs = C^{1/4} + sqrt(2) B^{1/8}`` with
    ``B = E ||Sigma - K||_HS^2`` and ``C = E sum_i w_i (Sigma_ii - K_ii)^2``.

    ``draws`` is a stack of weighted matrices on the same grid as ``K`` (or a
    sequence of :class:`DiscreteOperator`).
    """
    if isinstance(draws, np.ndarray):
        s = draws
        digests = set()
    else:
        draws = list(draws)
        if not draws:
            raise ValueError("need at least one draw")
        s = np.stack([d.matrix for d in draws])
        digests = {d.grid_digest for d in draws}
    s = np.asarray(s, dtype=float)
    if s.ndim == 2:
        s = s[None]
    if s.shape[1:] != K.matrix.shape or (digests - {K.grid_digest}):
        raise ValueError("draws and limit operator live on different grids")
    if len(s) == 0:
        raise ValueError("need at least one draw")
    b, c = draw_terms(s, K)
    return functional_bound_from_terms(b, c, groups)


def draw_terms(weighted, K: DiscreteOperator):
    """Per-draw ``||Sigma - K||_HS^2`` and weighted diagonal terms for a stack
    of weighted matrices."""
    diff = np.asarray(weighted, dtype=float) - K.matrix
    k = K.multiplicity
    b = k * np.sum(diff ** 2, axis=(1, 2))
    # weighted diagonal: (w_i Sigma_ii - w_i K_ii)^2 / w_i
    dd = np.diagonal(diff, axis1=1, axis2=2)
    return b, k * np.sum(dd ** 2 / K.weights, axis=1)


def functional_bound_from_terms(b, c, groups: int = 64) -> dict:
    from .jackknife import group_sums, jackknife

    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)

    def d2(st):
        return 0.5 * np.sqrt(st[1] / st[0])

    def w2(st):
        return (st[2] / st[0]) ** 0.25 + np.sqrt(2.0) * (st[1] / st[0]) ** 0.125

    rows = np.column_stack([np.ones(len(b)), b, c])
    if len(b) >= 2:
        blocks = group_sums(rows, groups)
        d2v, d2se = jackknife(blocks, d2)
        w2v, w2se = jackknife(blocks, w2)
    else:
        tot = rows.sum(axis=0)
        d2v, d2se, w2v, w2se = d2(tot), 0.0, w2(tot), 0.0
    return {"B_n": float(b.mean()), "C_n": float(c.mean()), "d2_rhs": float(d2v),
            "d2_rhs_se": float(d2se), "w2_rhs": float(w2v), "w2_rhs_se": float(w2se),
            "draws": int(len(b))}


def eigen_summability(K: DiscreteOperator, exponent: float = 0.5,
                      rel_floor: float = 1e-12) -> dict:
    """Partial sums of ``lambda_k^p`` at ``G/4, G/2, G`` and a power-law tail fit.

    The fit ``lambda_k ~ k^{-gamma}`` uses the eigenvalues above
    ``rel_floor * lambda_1`` from the second up to half the retained count;
    the spectrum is flagged non-summable when ``p * gamma <= 1.05``.
    """
    lam = np.maximum(K.eigenvalues(), 0.0)
    G = len(lam)
    cuts = sorted({max(1, G // 4), max(1, G // 2), G})
    powered = lam ** exponent
    partial = {int(c): float(powered[:c].sum()) for c in cuts}
    keep = lam > rel_floor * lam[0] if lam[0] > 0 else np.zeros(G, bool)
    n_keep = int(np.sum(keep))
    fit = {"gamma": None, "intercept": None, "points": 0}
    summable = None
    lo, hi = 1, max(2, n_keep // 2)
    if hi - lo >= 3:
        k = np.arange(lo, hi) + 1.0
        y = np.log(lam[lo:hi])
        slope, icpt = np.polyfit(np.log(k), y, 1)
        fit = {"gamma": float(-slope), "intercept": float(icpt), "points": int(hi - lo)}
        summable = bool(exponent * -slope > 1.05)
    elif n_keep <= 3:
        summable = True  # finite rank: trivially summable
    return {"exponent": exponent, "partial_sums": partial, "rank": n_keep, "fit": fit,
            "summable": summable, "non_summable_flag": summable is False}


def couple_fields(K: DiscreteOperator, S: DiscreteOperator, replicas: int, seed: int) -> dict:
    """Monte Carlo check of ``E ||E - F||^2 = ||sqrt K - sqrt S||_HS^2`` for the
    coupling ``E = sqrt(S) xi``, ``F = sqrt(K) xi`` with shared ``xi``.

    Chunk ``c`` of ``4096`` replicas draws from ``split(seed, c)``.
    """
    mk, ms, mult = _pair(K, S)
    if replicas < 2:
        raise ValueError("need at least 2 replicas")
    w = K.weights if isinstance(K, DiscreteOperator) else np.ones(len(mk))
    D = psd_sqrt(ms) - psd_sqrt(mk)
    exact = mult * float(np.sum(D * D))
    inv_sw = 1.0 / np.sqrt(w)
    n = len(D)
    sq = np.empty(replicas)
    sup = np.empty(replicas)
    for c, start in enumerate(range(0, replicas, _COUPLE_CHUNK)):
        stop = min(start + _COUPLE_CHUNK, replicas)
        g = _rng.replica_generator(seed, c)
        xi = g.standard_normal((stop - start, mult, n))
        diff = xi @ D  # D symmetric
        sq[start:stop] = np.sum(diff ** 2, axis=(1, 2))
        sup[start:stop] = np.max(np.abs(diff * inv_sw), axis=(1, 2)) ** 2
    mean = float(sq.mean())
    se = float(sq.std(ddof=1) / np.sqrt(replicas))
    z = (mean - exact) / se if se > 0 else (0.0 if abs(mean - exact) < 1e-300 else float("inf"))
    return {"mean_sq": mean, "mean_sq_se": se, "exact": exact, "z_score": float(z),
            "mean_sup_sq": float(sup.mean()), "replicas": int(replicas)}


def spectral_csv(K: DiscreteOperator, exponent: float = 0.5) -> str:
    lam = np.maximum(K.eigenvalues(), 0.0)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["k", "eigenvalue", "partial_sum"])
    acc = np.cumsum(lam ** exponent)
    for i, (l, a) in enumerate(zip(lam, acc), start=1):
        wr.writerow([i, repr(float(l)), repr(float(a))])
    return buf.getvalue()


def sigma_stack_on_grid(batch: CondCovBatch, grid: Grid) -> np.ndarray:
    """Weighted matrices of the sampled ``Sigma`` draws."""
    return discretize_batch(batch.sigma, grid)

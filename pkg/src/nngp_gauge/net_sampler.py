"""Random fully connected networks, forward tangents and conditional covariances.

Two sampling paths produce the same joint law of all pre-activations:

``"weights"``
    materializes ``W[l] ~ N(0, C_W / n_{l-1})`` and ``b[l] ~ N(0, C_b)`` for
    every layer. Pathwise differentiable in the inputs: finite differences on
    a shared seed reproduce the tangents.
``"gram"``
    uses that, given layer ``l - 1``, the rows of layer ``l`` (values and
    tangents for all inputs) are i.i.d. Gaussian with the Gram covariance of
    the previous features. Cost per layer is ``O(n m^2)`` instead of
    ``O(n^2 m)``; this is what the width sweeps use.
"""

from __future__ import annotations

import logging
import os
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from . import rng as _rng
from .linalg import psd_factor, repair_psd, symmetrize
from .nonlinearity import Nonlinearity, from_spec

log = logging.getLogger(__name__)

SAMPLERS = ("weights", "gram")
# float64 elements per chunk of batched work
_CHUNK_ELEMS = 4_000_000


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture ``n_0 -> n_1 -> ... -> n_{L+1}`` with i.i.d. Gaussian init.

    ``depth`` counts hidden layers. ``depth == 0`` is allowed and means the
    output is the affine layer ``z^(1)`` (exactly Gaussian).
    """

    widths: tuple
    c_w: float
    c_b: float
    nonlinearity: Nonlinearity

    def __post_init__(self):
        w = tuple(int(v) for v in self.widths)
        object.__setattr__(self, "widths", w)
        object.__setattr__(self, "nonlinearity", from_spec(self.nonlinearity))
        if len(w) < 2:
            raise ValueError("need at least input and output widths")
        if min(w) < 1:
            raise ValueError(f"all widths must be >= 1, got {w}")
        if not self.c_w > 0:
            raise ValueError(f"C_W must be > 0, got {self.c_w}")
        if not self.c_b >= 0:
            raise ValueError(f"C_b must be >= 0, got {self.c_b}")

    @classmethod
    def uniform(cls, depth, n_in, width, nonlinearity, c_w=1.0, c_b=0.0, n_out=1):
        return cls((n_in,) + (width,) * depth + (n_out,), c_w, c_b, nonlinearity)

    @property
    def depth(self) -> int:
        return len(self.widths) - 2

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def hidden_width(self) -> int:
        """Width ``n_L`` of the last hidden layer (``n_0`` when depth is 0)."""
        return self.widths[-2]

    def with_width(self, n: int) -> "NetworkConfig":
        """Same network with every hidden layer of width ``n``."""
        w = self.widths
        return replace(self, widths=(w[0],) + (int(n),) * self.depth + (w[-1],))

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "c_w": self.c_w,
            "c_b": self.c_b,
            "nonlinearity": self.nonlinearity.describe(),
        }

    @classmethod
    def from_dict(cls, d) -> "NetworkConfig":
        return cls(tuple(d["widths"]), float(d["c_w"]), float(d["c_b"]),
                   from_spec(d["nonlinearity"]))


@dataclass(frozen=True, eq=False)
class InputSet:
    """Inputs ``x_a``, directions ``v_1..v_p`` and the index set ``B``.

    ``index`` holds pairs ``(j, a)``: ``j = 0`` is the value at input ``a``,
    ``j = k >= 1`` the directional derivative along ``v_k``. Only first-order
    derivatives are supported.
    """

    inputs: np.ndarray
    directions: np.ndarray = None
    index: tuple = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if self.directions is None or len(self.directions) == 0:
            v = np.zeros((0, x.shape[1]))
        else:
            v = np.atleast_2d(np.asarray(self.directions, dtype=float))
        if v.shape[1] != x.shape[1]:
            raise ValueError("directions and inputs must share the input dimension")
        if len(x) > 1:
            d = np.abs(x[:, None, :] - x[None, :, :]).max(axis=-1)
            d[np.diag_indices(len(x))] = np.inf
            if np.min(d) == 0.0:
                raise ValueError("inputs must be pairwise distinct")
        if len(v) and np.min(np.abs(v).max(axis=1)) == 0.0:
            raise ValueError("directions must be nonzero")
        if self.index is None:
            idx = tuple((j, a) for j in range(len(v) + 1) for a in range(len(x)))
        else:
            idx = tuple((int(j), int(a)) for j, a in self.index)
        for j, a in idx:
            if not (0 <= j <= len(v) and 0 <= a < len(x)):
                raise ValueError(f"index entry {(j, a)} out of range")
        if len(set(idx)) != len(idx):
            raise ValueError("index entries must be distinct")
        x.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "directions", v)
        object.__setattr__(self, "index", idx)

    def __eq__(self, other):
        if not isinstance(other, InputSet):
            return NotImplemented
        return (self.index == other.index and np.array_equal(self.inputs, other.inputs)
                and np.array_equal(self.directions, other.directions))

    def __hash__(self):
        return hash((self.inputs.tobytes(), self.directions.tobytes(), self.index))

    @property
    def n_inputs(self) -> int:
        return len(self.inputs)

    @property
    def n_directions(self) -> int:
        return len(self.directions)

    @property
    def order(self) -> int:
        return max((1 if j else 0) for j, _ in self.index)

    @property
    def n_columns(self) -> int:
        return (self.n_directions + 1) * self.n_inputs

    def column(self, j: int, a: int) -> int:
        return j * self.n_inputs + a

    @property
    def columns(self) -> np.ndarray:
        return np.array([self.column(j, a) for j, a in self.index], dtype=int)

    @property
    def value_mask(self) -> np.ndarray:
        m = np.zeros(self.n_columns)
        m[: self.n_inputs] = 1.0
        return m

    def base_features(self) -> np.ndarray:
        """Layer-0 features, shape ``(n_0, columns)``: inputs then directions."""
        parts = [self.inputs.T]
        for k in range(self.n_directions):
            parts.append(np.repeat(self.directions[k][:, None], self.n_inputs, axis=1))
        return np.concatenate(parts, axis=1)

    def restrict(self, index) -> "InputSet":
        return InputSet(self.inputs, self.directions, tuple(index))

    def to_dict(self) -> dict:
        return {
            "inputs": self.inputs.tolist(),
            "directions": self.directions.tolist(),
            "index": [list(p) for p in self.index],
        }

    @classmethod
    def from_dict(cls, d) -> "InputSet":
        if not isinstance(d, dict):
            return cls(np.asarray(d, dtype=float))
        return cls(np.asarray(d["inputs"], dtype=float),
                   d.get("directions") or None,
                   d.get("index"))


@dataclass
class ForwardState:
    """Pre-activations of every layer for every column of an :class:`InputSet`.

    ``layers[l - 1]`` has shape ``(n_l, columns)``; columns ``j * A + a`` hold
    values (``j = 0``) and first-order tangents (``j >= 1``).
    """

    layers: list
    n_inputs: int
    seed: int
    sampler: str

    def preactivations(self, layer: int) -> np.ndarray:
        return self.layers[layer - 1][:, : self.n_inputs]

    def tangents(self, layer: int) -> np.ndarray:
        """Shape ``(n_l, p, A)``."""
        z = self.layers[layer - 1]
        return z[:, self.n_inputs:].reshape(z.shape[0], -1, self.n_inputs)

    @property
    def output(self) -> np.ndarray:
        return self.layers[-1]


@dataclass
class CondCovDraw:
    """One realization of ``Sigma^(L)`` over the index set ``B``."""

    sigma: np.ndarray
    width: int
    seed: int
    repair: float = 0.0


@dataclass
class CondCovBatch(Sequence):
    """Replica-ordered stack of conditional covariances.

    Behaves as a sequence of :class:`CondCovDraw`; ``sigma`` is the stacked
    ``(replicas, |B|, |B|)`` array. ``outputs`` (optional) holds the first
    output neuron over ``B`` for each replica.
    """

    sigma: np.ndarray
    width: int
    base_seed: int
    outputs: Optional[np.ndarray] = None
    repair: float = 0.0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.sigma)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        k = range(len(self))[k]
        return CondCovDraw(self.sigma[k], self.width, _rng.split(self.base_seed, k))

    def entry(self, i=0, j=None) -> np.ndarray:
        """Samples of one entry, default the first diagonal entry."""
        return self.sigma[:, i, i if j is None else j]


# --------------------------------------------------------------------------
# batched core


def _features(z, mask, sigma: Nonlinearity, n_inputs):
    """Post-activation features: sigma(z) on value columns and
    sigma'(z_a) * dz on tangent columns."""
    vals = z[..., :n_inputs]
    out = np.empty_like(z)
    out[..., :n_inputs] = sigma(vals)
    if z.shape[-1] > n_inputs:
        d = sigma.deriv(vals)
        p = z.shape[-1] // n_inputs - 1
        tang = z[..., n_inputs:].reshape(z.shape[:-1] + (p, n_inputs))
        out[..., n_inputs:] = (tang * d[..., None, :]).reshape(z.shape[:-1] + (-1,))
    return out


def _gram(config, feats, fan_in, mask):
    g = (np.swapaxes(feats, -1, -2) @ feats) * (config.c_w / fan_in)
    return g + config.c_b * np.outer(mask, mask)


def _forward_batch(config: NetworkConfig, inputs: InputSet, seeds, sampler,
                   n_layers=None):
    """Pre-activations of layers ``1..n_layers`` for each seed.

    Returns a list of arrays of shape ``(R, n_l, columns)``. Each replica
    draws its own stream in a fixed per-layer order, so truncating
    ``n_layers`` never changes earlier layers.
    """
    if sampler not in SAMPLERS:
        raise ValueError(f"sampler must be one of {SAMPLERS}")
    if inputs.inputs.shape[1] != config.n_in:
        raise ValueError(
            f"inputs have dimension {inputs.inputs.shape[1]}, network expects {config.n_in}")
    n_layers = config.depth + 1 if n_layers is None else n_layers
    gens = [_rng.generator(s) for s in seeds]
    R = len(gens)
    widths = config.widths
    mask = inputs.value_mask
    cols = inputs.n_columns
    sigma = config.nonlinearity
    feats = np.broadcast_to(inputs.base_features(), (R, widths[0], cols))
    sb = np.sqrt(config.c_b)
    out = []
    for layer in range(1, n_layers + 1):
        n_out, n_prev = widths[layer], widths[layer - 1]
        if sampler == "weights":
            W = np.empty((R, n_out, n_prev))
            b = np.empty((R, n_out))
            for r, g in enumerate(gens):
                g.standard_normal(out=W[r])
                g.standard_normal(out=b[r])
            z = (W @ feats) * np.sqrt(config.c_w / n_prev)
            z += (sb * b)[:, :, None] * mask
        else:
            xi = np.empty((R, n_out, cols))
            for r, g in enumerate(gens):
                g.standard_normal(out=xi[r])
            fac = psd_factor(_gram(config, feats, n_prev, mask))
            z = xi @ fac
        out.append(z)
        feats = _features(z, mask, sigma, inputs.n_inputs)
    return out


def _sigma_from_last(config, inputs, z_last):
    """Sigma^(L) over all columns from layer-L pre-activations (batched)."""
    mask = inputs.value_mask
    if config.depth == 0:
        feats = inputs.base_features()
        return _gram(config, feats, config.widths[0], mask)
    feats = _features(z_last, mask, config.nonlinearity, inputs.n_inputs)
    return _gram(config, feats, config.widths[-2], mask)


def _restrict(sig, inputs):
    c = inputs.columns
    return sig[..., c[:, None], c[None, :]]


def _finish_sigma(sig, inputs):
    sig = symmetrize(sig)
    if inputs.order == 0:
        return sig, 0.0
    fixed, mag = repair_psd(sig)
    if mag > 0:
        log.debug("PSD repair on derivative-extended Sigma: %.3g", mag)
    return fixed, mag


# --------------------------------------------------------------------------
# public operations


def forward(config: NetworkConfig, inputs: InputSet, seed: int,
            sampler: str = "weights") -> ForwardState:
    """Sample one network and propagate values and first-order tangents."""
    layers = _forward_batch(config, inputs, [seed], sampler)
    return ForwardState([z[0] for z in layers], inputs.n_inputs, seed, sampler)


def conditional_covariance(state: ForwardState, config: NetworkConfig,
                           inputs: InputSet) -> CondCovDraw:
    """``Sigma^(L) = C_b + C_W / n_L * sum_j V sigma(z_j) V sigma(z_j)``."""
    z_last = state.layers[config.depth - 1] if config.depth else None
    sig = _restrict(_sigma_from_last(config, inputs, z_last), inputs)
    sig, mag = _finish_sigma(sig, inputs)
    return CondCovDraw(sig, config.hidden_width, state.seed, mag)


def _chunk_size(config, inputs, sampler):
    cols = inputs.n_columns
    w = config.widths
    if sampler == "weights":
        per = max(a * b for a, b in zip(w[1:], w[:-1])) + max(w) * cols
    else:
        per = max(w) * cols * 3 + cols * cols * 4
    return max(1, min(4096, _CHUNK_ELEMS // per))


def _layer_diag(config, inputs, layers):
    """``Sigma^(l)`` at the first value column for ``l = 0..L`` (per replica)."""
    mask = inputs.value_mask
    R = layers[0].shape[0] if layers else 1
    base = inputs.base_features()[:, :1]
    out = np.empty((R, config.depth + 1))
    out[:, 0] = config.c_b + config.c_w / config.widths[0] * float(base[:, 0] @ base[:, 0])
    for l in range(1, config.depth + 1):
        f = config.nonlinearity(layers[l - 1][:, :, 0])
        out[:, l] = config.c_b * mask[0] + config.c_w / config.widths[l] * np.sum(f * f, axis=1)
    return out


def _draw_range(config, inputs, base_seed, start, stop, sampler, with_output):
    seeds = [_rng.split(base_seed, k) for k in range(start, stop)]
    n_layers = config.depth + 1 if with_output else config.depth
    layers = _forward_batch(config, inputs, seeds, sampler, n_layers=n_layers)
    z_last = layers[config.depth - 1] if config.depth else None
    sig = _restrict(_sigma_from_last(config, inputs, z_last), inputs)
    if config.depth == 0:
        sig = np.broadcast_to(sig, (stop - start,) + sig.shape).copy()
    sig, mag = _finish_sigma(sig, inputs)
    outputs = layers[-1][:, 0, inputs.columns] if with_output else None
    diag = _layer_diag(config, inputs, layers)
    if config.depth == 0:
        diag = np.broadcast_to(diag, (stop - start, 1)).copy()
    return sig, outputs, mag, diag


def default_workers() -> int:
    env = os.environ.get("NNGP_GAUGE_WORKERS")
    return max(1, int(env)) if env else 1


def iter_cond_cov_chunks(config: NetworkConfig, inputs: InputSet, replicas: int,
                         base_seed: int, sampler="weights", with_output=False,
                         workers=None, chunk=None) -> Iterator[tuple]:
    """Yield ``(start, sigma, outputs, repair, layer_diag)`` for consecutive
    replica ranges. ``layer_diag[:, l]`` is ``Sigma^(l)`` at the first input
    for ``l = 0..L``.

    Replica ``k`` always uses ``split(base_seed, k)``; chunking and worker
    count never change the numbers.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    chunk = chunk or _chunk_size(config, inputs, sampler)
    ranges = [(s, min(s + chunk, replicas)) for s in range(0, replicas, chunk)]
    workers = default_workers() if workers is None else workers
    args = (config, inputs, base_seed)
    if workers <= 1 or len(ranges) == 1:
        for s, e in ranges:
            yield (s,) + _draw_range(*args, s, e, sampler, with_output)
        return
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(_draw_range, *args, s, e, sampler, with_output)
                for s, e in ranges]
        for (s, _), f in zip(ranges, futs):
            yield (s,) + f.result()


def draw_cond_covs(config: NetworkConfig, inputs: InputSet, replicas: int,
                   base_seed: int, sampler="weights", with_output=False,
                   workers=None) -> CondCovBatch:
    sigs, outs, mag = [], [], 0.0
    for _, s, o, m, _ in iter_cond_cov_chunks(config, inputs, replicas, base_seed,
                                           sampler, with_output, workers):
        sigs.append(s)
        if with_output:
            outs.append(o)
        mag = max(mag, m)
    return CondCovBatch(
        np.concatenate(sigs), config.hidden_width, base_seed,
        np.concatenate(outs) if with_output else None, mag,
        {"sampler": sampler, "rng": _rng.MIXER_ID},
    )

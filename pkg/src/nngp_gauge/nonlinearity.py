"""Pointwise nonlinearities with their derivatives and smoothness order."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

# Order assigned to C-infinity nonlinearities; only compared against q <= 1.
SMOOTH_ORDER = 8

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class Nonlinearity:
    tag: str
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    deriv: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    order: int
    params: tuple = ()
    kinks: tuple = ()

    def __call__(self, x):
        return self.fn(x)

    @property
    def piecewise_linear(self) -> bool:
        return self.tag in ("relu", "leaky_relu")

    @property
    def smooth(self) -> bool:
        return self.order >= 2

    def describe(self) -> dict:
        return {"tag": self.tag, "params": list(self.params), "order": self.order}

    def check_derivative(self, probe=None, step=1e-6, rtol=1e-5) -> float:
        """Largest mismatch between ``deriv`` and central differences of ``fn``.

        Probe points within ``10 * step`` of a kink are skipped. Raises
        ``ValueError`` when the mismatch exceeds ``rtol`` (relative to
        ``1 + |deriv|``).
        """
        if probe is None:
            probe = np.linspace(-4.0, 4.0, 801)
        probe = np.asarray(probe, dtype=float)
        for k in self.kinks:
            probe = probe[np.abs(probe - k) > 10 * step]
        fd = (self.fn(probe + step) - self.fn(probe - step)) / (2 * step)
        d = self.deriv(probe)
        err = float(np.max(np.abs(fd - d) / (1.0 + np.abs(d))))
        if err > rtol:
            raise ValueError(f"{self.tag}: derivative mismatch {err:.3g}")
        return err


def relu() -> Nonlinearity:
    # derivative at exactly 0 is 0 by convention
    return Nonlinearity(
        "relu",
        lambda x: np.maximum(x, 0.0),
        lambda x: (np.asarray(x) > 0).astype(float),
        order=1,
        kinks=(0.0,),
    )


def leaky_relu(slope: float = 0.01) -> Nonlinearity:
    a = float(slope)
    return Nonlinearity(
        "leaky_relu",
        lambda x: np.where(np.asarray(x) > 0, x, a * np.asarray(x)),
        lambda x: np.where(np.asarray(x) > 0, 1.0, a),
        order=1,
        params=(a,),
        kinks=(0.0,),
    )


def tanh() -> Nonlinearity:
    return Nonlinearity(
        "tanh", np.tanh, lambda x: 1.0 - np.tanh(x) ** 2, order=SMOOTH_ORDER
    )


def gelu() -> Nonlinearity:
    def d(x):
        x = np.asarray(x, dtype=float)
        return ndtr(x) + x * np.exp(-0.5 * x * x) / _SQRT_2PI

    return Nonlinearity(
        "gelu", lambda x: np.asarray(x) * ndtr(x), d, order=SMOOTH_ORDER
    )


def identity() -> Nonlinearity:
    return Nonlinearity(
        "identity",
        lambda x: np.asarray(x, dtype=float),
        lambda x: np.ones_like(np.asarray(x, dtype=float)),
        order=SMOOTH_ORDER,
    )


def polynomial(coeffs) -> Nonlinearity:
    """``sum_k coeffs[k] * x**k``."""
    c = tuple(float(v) for v in coeffs)
    if not c:
        raise ValueError("polynomial needs at least one coefficient")
    p = np.polynomial.Polynomial(c)
    dp = p.deriv()
    return Nonlinearity(
        "polynomial", lambda x: p(np.asarray(x, dtype=float)),
        lambda x: dp(np.asarray(x, dtype=float)), order=SMOOTH_ORDER, params=c,
    )


def custom(fn, deriv, order: int, name: str = "custom",
           kinks: Optional[tuple] = None) -> Nonlinearity:
    if order < 1:
        raise ValueError("smoothness order must be >= 1")
    return Nonlinearity("custom", fn, deriv, order=int(order), params=(name,),
                        kinks=tuple(kinks or ()))


_FACTORIES = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "gelu": gelu,
    "identity": identity,
    "polynomial": polynomial,
}


def from_spec(spec) -> Nonlinearity:
    """Build from a name (``"tanh"``, ``"leaky_relu:0.1"``,
    ``"polynomial:0,1,0.5"``) or a ``describe()`` dict."""
    if isinstance(spec, Nonlinearity):
        return spec
    if isinstance(spec, dict):
        tag, params = spec["tag"], list(spec.get("params", []))
    else:
        tag, _, rest = str(spec).partition(":")
        params = [float(v) for v in rest.split(",")] if rest else []
    tag = tag.lower().replace("-", "_")
    if tag not in _FACTORIES:
        raise ValueError(f"unknown nonlinearity {tag!r}")
    if tag == "polynomial":
        return polynomial(params)
    return _FACTORIES[tag](*params)

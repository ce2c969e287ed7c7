"""Quantitative gauges for how far a finite-width random network is from its
Gaussian-process limit."""

from .kernel_engine import KernelTable, QuadratureRule, limit_kernel, nondegeneracy_check
from .net_sampler import CondCovBatch, InputSet, NetworkConfig, draw_cond_covs
from .nonlinearity import Nonlinearity, from_spec

__version__ = "0.1.0"

__all__ = [
    "CondCovBatch", "InputSet", "KernelTable", "NetworkConfig", "Nonlinearity",
    "QuadratureRule", "draw_cond_covs", "from_spec", "limit_kernel", "nondegeneracy_check",
]

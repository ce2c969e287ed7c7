"""Symmetric PSD helpers: symmetrization, eigenvalue clipping, square roots."""

import logging

import numpy as np

log = logging.getLogger(__name__)


def symmetrize(m, tol=None, what="matrix"):
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError(f"{what} must be square, got shape {m.shape}")
    if tol is not None:
        scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
        asym = float(np.max(np.abs(m - np.swapaxes(m, -1, -2)))) if m.size else 0.0
        if asym > tol * scale:
            raise ValueError(f"{what} is not symmetric (max asymmetry {asym:.3g})")
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def repair_psd(m):
    """Clip negative eigenvalues at zero.

    Returns ``(repaired, magnitude)`` where ``magnitude`` is the largest
    clipped eigenvalue in absolute value (0 when nothing was clipped).
    Works on stacks of matrices.
    """
    m = symmetrize(m)
    w, u = np.linalg.eigh(m)
    neg = np.minimum(w, 0.0)
    mag = float(np.max(-neg)) if neg.size else 0.0
    if mag == 0.0:
        return m, 0.0
    w = np.maximum(w, 0.0)
    out = (u * w[..., None, :]) @ np.swapaxes(u, -1, -2)
    return symmetrize(out), mag


def psd_sqrt(m):
    """Symmetric square root via eigendecomposition with clipping at 0."""
    w, u = np.linalg.eigh(symmetrize(m))
    r = (u * np.sqrt(np.maximum(w, 0.0))[..., None, :]) @ np.swapaxes(u, -1, -2)
    return symmetrize(r)


def psd_factor(m):
    """Return ``R`` with ``R.T @ R == m`` (rows sampler: ``xi @ R``)."""
    w, u = np.linalg.eigh(symmetrize(m))
    return np.sqrt(np.maximum(w, 0.0))[..., :, None] * np.swapaxes(u, -1, -2)


def hs_norm(m) -> float:
    return float(np.sqrt(np.sum(np.asarray(m, dtype=float) ** 2)))

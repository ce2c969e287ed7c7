import numpy as np
import pytest
import scipy.linalg

from nngp_gauge import linalg


def test_psd_sqrt_matches_scipy():
    g = np.random.default_rng(0)
    a = g.normal(size=(6, 6))
    m = a @ a.T
    np.testing.assert_allclose(linalg.psd_sqrt(m), scipy.linalg.sqrtm(m).real, atol=1e-10)


def test_psd_factor_reconstructs():
    g = np.random.default_rng(1)
    a = g.normal(size=(3, 5, 5))
    m = a @ np.swapaxes(a, -1, -2)
    r = linalg.psd_factor(m)
    np.testing.assert_allclose(np.swapaxes(r, -1, -2) @ r, m, atol=1e-10)


def test_repair_reports_clipped_magnitude():
    m = np.diag([2.0, -1e-3, 1.0])
    fixed, mag = linalg.repair_psd(m)
    assert mag == pytest.approx(1e-3)
    np.testing.assert_allclose(fixed, np.diag([2.0, 0.0, 1.0]), atol=1e-15)
    assert linalg.repair_psd(np.eye(2))[1] == 0.0


def test_symmetrize_tolerance():
    m = np.array([[1.0, 2.0], [2.1, 1.0]])
    with pytest.raises(ValueError, match="not symmetric"):
        linalg.symmetrize(m, tol=1e-8)
    with pytest.raises(ValueError, match="square"):
        linalg.symmetrize(np.ones((2, 3)))
    np.testing.assert_allclose(linalg.symmetrize(m), [[1, 2.05], [2.05, 1]])

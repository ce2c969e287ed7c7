import numpy as np
import pytest

from nngp_gauge import nonlinearity as nl


@pytest.mark.parametrize("spec", ["relu", "leaky_relu:0.2", "tanh", "gelu", "identity",
                                  "polynomial:0.5,1,0.25"])
def test_derivatives_match_central_differences(spec):
    f = nl.from_spec(spec)
    assert f.check_derivative() < 1e-5


def test_spec_roundtrip_and_errors():
    f = nl.from_spec("leaky_relu:0.1")
    g = nl.from_spec(f.describe())
    x = np.linspace(-2, 2, 9)
    np.testing.assert_array_equal(f(x), g(x))
    with pytest.raises(ValueError, match="unknown"):
        nl.from_spec("softsign")
    with pytest.raises(ValueError):
        nl.polynomial([])
    with pytest.raises(ValueError):
        nl.custom(np.sin, np.cos, order=0)


def test_smoothness_classes():
    assert nl.relu().piecewise_linear and not nl.relu().smooth
    assert nl.tanh().smooth and not nl.tanh().piecewise_linear
    np.testing.assert_allclose(nl.gelu()(np.array([0.0, 1.0])), [0.0, 0.8413447460685429])


def test_bad_custom_derivative_is_caught():
    bad = nl.custom(np.sin, np.sin, order=3)
    with pytest.raises(ValueError, match="mismatch"):
        bad.check_derivative()

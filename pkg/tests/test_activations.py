import numpy as np
import pytest

from glmcomplexity.activations import BUILTIN_NAMES, builtin, derivative_errors, well_behaved_diagnostic

PARAMS = {"smoothed_leaky_relu": {"leak": 0.1, "beta": 0.5}}


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_derivatives_match_finite_differences(name):
    phi = builtin(name, **PARAMS.get(name, {}))
    e1, e2 = derivative_errors(phi)
    assert e1 <= 1e-6
    assert e2 <= 1e-6


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_d2_bound_holds_on_grid(name):
    phi = builtin(name, **PARAMS.get(name, {}))
    if np.isfinite(phi.d2_bound):
        x = np.linspace(-5, 5, 101)
        assert np.all(np.abs(phi.d2(x)) <= phi.d2_bound + 1e-15)


def test_tanh_at_zero(tanh):
    assert tanh(0.0) == 0.0
    assert tanh.d1(0.0) == 1.0
    assert tanh.d2(0.0) == 0.0


def test_linear_derivatives(linear):
    x = np.linspace(-3, 3, 13)
    np.testing.assert_array_equal(linear.d1(x), 1.0)
    np.testing.assert_array_equal(linear.d2(x), 0.0)


def test_half_square_has_unit_curvature(half_square):
    np.testing.assert_array_equal(half_square.d2(np.linspace(-4, 4, 9)), 1.0)


def test_smoothed_leaky_relu_slope_at_zero():
    phi = builtin("smoothed_leaky_relu", leak=0.1, beta=0.5)
    np.testing.assert_allclose(phi.d1(0.0), 0.55, rtol=0, atol=1e-15)


@pytest.mark.parametrize("kwargs", [{"leak": 0.0, "beta": 0.5}, {"leak": 1.0, "beta": 0.5},
                                    {"leak": 0.1, "beta": 0.0}, {"leak": 0.1}])
def test_smoothed_leaky_relu_rejects_bad_parameters(kwargs):
    with pytest.raises(ValueError):
        builtin("smoothed_leaky_relu", **kwargs)


def test_unknown_name_rejected():
    with pytest.raises(ValueError):
        builtin("relu6")


def test_unexpected_parameter_rejected():
    with pytest.raises(ValueError):
        builtin("tanh", leak=0.1)


@pytest.mark.parametrize("name, flagged", [("tanh", False), ("sigmoid", False), ("linear", True)])
def test_well_behaved_diagnostic(name, flagged):
    report = well_behaved_diagnostic(builtin(name), samples=100_000, seed=0)
    assert report.flagged is flagged


def test_diagnostic_requires_enough_samples(tanh):
    with pytest.raises(ValueError):
        well_behaved_diagnostic(tanh, samples=100)

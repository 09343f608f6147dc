import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from warpmin.errors import InvalidParams
from warpmin.functions import make_function

SPECS = [
    {"type": "const", "value": 2.0},
    {"type": "affine", "a": 0.5, "b": 1.0},
    {"type": "power", "a": 1.5, "p": 2.5, "c": -3.0},
    {"type": "exp", "a": 1.0, "b": 0.7},
    {"type": "cosh", "b": 1.3},
    {"type": "sinh", "a": 2.0},
    {"type": "sin", "a": 2.0, "b": 0.5},
    {"type": "fourier", "c0": 2.0, "a": [0.5, 0.1], "b": [0.3]},
    {"type": "spline", "knots": [-2, -1, 0, 1, 2, 3], "values": [1, 2, 1.5, 3, 2, 1]},
]


@pytest.mark.parametrize("spec", SPECS, ids=[s["type"] for s in SPECS])
def test_derivatives_match_finite_differences(spec):
    f = make_function(spec)
    t = np.linspace(-1.5, 1.5, 31) + 0.013  # keep off spline knots
    h = 1e-4
    d1 = (f(t + h) - f(t - h)) / (2 * h)
    d2 = (f(t + h) - 2 * f(t) + f(t - h)) / h**2
    assert np.allclose(f.deriv(t), d1, atol=1e-6)
    assert np.allclose(f.deriv(t, 2), d2, atol=1e-4)


def test_number_and_string_specs():
    assert make_function(3.0)(np.array([0.0, 5.0])).tolist() == [3.0, 3.0]
    assert make_function("cosh")(0.0) == pytest.approx(1.0)


def test_spec_round_trip():
    for spec in SPECS:
        f = make_function(spec)
        g = make_function(f.to_spec())
        t = np.linspace(-1, 1, 7)
        assert np.array_equal(f(t), g(t))


@pytest.mark.parametrize("bad", [{"type": "nope"}, {"kind": "cosh"}, {"type": "exp", "zz": 1},
                                 {"type": "spline", "knots": [0, 1], "values": [0, 1]}])
def test_bad_specs(bad):
    with pytest.raises(InvalidParams):
        make_function(bad)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(-1, 1), st.floats(-1, 1))
def test_fourier_second_derivative_identity(t, a1, b1):
    # for a single harmonic, f'' = -(f - c0)
    f = make_function({"type": "fourier", "c0": 1.0, "a": [a1], "b": [b1]})
    assert f.deriv(t, 2) == pytest.approx(-(f(t) - 1.0), abs=1e-12)

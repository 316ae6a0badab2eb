import math

import numpy as np
import pytest
from scipy.integrate import quad

from transport_uniqueness import quadrature
from transport_uniqueness.errors import QuadratureError


def test_rule_weights_are_consistent():
    assert quadrature.KRONROD_WEIGHTS.sum() == pytest.approx(2.0, abs=1e-15)
    assert quadrature.GAUSS_WEIGHTS.sum() == pytest.approx(2.0, abs=1e-15)
    # Kronrod is exact to degree 22, Gauss to degree 13
    for p in range(0, 23, 2):
        assert quadrature.KRONROD_WEIGHTS @ quadrature.NODES**p == pytest.approx(2.0 / (p + 1), abs=1e-14)
    for p in range(0, 14, 2):
        assert quadrature.GAUSS_WEIGHTS @ quadrature.NODES**p == pytest.approx(2.0 / (p + 1), abs=1e-14)


@pytest.mark.parametrize(
    "f,a,b",
    [
        (np.exp, 0.0, 1.0),
        (lambda x: 1.0 / (1.0 + x * x), -50.0, 3.0),
        (lambda x: np.sin(20 * x) ** 2, 0.0, 2.0),
        (lambda x: np.exp(-(x**2)), -8.0, 8.0),
        (lambda x: np.abs(x - 0.3), -1.0, 1.0),
    ],
)
def test_agrees_with_scipy(f, a, b):
    ref, _ = quad(lambda t: float(f(np.array([t]))[0]), a, b, epsabs=1e-14, epsrel=1e-13, limit=500)
    val, err = quadrature.integrate(f, a, b)
    assert val == pytest.approx(ref, rel=1e-11, abs=1e-13)
    assert err <= 1e-10


def test_orientation_and_empty_interval():
    assert quadrature.integrate(np.exp, 1.0, 0.0)[0] == pytest.approx(-(math.e - 1), rel=1e-14)
    assert quadrature.integrate(np.exp, 2.0, 2.0) == (0.0, 0.0)


def test_endpoint_singularity():
    val, _ = quadrature.integrate(lambda x: 1 / np.sqrt(x), 0.0, 1.0, rel_tol=1e-8)
    assert val == pytest.approx(2.0, rel=1e-7)
    val, _ = quadrature.integrate(np.log, 0.0, 1.0)
    assert val == pytest.approx(-1.0, rel=1e-10)


def test_many_intervals_at_once():
    a = np.linspace(0, 3, 7)
    vals, _ = quadrature.integrate_many(np.cos, a, a + 1)
    np.testing.assert_allclose(vals, np.sin(a + 1) - np.sin(a), rtol=1e-13, atol=1e-15)


def test_cumulative_matches_antiderivative():
    xs = np.array([3.0, -2.0, 0.5, -0.1, 10.0])
    out = quadrature.cumulative(lambda x: 1 / (1 + x * x), 0.0, xs)
    np.testing.assert_allclose(out, np.arctan(xs), rtol=1e-12)


def test_overflow_makes_integral_infinite():
    with np.errstate(over="ignore"):
        val, _ = quadrature.integrate(np.exp, 0.0, 1e4)
    assert math.isinf(val)


def test_failure_names_a_panel():
    with pytest.raises(QuadratureError) as info:
        quadrature.integrate(lambda x: np.sign(np.sin(1 / (x + 1e-300))) / np.maximum(x, 1e-300), 0.0, 1.0,
                             max_depth=20)
    lo, hi = info.value.panel
    assert 0.0 <= lo < hi <= 1.0

from math import factorial

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helmfosls.errors import QuadratureNonConvergent
from helmfosls.quadrature import converge, edge_rule, triangle_rule


def monomial_integral(a, b):
    # int over the reference triangle of x^a y^b
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@given(st.integers(0, 26))
def test_triangle_rule_exact(degree):
    x, w = triangle_rule(degree)
    assert np.all(w > 0)
    assert w.sum() == pytest.approx(0.5, rel=1e-14)
    assert np.all(x >= 0) and np.all(x.sum(axis=1) <= 1)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = monomial_integral(a, b)
            assert abs(w @ (x[:, 0] ** a * x[:, 1] ** b) - exact) <= 1e-14 * exact


@given(st.integers(0, 60))
def test_edge_rule_exact(degree):
    s, w = edge_rule(degree)
    assert np.all(w > 0)
    for a in range(degree + 1):
        assert w @ s ** a == pytest.approx(1.0 / (a + 1), rel=1e-14)


def test_rules_are_read_only():
    x, w = triangle_rule(4)
    with pytest.raises(ValueError):
        w[0] = 1.0


def test_converge_oscillatory():
    # int_0^1 exp(i k s) ds for a wave needing many points
    k = 60.0
    exact = (np.exp(1j * k) - 1.0) / (1j * k)

    def f(deg):
        s, w = edge_rule(deg)
        return np.array([w @ np.exp(1j * k * s)])

    val = converge(f, 4)
    assert abs(val[0] - exact) < 1e-12


def test_converge_gives_up():
    with pytest.raises(QuadratureNonConvergent):
        converge(lambda deg: np.array([(-1.0) ** deg * deg]), 2, max_degree=64)

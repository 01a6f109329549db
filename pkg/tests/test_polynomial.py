import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from willmore_lab.polynomial import Polynomial3

Y = sp.symbols("y1 y2 y3")

exps = st.tuples(*[st.integers(0, 2)] * 3).filter(lambda e: sum(e) <= 4)
polys = st.dictionaries(exps, st.floats(-2, 2, allow_nan=False).filter(lambda c: abs(c) > 1e-3), max_size=6)
points = st.lists(st.floats(-0.9, 0.9), min_size=3, max_size=3)


def _sym(terms):
    return sp.Integer(0) + sum(c * Y[0] ** i * Y[1] ** j * Y[2] ** k for (i, j, k), c in terms.items())


@given(polys, points)
def test_derivatives_match_symbolic(terms, y):
    p = Polynomial3(terms)
    expr = _sym(terms)
    subs = dict(zip(Y, y))
    f, d1, d2, d3 = p.derivatives(np.array(y), 3)
    assert f == pytest.approx(float(expr.subs(subs)), abs=1e-12)
    for a in range(3):
        assert d1[a] == pytest.approx(float(sp.diff(expr, Y[a]).subs(subs)), abs=1e-11)
        for b in range(3):
            assert d2[a, b] == pytest.approx(float(sp.diff(expr, Y[a], Y[b]).subs(subs)), abs=1e-11)
            assert d3[a, b, 0] == pytest.approx(float(sp.diff(expr, Y[a], Y[b], Y[0]).subs(subs)), abs=1e-10)


@given(polys)
def test_config_round_trip(terms):
    p = Polynomial3(terms)
    assert Polynomial3.from_config(p.to_config()) == p
    as_strings = {",".join(map(str, e)): c for e, c in p.terms.items()}
    assert Polynomial3.from_config(as_strings) == p


def test_vectorised_evaluation():
    p = Polynomial3({(1, 1, 0): 2.0, (0, 0, 2): -1.0})
    y = np.random.default_rng(0).normal(size=(4, 5, 3))
    np.testing.assert_allclose(p(y), 2 * y[..., 0] * y[..., 1] - y[..., 2] ** 2, atol=1e-14)
    assert p.derivatives(y, 2)[2].shape == (4, 5, 3, 3)


def test_zero_and_bad_input():
    assert Polynomial3({(1, 0, 0): 0.0}).is_zero()
    assert Polynomial3().degree == 0
    with pytest.raises(ValueError):
        Polynomial3({(1, -1, 0): 1.0})
    with pytest.raises(ValueError):
        Polynomial3({(1, 0): 1.0})
    with pytest.raises(ValueError):
        Polynomial3({(1, 0, 0): 1.0}).derivatives(np.zeros(3), 5)

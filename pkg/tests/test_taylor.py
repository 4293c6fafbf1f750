import math

import numpy as np
from hypothesis import given, strategies as st

from projtractor.taylor import Taylor, contract

coeffs = st.lists(st.floats(-2, 2), min_size=10, max_size=10)


def _jet(c):
    # two variables, order 3 -> 10 monomials
    return Taylor(np.array(c, dtype=float)[None], 2, 3)


def test_variable_layout():
    t = Taylor.variable(np.array([[1.5, -2.0]]), 1, 2)
    d = t.derivative_arrays()
    assert d[0][0] == -2.0
    np.testing.assert_array_equal(d[1][0], [0.0, 1.0])
    assert not np.any(d[2])


@given(coeffs, coeffs)
def test_product_commutes(a, b):
    A, B = _jet(a), _jet(b)
    np.testing.assert_allclose((A * B).c, (B * A).c, atol=1e-12)


@given(coeffs)
def test_reciprocal_inverts(a):
    a = list(a)
    a[0] = 1.0 + abs(a[0])
    A = _jet(a)
    one = (A * A.reciprocal()).c[0]
    np.testing.assert_allclose(one, np.eye(10)[0], atol=1e-10)


@given(coeffs)
def test_derivative_round_trip(a):
    A = _jet(a)
    back = Taylor.from_derivatives(A.derivative_arrays(), 2)
    np.testing.assert_allclose(back.c, A.c, atol=1e-14)


def test_compose_exp_of_sum():
    x = Taylor.variable(np.array([[0.2, 0.5]]), 0, 3)
    y = Taylor.variable(np.array([[0.2, 0.5]]), 1, 3)
    s = x + y
    e = s.compose([math.exp(0.7)] * 4)
    prod = x.compose([math.exp(0.2)] * 4) * y.compose([math.exp(0.5)] * 4)
    np.testing.assert_allclose(e.c, prod.c, rtol=1e-14)


def test_partials_lower_order():
    x = Taylor.variable(np.array([[1.0, 2.0]]), 0, 3)
    f = x.ipow(3)
    g = f.partials()
    assert g.order == 2
    np.testing.assert_allclose(g.derivative_arrays()[0][0], [3.0, 0.0])


def test_contract_matches_einsum():
    rng = np.random.default_rng(3)
    A = Taylor(rng.normal(size=(4, 2, 3, 6)), 2, 2)
    B = Taylor(rng.normal(size=(4, 3, 2, 6)), 2, 2)
    out = contract("pij,pjk->pik", A, B)
    # value and first derivatives by the product rule
    np.testing.assert_allclose(out.value, np.einsum("pij,pjk->pik", A.value, B.value), atol=1e-13)
    dA, dB, dO = A.partials().value, B.partials().value, out.partials().value
    ref = np.einsum("pcij,pjk->pcik", dA, B.value) + np.einsum("pij,pcjk->pcik", A.value, dB)
    np.testing.assert_allclose(dO, ref, atol=1e-12)

import itertools
from math import factorial

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from pdrci import polya
from pdrci.polya import (PolyaOverflowError, enumerate_exponents, modified_coeff_pair,
                         modified_coeff_single, multinomial, n_exponents, polya_combine,
                         quadratic_relaxation_weights)
from pdrci.verify import check_assembly_oracle, expand_polya


def test_enumerate_three_by_three():
    exps = enumerate_exponents(3, 3)
    assert len(exps) == 10
    assert exps[:3] == ((0, 0, 3), (0, 1, 2), (0, 2, 1))
    assert exps[1] == (0, 1, 2)


def test_enumerate_degree_zero():
    assert enumerate_exponents(0, 3) == ((0, 0, 0),)
    assert n_exponents(0, 3) == 1


def test_enumerate_two_by_two():
    assert enumerate_exponents(2, 2) == ((0, 2), (1, 1), (2, 0))
    assert n_exponents(2, 2) == 3


@pytest.mark.parametrize("d,r", [(d, r) for d in range(6) for r in range(1, 5)])
def test_enumeration_is_complete_and_sorted(d, r):
    exps = enumerate_exponents(d, r)
    brute = sorted(b for b in itertools.product(range(d + 1), repeat=r) if sum(b) == d)
    assert list(exps) == brute
    assert len(exps) == n_exponents(d, r)


@pytest.mark.parametrize("beta,expected", [((0, 1, 2), 3), ((4,), 1), ((1, 1, 1), 6)])
def test_multinomial_examples(beta, expected):
    assert multinomial(beta) == expected


@pytest.mark.parametrize("d,r", [(d, r) for d in range(7) for r in range(1, 5)])
def test_multinomials_sum_to_power(d, r):
    assert sum(multinomial(b) for b in enumerate_exponents(d, r)) == r ** d


def test_modified_single_examples():
    # indices are zero-based
    assert modified_coeff_single((2, 1), 0, 2) == 6
    assert modified_coeff_single((0, 3), 0, 2) == 0
    assert modified_coeff_single((1, 1, 1), 1, 1) == 6


def test_modified_pair_examples():
    assert modified_coeff_pair((1, 1), 0, 1, 1, 1) == 2
    assert modified_coeff_pair((2, 0), 0, 1, 1, 1) == 0
    assert modified_coeff_pair((1, 1, 1), 0, 2, 1, 1) == 6


def test_pair_needs_distinct_indices():
    with pytest.raises(ValueError):
        modified_coeff_pair((1, 1), 0, 0, 1, 1)


def test_degree_cap_raises():
    with pytest.raises(PolyaOverflowError):
        quadratic_relaxation_weights(polya.MAX_DEGREE - 1, 2)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=4), st.integers(0, 3), st.data())
def test_modified_single_matches_factorials(beta, a, data):
    i = data.draw(st.integers(0, len(beta) - 1))
    beta = tuple(beta)
    got = modified_coeff_single(beta, i, a)
    if beta[i] < a:
        assert got == 0
    else:
        den = 1
        for k, b in enumerate(beta):
            den *= factorial(b - a if k == i else b)
        assert got * den == factorial(sum(beta))


def _sympy_coefficients(blocks, d, r):
    xi = sympy.symbols(f"x0:{r}")
    n = blocks[0][0].shape[0]
    quad = sympy.zeros(n, n)
    for k in range(r):
        for l in range(r):
            quad += xi[k] * xi[l] * sympy.Matrix(blocks[k][l])
    poly = (sum(xi) ** d * quad).applyfunc(sympy.expand)
    out = []
    for beta in enumerate_exponents(d + 2, r):
        mono = sympy.Mul(*[x ** b for x, b in zip(xi, beta)])
        out.append(poly.applyfunc(lambda e: sympy.Poly(e, *xi).coeff_monomial(mono)))
    return out


@pytest.mark.parametrize("d,r", [(0, 1), (1, 2), (2, 2), (3, 2), (1, 3), (2, 3), (3, 3)])
def test_lift_matches_symbolic_expansion(d, r):
    rng = np.random.default_rng(10 * d + r)
    blocks = [[rng.integers(-5, 6, size=(2, 2)) for _ in range(r)] for _ in range(r)]
    lifted = polya_combine(lambda k, l: blocks[k][l].astype(object), d, r)
    for got, ref in zip(lifted, _sympy_coefficients(blocks, d, r)):
        got = np.zeros((2, 2), dtype=object) if got is None else got
        assert np.array_equal(np.asarray(got, dtype=np.int64),
                              np.array(ref.tolist(), dtype=np.int64))


def test_lift_matches_direct_expansion_oracle():
    assert check_assembly_oracle(d_max=3, n_xi_max=3, seed=1)


def test_expansion_oracle_counts_monomials():
    blocks = [[np.ones((1, 1), dtype=object)] * 2] * 2
    poly = expand_polya(blocks, 2, 2)
    # (x0 + x1)^4 has 5 monomials and multinomial coefficients 1,4,6,4,1
    assert sorted(int(v[0, 0]) for v in poly.values()) == [1, 1, 4, 4, 6]

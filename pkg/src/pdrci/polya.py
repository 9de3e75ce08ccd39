"""Exponent enumeration and multinomial coefficients for Polya relaxations.

A homogeneous quadratic matrix polynomial on the unit simplex is multiplied
by ``(xi_1 + ... + xi_r)**d``; every coefficient of the product is a small
integer combination of the original coefficients. The helpers here produce
those integers exactly.
"""
from functools import lru_cache
from math import comb, factorial

# d + 2 <= MAX_DEGREE keeps every factorial ratio well inside int64
MAX_DEGREE = 12
_INT64_MAX = 2**63 - 1


class PolyaOverflowError(ValueError):
    pass


def n_exponents(d, r):
    """Number of r-tuples of nonnegative integers summing to d."""
    if d < 0 or r < 1:
        raise ValueError("need d >= 0 and r >= 1")
    return comb(r + d - 1, d)


@lru_cache(maxsize=None)
def enumerate_exponents(d, r):
    """All r-tuples with entry sum ``d`` in ascending lexicographic order.

    ``enumerate_exponents(3, 3)[1] == (0, 1, 2)``.
    """
    if d < 0 or r < 1:
        raise ValueError("need d >= 0 and r >= 1")
    if r == 1:
        return ((d,),)
    out = []
    for first in range(d + 1):
        for rest in enumerate_exponents(d - first, r - 1):
            out.append((first,) + rest)
    return tuple(out)


def _checked(value):
    if value > _INT64_MAX:
        raise PolyaOverflowError(f"coefficient {value} overflows int64")
    return value


def multinomial(beta):
    """d! / (beta_1! ... beta_r!) with d = sum(beta)."""
    if any(b < 0 for b in beta):
        raise ValueError("exponents must be nonnegative")
    num = factorial(sum(beta))
    for b in beta:
        num //= factorial(b)
    return _checked(num)


def _shifted_ratio(beta, shifts, d):
    shifted = list(beta)
    for idx, a in shifts:
        shifted[idx] -= a
        if shifted[idx] < 0:
            return 0
    if d is None:
        d = sum(beta)
    num = factorial(d)
    den = 1
    for b in shifted:
        den *= factorial(b)
    if num % den:
        # only happens when d != sum(shifted) and the caller asked for a
        # non-multinomial ratio; keep it exact instead of truncating
        raise ValueError(f"{num}/{den} is not an integer")
    return _checked(num // den)


def modified_coeff_single(beta, i, a, d=None):
    """``d! / (beta_1! ... (beta_i - a)! ... beta_r!)``, or 0 if ``beta_i < a``.

    Indices are zero-based. ``d`` defaults to ``sum(beta)``; the Polya
    assembly passes ``d = sum(beta) - a`` so the value is the coefficient of
    ``xi**beta`` in ``(sum xi)**d * xi_i**a``.
    """
    if a < 0:
        raise ValueError("shift must be nonnegative")
    return _shifted_ratio(beta, [(i, a)], d)


def modified_coeff_pair(beta, i, j, a, b, d=None):
    """Two-index analogue of :func:`modified_coeff_single` (``i != j``)."""
    if i == j:
        raise ValueError("pair coefficient needs distinct indices")
    if a < 0 or b < 0:
        raise ValueError("shifts must be nonnegative")
    return _shifted_ratio(beta, [(i, a), (j, b)], d)


@lru_cache(maxsize=None)
def quadratic_relaxation_weights(d, r):
    """Integer weights turning a degree-2 form into its degree ``d + 2`` Polya lift.

    Returns ``(exponents, diag, cross)`` where ``exponents`` is J(d+2),
    ``diag[q][k]`` multiplies the ``xi_k**2`` coefficient and
    ``cross[q][(k, l)]`` (k < l) multiplies the ``xi_k xi_l`` coefficient in
    condition ``q``.
    """
    if d + 2 > MAX_DEGREE:
        raise PolyaOverflowError(f"Polya degree d={d} exceeds d + 2 <= {MAX_DEGREE}")
    exps = enumerate_exponents(d + 2, r)
    diag = []
    cross = []
    for beta in exps:
        diag.append(tuple(modified_coeff_single(beta, k, 2, d=d) for k in range(r)))
        cross.append({
            (k, l): modified_coeff_pair(beta, k, l, 1, 1, d=d)
            for k in range(r) for l in range(k + 1, r)
        })
    return exps, tuple(diag), tuple(cross)


def polya_combine(block, d, r):
    """Lift ``sum_k xi_k^2 B(k,k) + sum_{k<l} xi_k xi_l (B(k,l) + B(l,k))``.

    ``block(k, l)`` returns the (k, l) coefficient (any object supporting
    ``+`` and integer scaling). One combined coefficient per exponent in
    J(d+2) is returned, in lexicographic order. Zero weights are skipped.
    """
    exps, diag, cross = quadratic_relaxation_weights(d, r)
    cache = {}

    def get(k, l):
        if (k, l) not in cache:
            cache[(k, l)] = block(k, l)
        return cache[(k, l)]

    out = []
    for q in range(len(exps)):
        acc = None
        for k in range(r):
            w = diag[q][k]
            if w:
                term = w * get(k, k)
                acc = term if acc is None else acc + term
        for (k, l), w in cross[q].items():
            if w:
                term = w * (get(k, l) + get(l, k))
                acc = term if acc is None else acc + term
        out.append(acc)
    return out

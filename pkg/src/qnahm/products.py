"""q-Pochhammer symbols, Gaussian binomials, theta products, and compact
eta-style product shorthands, all as exact truncated series.

Notation used throughout: a factor ``(s*q^a; q^m)`` multiplies in binomials
``(1 - s*q^(a+k*m))``, so ``pochhammer_finite(1, 1, 1, n, N)`` is the usual
``(q;q)_n`` and ``pochhammer_inf(-1, 1, 2, N)`` is ``(-q;q^2)_inf``.  The
shorthands ``j_m`` and ``j_am`` are ``(q^m;q^m)_inf`` and
``(q^a, q^(m-a), q^m; q^m)_inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Tuple, Union

from .affine import Affine, as_value
from .errors import SeriesError
from .series import INF, QSeries, _lcm, _norm_coeff

Rat = Union[int, Fraction]

_poch_cache: dict = {}
_ipoch_cache: dict = {}
_qbin_cache: dict = {}


def clear_caches():
    _poch_cache.clear()
    _ipoch_cache.clear()
    _qbin_cache.clear()


def _mul_binom(terms: dict, e: int, c, T: int) -> dict:
    """Multiply a scaled-terms dict by (1 + c*q^e) truncated at T."""
    out = dict(terms)
    for x, cx in terms.items():
        y = x + e
        if y > T:
            continue
        s = out.get(y, 0) + c * cx
        if s:
            out[y] = s
        elif y in out:
            del out[y]
    return out


def _scaled(a: Rat, D: int) -> int:
    s = Fraction(a) * D
    if s.denominator != 1:
        raise SeriesError(f"exponent {a} is not a multiple of 1/{D}")
    return int(s)


def _denoms(*vals) -> int:
    D = 1
    for v in vals:
        D = _lcm(D, Fraction(v).denominator)
    return D


def pochhammer_finite(sign: int, a: Rat, m: Rat, n: int, N) -> QSeries:
    """(sign*q^a; q^m)_n = prod_{k=0}^{n-1} (1 - sign*q^(a+k*m)), truncated at N."""
    if sign not in (1, -1):
        raise SeriesError("sign must be +1 or -1")
    if n < 0:
        raise SeriesError("Pochhammer length must be nonnegative")
    a, m = Fraction(a), Fraction(m)
    if m <= 0:
        raise SeriesError("Pochhammer step must be positive")
    key = (sign, a, m, n, Fraction(N))
    hit = _poch_cache.get(key)
    if hit is not None:
        return hit
    D = _denoms(a, m, N)
    T = math.floor(Fraction(N) * D)
    if n == 0:
        result = QSeries(D, T, {0: 1} if T >= 0 else {})
    else:
        prev = pochhammer_finite(sign, a, m, n - 1, N)
        e = a + (n - 1) * m
        es = _scaled(e, D)
        terms = prev._lift(D)
        if es <= T:
            terms = _mul_binom(terms, es, -sign, T)
        result = QSeries(D, T, terms)
    _poch_cache[key] = result
    return result


def pochhammer_inf(sign: int, a: Rat, m: Rat, N) -> QSeries:
    """(sign*q^a; q^m)_inf truncated at N.

    Requires a > 0 so the product terminates, except for the classical
    (-1; q^m)_inf case (a = 0 with sign -1) whose leading factor is 2.
    """
    if sign not in (1, -1):
        raise SeriesError("sign must be +1 or -1")
    a, m = Fraction(a), Fraction(m)
    if m <= 0:
        raise SeriesError("Pochhammer step must be positive")
    if a <= 0 and not (a == 0 and sign == -1):
        raise SeriesError("infinite Pochhammer requires a positive start exponent")
    key = (sign, a, m, Fraction(N))
    hit = _poch_cache.get(key)
    if hit is not None:
        return hit
    D = _denoms(a, m, N)
    T = math.floor(Fraction(N) * D)
    terms = {0: 2} if a == 0 else {0: 1}
    k = 1 if a == 0 else 0
    while True:
        es = _scaled(a + k * m, D)
        if es > T:
            break
        terms = _mul_binom(terms, es, -sign, T)
        k += 1
    result = QSeries(D, T, terms if T >= 0 else {})
    _poch_cache[key] = result
    return result


def inv_pochhammer_finite(sign: int, a: Rat, m: Rat, n: int, N) -> QSeries:
    """1/(sign*q^a; q^m)_n truncated at N, built incrementally.

    Each new factor 1/(1 - sign*q^e) is applied by the geometric recurrence
    g[x] = f[x] + sign*g[x-e], which costs O(length) per factor.  Requires
    a > 0 so every factor is a unit.
    """
    a, m = Fraction(a), Fraction(m)
    if a <= 0:
        raise SeriesError("inverse Pochhammer requires unit factors (a > 0)")
    key = (sign, a, m, n, Fraction(N))
    hit = _ipoch_cache.get(key)
    if hit is not None:
        return hit
    D = _denoms(a, m, N)
    T = math.floor(Fraction(N) * D)
    if n == 0:
        result = QSeries(D, T, {0: 1} if T >= 0 else {})
    else:
        prev = inv_pochhammer_finite(sign, a, m, n - 1, N)
        e = _scaled(a + (n - 1) * m, D)
        g = dict(prev._lift(D))
        if e <= T and g:
            for x in range(min(g) + e, T + 1):
                px = g.get(x - e)
                if px:
                    s = g.get(x, 0) + sign * px
                    if s:
                        g[x] = s
                    elif x in g:
                        del g[x]
        result = QSeries(D, T, g)
    _ipoch_cache[key] = result
    return result


def q_binomial(n: int, k: int, m: Rat, N) -> QSeries:
    """Gaussian binomial coefficient in base q^m, truncated at N.

    Returns the zero series when k < 0 or k > n, following the bracket
    convention.  The construction divides the numerator Pochhammer by the
    denominator one and checks the division by multiplying back.
    """
    m = Fraction(m)
    if k < 0 or k > n:
        D = _denoms(m, N)
        return QSeries(D, math.floor(Fraction(N) * D), {})
    k = min(k, n - k)
    key = (n, k, m, Fraction(N))
    hit = _qbin_cache.get(key)
    if hit is not None:
        return hit
    if k == 0:
        D = _denoms(m, N)
        T = math.floor(Fraction(N) * D)
        result = QSeries(D, T, {0: 1} if T >= 0 else {})
    else:
        num = pochhammer_finite(1, m * (n - k + 1), m, k, N)
        result = num * inv_pochhammer_finite(1, m, m, k, N)
        den = pochhammer_finite(1, m, m, k, N)
        if not (result * den).equal_up_to(num, min(Fraction(N), result.order + den.valuation())):
            raise SeriesError("q-binomial division check failed")
    _qbin_cache[key] = result
    return result


def theta_product(a: Rat, m: Rat, N) -> QSeries:
    """(q^a, q^(m-a), q^m; q^m)_inf truncated at N (requires 0 < a < m)."""
    a, m = Fraction(a), Fraction(m)
    if not 0 < a < m:
        raise SeriesError("theta product requires 0 < a < m")
    return (
        pochhammer_inf(1, a, m, N)
        * pochhammer_inf(1, m - a, m, N)
        * pochhammer_inf(1, m, m, N)
    )


def theta_sum(a: Rat, m: Rat, N) -> QSeries:
    """sum_{n in Z} (-1)^n q^(m*n(n-1)/2 + a*n) truncated at N."""
    a, m = Fraction(a), Fraction(m)
    if m <= 0:
        raise SeriesError("theta step must be positive")
    N = Fraction(N)
    D = _denoms(a, m, N)
    T = math.floor(N * D)
    vertex = (Fraction(m, 2) - a) / m
    terms: dict = {}

    def visit(n: int) -> bool:
        es = _scaled(m * Fraction(n * (n - 1), 2) + a * n, D)
        if es > T:
            return False
        c = -1 if n & 1 else 1
        s = terms.get(es, 0) + c
        if s:
            terms[es] = s
        elif es in terms:
            del terms[es]
        return True

    n = 0
    while visit(n) or n <= vertex:
        n += 1
    n = -1
    while visit(n) or n >= vertex:
        n -= 1
    return QSeries(D, T, terms)


def j_m(m: Rat, N) -> QSeries:
    """J_m = (q^m; q^m)_inf."""
    return pochhammer_inf(1, m, m, N)


def j_am(a: Rat, m: Rat, N) -> QSeries:
    """J_{a,m} = (q^a, q^(m-a), q^m; q^m)_inf."""
    return theta_product(a, m, N)


# -- declarative product specifications --------------------------------------


@dataclass(frozen=True)
class ProductFactor:
    sign: int
    a: Union[Rat, Affine]
    m: Rat
    power: int


@dataclass(frozen=True)
class ProductSpec:
    """A monomial prefactor times Pochhammer factors raised to integer powers.

    Factor start exponents may be affine in named parameters; they are
    resolved when the spec is evaluated.
    """

    prefactor_coeff: Rat = 1
    prefactor_exp: Union[Rat, Affine] = 0
    factors: Tuple[ProductFactor, ...] = ()


def eval_product_spec(spec: ProductSpec, N, bindings=None) -> QSeries:
    N = Fraction(N)
    pe = as_value(spec.prefactor_exp, bindings)
    # factors are evaluated far enough that the shifted result reaches N
    target = N + max(Fraction(0), -pe)
    result = QSeries.monomial(spec.prefactor_coeff, pe)
    for f in spec.factors:
        a = as_value(f.a, bindings)
        if f.power == 0:
            continue
        if f.power < 0 and not (a > 0):
            raise SeriesError("negative powers require a unit factor (start exponent > 0)")
        base = pochhammer_inf(f.sign, a, Fraction(f.m), target)
        piece = base ** abs(f.power)
        if f.power < 0:
            piece = piece.invert()
        result = result * piece
    return result

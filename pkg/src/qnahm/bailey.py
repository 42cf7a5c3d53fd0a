"""Bressoud polynomials, their single-sum/bilateral-sum forms, Bailey pairs,
and the three transformation formulas derived from Bailey's lemma."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Tuple

from . import products
from .errors import EvaluationError, SeriesError
from .series import INF, QSeries

# -- Bressoud polynomials ----------------------------------------------------

_gauss_rows: List[List[List[int]]] = [[[1]]]


def _gaussian_row(n: int) -> List[List[int]]:
    """Row n of the exact Gaussian binomial table, base q, dense int lists."""
    while len(_gauss_rows) <= n:
        t = len(_gauss_rows)
        prev = _gauss_rows[t - 1]
        row = []
        for k in range(t + 1):
            if k == 0 or k == t:
                row.append([1])
                continue
            # [t,k] = [t-1,k] + q^(t-k) [t-1,k-1]
            a = prev[k] if k < t else []
            b = prev[k - 1]
            shift = t - k
            size = max(len(a), shift + len(b))
            out = [0] * size
            for i, c in enumerate(a):
                out[i] += c
            for i, c in enumerate(b):
                out[shift + i] += c
            row.append(out)
        _gauss_rows.append(row)
    return _gauss_rows[n]


def gaussian_polynomial(n: int, k: int, m: Fraction = Fraction(1)) -> QSeries:
    """The exact Gaussian binomial [n, k] in base q^m (zero outside 0<=k<=n)."""
    if k < 0 or k > n:
        return QSeries.zero()
    coeffs = _gaussian_row(n)[k]
    m = Fraction(m)
    D = m.denominator
    return QSeries(D, INF, {int(i * m * D): c for i, c in enumerate(coeffs) if c})


def bressoud_poly(kind: int, n: int, m: Fraction = Fraction(1)) -> QSeries:
    """B_n^(kind) in base q^m: sum_k q^(m(k^2+[kind=2]k)) [n,k]_{q^m}, exact."""
    if kind not in (1, 2):
        raise EvaluationError("Bressoud polynomial kind must be 1 or 2")
    m = Fraction(m)
    total = QSeries.zero()
    for k in range(n + 1):
        e = m * (k * k + (k if kind == 2 else 0))
        total = total + QSeries.monomial(1, e) * gaussian_polynomial(n, k, m)
    return total


def bressoud_L(n: int, N) -> QSeries:
    """L_n = B_n^(2) / (q;q)_n truncated at N."""
    return (bressoud_poly(2, n) * products.inv_pochhammer_finite(1, 1, 1, n, N)).truncate(N)


def _bilateral(n: int, N, monomials: Callable[[int], list]) -> QSeries:
    """(1/(q;q)_{2n}) * sum_{k in Z} (-1)^k (sum of monomials(k)) * [2n, n+k].

    monomials(k) lists (coeff, exponent) pairs; each is handled with its own
    exact exponent so negative shifts never degrade the truncation.
    """
    N = Fraction(N)
    total = QSeries.zero(1, math.floor(N))
    for k in range(-n, n + 1):
        sgn = -1 if k & 1 else 1
        for coeff, e in monomials(k):
            if e > N:
                continue
            piece = QSeries.monomial(sgn * coeff, e) * products.q_binomial(
                2 * n, n + k, 1, N - e
            )
            total = total + piece
    return (total * products.inv_pochhammer_finite(1, 1, 1, 2 * n, N)).truncate(N)


def bressoud_R(n: int, N) -> QSeries:
    """R_n = (1/(q;q)_{2n}) sum_k (-1)^k q^(k(5k+3)/2) [2n, n+k], truncated at N."""
    return _bilateral(n, N, lambda k: [(1, Fraction(k * (5 * k + 3), 2))])


def bressoud_R_symmetric(n: int, N) -> QSeries:
    """The symmetric rewriting of R_n:
    (1/(2(q;q)_{2n})) sum_k (-1)^k q^(k(5k-3)/2) (1+q^(3k)) [2n, n+k]."""
    half = Fraction(1, 2)

    def monomials(k: int):
        e = Fraction(k * (5 * k - 3), 2)
        return [(half, e), (half, e + 3 * k)]

    return _bilateral(n, N, monomials)


# -- Bailey pairs -------------------------------------------------------------


@dataclass(frozen=True)
class BaileyPair:
    """A pair of closed-form families (alpha_r, beta_n) relative to x.

    x_kind is "one" (x = 1) or "q" (x = q^base).  base is the Pochhammer step
    (1 for plain q, 2 once the base has been doubled for the first
    transformation).  alpha(r, base, N) and beta(n, base, N) return exact
    truncated series.
    """

    name: str
    x_kind: str
    base: int
    alpha: Callable[[int, int, Fraction], QSeries]
    beta: Callable[[int, int, Fraction], QSeries]

    def doubled(self) -> "BaileyPair":
        if self.base != 1:
            raise EvaluationError("base doubling starts from a base-q pair")
        return BaileyPair(self.name + "(q^2)", self.x_kind, 2, self.alpha, self.beta)

    def x_exponent(self) -> int:
        return 0 if self.x_kind == "one" else self.base


def _alpha_pair1(r: int, m: int, N) -> QSeries:
    if r == 0:
        return QSeries.constant(1)
    e = Fraction(m * r * (5 * r - 1), 2)
    s = QSeries.monomial(1, e) + QSeries.monomial(1, e + m * r)
    return -s if r & 1 else s


def _alpha_pair2(r: int, m: int, N) -> QSeries:
    if r == 0:
        return QSeries.constant(1)
    e = Fraction(m * r * (5 * r - 3), 2)
    s = QSeries.monomial(1, e) + QSeries.monomial(1, e + 3 * m * r)
    return -s if r & 1 else s


def _alpha_pair3(r: int, m: int, N) -> QSeries:
    e = Fraction(m * r * (5 * r + 3), 2)
    num = QSeries.monomial(1, e) - QSeries.monomial(1, e + m * (2 * r + 1))
    den_inv = products.pochhammer_finite(1, m, m, 1, N).invert()
    s = num * den_inv
    return -s if r & 1 else s


def _beta_bressoud(kind: int):
    def beta(n: int, m: int, N) -> QSeries:
        return (
            bressoud_poly(kind, n, Fraction(m))
            * products.inv_pochhammer_finite(1, m, m, n, N)
        ).truncate(N)

    return beta


def builtin_pairs() -> Dict[str, BaileyPair]:
    return {
        "pair-1": BaileyPair("pair-1", "one", 1, _alpha_pair1, _beta_bressoud(1)),
        "pair-2": BaileyPair("pair-2", "one", 1, _alpha_pair2, _beta_bressoud(2)),
        "pair-3": BaileyPair("pair-3", "q", 1, _alpha_pair3, _beta_bressoud(2)),
    }


def verify_bailey_pair(pair: BaileyPair, depth: int, N) -> List[Tuple[int, bool]]:
    """Check beta_n = sum_r alpha_r / ((q;q)_{n-r} (xq;q)_{n+r}) for n <= depth."""
    N = Fraction(N)
    m = pair.base
    xe = pair.x_exponent()
    results = []
    for n in range(depth + 1):
        total = QSeries.zero(1, math.floor(N))
        for r in range(n + 1):
            piece = (
                pair.alpha(r, m, N)
                * products.inv_pochhammer_finite(1, m, m, n - r, N)
                * products.inv_pochhammer_finite(1, xe + m, m, n + r, N)
            )
            total = total + piece
        beta = pair.beta(n, m, N)
        results.append((n, total.truncate(N) == beta.truncate(N)))
    return results


def bailey_lemma_sides(pair: BaileyPair, which: int, N) -> Tuple[QSeries, QSeries]:
    """Evaluate both sides of transformation 1, 2, or 3 for the given pair.

    1 needs a base-doubled pair (q -> q^2); 2 needs x = 1; 3 needs x = q.
    """
    N = Fraction(N)
    if which == 1:
        if pair.base != 2:
            raise EvaluationError("transformation 1 applies to a base-doubled pair")
        e = pair.x_exponent()  # 0 for x=1, 2 for x=q^2
        lhs = QSeries.zero(1, math.floor(N))
        n = 0
        while Fraction(n * n + e * n) <= N:
            term = (
                QSeries.monomial(1, n * n + e * n)
                * products.pochhammer_finite(-1, 1, 2, n, N)
                * pair.beta(n, 2, N)
            )
            lhs = lhs + term
            n += 1
        prefix = products.pochhammer_inf(-1, 1 + e, 2, N) * products.pochhammer_inf(
            1, 2 + e, 2, N
        ).invert()
        rsum = QSeries.zero(1, math.floor(N))
        r = 0
        while Fraction(r * r + e * r) <= N:
            piece = (
                QSeries.monomial(1, r * r + e * r)
                * products.pochhammer_finite(-1, 1, 2, r, N)
                * products.pochhammer_finite(-1, 1 + e, 2, r, N).invert()
                * pair.alpha(r, 2, N)
            )
            rsum = rsum + piece
            r += 1
        return lhs.truncate(N), (prefix * rsum).truncate(N)

    if which == 2:
        if pair.x_kind != "one" or pair.base != 1:
            raise EvaluationError("transformation 2 requires a pair relative to x = 1")
        lhs = QSeries.zero(1, math.floor(N))
        n = 0
        while Fraction(n * (n + 1), 2) <= N:
            term = (
                QSeries.monomial(1, Fraction(n * (n + 1), 2))
                * products.pochhammer_finite(-1, 0, 1, n, N)
                * pair.beta(n, 1, N)
            )
            lhs = lhs + term
            n += 1
        prefix = (
            2
            * products.pochhammer_inf(1, 2, 2, N)
            * (products.pochhammer_inf(1, 1, 1, N) ** 2).invert()
        )
        rsum = QSeries.zero(1, math.floor(N))
        r = 0
        while Fraction(r * (r + 1), 2) <= N:
            denom = QSeries.constant(1) + QSeries.monomial(1, r)
            piece = (
                QSeries.monomial(1, Fraction(r * (r + 1), 2))
                * denom.invert(N)
                * pair.alpha(r, 1, N)
            )
            rsum = rsum + piece
            r += 1
        return lhs.truncate(N), (prefix * rsum).truncate(N)

    if which == 3:
        if pair.x_kind != "q" or pair.base != 1:
            raise EvaluationError("transformation 3 requires a pair relative to x = q")
        inner = QSeries.zero(1, math.floor(N))
        n = 0
        while Fraction(n * (n + 1), 2) <= N:
            term = (
                QSeries.monomial(1, Fraction(n * (n + 1), 2))
                * products.pochhammer_finite(-1, 1, 1, n, N)
                * pair.beta(n, 1, N)
            )
            inner = inner + term
            n += 1
        lhs = products.pochhammer_finite(1, 1, 1, 1, N).invert() * inner
        prefix = products.pochhammer_inf(1, 2, 2, N) * (
            products.pochhammer_inf(1, 1, 1, N) ** 2
        ).invert()
        rsum = QSeries.zero(1, math.floor(N))
        r = 0
        while Fraction(r * (r + 1), 2) <= N:
            piece = QSeries.monomial(1, Fraction(r * (r + 1), 2)) * pair.alpha(r, 1, N)
            rsum = rsum + piece
            r += 1
        return lhs.truncate(N), (prefix * rsum).truncate(N)

    raise EvaluationError("transformation selector must be 1, 2, or 3")

"""Lattice multi-sums with Pochhammer-type factors.

Evaluates Nahm sums f_{A,B,C}(q), general multi-sums whose terms are
``sign * q^{(1/2) n^T Qa n + Qb.n + Qc} * prod(numerators) / prod(denominators)``
over nonnegative or integer indices, and linearly constrained multi-sums
(the lattice form of constant-term extraction).

Termination is certified operationally: an enumeration box is grown by
adaptive doubling until the set of contributing lattice points stops
changing (the stability certificate).  Inside a box, branches are pruned
with an exact lower bound on the exponent, obtained from per-coordinate
convex minimization plus a pessimistic bound for negative cross terms.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from . import products
from .errors import DivergentSumError, EvaluationError, SeriesError
from .series import INF, QSeries, _lcm

Rat = Union[int, Fraction]

NONNEG = "nonneg"
INTEGER = "int"

DEFAULT_DOUBLING_LIMIT = 10
_BOX_START = 4


@dataclass(frozen=True)
class IdxAffine:
    """Affine function const + coeffs . n of the summation indices."""

    const: Fraction
    coeffs: Tuple[Fraction, ...]

    def __call__(self, vec: Sequence[int]) -> Fraction:
        total = self.const
        for c, v in zip(self.coeffs, vec):
            if c and v:
                total += c * v
        return total

    def is_constant(self) -> bool:
        return not any(self.coeffs)


def affine(const, coeffs) -> IdxAffine:
    return IdxAffine(Fraction(const), tuple(Fraction(c) for c in coeffs))


@dataclass(frozen=True)
class PochFactor:
    """(sign*q^a; q^m)_length with a and length affine in the indices.
    length None means the infinite product."""

    sign: int
    a: IdxAffine
    m: Fraction
    length: Optional[IdxAffine]
    role: str  # "num" | "den"


@dataclass(frozen=True)
class QBinFactor:
    """Gaussian binomial [top, bottom] in base q^m (numerator role)."""

    top: IdxAffine
    bottom: IdxAffine
    m: Fraction
    role: str = "num"


Factor = Union[PochFactor, QBinFactor]


@dataclass(frozen=True)
class SumSpec:
    rank: int
    domains: Tuple[str, ...]
    qa: Tuple[Tuple[Fraction, ...], ...]
    qb: Tuple[Fraction, ...]
    qc: Fraction
    sign: Optional[IdxAffine]
    factors: Tuple[Factor, ...]

    def exponent(self, vec: Sequence[int]) -> Fraction:
        total = self.qc
        qa = self.qa
        for i, vi in enumerate(vec):
            if not vi:
                continue
            row = qa[i]
            total += Fraction(row[i] * vi * vi, 2)
            for j in range(i + 1, self.rank):
                vj = vec[j]
                if vj and row[j]:
                    total += row[j] * vi * vj
            total += self.qb[i] * vi
        return total

    def permuted(self, perm: Sequence[int]) -> "SumSpec":
        """Relabel indices: new index t plays the role of old index perm[t]."""
        r = self.rank
        inv = [0] * r
        for t, p in enumerate(perm):
            inv[p] = t
        qa = tuple(
            tuple(self.qa[perm[i]][perm[j]] for j in range(r)) for i in range(r)
        )
        qb = tuple(self.qb[perm[i]] for i in range(r))
        dom = tuple(self.domains[perm[i]] for i in range(r))

        def remap(aff: Optional[IdxAffine]) -> Optional[IdxAffine]:
            if aff is None:
                return None
            return IdxAffine(aff.const, tuple(aff.coeffs[perm[i]] for i in range(r)))

        factors = []
        for f in self.factors:
            if isinstance(f, PochFactor):
                factors.append(PochFactor(f.sign, remap(f.a), f.m, remap(f.length), f.role))
            else:
                factors.append(QBinFactor(remap(f.top), remap(f.bottom), f.m, f.role))
        return SumSpec(r, dom, qa, qb, self.qc, remap(self.sign), tuple(factors))


@dataclass(frozen=True)
class ConstrainedSumSpec:
    """A SumSpec restricted to the solutions of linear equations coeffs.n = d."""

    spec: SumSpec
    constraints: Tuple[Tuple[Tuple[Fraction, ...], Fraction], ...]


@dataclass(frozen=True)
class NahmDatum:
    """Rational symmetric matrix A, vector B, scalar C defining the sum
    over n >= 0 of q^{(1/2) n^T A n + n^T B + C} / prod (q;q)_{n_i}."""

    rank: int
    A: Tuple[Tuple[Fraction, ...], ...]
    B: Tuple[Fraction, ...]
    C: Fraction

    def __post_init__(self):
        for i in range(self.rank):
            for j in range(self.rank):
                if self.A[i][j] != self.A[j][i]:
                    raise EvaluationError("Nahm matrix must be symmetric")

    def to_sum_spec(self) -> SumSpec:
        r = self.rank
        factors = tuple(
            PochFactor(
                1,
                affine(1, [0] * r),
                Fraction(1),
                affine(0, [1 if j == i else 0 for j in range(r)]),
                "den",
            )
            for i in range(r)
        )
        return SumSpec(
            r,
            (NONNEG,) * r,
            tuple(tuple(Fraction(x) for x in row) for row in self.A),
            tuple(Fraction(x) for x in self.B),
            Fraction(self.C),
            None,
            factors,
        )


def nahm_datum(A, B, C) -> NahmDatum:
    A = tuple(tuple(Fraction(x) for x in row) for row in A)
    B = tuple(Fraction(x) for x in B)
    return NahmDatum(len(B), A, B, Fraction(C))


# -- enumeration -------------------------------------------------------------


def _min_quad_1d(a: Fraction, c: Fraction, lo: int, hi: int) -> Fraction:
    """Exact min of (a/2) y^2 + c y over the real interval [lo, hi]."""
    f = lambda y: Fraction(a, 2) * y * y + c * y
    if a > 0:
        v = -c / a
        if v < lo:
            v = Fraction(lo)
        elif v > hi:
            v = Fraction(hi)
        return Fraction(a, 2) * v * v + c * v
    if a == 0:
        return min(c * lo, c * hi)
    return min(f(lo), f(hi))


def _interval_prod_bounds(lo1, hi1, lo2, hi2):
    prods = (lo1 * lo2, lo1 * hi2, hi1 * lo2, hi1 * hi2)
    return min(prods), max(prods)


class _Enumerator:
    def __init__(self, qa, qb, qc, domains, box, N: Fraction):
        self.qa = qa
        self.qb = qb
        self.qc = qc
        self.domains = domains
        self.box = box
        self.N = N
        self.rank = len(qb)

    def _range(self, t: int) -> Tuple[int, int]:
        if self.domains[t] == NONNEG:
            return 0, self.box[t]
        return -self.box[t], self.box[t]

    def _lower_bound(self, vec, t, v_lo, v_hi) -> Fraction:
        """Lower bound of the exponent with vec[0..t-1] fixed, coordinate t in
        [v_lo, v_hi], and later coordinates anywhere in their box range."""
        qa, qb, r = self.qa, self.qb, self.rank
        total = self.qc
        for i in range(t):
            vi = vec[i]
            if not vi:
                continue
            total += Fraction(qa[i][i] * vi * vi, 2) + qb[i] * vi
            for j in range(i + 1, t):
                vj = vec[j]
                if vj and qa[i][j]:
                    total += qa[i][j] * vi * vj
        ranges = []
        for j in range(t, r):
            if j == t:
                ranges.append((v_lo, v_hi))
            else:
                ranges.append(self._range(j))
        for idx, j in enumerate(range(t, r)):
            cj = qb[j]
            for i in range(t):
                if vec[i] and qa[i][j]:
                    cj += qa[i][j] * vec[i]
            lo, hi = ranges[idx]
            total += _min_quad_1d(qa[j][j], cj, lo, hi)
        for idx1, j in enumerate(range(t, r)):
            for idx2 in range(idx1 + 1, r - t):
                k = t + idx2
                c = qa[j][k]
                if not c:
                    continue
                lo1, hi1 = ranges[idx1]
                lo2, hi2 = ranges[idx2]
                pmin, pmax = _interval_prod_bounds(lo1, hi1, lo2, hi2)
                total += c * pmin if c > 0 else c * pmax
        return total

    def points(self) -> List[Tuple[Tuple[int, ...], Fraction]]:
        out: List[Tuple[Tuple[int, ...], Fraction]] = []
        vec = [0] * self.rank
        N = self.N

        def rec(t: int):
            if t == self.rank:
                e = self._exponent(vec)
                if e <= N:
                    out.append((tuple(vec), e))
                return
            lo, hi = self._range(t)
            for v in range(lo, hi + 1):
                vec[t] = v
                if self._lower_bound(vec, t, v, v) > N:
                    if self._lower_bound(vec, t, v, hi) > N:
                        break
                    continue
                rec(t + 1)
            vec[t] = 0

        rec(0)
        return out

    def _exponent(self, vec) -> Fraction:
        qa, qb = self.qa, self.qb
        total = self.qc
        for i, vi in enumerate(vec):
            if not vi:
                continue
            total += Fraction(qa[i][i] * vi * vi, 2) + qb[i] * vi
            row = qa[i]
            for j in range(i + 1, self.rank):
                vj = vec[j]
                if vj and row[j]:
                    total += row[j] * vi * vj
        return total


def _certified_box(qa, qb, qc, domains, N: Fraction, doubling_limit: int) -> List[int]:
    rank = len(qb)
    M = _BOX_START
    pts = frozenset(
        v for v, _ in _Enumerator(qa, qb, qc, domains, [M] * rank, N).points()
    )
    for _ in range(doubling_limit):
        M2 = 2 * M
        pts2 = frozenset(
            v for v, _ in _Enumerator(qa, qb, qc, domains, [M2] * rank, N).points()
        )
        if pts2 == pts:
            return [M2] * rank
        pts, M = pts2, M2
    raise DivergentSumError(
        f"contributing points kept growing up to box {M}; the exponent does "
        f"not properly diverge for order {N}"
    )


def bound_box(spec, N, doubling_limit: int = DEFAULT_DOUBLING_LIMIT) -> List[int]:
    """Per-index bounds such that points outside the box were certified (by
    box doubling) not to contribute terms of exponent <= N."""
    if isinstance(spec, NahmDatum):
        spec = spec.to_sum_spec()
    return _certified_box(
        spec.qa, spec.qb, spec.qc, spec.domains, Fraction(N), doubling_limit
    )


# -- term assembly -----------------------------------------------------------


def _factor_series(f: Factor, vec, N: Fraction) -> Optional[QSeries]:
    """Series of one factor at a lattice point, or None when the term is zero."""
    if isinstance(f, QBinFactor):
        top = f.top(vec)
        bot = f.bottom(vec)
        if top.denominator != 1 or bot.denominator != 1:
            raise EvaluationError("q-binomial arguments must be integers")
        top, bot = int(top), int(bot)
        if top < 0:
            raise EvaluationError("q-binomial upper argument must be nonnegative")
        if bot < 0 or bot > top:
            return None
        qb = products.q_binomial(top, bot, f.m, N)
        return qb.invert() if f.role == "den" else qb
    a = f.a(vec)
    if f.length is None:
        if f.role == "den":
            return products.pochhammer_inf(f.sign, a, f.m, N).invert()
        return products.pochhammer_inf(f.sign, a, f.m, N)
    n = f.length(vec)
    if n.denominator != 1 or n < 0:
        raise EvaluationError(
            f"Pochhammer length {n} is not a nonnegative integer at point {tuple(vec)}"
        )
    n = int(n)
    if f.role == "den":
        if a > 0:
            return products.inv_pochhammer_finite(f.sign, a, f.m, n, N)
        return products.pochhammer_finite(f.sign, a, f.m, n, N).invert()
    return products.pochhammer_finite(f.sign, a, f.m, n, N)


def _evaluate(spec: SumSpec, N: Fraction, box: Sequence[int]) -> QSeries:
    enum = _Enumerator(spec.qa, spec.qb, spec.qc, spec.domains, list(box), N)
    acc: dict = {}
    one = QSeries.constant(1)
    for vec, expo in enum.points():
        budget = N - expo
        pieces = []
        zero = False
        for f in spec.factors:
            s = _factor_series(f, vec, N)
            if s is None:
                zero = True
                break
            pieces.append(s)
        if zero:
            continue
        term = one
        for s in sorted(pieces, key=lambda s: len(s._terms)):
            term = term * s.truncate(min(budget, s.order))
            if not term._terms:
                break
        if not term._terms:
            continue
        sgn = 1
        if spec.sign is not None:
            val = spec.sign(vec)
            if val.denominator != 1:
                raise EvaluationError("sign exponent must be an integer")
            if int(val) & 1:
                sgn = -1
        D = term.denom
        for es, c in term.scaled_items():
            E = expo + Fraction(es, D)
            if E <= N:
                prev = acc.get(E, 0)
                s = prev + (c if sgn == 1 else -c)
                if s:
                    acc[E] = s
                elif E in acc:
                    del acc[E]
    D = 1
    for e in acc:
        D = _lcm(D, e.denominator)
    trunc = math.floor(N * D)
    return QSeries(D, trunc, {int(e * D): c for e, c in acc.items()})


def multi_sum(
    spec: SumSpec,
    N,
    box: Optional[Sequence[int]] = None,
    doubling_limit: int = DEFAULT_DOUBLING_LIMIT,
) -> QSeries:
    """Exact truncated evaluation of a lattice multi-sum."""
    N = Fraction(N)
    if box is None:
        box = bound_box(spec, N, doubling_limit)
    return _evaluate(spec, N, box)


def nahm_sum(
    datum: NahmDatum,
    N,
    box: Optional[Sequence[int]] = None,
    doubling_limit: int = DEFAULT_DOUBLING_LIMIT,
) -> QSeries:
    """f_{A,B,C}(q) truncated at N."""
    return multi_sum(datum.to_sum_spec(), N, box=box, doubling_limit=doubling_limit)


# -- constrained sums --------------------------------------------------------


def _scale_constraint(coeffs, d):
    den = 1
    for c in coeffs:
        den = _lcm(den, Fraction(c).denominator)
    den = _lcm(den, Fraction(d).denominator)
    return tuple(int(Fraction(c) * den) for c in coeffs), Fraction(d) * den


def constrained_sum(
    cs: ConstrainedSumSpec,
    N,
    doubling_limit: int = DEFAULT_DOUBLING_LIMIT,
) -> QSeries:
    """Sum restricted to integer solutions of the linear constraints.

    Constraints with a unit coefficient are eliminated by substitution; any
    others are kept as per-point filters.  Inconsistent constraints yield the
    zero series with a warning.
    """
    N = Fraction(N)
    spec = cs.spec
    r = spec.rank

    # exprs[i]: affine map from the free variables to original index i
    free = list(range(r))
    exprs: List[IdxAffine] = [
        IdxAffine(Fraction(0), tuple(Fraction(1 if j == i else 0) for j in range(r)))
        for i in range(r)
    ]
    filters = []
    for raw_coeffs, raw_d in cs.constraints:
        coeffs, d = _scale_constraint(raw_coeffs, raw_d)
        # express in terms of current free variables
        const = Fraction(0)
        comb = [Fraction(0)] * r
        for i, c in enumerate(coeffs):
            if not c:
                continue
            const += c * exprs[i].const
            for j in range(r):
                comb[j] += c * exprs[i].coeffs[j]
        d = d - const
        active = [j for j in free if comb[j]]
        if not active:
            if d != 0:
                warnings.warn("inconsistent constraints: returning the zero series")
                return QSeries(1, math.floor(N), {})
            continue
        pivot = None
        for j in reversed(active):
            if abs(comb[j]) == 1:
                pivot = j
                break
        if pivot is None:
            filters.append((tuple(comb), d))
            continue
        cpiv = comb[pivot]
        # y_pivot = (d - sum_{j != pivot} comb_j y_j) / cpiv
        sub_const = d / cpiv
        sub_coeffs = [Fraction(0)] * r
        for j in free:
            if j != pivot and comb[j]:
                sub_coeffs[j] = -comb[j] / cpiv
        sub = IdxAffine(sub_const, tuple(sub_coeffs))
        free.remove(pivot)
        new_exprs = []
        for a in exprs:
            cp = a.coeffs[pivot]
            if not cp:
                new_exprs.append(a)
                continue
            coeffs2 = list(a.coeffs)
            coeffs2[pivot] = Fraction(0)
            for j in range(r):
                coeffs2[j] += cp * sub.coeffs[j]
            new_exprs.append(IdxAffine(a.const + cp * sub.const, tuple(coeffs2)))
        exprs = new_exprs

    # compose the exponent with the substitution, in the free coordinates
    fvars = free
    nf = len(fvars)
    amap = [[exprs[i].coeffs[j] for j in fvars] for i in range(r)]
    bmap = [exprs[i].const for i in range(r)]
    qa2 = [[Fraction(0)] * nf for _ in range(nf)]
    qb2 = [Fraction(0)] * nf
    qc2 = spec.qc
    # qc2 += 1/2 b^T Q b + B.b ; qb2 = A^T(Q b + B); qa2 = A^T Q A
    qb_vec = [
        sum(spec.qa[i][k] * bmap[k] for k in range(r)) + spec.qb[i] for i in range(r)
    ]
    for i in range(r):
        qc2 += Fraction(spec.qa[i][i] * bmap[i] * bmap[i], 2) + spec.qb[i] * bmap[i]
        for k in range(i + 1, r):
            qc2 += spec.qa[i][k] * bmap[i] * bmap[k]
    for s in range(nf):
        qb2[s] = sum(amap[i][s] * qb_vec[i] for i in range(r))
        for t in range(nf):
            qa2[s][t] = sum(
                amap[i][s] * sum(spec.qa[i][k] * amap[k][t] for k in range(r))
                for i in range(r)
            )
    domains2 = tuple(spec.domains[j] for j in fvars)
    qa2t = tuple(tuple(row) for row in qa2)
    qb2t = tuple(qb2)

    box = _certified_box(qa2t, qb2t, qc2, domains2, N, doubling_limit)
    enum = _Enumerator(qa2t, qb2t, qc2, domains2, box, N)

    acc: dict = {}
    one = QSeries.constant(1)
    for yvec, expo in enum.points():
        # reconstruct the original point
        full = []
        ok = True
        for i in range(r):
            val = bmap[i]
            for s in range(nf):
                if amap[i][s]:
                    val += amap[i][s] * yvec[s]
            if val.denominator != 1:
                ok = False
                break
            vi = int(val)
            if spec.domains[i] == NONNEG and vi < 0:
                ok = False
                break
            full.append(vi)
        if not ok:
            continue
        if filters and any(
            sum(c * v for c, v in zip(coeffs, full)) != d for coeffs, d in filters
        ):
            continue
        budget = N - expo
        pieces = []
        zero = False
        for f in spec.factors:
            s = _factor_series(f, full, N)
            if s is None:
                zero = True
                break
            pieces.append(s)
        if zero:
            continue
        term = one
        for s in sorted(pieces, key=lambda s: len(s._terms)):
            term = term * s.truncate(min(budget, s.order))
        sgn = 1
        if spec.sign is not None:
            val = spec.sign(full)
            if val.denominator != 1:
                raise EvaluationError("sign exponent must be an integer")
            if int(val) & 1:
                sgn = -1
        D = term.denom
        for es, c in term.scaled_items():
            E = expo + Fraction(es, D)
            if E <= N:
                prev = acc.get(E, 0)
                ssum = prev + (c if sgn == 1 else -c)
                if ssum:
                    acc[E] = ssum
                elif E in acc:
                    del acc[E]
    D = 1
    for e in acc:
        D = _lcm(D, e.denominator)
    trunc = math.floor(N * D)
    return QSeries(D, trunc, {int(e * D): c for e, c in acc.items()})

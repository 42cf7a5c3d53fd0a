"""Exact truncated Laurent/Puiseux series in a single formal variable q.

A :class:`QSeries` keeps a sparse mapping from scaled exponents to exact
rational coefficients.  All exponents are integer multiples of ``1/denom``
for a per-series positive integer ``denom``; two series interoperate by
lifting both to the lcm of their denominators.  The truncation bound
``trunc`` (a scaled integer, or ``INF`` for exactly known values such as
monomials and finite polynomials) records how far coefficients are known:
terms above ``trunc`` are unknown, not zero.

Values are immutable after construction and every operation is a pure
function, so series can be shared freely between concurrent tasks.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Iterator, Tuple, Union

from .errors import NotInvertibleError, SeriesError, TruncationError

Rat = Union[int, Fraction]

#: Truncation marker for series whose coefficients are all known exactly.
INF = float("inf")


def _norm_coeff(c: Rat) -> Rat:
    # keep integer coefficients as plain ints; the convolution loops are much
    # faster on ints than on Fraction
    if isinstance(c, Fraction) and c.denominator == 1:
        return c.numerator
    return c


def _lcm(a: int, b: int) -> int:
    return a * b // math.gcd(a, b)


def _scale_trunc(trunc, factor: int):
    return INF if trunc == INF else trunc * factor


class QSeries:
    """A truncated Laurent series ``sum_e c_e q^e`` with exact coefficients.

    Use :func:`make_series` (or the classmethod constructors) rather than
    calling ``QSeries`` directly; the raw constructor trusts its arguments.
    """

    __slots__ = ("denom", "trunc", "_terms")

    def __init__(self, denom: int, trunc, terms: dict):
        self.denom = denom
        self.trunc = trunc
        self._terms = terms

    # -- inspection ---------------------------------------------------------

    @property
    def order(self):
        """Truncation bound as a true exponent (Fraction, or INF)."""
        if self.trunc == INF:
            return INF
        return Fraction(self.trunc, self.denom)

    def is_zero(self) -> bool:
        return not self._terms

    def valuation(self):
        """Least exponent with a nonzero known coefficient, or None."""
        if not self._terms:
            return None
        return Fraction(min(self._terms), self.denom)

    def scaled_items(self):
        return self._terms.items()

    def items(self) -> Iterator[Tuple[Fraction, Rat]]:
        """Yield (exponent, coefficient) pairs sorted by exponent."""
        D = self.denom
        for e in sorted(self._terms):
            yield Fraction(e, D), self._terms[e]

    def coefficient(self, e: Rat) -> Rat:
        """Exact coefficient of q^e.  Raises beyond the truncation."""
        e = Fraction(e)
        s = e * self.denom
        if self.trunc != INF and s > self.trunc:
            raise TruncationError(f"coefficient of q^{e} is beyond truncation")
        if s.denominator != 1:
            return 0
        return self._terms.get(int(s), 0)

    def __bool__(self):
        return bool(self._terms)

    def __repr__(self):
        parts = []
        for e, c in list(self.items())[:8]:
            parts.append(f"{c}*q^({e})" if e else f"{c}")
        if len(self._terms) > 8:
            parts.append("...")
        body = " + ".join(parts) if parts else "0"
        return f"QSeries({body}; D={self.denom}, N_s={self.trunc})"

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, denom: int = 1, trunc=INF) -> "QSeries":
        return cls(denom, trunc, {})

    @classmethod
    def constant(cls, c: Rat) -> "QSeries":
        c = _norm_coeff(Fraction(c) if not isinstance(c, int) else c)
        return cls(1, INF, {0: c} if c else {})

    @classmethod
    def monomial(cls, c: Rat, e: Rat) -> "QSeries":
        """The exact monomial c*q^e."""
        e = Fraction(e)
        c = _norm_coeff(c if isinstance(c, int) else Fraction(c))
        if not c:
            return cls(1, INF, {})
        return cls(e.denominator, INF, {e.numerator: c})

    # -- helpers ------------------------------------------------------------

    def _lift(self, D: int) -> dict:
        f = D // self.denom
        if f == 1:
            return self._terms
        return {e * f: c for e, c in self._terms.items()}

    def with_denom(self, D: int) -> "QSeries":
        if D % self.denom:
            raise SeriesError("new denominator must be a multiple of the old one")
        f = D // self.denom
        return QSeries(D, _scale_trunc(self.trunc, f), self._lift(D))

    def _common(self, other: "QSeries"):
        D = _lcm(self.denom, other.denom)
        fa, fb = D // self.denom, D // other.denom
        ta = self._terms if fa == 1 else {e * fa: c for e, c in self._terms.items()}
        tb = other._terms if fb == 1 else {e * fb: c for e, c in other._terms.items()}
        return D, ta, tb, _scale_trunc(self.trunc, fa), _scale_trunc(other.trunc, fb)

    # -- ring operations ----------------------------------------------------

    def __neg__(self) -> "QSeries":
        return QSeries(self.denom, self.trunc, {e: -c for e, c in self._terms.items()})

    def __add__(self, other) -> "QSeries":
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        D, ta, tb, Na, Nb = self._common(other)
        T = min(Na, Nb)
        out = {e: c for e, c in ta.items() if e <= T}
        for e, c in tb.items():
            if e > T:
                continue
            s = out.get(e, 0) + c
            if s:
                out[e] = s
            elif e in out:
                del out[e]
        return QSeries(D, T, out)

    __radd__ = __add__

    def __sub__(self, other) -> "QSeries":
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return other + (-self)

    def __mul__(self, other) -> "QSeries":
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        D, ta, tb, Na, Nb = self._common(other)
        # known product order: min over both factors of (truncation + other's
        # valuation); an empty operand counts its truncation as valuation
        va = min(ta) if ta else Na
        vb = min(tb) if tb else Nb
        T = min(Na + vb, Nb + va)
        return QSeries(D, T, _convolve(ta, tb, T))

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "QSeries":
        if not isinstance(k, int):
            raise SeriesError("series powers must be integers")
        if k < 0:
            return self.invert() ** (-k)
        result = QSeries.constant(1)
        base = self
        while k:
            if k & 1:
                result = result * base
            base_needed = k >> 1
            if base_needed:
                base = base * base
            k >>= 1
        return result

    def invert(self, order=None) -> "QSeries":
        """Multiplicative inverse up to truncation.

        The argument must have a least nonzero term (a Laurent unit).  For an
        exactly known series (trunc INF), pass ``order`` to pick the target
        truncation of the result.
        """
        if not self._terms:
            raise NotInvertibleError("cannot invert a series that is zero up to truncation")
        D = self.denom
        v = min(self._terms)
        if self.trunc == INF:
            if order is None:
                maxdeg = max(self._terms)
                if len(self._terms) == 1:
                    # exact monomial: exact inverse
                    c = self._terms[v]
                    ci = _norm_coeff(Fraction(1, 1) / c)
                    return QSeries(D, INF, {-v: ci})
                raise SeriesError("inverting an exact non-monomial series requires an explicit order")
            T = math.floor(Fraction(order) * D)
        else:
            T = self.trunc - 2 * v
            if order is not None:
                T = min(T, math.floor(Fraction(order) * D))
        L = T + v
        if L < 0:
            return QSeries(D, T, {})
        c0 = self._terms[v]
        nz = sorted((e - v, c) for e, c in self._terms.items() if 0 < e - v <= L)
        g = [0] * (L + 1)
        g[0] = 1 if c0 == 1 else (-1 if c0 == -1 else Fraction(1, 1) / c0)
        neg = c0 == -1
        plain = c0 == 1 or neg
        for e in range(1, L + 1):
            acc = 0
            for t, c in nz:
                if t > e:
                    break
                ge = g[e - t]
                if ge:
                    acc += c * ge
            if acc:
                if plain:
                    g[e] = -acc if not neg else acc
                else:
                    g[e] = -acc / c0
        out = {}
        for e, c in enumerate(g):
            if c:
                out[e - v] = _norm_coeff(c) if not isinstance(c, int) else c
        return QSeries(D, T, out)

    # -- structural operations ----------------------------------------------

    def truncate(self, N) -> "QSeries":
        """Restrict knowledge to exponents <= N (raises if N exceeds trunc)."""
        Ns = math.floor(Fraction(N) * self.denom)
        if self.trunc != INF and Ns > self.trunc:
            raise TruncationError(f"cannot truncate at {N}: series only known to scaled {self.trunc}")
        return QSeries(self.denom, Ns, {e: c for e, c in self._terms.items() if e <= Ns})

    def rescale_exponents(self, k) -> "QSeries":
        """Substitute q -> q^k for a positive rational k (exponents scale by k)."""
        k = Fraction(k)
        if k <= 0:
            raise SeriesError("rescale factor must be positive")
        exps = {e: Fraction(e, self.denom) * k for e in self._terms}
        D = 1
        for e in exps.values():
            D = _lcm(D, e.denominator)
        trunc = INF
        if self.trunc != INF:
            trunc = math.floor(Fraction(self.trunc, self.denom) * k * D)
        return QSeries(D, trunc, {int(exps[e] * D): c for e, c in self._terms.items()})

    def substitute_neg_q(self) -> "QSeries":
        """Substitute q -> -q.  Requires integer exponents (denom 1)."""
        if self.denom != 1:
            raise SeriesError("q -> -q substitution requires integer exponents")
        return QSeries(1, self.trunc, {e: (-c if e & 1 else c) for e, c in self._terms.items()})

    # -- comparisons ---------------------------------------------------------

    def equal_up_to(self, other: "QSeries", N) -> bool:
        return first_difference(self, other, N) is None

    def __eq__(self, other):
        if not isinstance(other, QSeries):
            return NotImplemented
        D, ta, tb, Na, Nb = self._common(other)
        return Na == Nb and ta == tb

    __hash__ = None


def _coerce(x):
    if isinstance(x, QSeries):
        return x
    if isinstance(x, (int, Fraction)):
        return QSeries.constant(x)
    return NotImplemented


def _convolve(ta: dict, tb: dict, T) -> dict:
    if not ta or not tb:
        return {}
    if len(tb) < len(ta):
        ta, tb = tb, ta
    va, vb = min(ta), min(tb)
    hi = min(max(ta) + max(tb), T)
    lo = va + vb
    if hi < lo:
        return {}
    span = hi - lo + 1
    # dense accumulator when the result window is comfortably filled
    if span <= 4 * len(ta) * len(tb) and span <= (1 << 22):
        res = [0] * span
        items_b = list(tb.items())
        for ea, ca in ta.items():
            bound = hi - ea
            base = ea - lo
            for eb, cb in items_b:
                if eb <= bound:
                    res[base + eb] += ca * cb
        return {lo + i: c for i, c in enumerate(res) if c}
    out = {}
    items_b = list(tb.items())
    for ea, ca in ta.items():
        bound = hi - ea
        for eb, cb in items_b:
            if eb > bound:
                continue
            e = ea + eb
            s = out.get(e, 0) + ca * cb
            if s:
                out[e] = s
            elif e in out:
                del out[e]
    return out


def make_series(D: int, N, terms: Iterable[Tuple[Rat, Rat]]) -> QSeries:
    """Build a series from (exponent, coefficient) pairs.

    Every exponent must be a multiple of 1/D not exceeding N; duplicate
    exponents are summed and zero coefficients dropped.
    """
    if not isinstance(D, int) or D < 1:
        raise SeriesError("denominator must be a positive integer")
    Ns = INF if N == INF else math.floor(Fraction(N) * D)
    out: dict = {}
    for e, c in terms:
        e = Fraction(e)
        s = e * D
        if s.denominator != 1:
            raise SeriesError(f"exponent {e} is not a multiple of 1/{D}")
        s = int(s)
        if Ns != INF and s > Ns:
            raise SeriesError(f"exponent {e} is above the truncation order {N}")
        c = _norm_coeff(c if isinstance(c, int) else Fraction(c))
        acc = out.get(s, 0) + c
        if acc:
            out[s] = acc
        elif s in out:
            del out[s]
    return QSeries(D, Ns, out)


def first_difference(f: QSeries, g: QSeries, N):
    """Smallest exponent <= N where f and g differ, or None if they agree.

    Raises TruncationError when N exceeds either truncation.
    """
    N = Fraction(N)
    D, ta, tb, Na, Nb = f._common(g)
    Ns = math.floor(N * D)
    if Ns > Na or Ns > Nb:
        raise TruncationError(f"comparison up to {N} exceeds a truncation bound")
    diffs = [e for e in set(ta) | set(tb) if e <= Ns and ta.get(e, 0) != tb.get(e, 0)]
    if not diffs:
        return None
    return Fraction(min(diffs), D)


def equal_up_to(f: QSeries, g: QSeries, N) -> bool:
    return first_difference(f, g, N) is None


# -- text serialization -----------------------------------------------------
# One term per line, `scaled/D<TAB>num/den`, sorted by exponent, after a
# header `#qseries D=<D> N=<N_s>`.


def to_text(f: QSeries) -> str:
    n = "inf" if f.trunc == INF else str(f.trunc)
    lines = [f"#qseries D={f.denom} N={n}"]
    for e in sorted(f._terms):
        c = Fraction(f._terms[e])
        lines.append(f"{e}/{f.denom}\t{c.numerator}/{c.denominator}")
    return "\n".join(lines) + "\n"


def from_text(text: str) -> QSeries:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#qseries"):
        raise SeriesError("missing #qseries header")
    head = dict(part.split("=", 1) for part in lines[0].split()[1:])
    D = int(head["D"])
    trunc = INF if head["N"] == "inf" else int(head["N"])
    terms = {}
    for ln in lines[1:]:
        expo, coeff = ln.split("\t")
        num, den = expo.split("/")
        e = Fraction(int(num), int(den))
        s = e * D
        if s.denominator != 1:
            raise SeriesError(f"exponent {expo} does not match denominator {D}")
        cn, cd = coeff.split("/")
        c = _norm_coeff(Fraction(int(cn), int(cd)))
        if c:
            terms[int(s)] = c
    return QSeries(D, trunc, terms)

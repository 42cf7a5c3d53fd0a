"""Parser and evaluator for the identity-catalog language.

Catalog files are line oriented: ``[identity NAME]`` headers followed by
``key = value`` fields (lhs, rhs, order, params, tag).  A value continues on
the next physical line while brackets remain open.  Expressions use infix
arithmetic over rationals, monomials ``q^(...)``, the product shorthands
``J(m)``, ``J(a,m)`` and ``theta(a,m)``, Pochhammer symbols
``poch(-q^(a); q^(m); len)``, Gaussian binomials ``qbin(top, bottom; m)``,
and lattice sums::

    sum(i,j,k >= 0, m in Z; expo = ...; sign = ...; num = ...; den = ...;
        constraint = <affine> = <affine>)

Grid parameters (``params = v in {0, 1/2}; B1 in {0, 1}``) are bound to
rationals before evaluation; verification compares both sides coefficient
by coefficient up to the entry's order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

from . import products, sums
from .errors import CatalogParseError, EvaluationError
from .series import INF, QSeries, first_difference

# -- abstract syntax ----------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: Fraction


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class QPow:
    exp: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    k: int


@dataclass(frozen=True)
class Poch:
    sign: int
    a: Optional["Expr"]  # None encodes start exponent 0 (argument +-1)
    m: "Expr"
    length: Optional["Expr"]  # None encodes the infinite product


@dataclass(frozen=True)
class QBin:
    top: "Expr"
    bottom: "Expr"
    m: "Expr"


@dataclass(frozen=True)
class JFunc:
    a: Optional["Expr"]
    m: "Expr"


@dataclass(frozen=True)
class Theta:
    a: "Expr"
    m: "Expr"


@dataclass(frozen=True)
class SumNode:
    domains: Tuple[Tuple[str, str], ...]  # (index name, "nonneg" | "int")
    expo: "Expr"
    sign: Optional["Expr"]
    num: Tuple["Expr", ...]
    den: Tuple["Expr", ...]
    constraints: Tuple[Tuple["Expr", "Expr"], ...]


Expr = Union[Const, Param, QPow, BinOp, Pow, Poch, QBin, JFunc, Theta, SumNode]


@dataclass(frozen=True)
class Identity:
    name: str
    params: Tuple[Tuple[str, Tuple[Fraction, ...]], ...]
    lhs: Expr
    rhs: Expr
    order: Fraction
    tag: str = ""


# -- tokenizer ----------------------------------------------------------------


class _Tok:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind, text, line, col):
        self.kind = kind
        self.text = text
        self.line = line
        self.col = col

    def __repr__(self):
        return f"{self.kind}({self.text!r})"


def _tokenize(text: str, filename=None, line0: int = 1) -> List[_Tok]:
    toks = []
    i, line, col = 0, line0, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in " \t\r\n":
            if ch == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_col = col
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            toks.append(_Tok("num", text[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(_Tok("ident", text[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if ch == '"':
            j = i + 1
            buf = []
            while j < n and text[j] != '"':
                if text[j] == "\\" and j + 1 < n:
                    buf.append(text[j + 1])
                    j += 2
                else:
                    buf.append(text[j])
                    j += 1
            if j >= n:
                raise CatalogParseError("unterminated string", line, start_col, filename)
            toks.append(_Tok("str", "".join(buf), line, start_col))
            col += j + 1 - i
            i = j + 1
            continue
        if text.startswith(">=", i):
            toks.append(_Tok("op", ">=", line, start_col))
            i += 2
            col += 2
            continue
        if ch in "+-*/^(),;={}[]":
            toks.append(_Tok("op", ch, line, start_col))
            i += 1
            col += 1
            continue
        raise CatalogParseError(f"unexpected character {ch!r}", line, start_col, filename)
    toks.append(_Tok("end", "", line, col))
    return toks


# -- parser -------------------------------------------------------------------


class _Parser:
    def __init__(self, toks: List[_Tok], filename=None):
        self.toks = toks
        self.pos = 0
        self.filename = filename

    def peek(self) -> _Tok:
        return self.toks[self.pos]

    def next(self) -> _Tok:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def error(self, msg: str):
        t = self.peek()
        raise CatalogParseError(
            f"{msg} (found {t.text!r})" if t.text else f"{msg} (at end of input)",
            t.line,
            t.col,
            self.filename,
        )

    def accept(self, text: str) -> bool:
        t = self.peek()
        if t.kind in ("op", "ident") and t.text == text:
            self.pos += 1
            return True
        return False

    def expect(self, text: str) -> _Tok:
        if not self.accept(text):
            self.error(f"expected {text!r}")
        return self.toks[self.pos - 1]

    # expr := term (('+'|'-') term)*
    def parse_expr(self) -> Expr:
        node = self.parse_term()
        while True:
            if self.accept("+"):
                node = BinOp("+", node, self.parse_term())
            elif self.accept("-"):
                node = BinOp("-", node, self.parse_term())
            else:
                return node

    def parse_term(self) -> Expr:
        node = self.parse_unary()
        while True:
            if self.accept("*"):
                node = _fold(BinOp("*", node, self.parse_unary()))
            elif self.accept("/"):
                node = _fold(BinOp("/", node, self.parse_unary()))
            else:
                return node

    def parse_unary(self) -> Expr:
        if self.accept("-"):
            inner = self.parse_unary()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return BinOp("-", Const(Fraction(0)), inner)
        return self.parse_postfix()

    def parse_postfix(self) -> Expr:
        node = self.parse_atom()
        while self.peek().text == "^" and self.peek().kind == "op":
            self.next()
            node = Pow(node, self.parse_int_exponent())
        return node

    def parse_int_exponent(self) -> int:
        if self.accept("("):
            neg = self.accept("-")
            t = self.peek()
            if t.kind != "num":
                self.error("expected an integer exponent")
            self.next()
            self.expect(")")
            return -int(t.text) if neg else int(t.text)
        t = self.peek()
        if t.kind != "num":
            self.error("expected an integer exponent")
        self.next()
        return int(t.text)

    def parse_atom(self) -> Expr:
        t = self.peek()
        if t.kind == "num":
            self.next()
            return Const(Fraction(int(t.text)))
        if t.kind == "op" and t.text == "(":
            self.next()
            node = self.parse_expr()
            self.expect(")")
            return node
        if t.kind != "ident":
            self.error("expected an expression")
        name = t.text
        if name == "q":
            self.next()
            if self.peek().kind == "op" and self.peek().text == "^":
                self.next()
                return QPow(self.parse_q_exponent())
            return QPow(Const(Fraction(1)))
        if name == "J":
            self.next()
            self.expect("(")
            first = self.parse_expr()
            if self.accept(","):
                second = self.parse_expr()
                self.expect(")")
                return JFunc(first, second)
            self.expect(")")
            return JFunc(None, first)
        if name == "theta":
            self.next()
            self.expect("(")
            a = self.parse_expr()
            self.expect(",")
            m = self.parse_expr()
            self.expect(")")
            return Theta(a, m)
        if name == "poch":
            self.next()
            return self.parse_poch()
        if name == "qbin":
            self.next()
            self.expect("(")
            top = self.parse_expr()
            self.expect(",")
            bottom = self.parse_expr()
            self.expect(";")
            m = self.parse_expr()
            self.expect(")")
            return QBin(top, bottom, m)
        if name == "sum":
            self.next()
            return self.parse_sum()
        self.next()
        return Param(name)

    def parse_q_exponent(self) -> Expr:
        t = self.peek()
        if t.kind == "op" and t.text == "(":
            self.next()
            node = self.parse_expr()
            self.expect(")")
            return node
        if t.kind == "num":
            self.next()
            return Const(Fraction(int(t.text)))
        if t.kind == "ident":
            self.next()
            return Param(t.text)
        self.error("expected a q exponent")

    def parse_poch(self) -> Expr:
        self.expect("(")
        sign = -1 if self.accept("-") else 1
        t = self.peek()
        if t.kind == "num" and t.text == "1":
            self.next()
            a = None
        elif t.kind == "ident" and t.text == "q":
            self.next()
            if self.peek().kind == "op" and self.peek().text == "^":
                self.next()
                a = self.parse_q_exponent()
            else:
                a = Const(Fraction(1))
        else:
            self.error("Pochhammer argument must be 1 or a power of q")
        self.expect(";")
        if not (self.peek().kind == "ident" and self.peek().text == "q"):
            self.error("Pochhammer base must be a power of q")
        self.next()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.next()
            m = self.parse_q_exponent()
        else:
            m = Const(Fraction(1))
        self.expect(";")
        if self.peek().kind == "ident" and self.peek().text == "inf":
            self.next()
            length = None
        else:
            length = self.parse_expr()
        self.expect(")")
        return Poch(sign, a, m, length)

    def parse_sum(self) -> Expr:
        self.expect("(")
        domains: List[Tuple[str, str]] = []
        pending: List[str] = []
        while True:
            t = self.peek()
            if t.kind != "ident":
                self.error("expected an index name")
            self.next()
            pending.append(t.text)
            if self.accept(","):
                continue
            if self.accept(">="):
                z = self.peek()
                if z.kind != "num" or z.text != "0":
                    self.error("lower bound must be 0")
                self.next()
                domains.extend((nm, "nonneg") for nm in pending)
            elif self.accept("in"):
                z = self.peek()
                if z.kind != "ident" or z.text != "Z":
                    self.error("domain must be Z")
                self.next()
                domains.extend((nm, "int") for nm in pending)
            else:
                self.error("expected '>= 0' or 'in Z'")
            pending = []
            if self.accept(","):
                continue
            break
        expo = None
        sign = None
        num: List[Expr] = []
        den: List[Expr] = []
        constraints: List[Tuple[Expr, Expr]] = []
        while self.accept(";"):
            key = self.peek()
            if key.kind != "ident":
                self.error("expected a sum field name")
            self.next()
            self.expect("=")
            if key.text == "expo":
                expo = self.parse_expr()
            elif key.text == "sign":
                sign = self.parse_expr()
            elif key.text == "num":
                num = _flatten_product(self.parse_expr(), self)
            elif key.text == "den":
                den = _flatten_product(self.parse_expr(), self)
            elif key.text == "constraint":
                lhs = self.parse_expr()
                self.expect("=")
                rhs = self.parse_expr()
                constraints.append((lhs, rhs))
            else:
                self.error(f"unknown sum field {key.text!r}")
        self.expect(")")
        if expo is None:
            self.error("sum requires an expo field")
        return SumNode(
            tuple(domains), expo, sign, tuple(num), tuple(den), tuple(constraints)
        )


def _fold(node: Expr) -> Expr:
    # fold rational literals so 1/2 and -1/24 parse to Const values
    if isinstance(node, BinOp) and isinstance(node.left, Const) and isinstance(node.right, Const):
        a, b = node.left.value, node.right.value
        if node.op == "/" and b != 0:
            return Const(a / b)
    return node


def _flatten_product(node: Expr, parser: _Parser) -> List[Expr]:
    if isinstance(node, BinOp) and node.op == "*":
        return _flatten_product(node.left, parser) + _flatten_product(node.right, parser)
    if isinstance(node, Pow) and isinstance(node.base, (Poch, QBin)) and node.k >= 1:
        return [node.base] * node.k
    if isinstance(node, (Poch, QBin)):
        return [node]
    parser.error("factor lists may only contain poch and qbin factors")


def parse_expr(text: str, filename=None) -> Expr:
    p = _Parser(_tokenize(text, filename), filename)
    node = p.parse_expr()
    if p.peek().kind != "end":
        p.error("unexpected trailing input")
    return node


# -- printer ------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def format_expr(e: Expr) -> str:
    return _fmt(e, 0)


def _fmt(e: Expr, parent_prec: int) -> str:
    if isinstance(e, Const):
        s = str(e.value)
        return f"({s})" if e.value < 0 and parent_prec > 0 else s
    if isinstance(e, Param):
        return e.name
    if isinstance(e, QPow):
        return f"q^({_fmt(e.exp, 0)})"
    if isinstance(e, BinOp):
        prec = _PREC[e.op]
        lneed = _prec_of(e.left) < prec
        rneed = _prec_of(e.right) <= prec if e.op in ("-", "/") else _prec_of(e.right) < prec
        ls = f"({_fmt(e.left, 0)})" if lneed else _fmt(e.left, prec)
        rs = f"({_fmt(e.right, 0)})" if rneed else _fmt(e.right, prec)
        return f"{ls} {e.op} {rs}"
    if isinstance(e, Pow):
        base = _fmt(e.base, 99)
        if _prec_of(e.base) < 3:
            base = f"({_fmt(e.base, 0)})"
        k = str(e.k) if e.k >= 0 else f"({e.k})"
        return f"{base}^{k}"
    if isinstance(e, Poch):
        if e.a is None:
            arg = "-1" if e.sign < 0 else "1"
        else:
            arg = f"-q^({_fmt(e.a, 0)})" if e.sign < 0 else f"q^({_fmt(e.a, 0)})"
        length = "inf" if e.length is None else _fmt(e.length, 0)
        return f"poch({arg}; q^({_fmt(e.m, 0)}); {length})"
    if isinstance(e, QBin):
        return f"qbin({_fmt(e.top, 0)}, {_fmt(e.bottom, 0)}; {_fmt(e.m, 0)})"
    if isinstance(e, JFunc):
        if e.a is None:
            return f"J({_fmt(e.m, 0)})"
        return f"J({_fmt(e.a, 0)}, {_fmt(e.m, 0)})"
    if isinstance(e, Theta):
        return f"theta({_fmt(e.a, 0)}, {_fmt(e.m, 0)})"
    if isinstance(e, SumNode):
        groups = []
        run: List[str] = []
        kind = None
        for nm, k in e.domains:
            if kind is None or k == kind:
                run.append(nm)
                kind = k
            else:
                groups.append((run, kind))
                run, kind = [nm], k
        groups.append((run, kind))
        dom = ", ".join(
            ",".join(names) + (" >= 0" if k == "nonneg" else " in Z")
            for names, k in groups
        )
        parts = [dom, f"expo = {_fmt(e.expo, 0)}"]
        if e.sign is not None:
            parts.append(f"sign = {_fmt(e.sign, 0)}")
        if e.num:
            parts.append("num = " + "*".join(_fmt(f, 2) for f in e.num))
        if e.den:
            parts.append("den = " + "*".join(_fmt(f, 2) for f in e.den))
        for lhs, rhs in e.constraints:
            parts.append(f"constraint = {_fmt(lhs, 0)} = {_fmt(rhs, 0)}")
        return "sum(" + "; ".join(parts) + ")"
    raise EvaluationError(f"cannot print {e!r}")


def _prec_of(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Pow):
        return 3
    if isinstance(e, Const) and e.value < 0:
        return 0
    return 4


# -- numeric evaluation -------------------------------------------------------


def eval_number(e: Expr, bindings: Dict[str, Fraction]) -> Fraction:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Param):
        if e.name not in bindings:
            raise EvaluationError(f"unbound parameter {e.name!r}")
        return Fraction(bindings[e.name])
    if isinstance(e, BinOp):
        a = eval_number(e.left, bindings)
        b = eval_number(e.right, bindings)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if b == 0:
            raise EvaluationError("division by zero in a numeric expression")
        return a / b
    if isinstance(e, Pow):
        return eval_number(e.base, bindings) ** e.k
    raise EvaluationError("expected a numeric expression")


# -- polynomial evaluation over sum indices -----------------------------------


class _Poly:
    """Multivariate polynomial over the sum indices with Fraction coefficients."""

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: Dict[Tuple[int, ...], Fraction]):
        self.nvars = nvars
        self.terms = terms

    @classmethod
    def const(cls, nvars, c):
        c = Fraction(c)
        return cls(nvars, {(0,) * nvars: c} if c else {})

    @classmethod
    def var(cls, nvars, i):
        key = tuple(1 if j == i else 0 for j in range(nvars))
        return cls(nvars, {key: Fraction(1)})

    def __add__(self, other):
        out = dict(self.terms)
        for k, v in other.terms.items():
            s = out.get(k, 0) + v
            if s:
                out[k] = s
            elif k in out:
                del out[k]
        return _Poly(self.nvars, out)

    def __sub__(self, other):
        return self + other.scale(-1)

    def scale(self, c):
        c = Fraction(c)
        if not c:
            return _Poly(self.nvars, {})
        return _Poly(self.nvars, {k: v * c for k, v in self.terms.items()})

    def __mul__(self, other):
        out: Dict[Tuple[int, ...], Fraction] = {}
        for k1, v1 in self.terms.items():
            for k2, v2 in other.terms.items():
                k = tuple(a + b for a, b in zip(k1, k2))
                s = out.get(k, 0) + v1 * v2
                if s:
                    out[k] = s
                elif k in out:
                    del out[k]
        return _Poly(self.nvars, out)

    def degree(self):
        return max((sum(k) for k in self.terms), default=0)

    def constant_value(self):
        if self.degree() > 0:
            return None
        return self.terms.get((0,) * self.nvars, Fraction(0))


def _eval_poly(e: Expr, bindings, names: List[str]) -> _Poly:
    nv = len(names)
    if isinstance(e, Const):
        return _Poly.const(nv, e.value)
    if isinstance(e, Param):
        if e.name in names:
            return _Poly.var(nv, names.index(e.name))
        if e.name in bindings:
            return _Poly.const(nv, bindings[e.name])
        raise EvaluationError(f"unbound parameter {e.name!r} in a sum")
    if isinstance(e, BinOp):
        a = _eval_poly(e.left, bindings, names)
        b = _eval_poly(e.right, bindings, names)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        c = b.constant_value()
        if c is None or c == 0:
            raise EvaluationError("division inside a sum must be by a nonzero constant")
        return a.scale(Fraction(1) / c)
    if isinstance(e, Pow):
        if e.k < 0:
            c = _eval_poly(e.base, bindings, names).constant_value()
            if c is None or c == 0:
                raise EvaluationError("negative powers inside a sum must act on constants")
            return _Poly.const(nv, c ** e.k)
        out = _Poly.const(nv, 1)
        base = _eval_poly(e.base, bindings, names)
        for _ in range(e.k):
            out = out * base
        return out
    raise EvaluationError("only polynomial expressions may appear in sum fields")


def _poly_affine(p: _Poly, names) -> sums.IdxAffine:
    if p.degree() > 1:
        raise EvaluationError("expected an affine expression of the indices")
    nv = len(names)
    const = p.terms.get((0,) * nv, Fraction(0))
    coeffs = []
    for i in range(nv):
        key = tuple(1 if j == i else 0 for j in range(nv))
        coeffs.append(p.terms.get(key, Fraction(0)))
    return sums.IdxAffine(Fraction(const), tuple(Fraction(c) for c in coeffs))


def compile_sum(node: SumNode, bindings) -> Union[sums.SumSpec, sums.ConstrainedSumSpec]:
    names = [nm for nm, _ in node.domains]
    if len(set(names)) != len(names):
        raise EvaluationError("duplicate index names in a sum")
    nv = len(names)
    expo = _eval_poly(node.expo, bindings, names)
    if expo.degree() > 2:
        raise EvaluationError("the exponent must be quadratic in the indices")
    qc = expo.terms.get((0,) * nv, Fraction(0))
    qa = [[Fraction(0)] * nv for _ in range(nv)]
    qb = [Fraction(0)] * nv
    for key, c in expo.terms.items():
        deg = sum(key)
        if deg == 0:
            continue
        if deg == 1:
            i = key.index(1)
            qb[i] = c
        else:
            nz = [i for i, k in enumerate(key) if k]
            if len(nz) == 1:
                i = nz[0]
                qa[i][i] = 2 * c
            else:
                i, j = nz
                qa[i][j] = c
                qa[j][i] = c
    sign = None
    if node.sign is not None:
        sign = _poly_affine(_eval_poly(node.sign, bindings, names), names)
    factors: List[sums.Factor] = []
    for role, exprs in (("num", node.num), ("den", node.den)):
        for f in exprs:
            if isinstance(f, Poch):
                a_aff = (
                    sums.IdxAffine(Fraction(0), (Fraction(0),) * nv)
                    if f.a is None
                    else _poly_affine(_eval_poly(f.a, bindings, names), names)
                )
                m = eval_number(f.m, bindings)
                if m <= 0:
                    raise EvaluationError("Pochhammer base exponent must be positive")
                length = (
                    None
                    if f.length is None
                    else _poly_affine(_eval_poly(f.length, bindings, names), names)
                )
                factors.append(sums.PochFactor(f.sign, a_aff, m, length, role))
            elif isinstance(f, QBin):
                top = _poly_affine(_eval_poly(f.top, bindings, names), names)
                bottom = _poly_affine(_eval_poly(f.bottom, bindings, names), names)
                m = eval_number(f.m, bindings)
                factors.append(sums.QBinFactor(top, bottom, m, role))
            else:
                raise EvaluationError("factors must be poch or qbin")
    spec = sums.SumSpec(
        nv,
        tuple(kind for _, kind in node.domains),
        tuple(tuple(row) for row in qa),
        tuple(qb),
        Fraction(qc),
        sign,
        tuple(factors),
    )
    if node.constraints:
        cons = []
        for lhs, rhs in node.constraints:
            diff = _eval_poly(lhs, bindings, names) - _eval_poly(rhs, bindings, names)
            aff = _poly_affine(diff, names)
            cons.append((aff.coeffs, -aff.const))
        return sums.ConstrainedSumSpec(spec, tuple(cons))
    return spec


# -- series evaluation --------------------------------------------------------


def _invert(s: QSeries, N: Fraction) -> QSeries:
    if s.trunc == INF and len(s._terms) == 1:
        return s.invert()
    return s.invert(order=N)


def _eval_series(e: Expr, bindings, N: Fraction, doubling_limit: int) -> QSeries:
    if isinstance(e, Const):
        return QSeries.constant(e.value)
    if isinstance(e, Param):
        if e.name not in bindings:
            raise EvaluationError(f"unbound parameter {e.name!r}")
        return QSeries.constant(Fraction(bindings[e.name]))
    if isinstance(e, QPow):
        return QSeries.monomial(1, eval_number(e.exp, bindings))
    if isinstance(e, BinOp):
        a = _eval_series(e.left, bindings, N, doubling_limit)
        b = _eval_series(e.right, bindings, N, doubling_limit)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        return a * _invert(b, N)
    if isinstance(e, Pow):
        base = _eval_series(e.base, bindings, N, doubling_limit)
        if e.k < 0:
            return _invert(base, N) ** (-e.k)
        return base ** e.k
    if isinstance(e, Poch):
        a = Fraction(0) if e.a is None else eval_number(e.a, bindings)
        m = eval_number(e.m, bindings)
        if e.length is None:
            return products.pochhammer_inf(e.sign, a, m, N)
        n = eval_number(e.length, bindings)
        if n.denominator != 1 or n < 0:
            raise EvaluationError(f"Pochhammer length {n} is not a nonnegative integer")
        return products.pochhammer_finite(e.sign, a, m, int(n), N)
    if isinstance(e, QBin):
        top = eval_number(e.top, bindings)
        bottom = eval_number(e.bottom, bindings)
        m = eval_number(e.m, bindings)
        if top.denominator != 1 or bottom.denominator != 1:
            raise EvaluationError("q-binomial arguments must be integers")
        return products.q_binomial(int(top), int(bottom), m, N)
    if isinstance(e, JFunc):
        m = eval_number(e.m, bindings)
        if e.a is None:
            return products.j_m(m, N)
        return products.j_am(eval_number(e.a, bindings), m, N)
    if isinstance(e, Theta):
        return products.theta_product(
            eval_number(e.a, bindings), eval_number(e.m, bindings), N
        )
    if isinstance(e, SumNode):
        spec = compile_sum(e, bindings)
        if isinstance(spec, sums.ConstrainedSumSpec):
            return sums.constrained_sum(spec, N, doubling_limit=doubling_limit)
        return sums.multi_sum(spec, N, doubling_limit=doubling_limit)
    raise EvaluationError(f"cannot evaluate {e!r}")


def evaluate(
    e: Expr,
    bindings: Optional[Dict[str, Fraction]] = None,
    N=40,
    doubling_limit: int = sums.DEFAULT_DOUBLING_LIMIT,
) -> QSeries:
    """Evaluate an expression to an exact series known at least to order N.

    Negative-exponent prefactors can eat into the known order of a product;
    when that happens the evaluation is retried with a guard added to the
    working order.
    """
    N = Fraction(N)
    bindings = bindings or {}
    guard = Fraction(0)
    for _ in range(6):
        res = _eval_series(e, bindings, N + guard, doubling_limit)
        if res.trunc == INF:
            return res
        if res.order >= N:
            return res.truncate(N)
        shortfall = N - res.order
        guard += max(shortfall, Fraction(4))
    raise EvaluationError(f"could not evaluate to order {N} (persistent truncation loss)")


# -- catalogs -----------------------------------------------------------------


def _split_entries(text: str, filename=None):
    entries = []
    current = None
    pending_key = None
    pending_val = []
    pending_line = 0
    depth = 0

    def flush_field():
        nonlocal pending_key, pending_val
        if pending_key is not None:
            current["fields"].append((pending_key, "\n".join(pending_val), pending_line))
        pending_key, pending_val = None, []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        stripped = line.strip()
        if depth == 0:
            if not stripped or stripped.startswith("#"):
                continue
            if stripped.startswith("[identity"):
                flush_field()
                name = stripped[len("[identity"):].strip()
                if not name.endswith("]"):
                    raise CatalogParseError("malformed section header", lineno, 1, filename)
                name = name[:-1].strip()
                if not name:
                    raise CatalogParseError("missing identity name", lineno, 1, filename)
                current = {"name": name, "line": lineno, "fields": []}
                entries.append(current)
                continue
            if current is None:
                raise CatalogParseError("field outside any [identity] section", lineno, 1, filename)
            if "=" not in line:
                raise CatalogParseError("expected 'key = value'", lineno, 1, filename)
            key, val = line.split("=", 1)
            flush_field()
            pending_key = key.strip()
            pending_val = [val.strip()]
            pending_line = lineno
            depth = _bracket_depth(val)
            if depth < 0:
                raise CatalogParseError("unbalanced brackets", lineno, 1, filename)
        else:
            pending_val.append(line)
            depth += _bracket_depth(line)
            if depth < 0:
                raise CatalogParseError("unbalanced brackets", lineno, 1, filename)
    flush_field()
    return entries


def _bracket_depth(s: str) -> int:
    depth = 0
    in_str = False
    for ch in s:
        if ch == '"':
            in_str = not in_str
        if in_str:
            continue
        if ch == "#":
            break
        if ch in "({[":
            depth += 1
        elif ch in ")}]":
            depth -= 1
    return depth


def _parse_params(text: str, filename, lineno):
    p = _Parser(_tokenize(text, filename, lineno), filename)
    out = []
    while True:
        t = p.peek()
        if t.kind != "ident":
            p.error("expected a parameter name")
        p.next()
        name = t.text
        p.expect("in")
        p.expect("{")
        values = [eval_number(p.parse_expr(), {})]
        while p.accept(","):
            values.append(eval_number(p.parse_expr(), {}))
        p.expect("}")
        out.append((name, tuple(values)))
        if p.accept(";"):
            continue
        break
    if p.peek().kind != "end":
        p.error("unexpected trailing input in params")
    return tuple(out)


def _max_sum_rank(e: Expr) -> int:
    if isinstance(e, SumNode):
        inner = max(
            [0]
            + [_max_sum_rank(x) for x in (e.expo, e.sign) if x is not None]
        )
        return max(len(e.domains), inner)
    if isinstance(e, BinOp):
        return max(_max_sum_rank(e.left), _max_sum_rank(e.right))
    if isinstance(e, Pow):
        return _max_sum_rank(e.base)
    return 0


def parse_catalog(text: str, filename=None) -> List[Identity]:
    """Parse a catalog file into identities."""
    out = []
    for entry in _split_entries(text, filename):
        name = entry["name"]
        lhs = rhs = None
        order = None
        params: Tuple = ()
        tag = ""
        for key, val, lineno in entry["fields"]:
            if key in ("lhs", "rhs"):
                p = _Parser(_tokenize(val, filename, lineno), filename)
                node = p.parse_expr()
                if p.peek().kind != "end":
                    p.error(f"unexpected trailing input in {key}")
                if key == "lhs":
                    lhs = node
                else:
                    rhs = node
            elif key == "order":
                order = Fraction(val.strip())
            elif key == "params":
                params = _parse_params(val, filename, lineno)
            elif key == "tag":
                tag = val.strip().strip('"')
            else:
                raise CatalogParseError(f"unknown field {key!r}", lineno, 1, filename)
        if lhs is None or rhs is None:
            raise CatalogParseError(
                f"identity {name!r} needs both lhs and rhs", entry["line"], 1, filename
            )
        if order is None:
            rank = max(_max_sum_rank(lhs), _max_sum_rank(rhs))
            order = Fraction(40 if rank >= 3 else 60)
        out.append(Identity(name, params, lhs, rhs, order, tag))
    return out


def load_builtin_catalog() -> List[Identity]:
    """The catalog shipped with the package."""
    from importlib.resources import files

    text = files("qnahm").joinpath("catalog/identities.cat").read_text()
    return parse_catalog(text, "identities.cat")


# -- verification -------------------------------------------------------------


@dataclass(frozen=True)
class GridResult:
    bindings: Tuple[Tuple[str, Fraction], ...]
    ok: bool
    first_diff: Optional[Fraction] = None
    error: Optional[str] = None


@dataclass(frozen=True)
class IdentityReport:
    identity: Identity
    order: Fraction
    rows: Tuple[GridResult, ...]

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows)

    @property
    def has_error(self) -> bool:
        return any(r.error for r in self.rows)


def _grid(params) -> List[Tuple[Tuple[str, Fraction], ...]]:
    combos = [()]
    for name, values in params:
        combos = [c + ((name, v),) for c in combos for v in values]
    return combos


def verify_identity(
    ident: Identity,
    N=None,
    doubling_limit: int = sums.DEFAULT_DOUBLING_LIMIT,
) -> IdentityReport:
    """Compare lhs and rhs coefficientwise for every grid point.

    Evaluation errors are recorded per grid point and do not abort the rest
    of the batch.
    """
    order = Fraction(N) if N is not None else ident.order
    rows = []
    for combo in _grid(ident.params):
        bindings = dict(combo)
        try:
            lhs = evaluate(ident.lhs, bindings, order, doubling_limit)
            rhs = evaluate(ident.rhs, bindings, order, doubling_limit)
            diff = first_difference(lhs, rhs, min(order, lhs.order, rhs.order))
            rows.append(GridResult(combo, diff is None, diff))
        except Exception as ex:  # recorded, not raised
            rows.append(GridResult(combo, False, None, f"{type(ex).__name__}: {ex}"))
    return IdentityReport(ident, order, tuple(rows))


def format_report(report: IdentityReport, include_tag: bool = True) -> str:
    lines = []
    if include_tag and report.identity.tag:
        lines.append(f"# {report.identity.name} tag=\"{report.identity.tag}\"")
    for row in report.rows:
        binds = ",".join(f"{k}={v}" for k, v in row.bindings) or "-"
        status = "PASS" if row.ok else "FAIL"
        line = f"{status} {report.identity.name} {binds} order={report.order}"
        if row.first_diff is not None:
            line += f" first_diff={row.first_diff}"
        if row.error:
            line += f" error=\"{row.error}\""
        lines.append(line)
    return "\n".join(lines)

"""Small affine forms used for late-bound parameters and sum indices."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Tuple

from .errors import EvaluationError


@dataclass(frozen=True)
class Affine:
    """An affine expression ``const + sum coeff_i * name_i`` over named
    rational parameters, resolved to a Fraction once bindings are known."""

    const: Fraction = Fraction(0)
    coeffs: Tuple[Tuple[str, Fraction], ...] = ()

    def resolve(self, bindings: Mapping[str, Fraction]) -> Fraction:
        total = Fraction(self.const)
        for name, c in self.coeffs:
            if name not in bindings:
                raise EvaluationError(f"unbound parameter {name!r}")
            total += c * Fraction(bindings[name])
        return total


def as_value(x, bindings=None) -> Fraction:
    """Resolve a Fraction-or-Affine to a Fraction."""
    if isinstance(x, Affine):
        return x.resolve(bindings or {})
    return Fraction(x)

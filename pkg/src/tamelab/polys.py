"""Multivariate polynomials over Q, dictionary-backed.

Just enough structure for integrand manipulation: exact arithmetic,
evaluation, affine substitution x_i -> a_i + c*y_i, content extraction at a
prime, reduction mod p, and shape queries (monomial / two-term detection).
Exponent keys are tuples of fixed length ``nvars``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence


@dataclass(frozen=True)
class Poly:
    nvars: int
    coeffs: tuple  # tuple of (exponent-tuple, Fraction), sorted by exponent

    # -- construction --------------------------------------------------------
    @staticmethod
    def from_dict(nvars: int, d: dict) -> "Poly":
        items = tuple(sorted((tuple(k), Fraction(v)) for k, v in d.items() if v != 0))
        for k, _ in items:
            if len(k) != nvars or any(e < 0 for e in k):
                raise ValueError(f"bad exponent {k} for {nvars} variables")
        return Poly(nvars, items)

    @staticmethod
    def const(nvars: int, c) -> "Poly":
        c = Fraction(c)
        if c == 0:
            return Poly(nvars, ())
        return Poly(nvars, (((0,) * nvars, c),))

    @staticmethod
    def variable(nvars: int, i: int) -> "Poly":
        e = tuple(1 if j == i else 0 for j in range(nvars))
        return Poly(nvars, ((e, Fraction(1)),))

    def as_dict(self) -> dict:
        return dict(self.coeffs)

    # -- ring operations -----------------------------------------------------
    def __add__(self, other: "Poly") -> "Poly":
        d = dict(self.coeffs)
        for k, v in other.coeffs:
            d[k] = d.get(k, Fraction(0)) + v
        return Poly.from_dict(self.nvars, d)

    def __neg__(self) -> "Poly":
        return Poly(self.nvars, tuple((k, -v) for k, v in self.coeffs))

    def __sub__(self, other: "Poly") -> "Poly":
        return self + (-other)

    def __mul__(self, other: "Poly") -> "Poly":
        d: dict = {}
        for ka, va in self.coeffs:
            for kb, vb in other.coeffs:
                k = tuple(a + b for a, b in zip(ka, kb))
                d[k] = d.get(k, Fraction(0)) + va * vb
        return Poly.from_dict(self.nvars, d)

    def scale(self, c) -> "Poly":
        c = Fraction(c)
        if c == 0:
            return Poly(self.nvars, ())
        return Poly(self.nvars, tuple((k, v * c) for k, v in self.coeffs))

    def pow(self, e: int) -> "Poly":
        out = Poly.const(self.nvars, 1)
        for _ in range(e):
            out = out * self
        return out

    def is_zero(self) -> bool:
        return not self.coeffs

    def is_constant(self) -> bool:
        return all(all(e == 0 for e in k) for k, _ in self.coeffs)

    def constant_value(self) -> Fraction:
        if not self.is_constant():
            raise ValueError("not a constant polynomial")
        return self.coeffs[0][1] if self.coeffs else Fraction(0)

    # -- evaluation / substitution -------------------------------------------
    def eval(self, point: Sequence) -> Fraction:
        total = Fraction(0)
        for k, v in self.coeffs:
            term = v
            for x, e in zip(point, k):
                if e:
                    term *= Fraction(x) ** e
            total += term
        return total

    def eval_general(self, point: Sequence, one, mul, add):
        """Evaluate over any commutative ring given 1, *, + callables."""
        total = None
        for k, v in self.coeffs:
            term = one(v)
            for x, e in zip(point, k):
                for _ in range(e):
                    term = mul(term, x)
            total = term if total is None else add(total, term)
        return total

    def subst_affine(self, shifts: Sequence, scale) -> "Poly":
        """x_i -> shifts[i] + scale_i * y_i, exact; scale may be a scalar."""
        if isinstance(scale, (int, Fraction)):
            scales = [Fraction(scale)] * self.nvars
        else:
            scales = [Fraction(s) for s in scale]
        out = Poly(self.nvars, ())
        cache: dict[tuple[int, int], Poly] = {}

        def var_power(i: int, e: int) -> Poly:
            key = (i, e)
            if key not in cache:
                base = Poly.const(self.nvars, shifts[i]) + Poly.variable(self.nvars, i).scale(scales[i])
                cache[key] = base.pow(e)
            return cache[key]

        for k, v in self.coeffs:
            term = Poly.const(self.nvars, v)
            for i, e in enumerate(k):
                if e:
                    term = term * var_power(i, e)
            out = out + term
        return out

    def derivative(self, i: int) -> "Poly":
        d: dict = {}
        for k, v in self.coeffs:
            if k[i] > 0:
                k2 = tuple(e - 1 if j == i else e for j, e in enumerate(k))
                d[k2] = d.get(k2, Fraction(0)) + v * k[i]
        return Poly.from_dict(self.nvars, d)

    # -- prime-local structure -------------------------------------------------
    def content_val(self, p: int) -> int:
        """min_k v_p(coeff_k); raises on the zero polynomial."""
        if self.is_zero():
            raise ValueError("content of zero polynomial")
        return min(_frac_val(v, p) for _, v in self.coeffs)

    def strip_content(self, p: int) -> tuple[int, "Poly"]:
        e = self.content_val(p)
        return e, self.scale(Fraction(1, p ** e) if e >= 0 else Fraction(p ** -e))

    def reduce_mod(self, p: int) -> dict:
        """Exponent -> int coefficient mod p (denominators must be units)."""
        out = {}
        for k, v in self.coeffs:
            if v.denominator % p == 0:
                raise ValueError("coefficient not p-integral")
            c = v.numerator * pow(v.denominator, -1, p) % p
            if c:
                out[k] = c
        return out

    def eval_mod(self, point: Sequence[int], p: int) -> int:
        total = 0
        for k, v in self.reduce_mod(p).items():
            term = v
            for x, e in zip(point, k):
                if e:
                    term = term * pow(x, e, p) % p
            total = (total + term) % p
        return total

    # -- shape queries ----------------------------------------------------------
    def monomial_part(self) -> tuple[tuple[int, ...], "Poly"]:
        """Largest monomial divisor: returns (exponents, cofactor)."""
        if self.is_zero():
            raise ValueError("zero polynomial")
        mins = [min(k[i] for k, _ in self.coeffs) for i in range(self.nvars)]
        cof = {tuple(e - m for e, m in zip(k, mins)): v for k, v in self.coeffs}
        return tuple(mins), Poly.from_dict(self.nvars, cof)

    def terms(self):
        return self.coeffs

    def total_degree(self) -> int:
        return max((sum(k) for k, _ in self.coeffs), default=0)

    def __str__(self):
        return poly_to_text(self)


def _frac_val(x: Fraction, p: int) -> int:
    v = 0
    num, den = x.numerator, x.denominator
    while num % p == 0:
        num //= p
        v += 1
    while den % p == 0:
        den //= p
        v -= 1
    return v


# ---------------------------------------------------------------------------
# Parsing / printing:   x^2 - 3*x*y + 1/2*y^3
# ---------------------------------------------------------------------------

_POLY_TOKEN = re.compile(r"\s*(?:(\d+(?:/\d+)?)|([A-Za-z_][A-Za-z_0-9]*)|(\^)|(\*)|(\+)|(-)|(\()|(\)))")


def parse_poly(text: str, varnames: Sequence[str]) -> Poly:
    """Parse sums of monomial terms over the given variables."""
    index = {name: i for i, name in enumerate(varnames)}
    n = len(varnames)
    pos = 0
    sign = 1
    result = Poly(n, ())
    term_coeff = None
    term_exp = None

    def flush():
        nonlocal result, term_coeff, term_exp, sign
        if term_coeff is not None:
            result = result + Poly.from_dict(n, {tuple(term_exp): term_coeff * sign})
        term_coeff = None
        term_exp = None
        sign = 1

    text = text.strip()
    while pos < len(text):
        m = _POLY_TOKEN.match(text, pos)
        if not m:
            raise ValueError(f"bad polynomial syntax at {text[pos:]!r}")
        pos = m.end()
        num, name, caret, star, plus, minus, lpar, rpar = m.groups()
        if lpar or rpar or caret:
            if caret:
                raise ValueError("misplaced '^'")
            raise ValueError("parentheses are not part of the polynomial syntax")
        if plus or minus:
            if term_coeff is None:
                sign = -sign if minus else sign
            else:
                flush()
                if minus:
                    sign = -1
            continue
        if star:
            if term_coeff is None:
                raise ValueError("misplaced '*'")
            continue
        if term_coeff is None:
            term_coeff = Fraction(1)
            term_exp = [0] * n
        if num:
            term_coeff *= Fraction(num)
        else:
            if name not in index:
                raise ValueError(f"unknown variable {name!r} (have {list(varnames)})")
            e = 1
            m2 = re.match(r"\s*\^\s*(\d+)", text[pos:])
            if m2:
                e = int(m2.group(1))
                pos += m2.end()
            term_exp[index[name]] += e
    flush()
    return result


def poly_to_text(poly: Poly, varnames: Sequence[str] | None = None) -> str:
    if poly.is_zero():
        return "0"
    names = varnames or [f"x{i}" for i in range(poly.nvars)]
    if poly.nvars <= 3 and varnames is None:
        names = ["x", "y", "z"][: poly.nvars]
    parts = []
    for k, v in sorted(poly.coeffs, key=lambda kv: (-sum(kv[0]), kv[0])):
        factors = []
        if abs(v) != 1 or all(e == 0 for e in k):
            factors.append(str(abs(v)))
        for name, e in zip(names, k):
            if e == 1:
                factors.append(name)
            elif e > 1:
                factors.append(f"{name}^{e}")
        term = "*".join(factors)
        parts.append(("- " if v < 0 else "+ ") + term)
    out = " ".join(parts)
    return out[2:] if out.startswith("+ ") else "-" + out[2:]

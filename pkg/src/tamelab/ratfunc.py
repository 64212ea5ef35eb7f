"""Univariate polynomials and rational functions in T = q^(-s), plus the
structured form  num(T) / (T^a * prod_i (1 - p^(a_i) T^(b_i))^m_i).

The structured denominator is the uniform shape that integral values take:
a T-power times cyclotomic-like factors whose coefficients are powers of the
residue cardinality.  :func:`factor_structured` recovers that shape from a
raw denominator polynomial by exact trial division, searching exponents
bounded by the p-adic size of the coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional


Coeffs = tuple  # tuple[Fraction, ...] low-to-high, no trailing zeros


def pt(*cs) -> Coeffs:
    return pt_trim(tuple(Fraction(c) for c in cs))


def pt_trim(cs) -> Coeffs:
    cs = list(cs)
    while cs and cs[-1] == 0:
        cs.pop()
    return tuple(cs)


def pt_deg(a: Coeffs) -> int:
    return len(a) - 1


def pt_add(a: Coeffs, b: Coeffs) -> Coeffs:
    n = max(len(a), len(b))
    return pt_trim(tuple(
        (a[i] if i < len(a) else 0) + (b[i] if i < len(b) else 0) for i in range(n)))


def pt_neg(a: Coeffs) -> Coeffs:
    return tuple(-c for c in a)


def pt_sub(a: Coeffs, b: Coeffs) -> Coeffs:
    return pt_add(a, pt_neg(b))


def pt_mul(a: Coeffs, b: Coeffs) -> Coeffs:
    if not a or not b:
        return ()
    out = [Fraction(0)] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x:
            for j, y in enumerate(b):
                out[i + j] += x * y
    return pt_trim(out)


def pt_scale(a: Coeffs, c) -> Coeffs:
    c = Fraction(c)
    if c == 0:
        return ()
    return tuple(x * c for x in a)


def pt_divmod(a: Coeffs, b: Coeffs) -> tuple[Coeffs, Coeffs]:
    if not b:
        raise ZeroDivisionError("polynomial division by zero")
    a = list(a)
    q = [Fraction(0)] * max(0, len(a) - len(b) + 1)
    db = pt_deg(b)
    lead = b[-1]
    while len(a) - 1 >= db and any(a):
        da = len(a) - 1
        while da >= 0 and a[da] == 0:
            da -= 1
        if da < db:
            break
        f = a[da] / lead
        q[da - db] = f
        for i in range(len(b)):
            a[da - db + i] -= f * b[i]
    return pt_trim(q), pt_trim(a)


def pt_gcd(a: Coeffs, b: Coeffs) -> Coeffs:
    while b:
        _, r = pt_divmod(a, b)
        a, b = b, r
    if a:
        a = pt_scale(a, 1 / a[-1])
    return a


def pt_eval(a: Coeffs, x) -> Fraction:
    x = Fraction(x)
    out = Fraction(0)
    for c in reversed(a):
        out = out * x + c
    return out


def pt_pow_t(k: int) -> Coeffs:
    return pt_trim((Fraction(0),) * k + (Fraction(1),))


def pt_str(a: Coeffs, var: str = "T") -> str:
    if not a:
        return "0"
    parts = []
    for i, c in enumerate(a):
        if c == 0:
            continue
        if i == 0:
            parts.append(str(c))
        elif i == 1:
            parts.append(f"{c}*{var}" if c != 1 else var)
        else:
            parts.append(f"{c}*{var}^{i}" if c != 1 else f"{var}^{i}")
    return " + ".join(parts).replace("+ -", "- ")


@dataclass(frozen=True)
class RatFunc:
    """Reduced fraction of T-polynomials; denominator normalised monic."""

    num: Coeffs
    den: Coeffs

    @staticmethod
    def make(num, den) -> "RatFunc":
        num, den = pt_trim(num), pt_trim(den)
        if not den:
            raise ZeroDivisionError("rational function with zero denominator")
        if not num:
            return RatFunc((), (Fraction(1),))
        g = pt_gcd(num, den)
        if pt_deg(g) > 0:
            num, _ = pt_divmod(num, g)
            den, _ = pt_divmod(den, g)
        lead = den[-1]
        if lead != 1:
            num = pt_scale(num, 1 / lead)
            den = pt_scale(den, 1 / lead)
        return RatFunc(num, den)

    @staticmethod
    def const(c) -> "RatFunc":
        c = Fraction(c)
        return RatFunc(pt(c) if c else (), (Fraction(1),))

    def is_zero(self) -> bool:
        return not self.num

    def __add__(self, o: "RatFunc") -> "RatFunc":
        return RatFunc.make(pt_add(pt_mul(self.num, o.den), pt_mul(o.num, self.den)),
                            pt_mul(self.den, o.den))

    def __sub__(self, o: "RatFunc") -> "RatFunc":
        return RatFunc.make(pt_sub(pt_mul(self.num, o.den), pt_mul(o.num, self.den)),
                            pt_mul(self.den, o.den))

    def __mul__(self, o: "RatFunc") -> "RatFunc":
        return RatFunc.make(pt_mul(self.num, o.num), pt_mul(self.den, o.den))

    def __truediv__(self, o: "RatFunc") -> "RatFunc":
        if o.is_zero():
            raise ZeroDivisionError("division by the zero rational function")
        return RatFunc.make(pt_mul(self.num, o.den), pt_mul(self.den, o.num))

    def scale(self, c) -> "RatFunc":
        return RatFunc.make(pt_scale(self.num, c), self.den)

    def shift_t(self, k: int) -> "RatFunc":
        """Multiply by T^k."""
        return RatFunc.make(pt_mul(self.num, pt_pow_t(k)), self.den)

    def eval(self, t) -> Fraction:
        den = pt_eval(self.den, t)
        if den == 0:
            raise ZeroDivisionError("pole at the evaluation point")
        return pt_eval(self.num, t) / den

    def __str__(self):
        return f"({pt_str(self.num)}) / ({pt_str(self.den)})"


class NormalFormError(ValueError):
    """Denominator does not factor into the structured shape."""


def _frac_pval(x: Fraction, p: int) -> int:
    v = 0
    num, den = x.numerator, x.denominator
    while num and num % p == 0:
        num //= p
        v += 1
    while den % p == 0:
        den //= p
        v -= 1
    return v


def factor_structured(den: Coeffs, p: int):
    """Write den = c * T^a * prod (1 - p^alpha T^beta)^mult, exactly.

    Returns (c, a, {(alpha, beta): mult}).  Raises NormalFormError if a
    remainder of positive degree resists all bounded candidates.
    """
    den = pt_trim(den)
    if not den:
        raise NormalFormError("zero denominator")
    a = 0
    while den[0] == 0:
        den = den[1:]
        a += 1
    bound = max(abs(_frac_pval(c, p)) for c in den if c != 0) + 1
    factors: dict[tuple[int, int], int] = {}
    while pt_deg(den) > 0:
        hit = None
        for beta in range(1, pt_deg(den) + 1):
            for alpha in range(-bound, bound + 1):
                cand = pt_trim((Fraction(1),) + (Fraction(0),) * (beta - 1)
                               + (-Fraction(p) ** alpha,))
                q, r = pt_divmod(den, cand)
                if not r:
                    hit = (alpha, beta)
                    den = q
                    break
            if hit:
                break
        if not hit:
            raise NormalFormError(f"irreducible remainder {pt_str(den)}")
        factors[hit] = factors.get(hit, 0) + 1
    c = den[0] if den else Fraction(1)
    return c, a, factors


@dataclass(frozen=True)
class TwoVarRational:
    """num(T) over T^t_power * prod (1 - p^alpha T^beta)^mult, at a prime."""

    p: int
    num: Coeffs
    t_power: int
    factors: tuple  # sorted tuple of ((alpha, beta), mult)

    @staticmethod
    def from_ratfunc(p: int, r: RatFunc) -> "TwoVarRational":
        c, a, fac = factor_structured(r.den, p)
        num = pt_scale(r.num, 1 / c)
        return TwoVarRational(p, num, a, tuple(sorted(fac.items())))

    @staticmethod
    def from_parts(p: int, num, t_power: int, factors) -> "TwoVarRational":
        return TwoVarRational.from_ratfunc(
            p, RatFunc.make(num, _den_poly(p, t_power, dict(factors))))

    def den_poly(self) -> Coeffs:
        return _den_poly(self.p, self.t_power, dict(self.factors))

    def as_ratfunc(self) -> RatFunc:
        return RatFunc.make(self.num, self.den_poly())

    def num_degree(self) -> int:
        return pt_deg(self.num) if self.num else -1

    def den_degree(self) -> int:
        return self.t_power + sum(b * m for (a, b), m in self.factors)

    def eval(self, t) -> Fraction:
        return self.as_ratfunc().eval(t)

    def __add__(self, o: "TwoVarRational") -> "TwoVarRational":
        if self.p != o.p:
            raise ValueError("different primes")
        return TwoVarRational.from_ratfunc(self.p, self.as_ratfunc() + o.as_ratfunc())

    def __sub__(self, o: "TwoVarRational") -> "TwoVarRational":
        if self.p != o.p:
            raise ValueError("different primes")
        return TwoVarRational.from_ratfunc(self.p, self.as_ratfunc() - o.as_ratfunc())

    def __eq__(self, o) -> bool:
        if not isinstance(o, TwoVarRational):
            return NotImplemented
        return (self.p == o.p and self.num == o.num
                and self.t_power == o.t_power and self.factors == o.factors)

    def __hash__(self):
        return hash((self.p, self.num, self.t_power, self.factors))

    def to_json(self):
        return {
            "prime": self.p,
            "numerator": [[c.numerator, c.denominator] for c in self.num],
            "t_power": self.t_power,
            "factors": [[a, b, m] for (a, b), m in self.factors],
        }

    def __str__(self):
        parts = []
        if self.t_power:
            parts.append(f"T^{self.t_power}")
        for (alpha, beta), m in self.factors:
            base = f"(1 - p^{alpha}" + (f"*T^{beta})" if beta > 1 else "*T)")
            parts.append(base + (f"^{m}" if m > 1 else ""))
        den = " ".join(parts) if parts else "1"
        return f"[p={self.p}] ({pt_str(self.num)}) / {den}"


def _den_poly(p: int, t_power: int, factors: dict) -> Coeffs:
    out = pt_pow_t(t_power)
    for (alpha, beta), mult in sorted(factors.items()):
        f = pt_trim((Fraction(1),) + (Fraction(0),) * (beta - 1) + (-Fraction(p) ** alpha,))
        for _ in range(mult):
            out = pt_mul(out, f)
    return out


def check_degree(r: TwoVarRational) -> bool:
    """Degree in T is <= 0: numerator degree bounded by denominator degree."""
    return r.num_degree() <= r.den_degree()

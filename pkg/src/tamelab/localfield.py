"""Finite-precision arithmetic in p-adic fields and Laurent-series fields.

An :class:`Elem` is a certified ball: a valuation ``v`` plus ``prec``
unit digits that are guaranteed correct.  Addition of nearly-cancelling
elements loses digits; an operation whose result would retain no certified
digit raises :class:`PrecisionError` instead of returning garbage.  Elements
built from rationals additionally carry their exact value, so arithmetic
among exact elements never degrades (and exact cancellation to zero is
recognised as the exact zero rather than an error).

Conventions:

* ``ord(0) = +infinity`` (``math.inf``),
* ``ac(x) = x * pi^(-ord x) mod pi`` for the uniformizer ``pi`` (``p`` or
  ``t``), extended by ``ac(0) = 0``; in particular ``ac(pi) = 1`` and ``ac``
  is multiplicative.

Residue fields F_q with q = p^f are supported for the Laurent kind via a
fixed polynomial basis; p-adic descriptors are restricted to f = 1.
Residue elements are integer codes in ``range(q)`` (base-p digit encoding
of the coefficient vector); :class:`ResidueField` provides the field
operations on codes.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union


class PrecisionError(ArithmeticError):
    """The result is indistinguishable from zero at the tracked precision."""


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    d = 2
    while d * d <= n:
        if n % d == 0:
            return False
        d += 1
    return True


# ---------------------------------------------------------------------------
# Residue fields
# ---------------------------------------------------------------------------

def _poly_mul_mod(a, b, g, p):
    """Multiply coefficient tuples mod (g, p); g monic, deg g = len(g)-1."""
    f = len(g) - 1
    res = [0] * (len(a) + len(b) - 1)
    for i, ai in enumerate(a):
        if ai:
            for j, bj in enumerate(b):
                res[i + j] = (res[i + j] + ai * bj) % p
    # reduce mod g
    for k in range(len(res) - 1, f - 1, -1):
        c = res[k]
        if c:
            res[k] = 0
            for i in range(f):
                res[k - f + i] = (res[k - f + i] - c * g[i]) % p
    return tuple(res[:f]) + (0,) * (f - len(res[:f]))


def _poly_pow_mod(base, e, g, p):
    f = len(g) - 1
    result = (1,) + (0,) * (f - 1)
    b = tuple(base) + (0,) * (f - len(base))
    while e:
        if e & 1:
            result = _poly_mul_mod(result, b, g, p)
        b = _poly_mul_mod(b, b, g, p)
        e >>= 1
    return result


def _poly_deg(c) -> int:
    d = len(c) - 1
    while d >= 0 and c[d] == 0:
        d -= 1
    return d


def _poly_gcd(a, b, p):
    a, b = list(a), list(b)
    while _poly_deg(b) >= 0:
        da, db = _poly_deg(a), _poly_deg(b)
        if da < db:
            a, b = b, a
            continue
        factor = (a[da] * pow(b[db], -1, p)) % p
        shift = da - db
        for i in range(db + 1):
            a[i + shift] = (a[i + shift] - factor * b[i]) % p
        if _poly_deg(a) < _poly_deg(b):
            a, b = b, a
    return a


def _is_irreducible(g, p):
    """g = monic coefficient list (low to high, leading 1), degree f >= 1."""
    f = len(g) - 1
    if f == 1:
        return True
    ident = ((0, 1) + (0,) * (f - 2))[:f]
    # x^(p^f) == x mod g
    if _poly_pow_mod((0, 1), p ** f, g, p) != ident:
        return False
    for ell in set(_prime_factors(f)):
        xe = _poly_pow_mod((0, 1), p ** (f // ell), g, p)
        diff = tuple((a - b) % p for a, b in zip(xe, ident))
        if _poly_deg(_poly_gcd(g, diff, p)) != 0:
            return False
    return True


def _prime_factors(n: int):
    out = []
    d = 2
    while d * d <= n:
        while n % d == 0:
            out.append(d)
            n //= d
        d += 1
    if n > 1:
        out.append(n)
    return out


class ResidueField:
    """F_q with q = p^f; elements are integer codes in range(q).

    The code of an element is the base-p encoding of its coefficient
    vector in the polynomial basis 1, x, ..., x^(f-1) modulo the
    lexicographically smallest monic irreducible polynomial of degree f.
    For f = 1 the code is just the value mod p.
    """

    def __init__(self, p: int, f: int = 1):
        if not _is_prime(p):
            raise ValueError(f"{p} is not prime")
        if f < 1:
            raise ValueError("residue degree must be >= 1")
        self.p = p
        self.f = f
        self.q = p ** f
        self.modulus: Optional[tuple[int, ...]] = None
        if f > 1:
            self.modulus = self._find_modulus()

    def _find_modulus(self):
        p, f = self.p, self.f
        for code in range(p ** f):
            coeffs = [(code // p ** i) % p for i in range(f)]
            g = coeffs + [1]
            if _is_irreducible(g, p):
                return tuple(g)
        raise AssertionError("no irreducible polynomial found")

    # -- code <-> coefficient vector ---------------------------------------
    def decode(self, code: int):
        p = self.p
        return tuple((code // p ** i) % p for i in range(self.f))

    def encode(self, coeffs) -> int:
        return sum(int(c) % self.p * self.p ** i for i, c in enumerate(coeffs))

    # -- field operations on codes -----------------------------------------
    def add(self, x: int, y: int) -> int:
        if self.f == 1:
            return (x + y) % self.p
        return self.encode(a + b for a, b in zip(self.decode(x), self.decode(y)))

    def sub(self, x: int, y: int) -> int:
        if self.f == 1:
            return (x - y) % self.p
        return self.encode(a - b for a, b in zip(self.decode(x), self.decode(y)))

    def neg(self, x: int) -> int:
        if self.f == 1:
            return (-x) % self.p
        return self.encode(-a for a in self.decode(x))

    def mul(self, x: int, y: int) -> int:
        if self.f == 1:
            return (x * y) % self.p
        return self.encode(_poly_mul_mod(self.decode(x), self.decode(y), self.modulus, self.p))

    def inv(self, x: int) -> int:
        if x == 0:
            raise ZeroDivisionError("residue-field inverse of 0")
        return self.pow(x, self.q - 2)

    def pow(self, x: int, e: int) -> int:
        if e < 0:
            return self.pow(self.inv(x), -e)
        if self.f == 1:
            return pow(x, e, self.p)
        return self.encode(_poly_pow_mod(self.decode(x), e, self.modulus, self.p))

    def from_int(self, k: int) -> int:
        return k % self.p

    def frobenius(self, x: int, times: int = 1) -> int:
        return self.pow(x, self.p ** times)

    def elements(self):
        return range(self.q)


_RESIDUE_CACHE: dict[tuple[int, int], ResidueField] = {}


def residue_field(p: int, f: int = 1) -> ResidueField:
    key = (p, f)
    if key not in _RESIDUE_CACHE:
        _RESIDUE_CACHE[key] = ResidueField(p, f)
    return _RESIDUE_CACHE[key]


# ---------------------------------------------------------------------------
# Field descriptors and elements
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldDesc:
    kind: str          # "padic" | "laurent"
    p: int
    f: int = 1
    m: int = 8         # working precision (certified digits for new elements)

    def __post_init__(self):
        if self.kind not in ("padic", "laurent"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if not _is_prime(self.p):
            raise ValueError(f"{self.p} is not prime")
        if self.kind == "padic" and self.f != 1:
            raise ValueError("p-adic descriptors use residue degree 1")
        if self.f < 1 or self.m < 1:
            raise ValueError("residue degree and precision must be >= 1")

    @property
    def q(self) -> int:
        return self.p ** self.f

    @property
    def residue(self) -> ResidueField:
        return residue_field(self.p, self.f)

    @property
    def uniformizer_symbol(self) -> str:
        return "p" if self.kind == "padic" else "t"


@dataclass(frozen=True)
class Elem:
    """A certified element: pi^v * (unit digits), or the exact zero."""

    desc: FieldDesc
    v: int
    unit: Optional[Union[int, tuple]]   # int mod p^prec (padic) | digit tuple (laurent)
    prec: int
    zero: bool = False
    rat: Optional[Fraction] = None      # exact provenance, when known

    def __post_init__(self):
        if self.zero:
            return
        if self.prec < 1:
            raise PrecisionError("element with no certified digits")
        if self.desc.kind == "padic":
            if not (0 < self.unit < self.desc.p ** self.prec) or self.unit % self.desc.p == 0:
                raise ValueError("p-adic unit part must be a unit mod p^prec")
        else:
            if len(self.unit) != self.prec or self.unit[0] == 0:
                raise ValueError("laurent unit part must have nonzero leading digit")

    # -- constructors --------------------------------------------------------
    @staticmethod
    def zero_of(desc: FieldDesc) -> "Elem":
        return Elem(desc, 0, None, desc.m, zero=True, rat=Fraction(0))

    @staticmethod
    def from_rational(desc: FieldDesc, value, prec: Optional[int] = None) -> "Elem":
        value = Fraction(value)
        prec = prec or desc.m
        if value == 0:
            return Elem.zero_of(desc)
        p = desc.p
        num, den = value.numerator, value.denominator
        if desc.kind == "padic":
            vn = _pval(num, p)
            vd = _pval(den, p)
            v = vn - vd
            u_num = num // p ** vn
            u_den = den // p ** vd
            unit = (u_num * pow(u_den, -1, p ** prec)) % p ** prec
            return Elem(desc, v, unit, prec, rat=value)
        # laurent: rationals embed as residue-field constants
        if den % p == 0:
            raise ZeroDivisionError(f"{value} is not defined in characteristic {p}")
        c = (num * pow(den, -1, p)) % p
        if c == 0:
            return Elem.zero_of(desc)
        return Elem(desc, 0, (c,) + (0,) * (prec - 1), prec, rat=value)

    @staticmethod
    def from_digits(desc: FieldDesc, v: int, digits) -> "Elem":
        digits = tuple(int(d) for d in digits)
        if not digits or digits[0] == 0:
            raise ValueError("leading digit must be nonzero")
        if desc.kind == "padic":
            unit = sum(d % desc.p * desc.p ** i for i, d in enumerate(digits))
            return Elem(desc, v, unit, len(digits))
        return Elem(desc, v, tuple(d % desc.q for d in digits), len(digits))

    @staticmethod
    def uniformizer(desc: FieldDesc) -> "Elem":
        if desc.kind == "padic":
            return Elem.from_rational(desc, desc.p)
        return Elem(desc, 1, (1,) + (0,) * (desc.m - 1), desc.m)

    # -- views ---------------------------------------------------------------
    def digits(self) -> tuple:
        if self.zero:
            return ()
        if self.desc.kind == "padic":
            p = self.desc.p
            return tuple((self.unit // p ** i) % p for i in range(self.prec))
        return self.unit

    def ord(self):
        return math.inf if self.zero else self.v

    def ac(self) -> int:
        if self.zero:
            return 0
        if self.desc.kind == "padic":
            return self.unit % self.desc.p
        return self.unit[0]

    def same_ball(self, other: "Elem") -> bool:
        """Identical stored approximation (not semantic equality)."""
        return (self.zero, self.v if not self.zero else 0,
                self.unit, self.prec) == \
               (other.zero, other.v if not other.zero else 0,
                other.unit, other.prec)

    def is_exact(self) -> bool:
        return self.rat is not None

    # -- arithmetic ----------------------------------------------------------
    def __add__(self, other: "Elem") -> "Elem":
        a, b = self, other
        if a.desc != b.desc:
            raise ValueError("elements of different fields")
        if a.rat is not None and b.rat is not None:
            return Elem.from_rational(a.desc, a.rat + b.rat)
        if a.zero:
            return b
        if b.zero:
            return a
        if a.v > b.v:
            a, b = b, a
        delta = b.v - a.v
        k = min(a.prec, delta + b.prec)
        desc = a.desc
        if desc.kind == "padic":
            p = desc.p
            s = (a.unit + b.unit * p ** delta) % p ** k
            if s == 0:
                raise PrecisionError("cancellation exhausted precision in +")
            c = _pval(s, p)
            if c >= k:
                raise PrecisionError("cancellation exhausted precision in +")
            return Elem(desc, a.v + c, (s // p ** c) % p ** (k - c), k - c)
        rf = desc.residue
        da = a.digits()
        db = b.digits()
        out = []
        for i in range(k):
            x = da[i] if i < len(da) else 0
            y = db[i - delta] if 0 <= i - delta < len(db) else 0
            out.append(rf.add(x, y))
        c = 0
        while c < k and out[c] == 0:
            c += 1
        if c >= k:
            raise PrecisionError("cancellation exhausted precision in +")
        return Elem(desc, a.v + c, tuple(out[c:]), k - c)

    def __neg__(self) -> "Elem":
        if self.zero:
            return self
        if self.rat is not None:
            return Elem.from_rational(self.desc, -self.rat, self.prec)
        if self.desc.kind == "padic":
            p = self.desc.p
            return Elem(self.desc, self.v, (-self.unit) % p ** self.prec, self.prec)
        rf = self.desc.residue
        return Elem(self.desc, self.v, tuple(rf.neg(d) for d in self.unit), self.prec)

    def __sub__(self, other: "Elem") -> "Elem":
        return self + (-other)

    def __mul__(self, other: "Elem") -> "Elem":
        a, b = self, other
        if a.desc != b.desc:
            raise ValueError("elements of different fields")
        if a.rat is not None and b.rat is not None:
            return Elem.from_rational(a.desc, a.rat * b.rat)
        if a.zero or b.zero:
            return Elem.zero_of(a.desc)
        k = min(a.prec, b.prec)
        desc = a.desc
        if desc.kind == "padic":
            p = desc.p
            return Elem(desc, a.v + b.v, (a.unit * b.unit) % p ** k, k)
        rf = desc.residue
        out = [0] * k
        for i, x in enumerate(a.unit[:k]):
            if x:
                for j, y in enumerate(b.unit[: k - i]):
                    if y:
                        out[i + j] = rf.add(out[i + j], rf.mul(x, y))
        return Elem(desc, a.v + b.v, tuple(out), k)

    def inv(self) -> "Elem":
        if self.zero:
            raise ZeroDivisionError("division by exact zero")
        if self.rat is not None:
            return Elem.from_rational(self.desc, 1 / self.rat, self.prec)
        desc = self.desc
        if desc.kind == "padic":
            p = desc.p
            return Elem(desc, -self.v, pow(self.unit, -1, p ** self.prec), self.prec)
        rf = desc.residue
        k = self.prec
        out = [0] * k
        out[0] = rf.inv(self.unit[0])
        for i in range(1, k):
            acc = 0
            for j in range(1, i + 1):
                acc = rf.add(acc, rf.mul(self.unit[j], out[i - j]))
            out[i] = rf.neg(rf.mul(out[0], acc))
        return Elem(desc, -self.v, tuple(out), k)

    def __truediv__(self, other: "Elem") -> "Elem":
        return self * other.inv()

    def pow_int(self, e: int) -> "Elem":
        if e < 0:
            return self.inv().pow_int(-e)
        out = Elem.from_rational(self.desc, 1, self.prec if not self.zero else self.desc.m)
        base = self
        while e:
            if e & 1:
                out = out * base
            base = base * base if e > 1 else base
            e >>= 1
        return out

    def __repr__(self):
        sym = self.desc.uniformizer_symbol
        if self.zero:
            return "0"
        digs = self.digits()
        shown = " + ".join(
            (f"{d}" if i == 0 else f"{d}*{sym}" if i == 1 else f"{d}*{sym}^{i}")
            for i, d in enumerate(digs[:6]) if d != 0 or i == 0
        )
        tail = " + ..." if self.prec > 6 else ""
        return f"{sym}^{self.v} * ({shown}{tail})"


def _pval(n: int, p: int) -> int:
    if n == 0:
        raise ValueError("valuation of 0")
    v = 0
    while n % p == 0:
        n //= p
        v += 1
    return v


def ord_of(a: Elem):
    return a.ord()


def ac_of(a: Elem) -> int:
    return a.ac()


def sample(desc: FieldDesc, v_lo: int, v_hi: int, rng) -> Elem:
    """Random element: uniform valuation in [v_lo, v_hi], uniform nonzero
    leading digit, uniform remaining digits.  Digits are drawn in order, so
    the same seed with a larger precision extends the same element."""
    v = rng.randint(v_lo, v_hi)
    q = desc.q
    digits = [rng.randrange(1, q)]
    for _ in range(desc.m - 1):
        digits.append(rng.randrange(q))
    return Elem.from_digits(desc, v, digits)


# ---------------------------------------------------------------------------
# Element literals:  p^v * (d0 + d1*p + d2*p^2),  t^-1 * (3 + 1*t),  5/3,  0
# ---------------------------------------------------------------------------

_LIT_HEAD = re.compile(r"^\s*([pt])\s*(?:\^\s*(-?\d+))?\s*(?:\*\s*\((.*)\))?\s*$")
_LIT_DIGIT = re.compile(r"^\s*(\d+)\s*(?:\*\s*[pt](?:\^\s*(\d+))?)?\s*$")


def parse_elem(text: str, desc: FieldDesc) -> Elem:
    text = text.strip()
    sym = desc.uniformizer_symbol
    if re.fullmatch(r"-?\d+(/\d+)?", text):
        return Elem.from_rational(desc, Fraction(text))
    m = _LIT_HEAD.match(text)
    if not m or m.group(1) != sym:
        raise ValueError(f"cannot parse element literal {text!r} for {desc.kind}")
    v = int(m.group(2)) if m.group(2) is not None else 1
    if m.group(3) is None:
        return Elem.from_digits(desc, v, [1])
    digits: dict[int, int] = {}
    for part in m.group(3).split("+"):
        dm = _LIT_DIGIT.match(part)
        if not dm:
            raise ValueError(f"bad digit term {part!r} in element literal")
        coeff = int(dm.group(1))
        if "*" in part:
            expo = int(dm.group(2)) if dm.group(2) is not None else 1
        else:
            expo = 0
        if expo in digits:
            raise ValueError(f"repeated digit position {expo} in element literal")
        digits[expo] = coeff
    top = max(digits)
    vec = [digits.get(i, 0) for i in range(top + 1)]
    if len(vec) < desc.m:
        vec += [0] * (desc.m - len(vec))
    return Elem.from_digits(desc, v, vec)

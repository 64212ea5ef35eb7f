"""Multi-sorted terms and formulas over valued fields.

Four families of sorts:

* ``VF``     -- the valued field itself (ring language, rational constants),
* ``RF``     -- the residue field (ring language, prime-field constants),
* ``VG``     -- the value group (ordered group language: ``+ - 0 <= <``),
* ``VGQ[n]`` -- the quotient of the value group by n-multiples, n >= 2
  (group language plus projections between compatible quotients).

Cross-sort function symbols: ``ord : VF -> VG`` (valuation), ``ac : VF -> RF``
(leading coefficient / angular component), ``ord[n] : VF -> VGQ[n]``
(valuation mod n), ``pi[n] : VG -> VGQ[n]`` and ``pi[n,m] : VGQ[n] -> VGQ[m]``
for ``m | n`` (natural projections).

Conventions, used consistently by every evaluator in this package:

* ``ord(0) = +infinity``.  A VG comparison whose sides mix finite values and
  infinities is decided by the sign rules in :mod:`tamelab.evaluate`.
* ``ord[n](0) = 0`` in each quotient sort (quotient maps do not see the
  infinity).

A formula is *tame* when it mentions no VG-sorted material at all and has no
VF-sorted quantifier.  RF and VGQ[n] quantifiers are always permitted.

All nodes are immutable (frozen dataclasses) and hashable, so formulas and
terms can be shared freely, memoised, and used as dictionary keys.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Optional, Union


class SortError(ValueError):
    """An ill-sorted term or formula was constructed or parsed."""


@dataclass(frozen=True)
class Sort:
    kind: str                 # "VF" | "RF" | "VG" | "VGQ"
    n: Optional[int] = None   # modulus, only for VGQ

    def __post_init__(self):
        if self.kind not in ("VF", "RF", "VG", "VGQ"):
            raise SortError(f"unknown sort kind {self.kind!r}")
        if self.kind == "VGQ":
            if self.n is None or self.n < 2:
                raise SortError(f"VGQ modulus must be >= 2, got {self.n}")
        elif self.n is not None:
            raise SortError(f"sort {self.kind} takes no modulus")

    def __str__(self):
        return f"VGQ[{self.n}]" if self.kind == "VGQ" else self.kind

    @property
    def is_group(self) -> bool:
        return self.kind in ("VG", "VGQ")


VF = Sort("VF")
RF = Sort("RF")
VG = Sort("VG")


def VGQ(n: int) -> Sort:
    return Sort("VGQ", n)


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------

class Term:
    """Base class; every concrete node exposes ``.sort``."""

    __slots__ = ()

    @property
    def sort(self) -> Sort:  # pragma: no cover - overridden
        raise NotImplementedError


@dataclass(frozen=True)
class Var(Term):
    name: str
    var_sort: Sort

    @property
    def sort(self):
        return self.var_sort


@dataclass(frozen=True)
class RatLit(Term):
    """Rational constant of the valued field."""

    value: Fraction

    def __post_init__(self):
        if not isinstance(self.value, Fraction):
            object.__setattr__(self, "value", Fraction(self.value))

    @property
    def sort(self):
        return VF


@dataclass(frozen=True)
class ResLit(Term):
    """Prime-field constant of the residue field (an integer mod p)."""

    value: int

    @property
    def sort(self):
        return RF


@dataclass(frozen=True)
class GroupZero(Term):
    """The constant 0 of VG or of a VGQ[n] sort."""

    zero_sort: Sort

    def __post_init__(self):
        if not self.zero_sort.is_group:
            raise SortError(f"0 constant lives in group sorts, not {self.zero_sort}")

    @property
    def sort(self):
        return self.zero_sort


def _require_same_sort(a: Term, b: Term, what: str) -> Sort:
    if a.sort != b.sort:
        raise SortError(f"{what} needs equal sorts, got {a.sort} and {b.sort}")
    return a.sort


@dataclass(frozen=True)
class Add(Term):
    a: Term
    b: Term

    def __post_init__(self):
        _require_same_sort(self.a, self.b, "+")

    @property
    def sort(self):
        return self.a.sort


@dataclass(frozen=True)
class Sub(Term):
    a: Term
    b: Term

    def __post_init__(self):
        _require_same_sort(self.a, self.b, "-")

    @property
    def sort(self):
        return self.a.sort


@dataclass(frozen=True)
class Neg(Term):
    a: Term

    @property
    def sort(self):
        return self.a.sort


@dataclass(frozen=True)
class Mul(Term):
    """Ring multiplication; VF*VF or RF*RF."""

    a: Term
    b: Term

    def __post_init__(self):
        s = _require_same_sort(self.a, self.b, "*")
        if s.is_group:
            raise SortError(f"* is a ring operation; use integer scaling on {s}")

    @property
    def sort(self):
        return self.a.sort


@dataclass(frozen=True)
class Smul(Term):
    """Integer scalar multiple k*t inside a group sort."""

    k: int
    a: Term

    def __post_init__(self):
        if not self.a.sort.is_group:
            raise SortError(f"integer scaling applies to group sorts, not {self.a.sort}")

    @property
    def sort(self):
        return self.a.sort


@dataclass(frozen=True)
class Ord(Term):
    a: Term

    def __post_init__(self):
        if self.a.sort != VF:
            raise SortError(f"ord takes a VF argument, got {self.a.sort}")

    @property
    def sort(self):
        return VG


@dataclass(frozen=True)
class Ac(Term):
    a: Term

    def __post_init__(self):
        if self.a.sort != VF:
            raise SortError(f"ac takes a VF argument, got {self.a.sort}")

    @property
    def sort(self):
        return RF


@dataclass(frozen=True)
class OrdN(Term):
    n: int
    a: Term

    def __post_init__(self):
        if self.n < 2:
            raise SortError(f"ord[n] needs n >= 2, got {self.n}")
        if self.a.sort != VF:
            raise SortError(f"ord[{self.n}] takes a VF argument, got {self.a.sort}")

    @property
    def sort(self):
        return VGQ(self.n)


@dataclass(frozen=True)
class Proj(Term):
    """pi[n] : VG -> VGQ[n]."""

    n: int
    a: Term

    def __post_init__(self):
        if self.n < 2:
            raise SortError(f"pi[n] needs n >= 2, got {self.n}")
        if self.a.sort != VG:
            raise SortError(f"pi[{self.n}] takes a VG argument, got {self.a.sort}")

    @property
    def sort(self):
        return VGQ(self.n)


@dataclass(frozen=True)
class ProjQ(Term):
    """pi[n,m] : VGQ[n] -> VGQ[m], defined when m divides n."""

    n: int
    m: int
    a: Term

    def __post_init__(self):
        if self.m < 2 or self.n < 2:
            raise SortError(f"pi[n,m] needs n,m >= 2, got {self.n},{self.m}")
        if self.n % self.m != 0:
            raise SortError(f"pi[{self.n},{self.m}]: {self.m} does not divide {self.n}")
        if self.a.sort != VGQ(self.n):
            raise SortError(f"pi[{self.n},{self.m}] takes a VGQ[{self.n}] argument, got {self.a.sort}")

    @property
    def sort(self):
        return VGQ(self.m)


# ---------------------------------------------------------------------------
# Formulas
# ---------------------------------------------------------------------------

class Formula:
    __slots__ = ()


@dataclass(frozen=True)
class TrueF(Formula):
    pass


@dataclass(frozen=True)
class FalseF(Formula):
    pass


CMP_OPS = ("=", "<=", "<")


@dataclass(frozen=True)
class Cmp(Formula):
    op: str
    a: Term
    b: Term

    def __post_init__(self):
        if self.op not in CMP_OPS:
            raise SortError(f"unknown comparison {self.op!r}")
        s = _require_same_sort(self.a, self.b, self.op)
        if self.op in ("<=", "<") and s != VG:
            raise SortError(f"order comparisons live on VG only, got {s}")


@dataclass(frozen=True)
class Not(Formula):
    f: Formula


@dataclass(frozen=True)
class And(Formula):
    a: Formula
    b: Formula


@dataclass(frozen=True)
class Or(Formula):
    a: Formula
    b: Formula


@dataclass(frozen=True)
class Implies(Formula):
    a: Formula
    b: Formula


@dataclass(frozen=True)
class Quant(Formula):
    q: str          # "exists" | "forall"
    var: str
    var_sort: Sort
    body: Formula

    def __post_init__(self):
        if self.q not in ("exists", "forall"):
            raise SortError(f"unknown quantifier {self.q!r}")


def conj(parts) -> Formula:
    parts = [p for p in parts if not isinstance(p, TrueF)]
    if any(isinstance(p, FalseF) for p in parts):
        return FalseF()
    if not parts:
        return TrueF()
    out = parts[0]
    for p in parts[1:]:
        out = And(out, p)
    return out


def disj(parts) -> Formula:
    parts = [p for p in parts if not isinstance(p, FalseF)]
    if any(isinstance(p, TrueF) for p in parts):
        return TrueF()
    if not parts:
        return FalseF()
    out = parts[0]
    for p in parts[1:]:
        out = Or(out, p)
    return out


# ---------------------------------------------------------------------------
# Traversal helpers
# ---------------------------------------------------------------------------

def subterms(t: Term) -> Iterator[Term]:
    yield t
    for attr in ("a", "b"):
        child = getattr(t, attr, None)
        if isinstance(child, Term):
            yield from subterms(child)


def formula_terms(f: Formula) -> Iterator[Term]:
    """All top-level terms of atoms, in left-to-right order."""
    if isinstance(f, Cmp):
        yield f.a
        yield f.b
    elif isinstance(f, Not):
        yield from formula_terms(f.f)
    elif isinstance(f, (And, Or, Implies)):
        yield from formula_terms(f.a)
        yield from formula_terms(f.b)
    elif isinstance(f, Quant):
        yield from formula_terms(f.body)


def free_vars(f: Formula) -> list[tuple[str, Sort]]:
    """Free variables with their sorts, in order of first occurrence."""
    seen: dict[str, Sort] = {}
    order: list[tuple[str, Sort]] = []

    def walk_term(t: Term, bound: dict[str, Sort]):
        for s in subterms(t):
            if isinstance(s, Var) and s.name not in bound and s.name not in seen:
                seen[s.name] = s.sort
                order.append((s.name, s.sort))

    def walk(g: Formula, bound: dict[str, Sort]):
        if isinstance(g, Cmp):
            walk_term(g.a, bound)
            walk_term(g.b, bound)
        elif isinstance(g, Not):
            walk(g.f, bound)
        elif isinstance(g, (And, Or, Implies)):
            walk(g.a, bound)
            walk(g.b, bound)
        elif isinstance(g, Quant):
            inner = dict(bound)
            inner[g.var] = g.var_sort
            walk(g.body, inner)

    walk(f, {})
    return order


def check_well_sorted(f: Formula) -> dict[str, Sort]:
    """Verify every variable name carries a single sort across the formula.

    Returns the name -> sort map (free and bound).  Local constructors
    already guarantee operator-level sort correctness; this adds the global
    uniqueness invariant.
    """
    sorts: dict[str, Sort] = {}

    def note(name: str, s: Sort):
        if name in sorts and sorts[name] != s:
            raise SortError(f"variable {name!r} used at sorts {sorts[name]} and {s}")
        sorts[name] = s

    def walk(g: Formula):
        if isinstance(g, Cmp):
            for t in (g.a, g.b):
                for s in subterms(t):
                    if isinstance(s, Var):
                        note(s.name, s.sort)
        elif isinstance(g, Not):
            walk(g.f)
        elif isinstance(g, (And, Or, Implies)):
            walk(g.a)
            walk(g.b)
        elif isinstance(g, Quant):
            note(g.var, g.var_sort)
            walk(g.body)

    walk(f)
    return sorts


def _term_mentions_vg(t: Term) -> bool:
    for s in subterms(t):
        if s.sort == VG or isinstance(s, Proj):
            return True
    return False


def is_tame(f: Formula) -> bool:
    """No VG sort anywhere, and no valued-field quantifier."""
    if isinstance(f, (TrueF, FalseF)):
        return True
    if isinstance(f, Cmp):
        return not (_term_mentions_vg(f.a) or _term_mentions_vg(f.b))
    if isinstance(f, Not):
        return is_tame(f.f)
    if isinstance(f, (And, Or, Implies)):
        return is_tame(f.a) and is_tame(f.b)
    if isinstance(f, Quant):
        if f.var_sort in (VF, VG):
            return False
        return is_tame(f.body)
    raise TypeError(f"not a formula: {f!r}")


def quantifier_sorts(f: Formula) -> list[Sort]:
    out = []
    if isinstance(f, Quant):
        out.append(f.var_sort)
        out.extend(quantifier_sorts(f.body))
    elif isinstance(f, Not):
        out.extend(quantifier_sorts(f.f))
    elif isinstance(f, (And, Or, Implies)):
        out.extend(quantifier_sorts(f.a))
        out.extend(quantifier_sorts(f.b))
    return out


def has_vf_quantifier(f: Formula) -> bool:
    return any(s == VF for s in quantifier_sorts(f))


def has_vg_quantifier(f: Formula) -> bool:
    return any(s == VG for s in quantifier_sorts(f))


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

def term_to_text(t: Term) -> str:
    return _term_text(t, 0)


def _term_text(t: Term, prec: int) -> str:
    # prec levels: 0 sum, 1 product, 2 atom
    if isinstance(t, Var):
        return t.name
    if isinstance(t, RatLit):
        v = t.value
        s = str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
        return f"({s})" if v < 0 and prec >= 1 else s
    if isinstance(t, ResLit):
        return f"({t.value})" if t.value < 0 and prec >= 1 else str(t.value)
    if isinstance(t, GroupZero):
        return "0"
    if isinstance(t, Add):
        s = f"{_term_text(t.a, 0)} + {_term_text(t.b, 1)}"
        return f"({s})" if prec > 0 else s
    if isinstance(t, Sub):
        s = f"{_term_text(t.a, 0)} - {_term_text(t.b, 1)}"
        return f"({s})" if prec > 0 else s
    if isinstance(t, Neg):
        s = f"-{_term_text(t.a, 2)}"
        return f"({s})" if prec > 1 else s
    if isinstance(t, Mul):
        s = f"{_term_text(t.a, 1)} * {_term_text(t.b, 2)}"
        return f"({s})" if prec > 1 else s
    if isinstance(t, Smul):
        s = f"{t.k} * {_term_text(t.a, 2)}"
        return f"({s})" if prec > 1 else s
    if isinstance(t, Ord):
        return f"ord({_term_text(t.a, 0)})"
    if isinstance(t, Ac):
        return f"ac({_term_text(t.a, 0)})"
    if isinstance(t, OrdN):
        return f"ord[{t.n}]({_term_text(t.a, 0)})"
    if isinstance(t, Proj):
        return f"pi[{t.n}]({_term_text(t.a, 0)})"
    if isinstance(t, ProjQ):
        return f"pi[{t.n},{t.m}]({_term_text(t.a, 0)})"
    raise TypeError(f"not a term: {t!r}")


def to_text(f: Formula) -> str:
    return _fmla_text(f, 0)


def _fmla_text(f: Formula, prec: int) -> str:
    # prec: 0 implies, 1 or, 2 and, 3 not/atom
    if isinstance(f, TrueF):
        return "true"
    if isinstance(f, FalseF):
        return "false"
    if isinstance(f, Cmp):
        return f"{_term_text(f.a, 0)} {f.op} {_term_text(f.b, 0)}"
    if isinstance(f, Not):
        inner = f.f
        if isinstance(inner, (Cmp, TrueF, FalseF, Not, Quant)):
            body = _fmla_text(inner, 3)
            if isinstance(inner, (Cmp, Quant)):
                return f"!({body})"
            return f"!{body}"
        return f"!({_fmla_text(inner, 0)})"
    if isinstance(f, And):
        s = f"{_fmla_text(f.a, 2)} & {_fmla_text(f.b, 3)}"
        return f"({s})" if prec > 2 else s
    if isinstance(f, Or):
        s = f"{_fmla_text(f.a, 1)} | {_fmla_text(f.b, 2)}"
        return f"({s})" if prec > 1 else s
    if isinstance(f, Implies):
        s = f"{_fmla_text(f.a, 1)} -> {_fmla_text(f.b, 0)}"
        return f"({s})" if prec > 0 else s
    if isinstance(f, Quant):
        s = f"({f.q} {f.var}:{f.var_sort}) {_fmla_text(f.body, 3)}"
        return f"({s})" if prec > 3 else s
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# JSON import/export (stable field names)
# ---------------------------------------------------------------------------

def sort_to_json(s: Sort):
    return {"kind": s.kind, "n": s.n} if s.kind == "VGQ" else {"kind": s.kind}


def sort_from_json(d) -> Sort:
    return Sort(d["kind"], d.get("n"))


def term_to_json(t: Term):
    if isinstance(t, Var):
        return {"node": "var", "name": t.name, "sort": sort_to_json(t.var_sort)}
    if isinstance(t, RatLit):
        return {"node": "rat", "num": t.value.numerator, "den": t.value.denominator}
    if isinstance(t, ResLit):
        return {"node": "res", "value": t.value}
    if isinstance(t, GroupZero):
        return {"node": "zero", "sort": sort_to_json(t.zero_sort)}
    if isinstance(t, Add):
        return {"node": "add", "a": term_to_json(t.a), "b": term_to_json(t.b)}
    if isinstance(t, Sub):
        return {"node": "sub", "a": term_to_json(t.a), "b": term_to_json(t.b)}
    if isinstance(t, Neg):
        return {"node": "neg", "a": term_to_json(t.a)}
    if isinstance(t, Mul):
        return {"node": "mul", "a": term_to_json(t.a), "b": term_to_json(t.b)}
    if isinstance(t, Smul):
        return {"node": "smul", "k": t.k, "a": term_to_json(t.a)}
    if isinstance(t, Ord):
        return {"node": "ord", "a": term_to_json(t.a)}
    if isinstance(t, Ac):
        return {"node": "ac", "a": term_to_json(t.a)}
    if isinstance(t, OrdN):
        return {"node": "ordn", "n": t.n, "a": term_to_json(t.a)}
    if isinstance(t, Proj):
        return {"node": "proj", "n": t.n, "a": term_to_json(t.a)}
    if isinstance(t, ProjQ):
        return {"node": "projq", "n": t.n, "m": t.m, "a": term_to_json(t.a)}
    raise TypeError(f"not a term: {t!r}")


def term_from_json(d) -> Term:
    node = d["node"]
    if node == "var":
        return Var(d["name"], sort_from_json(d["sort"]))
    if node == "rat":
        return RatLit(Fraction(d["num"], d["den"]))
    if node == "res":
        return ResLit(d["value"])
    if node == "zero":
        return GroupZero(sort_from_json(d["sort"]))
    if node == "add":
        return Add(term_from_json(d["a"]), term_from_json(d["b"]))
    if node == "sub":
        return Sub(term_from_json(d["a"]), term_from_json(d["b"]))
    if node == "neg":
        return Neg(term_from_json(d["a"]))
    if node == "mul":
        return Mul(term_from_json(d["a"]), term_from_json(d["b"]))
    if node == "smul":
        return Smul(d["k"], term_from_json(d["a"]))
    if node == "ord":
        return Ord(term_from_json(d["a"]))
    if node == "ac":
        return Ac(term_from_json(d["a"]))
    if node == "ordn":
        return OrdN(d["n"], term_from_json(d["a"]))
    if node == "proj":
        return Proj(d["n"], term_from_json(d["a"]))
    if node == "projq":
        return ProjQ(d["n"], d["m"], term_from_json(d["a"]))
    raise ValueError(f"unknown term node {node!r}")


def formula_to_json(f: Formula):
    if isinstance(f, TrueF):
        return {"node": "true"}
    if isinstance(f, FalseF):
        return {"node": "false"}
    if isinstance(f, Cmp):
        return {"node": "cmp", "op": f.op, "a": term_to_json(f.a), "b": term_to_json(f.b)}
    if isinstance(f, Not):
        return {"node": "not", "f": formula_to_json(f.f)}
    if isinstance(f, And):
        return {"node": "and", "a": formula_to_json(f.a), "b": formula_to_json(f.b)}
    if isinstance(f, Or):
        return {"node": "or", "a": formula_to_json(f.a), "b": formula_to_json(f.b)}
    if isinstance(f, Implies):
        return {"node": "implies", "a": formula_to_json(f.a), "b": formula_to_json(f.b)}
    if isinstance(f, Quant):
        return {"node": "quant", "q": f.q, "var": f.var,
                "sort": sort_to_json(f.var_sort), "body": formula_to_json(f.body)}
    raise TypeError(f"not a formula: {f!r}")


def formula_from_json(d) -> Formula:
    node = d["node"]
    if node == "true":
        return TrueF()
    if node == "false":
        return FalseF()
    if node == "cmp":
        return Cmp(d["op"], term_from_json(d["a"]), term_from_json(d["b"]))
    if node == "not":
        return Not(formula_from_json(d["f"]))
    if node == "and":
        return And(formula_from_json(d["a"]), formula_from_json(d["b"]))
    if node == "or":
        return Or(formula_from_json(d["a"]), formula_from_json(d["b"]))
    if node == "implies":
        return Implies(formula_from_json(d["a"]), formula_from_json(d["b"]))
    if node == "quant":
        return Quant(d["q"], d["var"], sort_from_json(d["sort"]), formula_from_json(d["body"]))
    raise ValueError(f"unknown formula node {node!r}")

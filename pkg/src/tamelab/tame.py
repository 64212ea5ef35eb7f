"""Rewriting value-group content into tame form.

Order comparisons between valuations of valued-field terms become residue
equalities: for nonzero denominators the condition ``ord a < ord b`` holds
iff the three leading coefficients ``ac(a + b), ac(a + 2b), ac(a + 3b)``
coincide (they all equal ``ac(a)`` when a dominates; two of them differ in
every other case as long as 1, 2, 3 are distinct nonzero residues, i.e. the
residue characteristic exceeds 3).  Zero operands are covered by an explicit
guard so the rewriting matches the ``ord(0) = +infinity`` convention in all
cases, including both operands zero.

``to_tame`` removes the whole VG sort from a formula without VF quantifiers
and without free VG variables:

1. valuation operands that interact with VG quantifiers or projections are
   case-split on vanishing (the guard produces residue atoms ``ac(u) = 0``),
   and the assumed-infinite valuations are resolved by the sign rules;
2. VG quantifiers are eliminated (:mod:`tamelab.vgqe`);
3. remaining VG atoms are folded into two product-form valuations and
   rewritten as above; projections of valuation combinations become
   quotient-sort combinations of ``ord[n]`` terms, with ``ord[n](0) = 0``.
"""

from __future__ import annotations

from fractions import Fraction
from math import gcd

from .formula import (
    VF, RF, VG, VGQ, Sort,
    Term, Var, RatLit, ResLit, GroupZero, Add, Sub, Neg, Mul, Smul,
    Ord, Ac, OrdN, Proj, ProjQ,
    Formula, TrueF, FalseF, Cmp, Not, And, Or, Implies, Quant,
    conj, disj, free_vars, is_tame, has_vf_quantifier, subterms, term_to_text,
)
from .vgqe import eliminate_all, vg_linform, ShapeError


class TameError(ValueError):
    pass


def _check_char(p):
    if p is not None and p <= 3:
        raise TameError("rewriting needs residue characteristic > 3 "
                        "(the constants 1, 2, 3 must stay distinct and nonzero)")


def _shift(t: Term, k: int, other: Term) -> Term:
    return Add(t, Mul(RatLit(Fraction(k)), other))


def _zero_guard(fi: Term, fj: Term) -> Formula:
    both_zero = And(Cmp("=", Ac(fi), ResLit(0)), Cmp("=", Ac(fj), ResLit(0)))
    return Not(both_zero)


def rewrite_ord_lt(fi: Term, fj: Term, p: int | None = None) -> Formula:
    """Residue-field formula equivalent to ``ord fi < ord fj``."""
    _check_char(p)
    if fi.sort != VF or fj.sort != VF:
        raise TameError("operands must be valued-field terms")
    a1 = Ac(_shift(fi, 1, fj))
    a2 = Ac(_shift(fi, 2, fj))
    a3 = Ac(_shift(fi, 3, fj))
    triple = And(Cmp("=", a1, a2), Cmp("=", a2, a3))
    return And(triple, _zero_guard(fi, fj))


def rewrite_ord_le(fi: Term, fj: Term, p: int | None = None) -> Formula:
    """``ord fi <= ord fj``  ==  not (ord fj < ord fi)."""
    return Not(rewrite_ord_lt(fj, fi, p))


def rewrite_ord_eq(fi: Term, fj: Term, p: int | None = None) -> Formula:
    """``ord fi = ord fj``  ==  neither side strictly dominates."""
    return And(Not(rewrite_ord_lt(fj, fi, p)), Not(rewrite_ord_lt(fi, fj, p)))


# ---------------------------------------------------------------------------
# Valuation linear forms -> product form
# ---------------------------------------------------------------------------

def _vf_power(base: Term, e: int) -> Term:
    out = None
    for _ in range(e):
        out = base if out is None else Mul(out, base)
    return out if out is not None else RatLit(Fraction(1))


def _product_form(lf: dict) -> tuple[Term, Term]:
    """Split an integer combination of valuations into ord(P) ? ord(Q)."""
    pos: Term | None = None
    neg: Term | None = None
    for base, c in sorted(lf.items(), key=lambda kv: term_to_text(kv[0])):
        if not isinstance(base, Ord):
            raise TameError(f"cannot remove VG content: base {term_to_text(base)} "
                            "is not a valuation term")
        powered = _vf_power(base.a, abs(c))
        if c > 0:
            pos = powered if pos is None else Mul(pos, powered)
        else:
            neg = powered if neg is None else Mul(neg, powered)
    one = RatLit(Fraction(1))
    return pos if pos is not None else one, neg if neg is not None else one


def _rewrite_vg_atom(op: str, a: Term, b: Term, p) -> Formula:
    lf = vg_linform(Sub(a, b))
    P, Q = _product_form(lf)
    if op == "=":
        return rewrite_ord_eq(P, Q, p)
    if op == "<":
        return rewrite_ord_lt(P, Q, p)
    if op == "<=":
        return rewrite_ord_le(P, Q, p)
    raise AssertionError(op)


def _proj_to_ordn(t: Proj) -> Term:
    """pi[n](sum c*ord(u)) -> sum c*ord[n](u) in the quotient sort."""
    lf = vg_linform(t.a)
    n = t.n
    out: Term | None = None
    for base, c in sorted(lf.items(), key=lambda kv: term_to_text(kv[0])):
        if not isinstance(base, Ord):
            raise TameError(f"projection argument keeps non-valuation base "
                            f"{term_to_text(base)}")
        c %= n
        if c == 0:
            continue
        part = OrdN(n, base.a) if c == 1 else Smul(c, OrdN(n, base.a))
        out = part if out is None else Add(out, part)
    return out if out is not None else GroupZero(VGQ(n))


def _convert_term(t: Term, p) -> Term:
    if isinstance(t, Proj):
        return _proj_to_ordn(Proj(t.n, t.a))
    rebuilt = {}
    changed = False
    for attr in ("a", "b"):
        child = getattr(t, attr, None)
        if isinstance(child, Term):
            new = _convert_term(child, p)
            rebuilt[attr] = new
            changed = changed or new is not child
    if not changed:
        return t
    kwargs = dict(t.__dict__)
    kwargs.update(rebuilt)
    return type(t)(**kwargs)


def _convert(f: Formula, p) -> Formula:
    if isinstance(f, (TrueF, FalseF)):
        return f
    if isinstance(f, Cmp):
        if f.a.sort == VG:
            return _rewrite_vg_atom(f.op, f.a, f.b, p)
        return Cmp(f.op, _convert_term(f.a, p), _convert_term(f.b, p))
    if isinstance(f, Not):
        return Not(_convert(f.f, p))
    if isinstance(f, (And, Or, Implies)):
        return type(f)(_convert(f.a, p), _convert(f.b, p))
    if isinstance(f, Quant):
        if f.var_sort == VG:
            raise TameError("VG quantifier survived elimination")
        return Quant(f.q, f.var, f.var_sort, _convert(f.body, p))
    raise TypeError(f)


# ---------------------------------------------------------------------------
# Vanishing case split for valuation operands entangled with the value group
# ---------------------------------------------------------------------------

def _split_bases(f: Formula) -> list[Term]:
    """VF terms u with ord(u) interacting with quantified VG variables or
    projections; their vanishing changes the shape of the elimination."""
    found: dict[Term, None] = {}

    def scan_term(t: Term, in_proj: bool, bound: set[str]):
        if isinstance(t, Proj):
            scan_term(t.a, True, bound)
            return
        if isinstance(t, Ord) and in_proj:
            found.setdefault(t.a)
            return
        for attr in ("a", "b"):
            child = getattr(t, attr, None)
            if isinstance(child, Term):
                scan_term(child, in_proj, bound)

    def atom_touches_bound(t: Term, bound: set[str]) -> bool:
        return any(isinstance(s, Var) and s.sort == VG and s.name in bound
                   for s in subterms(t))

    def walk(g: Formula, bound: set[str]):
        if isinstance(g, Cmp):
            if g.a.sort == VG and (atom_touches_bound(g.a, bound)
                                   or atom_touches_bound(g.b, bound)):
                for side in (g.a, g.b):
                    for s in subterms(side):
                        if isinstance(s, Ord):
                            found.setdefault(s.a)
            scan_term(g.a, False, bound)
            scan_term(g.b, False, bound)
        elif isinstance(g, Not):
            walk(g.f, bound)
        elif isinstance(g, (And, Or, Implies)):
            walk(g.a, bound)
            walk(g.b, bound)
        elif isinstance(g, Quant):
            walk(g.body, bound | ({g.var} if g.var_sort == VG else set()))

    walk(f, set())
    return list(found)


def _resolve_zero(f: Formula, zeroed: frozenset) -> Formula:
    """Assume ord(u) = +infinity for u in `zeroed` and simplify VG atoms by
    the sign rules; projections treat those valuations as 0."""

    def side_split(lf: dict):
        finite = {}
        has_inf = False
        for base, c in lf.items():
            if isinstance(base, Ord) and base.a in zeroed:
                has_inf = True
            else:
                finite[base] = c
        return finite, has_inf

    def fix_atom(op: str, a: Term, b: Term) -> Formula:
        lf = vg_linform(Sub(a, b))
        pos = {k: v for k, v in lf.items() if v > 0}
        neg = {k: -v for k, v in lf.items() if v < 0}
        pf, pinf = side_split(pos)
        nf, ninf = side_split(neg)
        if not pinf and not ninf:
            return Cmp(op, a, b)
        if pinf and ninf:
            if op == "=":
                return TrueF()
            if op == "<":
                return FalseF()
            return TrueF()          # <=
        if pinf:       # left side infinite, right finite
            if op == "=":
                return FalseF()
            if op == "<":
                return FalseF()
            return FalseF()          # inf <= finite
        # right side infinite, left finite
        if op == "=":
            return FalseF()
        return TrueF()               # finite < inf, finite <= inf

    def fix_term(t: Term) -> Term:
        if isinstance(t, Proj):
            lf = vg_linform(t.a)
            kept = {k: v for k, v in lf.items()
                    if not (isinstance(k, Ord) and k.a in zeroed)}
            from .vgqe import build_vg_term
            return Proj(t.n, build_vg_term(kept))
        rebuilt = {}
        changed = False
        for attr in ("a", "b"):
            child = getattr(t, attr, None)
            if isinstance(child, Term):
                new = fix_term(child)
                rebuilt[attr] = new
                changed = changed or new is not child
        if not changed:
            return t
        kwargs = dict(t.__dict__)
        kwargs.update(rebuilt)
        return type(t)(**kwargs)

    def walk(g: Formula) -> Formula:
        if isinstance(g, (TrueF, FalseF)):
            return g
        if isinstance(g, Cmp):
            if g.a.sort == VG:
                return fix_atom(g.op, g.a, g.b)
            return Cmp(g.op, fix_term(g.a), fix_term(g.b))
        if isinstance(g, Not):
            inner = walk(g.f)
            if isinstance(inner, TrueF):
                return FalseF()
            if isinstance(inner, FalseF):
                return TrueF()
            return Not(inner)
        if isinstance(g, (And, Or)):
            return (conj if isinstance(g, And) else disj)([walk(g.a), walk(g.b)])
        if isinstance(g, Implies):
            return Implies(walk(g.a), walk(g.b))
        if isinstance(g, Quant):
            return Quant(g.q, g.var, g.var_sort, walk(g.body))
        raise TypeError(g)

    return walk(f)


def to_tame(f: Formula, p: int | None = None) -> Formula:
    """Equivalent tame formula: no VG sort, no VF quantifier.

    Preconditions: no VF quantifiers (full valued-field elimination is not
    provided) and no free VG variables.
    """
    _check_char(p)
    if has_vf_quantifier(f):
        raise TameError("input has a valued-field quantifier")
    for name, sort in free_vars(f):
        if sort == VG:
            raise TameError(f"free VG variable {name}")
    if is_tame(f):
        return f

    bases = _split_bases(f)
    if len(bases) > 6:
        raise TameError(f"vanishing case split over {len(bases)} operands "
                        "exceeds the supported budget")

    branches = []
    for mask in range(1 << len(bases)):
        zeroed = frozenset(b for i, b in enumerate(bases) if mask >> i & 1)
        guards: list[Formula] = []
        for b in bases:
            z = Cmp("=", Ac(b), ResLit(0))
            guards.append(z if b in zeroed else Not(z))
        resolved = _resolve_zero(f, zeroed) if zeroed else f
        eliminated = eliminate_all(resolved)
        branches.append(conj(guards + [_convert(eliminated, p)]))
    out = disj(branches)
    if not is_tame(out):
        raise TameError("tame conversion left VG material behind")
    return out


def compute_d0(f: Formula) -> int:
    """Product of the distinct quotient moduli mentioned by a tame formula."""
    if not is_tame(f):
        raise TameError("d0 is defined for tame formulas")
    seen: set[int] = set()

    def scan_term(t: Term):
        for s in subterms(t):
            if isinstance(s, OrdN):
                seen.add(s.n)
            elif isinstance(s, ProjQ):
                seen.add(s.n)
                seen.add(s.m)
            elif isinstance(s, (Var, GroupZero)) and s.sort.kind == "VGQ":
                seen.add(s.sort.n)

    def walk(g: Formula):
        if isinstance(g, Cmp):
            scan_term(g.a)
            scan_term(g.b)
        elif isinstance(g, Not):
            walk(g.f)
        elif isinstance(g, (And, Or, Implies)):
            walk(g.a)
            walk(g.b)
        elif isinstance(g, Quant):
            if g.var_sort.kind == "VGQ":
                seen.add(g.var_sort.n)
            walk(g.body)

    walk(f)
    out = 1
    for n in sorted(seen):
        out *= n
    return out

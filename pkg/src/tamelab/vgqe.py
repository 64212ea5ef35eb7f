"""Quantifier elimination for value-group quantifiers.

The intended models interpret VG as a dense ordered abelian group of
rationals (denominators coprime to a parameter d) whose quotients VGQ[n]
are finite cyclic; see :class:`tamelab.gridcheck.VGModel`.  Over these
models an existential VG quantifier can be removed from any conjunction of

* equalities / disequalities  ``f(y) = K*x`` / ``g(y) != L*x``,
* strict inequalities          ``h(y) < M*x`` or ``M*x < h(y)``,
* arbitrary subformulas touching x only through projections ``pi[n](..x..)``,
* x-free side conditions,

by the following case split (valid uniformly in d):

* some equality with K != 0 pins x = f/K.  Solvability is the divisibility
  condition ``pi[K](f) = 0``; every other literal is cross-multiplied by K.
  Projections of x are recovered through a fresh quotient variable eta with
  ``K*eta = pi[m*K](f)`` (any such eta projects onto pi[m](f/K), because the
  group is torsion-free), or substituted directly when K = 1.
* no equality: the order on every coset of m*G is dense and unbounded, so
  strict bounds are satisfiable iff each lower bound is below each upper
  bound (cross-multiplied), disequalities never bite (cofinite sets meet
  every nonempty open interval of a coset), and the projection constraints
  are satisfiable iff some class value satisfies them -- a fresh quotient
  quantifier.

Output formulas never quantify over VG, but may quantify over quotient
sorts.  Elimination of a universal VG quantifier goes through the dual.

Shape restriction (checked, raises ShapeError): inside RF/VGQ-quantified
subformulas the eliminated variable may occur only under projections; a raw
VG-sorted occurrence there is outside the supported fragment.
"""

from __future__ import annotations

from math import gcd
from typing import Optional

from .formula import (
    VF, RF, VG, VGQ, Sort, SortError,
    Term, Var, GroupZero, Add, Sub, Neg, Smul, Ord, Proj, ProjQ,
    Formula, TrueF, FalseF, Cmp, Not, And, Or, Implies, Quant,
    conj, disj, term_to_text, subterms,
)


class ShapeError(ValueError):
    """Input outside the supported elimination fragment."""


class BudgetError(RuntimeError):
    """Normalisation exceeded its size budget."""


DNF_BUDGET = 4096


# ---------------------------------------------------------------------------
# Linear forms over VG base terms (variables and opaque ord-terms)
# ---------------------------------------------------------------------------

def vg_linform(t: Term) -> dict[Term, int]:
    """Decompose a VG term as an integer combination of base terms."""
    if isinstance(t, GroupZero):
        return {}
    if isinstance(t, (Var, Ord)):
        return {t: 1}
    if isinstance(t, Add):
        out = vg_linform(t.a)
        for k, v in vg_linform(t.b).items():
            out[k] = out.get(k, 0) + v
        return {k: v for k, v in out.items() if v}
    if isinstance(t, Sub):
        out = vg_linform(t.a)
        for k, v in vg_linform(t.b).items():
            out[k] = out.get(k, 0) - v
        return {k: v for k, v in out.items() if v}
    if isinstance(t, Neg):
        return {k: -v for k, v in vg_linform(t.a).items()}
    if isinstance(t, Smul):
        if t.k == 0:
            return {}
        return {k: t.k * v for k, v in vg_linform(t.a).items()}
    raise ShapeError(f"not a linear VG term: {term_to_text(t)}")


def _lf_scale(lf: dict, c: int) -> dict:
    if c == 0:
        return {}
    return {k: c * v for k, v in lf.items()}


def _lf_sub(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0) - v
    return {k: v for k, v in out.items() if v}


def _smul_t(k: int, t: Term) -> Term:
    if k == 0:
        return GroupZero(t.sort)
    if k == 1:
        return t
    if k == -1:
        return Neg(t)
    return Smul(k, t)


def build_vg_term(lf: dict, sort: Sort = VG) -> Term:
    if not lf:
        return GroupZero(sort)
    items = sorted(lf.items(), key=lambda kv: term_to_text(kv[0]))
    acc: Optional[Term] = None
    for base, k in items:
        if acc is None:
            acc = _smul_t(k, base)
        elif k > 0:
            acc = Add(acc, _smul_t(k, base))
        else:
            acc = Sub(acc, _smul_t(-k, base))
    return acc


def _mentions_var(obj, name: str) -> bool:
    if isinstance(obj, Term):
        return any(isinstance(s, Var) and s.name == name for s in subterms(obj))
    if isinstance(obj, (TrueF, FalseF)):
        return False
    if isinstance(obj, Cmp):
        return _mentions_var(obj.a, name) or _mentions_var(obj.b, name)
    if isinstance(obj, Not):
        return _mentions_var(obj.f, name)
    if isinstance(obj, (And, Or, Implies)):
        return _mentions_var(obj.a, name) or _mentions_var(obj.b, name)
    if isinstance(obj, Quant):
        if obj.var == name:
            return False
        return _mentions_var(obj.body, name)
    raise TypeError(obj)


# ---------------------------------------------------------------------------
# Negation normal form at the VG-literal level
# ---------------------------------------------------------------------------

def _nnf(f: Formula, positive: bool) -> Formula:
    """Push negations to leaves; order literals become strict-or-equal."""
    if isinstance(f, TrueF):
        return f if positive else FalseF()
    if isinstance(f, FalseF):
        return f if positive else TrueF()
    if isinstance(f, Cmp):
        if f.op == "<=":
            # a <= b  ==  a < b | a = b;   !(a <= b)  ==  b < a
            if positive:
                return Or(Cmp("<", f.a, f.b), Cmp("=", f.a, f.b))
            return Cmp("<", f.b, f.a)
        if f.op == "<" and not positive:
            return Or(Cmp("<", f.b, f.a), Cmp("=", f.a, f.b))
        return f if positive else Not(f)
    if isinstance(f, Not):
        return _nnf(f.f, not positive)
    if isinstance(f, And):
        a, b = _nnf(f.a, positive), _nnf(f.b, positive)
        return And(a, b) if positive else Or(a, b)
    if isinstance(f, Or):
        a, b = _nnf(f.a, positive), _nnf(f.b, positive)
        return Or(a, b) if positive else And(a, b)
    if isinstance(f, Implies):
        return _nnf(Or(Not(f.a), f.b), positive)
    if isinstance(f, Quant):
        # opaque block; negation stays outside
        return f if positive else Not(f)
    raise TypeError(f)


def _dnf(f: Formula) -> list[list[Formula]]:
    if isinstance(f, And):
        left = _dnf(f.a)
        right = _dnf(f.b)
        if len(left) * len(right) > DNF_BUDGET:
            raise BudgetError("DNF size budget exceeded")
        return [la + rb for la in left for rb in right]
    if isinstance(f, Or):
        out = _dnf(f.a) + _dnf(f.b)
        if len(out) > DNF_BUDGET:
            raise BudgetError("DNF size budget exceeded")
        return out
    return [[f]]


# ---------------------------------------------------------------------------
# Projection bookkeeping
# ---------------------------------------------------------------------------

def _collect_proj_moduli(obj, name: str, moduli: set[int]) -> None:
    """Record n for every pi[n](t) with the variable inside t; raise if the
    variable occurs in VG position outside a projection argument."""

    def scan_term(t: Term, under_proj: bool):
        if isinstance(t, Proj):
            if _mentions_var(t.a, name):
                moduli.add(t.n)
                # inside the projection argument the variable is legitimate;
                # verify linearity now so errors surface early
                vg_linform(t.a)
            return
        if isinstance(t, Var) and t.name == name and not under_proj:
            raise ShapeError(
                f"variable {name} occurs outside projections in a nested context")
        for attr in ("a", "b"):
            child = getattr(t, attr, None)
            if isinstance(child, Term):
                scan_term(child, under_proj)

    if isinstance(obj, Cmp):
        scan_term(obj.a, False)
        scan_term(obj.b, False)
    elif isinstance(obj, Not):
        _collect_proj_moduli(obj.f, name, moduli)
    elif isinstance(obj, (And, Or, Implies)):
        _collect_proj_moduli(obj.a, name, moduli)
        _collect_proj_moduli(obj.b, name, moduli)
    elif isinstance(obj, Quant):
        _collect_proj_moduli(obj.body, name, moduli)


def _subst_proj(obj, name: str, repl_at) -> object:
    """Replace every pi[n](a*x + r) by a*repl_at(n) + pi[n](r)."""

    def sub_term(t: Term) -> Term:
        if isinstance(t, Proj) and _mentions_var(t.a, name):
            lf = vg_linform(t.a)
            coeff = 0
            rest = {}
            for base, c in lf.items():
                if isinstance(base, Var) and base.name == name:
                    coeff += c
                else:
                    rest[base] = c
            coeff %= t.n
            parts = []
            if coeff:
                parts.append(_smul_t(coeff, repl_at(t.n)))
            if rest:
                parts.append(Proj(t.n, build_vg_term(rest)))
            if not parts:
                return GroupZero(VGQ(t.n))
            out = parts[0]
            for q in parts[1:]:
                out = Add(out, q)
            return out
        rebuilt = {}
        changed = False
        for attr in ("a", "b"):
            child = getattr(t, attr, None)
            if isinstance(child, Term):
                new = sub_term(child)
                rebuilt[attr] = new
                changed = changed or new is not child
        if not changed:
            return t
        kwargs = {k: v for k, v in t.__dict__.items()}
        kwargs.update(rebuilt)
        return type(t)(**kwargs)

    if isinstance(obj, Cmp):
        return Cmp(obj.op, sub_term(obj.a), sub_term(obj.b))
    if isinstance(obj, Not):
        return Not(_subst_proj(obj.f, name, repl_at))
    if isinstance(obj, And):
        return And(_subst_proj(obj.a, name, repl_at), _subst_proj(obj.b, name, repl_at))
    if isinstance(obj, Or):
        return Or(_subst_proj(obj.a, name, repl_at), _subst_proj(obj.b, name, repl_at))
    if isinstance(obj, Implies):
        return Implies(_subst_proj(obj.a, name, repl_at), _subst_proj(obj.b, name, repl_at))
    if isinstance(obj, Quant):
        return Quant(obj.q, obj.var, obj.var_sort, _subst_proj(obj.body, name, repl_at))
    return obj


# ---------------------------------------------------------------------------
# Single-conjunct elimination
# ---------------------------------------------------------------------------

class _Fresh:
    def __init__(self, taken: set[str]):
        self.taken = set(taken)
        self.counter = 0

    def name(self) -> str:
        while True:
            cand = f"q{self.counter}_"
            self.counter += 1
            if cand not in self.taken:
                self.taken.add(cand)
                return cand


def _all_names(f: Formula) -> set[str]:
    names = set()

    def walk(g):
        if isinstance(g, Cmp):
            for t in (g.a, g.b):
                for s in subterms(t):
                    if isinstance(s, Var):
                        names.add(s.name)
        elif isinstance(g, Not):
            walk(g.f)
        elif isinstance(g, (And, Or, Implies)):
            walk(g.a)
            walk(g.b)
        elif isinstance(g, Quant):
            names.add(g.var)
            walk(g.body)

    walk(f)
    return names


def _eliminate_conjunct(leaves: list[Formula], name: str, fresh: _Fresh) -> Formula:
    eqs: list[tuple[int, dict]] = []        # (K, f):  f = K*x, K > 0 normalised later
    diseqs: list[tuple[int, dict]] = []     # (L, g):  g != L*x
    lowers: list[tuple[int, dict]] = []     # (M, h):  h < M*x
    uppers: list[tuple[int, dict]] = []     # (M, h):  M*x < h
    h2: list[Formula] = []                  # leaves touching x through projections
    h1: list[Formula] = []                  # x-free leaves

    for leaf in leaves:
        if isinstance(leaf, (TrueF, FalseF)):
            h1.append(leaf)
            continue
        if not _mentions_var(leaf, name):
            h1.append(leaf)
            continue
        core = leaf.f if isinstance(leaf, Not) else leaf
        negated = isinstance(leaf, Not)
        if isinstance(core, Cmp) and core.a.sort == VG:
            lf = _lf_sub(vg_linform(core.a), vg_linform(core.b))
            coeff = 0
            rest = {}
            for base, c in lf.items():
                if isinstance(base, Var) and base.name == name:
                    coeff += c
                else:
                    rest[base] = c
            if coeff == 0:
                # variable cancelled syntactically; the literal is x-free
                h1.append(_rebuild_vg_literal(core.op, rest, negated))
                continue
            if core.op == "=":
                # coeff*x + rest  = 0   <=>   -rest = coeff * x
                target = (coeff, _lf_scale(rest, -1))
                (diseqs if negated else eqs).append(target)
            elif core.op == "<":
                if negated:
                    raise ShapeError("negated strict order escaped normal form")
                # coeff*x + rest < 0
                if coeff > 0:
                    uppers.append((coeff, _lf_scale(rest, -1)))
                else:
                    lowers.append((-coeff, dict(rest)))
            else:
                raise ShapeError("non-strict order escaped normal form")
            continue
        # anything else: x allowed only under projections
        moduli: set[int] = set()
        _collect_proj_moduli(leaf, name, moduli)
        if not moduli and _mentions_var(leaf, name):
            raise ShapeError(f"variable {name} used outside the supported fragment")
        h2.append(leaf)

    parts: list[Formula] = list(h1)
    moduli: set[int] = set()
    for leaf in h2:
        _collect_proj_moduli(leaf, name, moduli)
    mstar = 1
    for n in moduli:
        mstar = mstar * n // gcd(mstar, n)

    if eqs:
        chosen = min(eqs, key=lambda e: (abs(e[0]), _lf_text(e[1])))
        K, flf = chosen
        if K < 0:
            K, flf = -K, _lf_scale(flf, -1)
        if K > 1:
            parts.append(Cmp("=", Proj(K, build_vg_term(flf)), GroupZero(VGQ(K))))
        for other in eqs:
            if other is chosen:
                continue
            K2, f2 = other
            parts.append(Cmp("=", build_vg_term(_lf_scale(f2, K)),
                             build_vg_term(_lf_scale(flf, K2))))
        for L, g in diseqs:
            parts.append(Not(Cmp("=", build_vg_term(_lf_scale(g, K)),
                                 build_vg_term(_lf_scale(flf, L)))))
        for M, h in lowers:     # h < M*x  ->  K*h < M*f
            parts.append(Cmp("<", build_vg_term(_lf_scale(h, K)),
                             build_vg_term(_lf_scale(flf, M))))
        for M, h in uppers:     # M*x < h  ->  M*f < K*h
            parts.append(Cmp("<", build_vg_term(_lf_scale(flf, M)),
                             build_vg_term(_lf_scale(h, K))))
        if h2:
            if K == 1:
                def repl_at(n, _f=flf):
                    return Proj(n, build_vg_term(_f))
                parts.extend(_subst_proj(leaf, name, repl_at) for leaf in h2)
            else:
                big = mstar * K
                eta = fresh.name()
                eta_var = Var(eta, VGQ(big))

                def repl_at(n, _v=eta_var, _big=big):
                    return _v if n == _big else ProjQ(_big, n, _v)

                inner = [Cmp("=", _smul_t(K, eta_var), Proj(big, build_vg_term(flf)))]
                inner.extend(_subst_proj(leaf, name, repl_at) for leaf in h2)
                parts.append(Quant("exists", eta, VGQ(big), conj(inner)))
        return conj(parts)

    # no equalities: density of cosets decides the order part
    for M_l, h_l in lowers:
        for M_u, h_u in uppers:
            # h_l/M_l < h_u/M_u
            parts.append(Cmp("<", build_vg_term(_lf_scale(h_l, M_u)),
                             build_vg_term(_lf_scale(h_u, M_l))))
    # disequalities are dropped: cosets minus finitely many points still meet
    # every nonempty open interval
    if h2:
        xi = fresh.name()
        xi_var = Var(xi, VGQ(mstar))

        def repl_at(n, _v=xi_var, _m=mstar):
            return _v if n == _m else ProjQ(_m, n, _v)

        inner = [_subst_proj(leaf, name, repl_at) for leaf in h2]
        parts.append(Quant("exists", xi, VGQ(mstar), conj(inner)))
    return conj(parts)


def _lf_text(lf: dict) -> str:
    return term_to_text(build_vg_term(lf)) if lf else "0"


def _rebuild_vg_literal(op: str, rest: dict, negated: bool) -> Formula:
    atom = Cmp(op, build_vg_term(rest), GroupZero(VG))
    return Not(atom) if negated else atom


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def eliminate_one(f: Formula, fresh: Optional[_Fresh] = None) -> Formula:
    """Eliminate the outermost existential VG quantifier of ``f``.

    ``f`` must be ``(exists x:VG) body`` with a VG-quantifier-free body.
    """
    if not (isinstance(f, Quant) and f.q == "exists" and f.var_sort == VG):
        raise ShapeError("expected an existential VG quantifier at the root")
    if any(s == VG for s in _inner_vg_quants(f.body)):
        raise ShapeError("inner VG quantifiers must be eliminated first")
    fresh = fresh or _Fresh(_all_names(f))
    body = _nnf(f.body, True)
    conjuncts = _dnf(body)
    return disj([_eliminate_conjunct(c, f.var, fresh) for c in conjuncts])


def _inner_vg_quants(f: Formula):
    if isinstance(f, Quant):
        yield f.var_sort
        yield from _inner_vg_quants(f.body)
    elif isinstance(f, Not):
        yield from _inner_vg_quants(f.f)
    elif isinstance(f, (And, Or, Implies)):
        yield from _inner_vg_quants(f.a)
        yield from _inner_vg_quants(f.b)


def eliminate_all(f: Formula) -> Formula:
    """Remove every VG quantifier, innermost first; universals via duality."""
    fresh = _Fresh(_all_names(f))

    def walk(g: Formula) -> Formula:
        if isinstance(g, (TrueF, FalseF, Cmp)):
            return g
        if isinstance(g, Not):
            inner = walk(g.f)
            return g if inner is g.f else Not(inner)
        if isinstance(g, (And, Or, Implies)):
            a, b = walk(g.a), walk(g.b)
            if a is g.a and b is g.b:
                return g
            return type(g)(a, b)
        if isinstance(g, Quant):
            body = walk(g.body)
            if g.var_sort != VG:
                return g if body is g.body else Quant(g.q, g.var, g.var_sort, body)
            if g.q == "exists":
                return eliminate_one(Quant("exists", g.var, VG, body), fresh)
            flipped = eliminate_one(Quant("exists", g.var, VG, Not(body)), fresh)
            return _simplify_not(flipped)
        raise TypeError(g)

    out = walk(f)
    assert not any(s == VG for s in _inner_vg_quants(out)), "VG quantifier survived"
    return out


def _simplify_not(f: Formula) -> Formula:
    if isinstance(f, TrueF):
        return FalseF()
    if isinstance(f, FalseF):
        return TrueF()
    if isinstance(f, Not):
        return f.f
    return Not(f)

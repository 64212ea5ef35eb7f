"""Exact integrals of |f|^s over p-adic boxes and orbits, as rational
functions in T = p^(-s).

The engine recursively partitions the domain by residues, substituting
x = c + p*y and extracting contents: |f|^s turns extracted valuations into
T-powers, |g| into 1/p-powers, and each ord-weight into an additive offset.
A branch closes when a certified form is reached:

* unit leaf: the reduced integrand vanishes nowhere on the residue space,
  so the integral over the cell is the cell volume;
* monomial leaf: every factor is a monomial times a reduced-nonvanishing
  cofactor; the integral separates into per-coordinate weighted geometric
  sums  sum_v v^r z^v  with r <= 2;
* smooth leaf: every residue zero of the reduced polynomial has a unit
  partial derivative, so each vanishing cell contributes T times the
  one-variable geometric factor (a unit-derivative coordinate change is an
  isometry of the cell onto Z_p);
* two-term leaf (two variables): a difference of two monomials is summed
  exactly over valuation shells -- lattice cones give geometric series and
  the critical shell contributes a torus factor with smooth zeros.

Repeated states (canonical primitive polynomial tuples plus the residual
domain constraint) short-circuit into a linear system over Q(T), solved
exactly per strongly connected component.  Exceeding the depth or state
budget raises; the engine never returns an uncertified value.

Orbit domains are tame formulas in a restricted shape (per-variable
``ord[n]`` and ``ac`` conditions, boolean structure, RF/VGQ quantifiers);
their truth stabilises along branches as coordinates acquire leading
digits, and undecided constraints are part of the memo state with their
valuation shifts tracked modulo the relevant moduli.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .formula import (
    VF, RF, VGQ,
    Term, Var, RatLit, ResLit, GroupZero, Add, Sub, Neg, Mul, Smul,
    Ac, OrdN, ProjQ,
    Formula, TrueF, FalseF, Cmp, Not, And, Or, Implies, Quant,
    is_tame,
)
from .polys import Poly
from .ratfunc import (
    RatFunc, TwoVarRational, NormalFormError, check_degree,
    pt, pt_trim, pt_pow_t, pt_mul, pt_divmod,
)

__all__ = [
    "Box", "IntegralSpec", "BudgetError", "UnsupportedConstraint",
    "igusa_exact", "orbital_integral", "igusa_numeric", "NumericBracket",
    "fit_uniform_denominator", "FitResult", "check_degree",
]


class BudgetError(RuntimeError):
    """Depth or state budget exceeded before every branch closed."""


class UnsupportedConstraint(ValueError):
    """Domain constraint outside the per-variable multiplicative fragment."""


@dataclass(frozen=True)
class Box:
    """One coordinate of the domain: the full ring, or a residue ball."""

    kind: str            # "O" | "ball"
    center: int = 0      # ball: center + p*O, center taken mod p

    def __post_init__(self):
        if self.kind not in ("O", "ball"):
            raise ValueError(f"unknown box kind {self.kind!r}")


@dataclass(frozen=True)
class IntegralSpec:
    """Integrand |f|^s * |g| * |density| * prod_j ord(weights_j) over boxes."""

    f: Poly
    g: Optional[Poly] = None
    density: Optional[Poly] = None
    ord_weights: tuple = ()
    boxes: Optional[tuple] = None
    constraint: Optional[Formula] = None
    varnames: Optional[tuple] = None

    def __post_init__(self):
        if len(self.ord_weights) > 2:
            raise ValueError("at most two ord-weights are supported")
        n = self.f.nvars
        for poly in (self.g, self.density) + tuple(self.ord_weights):
            if poly is not None and poly.nvars != n:
                raise ValueError("all polynomials must share the variable tuple")
        if self.boxes is not None and len(self.boxes) != n:
            raise ValueError("one box per coordinate")

    @property
    def nvars(self) -> int:
        return self.f.nvars

    def names(self) -> tuple:
        if self.varnames:
            return tuple(self.varnames)
        defaults = ("x", "y", "z")
        if self.nvars <= 3:
            return defaults[: self.nvars]
        return tuple(f"x{i}" for i in range(self.nvars))


# ---------------------------------------------------------------------------
# Residual domain constraints
# ---------------------------------------------------------------------------

_TRUE, _FALSE, _UNKNOWN = True, False, None


def _simple_vf(t: Term, names: Sequence[str]):
    """Decompose a constraint VF term as coeff * variable (or a constant)."""
    if isinstance(t, Var):
        if t.name not in names:
            raise UnsupportedConstraint(f"unknown variable {t.name}")
        return names.index(t.name), Fraction(1)
    if isinstance(t, RatLit):
        return None, t.value
    if isinstance(t, Neg):
        i, c = _simple_vf(t.a, names)
        return i, -c
    if isinstance(t, Mul):
        for lit, other in ((t.a, t.b), (t.b, t.a)):
            if isinstance(lit, RatLit):
                i, c = _simple_vf(other, names)
                return i, c * lit.value
        raise UnsupportedConstraint("constraint terms must be coeff * variable")
    raise UnsupportedConstraint(f"constraint term {t!r} outside the fragment")


def _validate_constraint(f: Formula, names: Sequence[str]):
    if not is_tame(f):
        raise UnsupportedConstraint("constraint must be a tame formula")

    def check_term(t: Term):
        if isinstance(t, (Ac, OrdN)):
            _simple_vf(t.a, names)
        elif isinstance(t, (Add, Sub, Neg, Smul, Mul, ProjQ)):
            for attr in ("a", "b"):
                child = getattr(t, attr, None)
                if isinstance(child, Term):
                    check_term(child)
        elif isinstance(t, (Var, ResLit, GroupZero)):
            if isinstance(t, Var) and t.sort == VF:
                raise UnsupportedConstraint("bare VF variables cannot be compared")
        else:
            raise UnsupportedConstraint(f"term {t!r} outside the fragment")

    def walk(g: Formula):
        if isinstance(g, (TrueF, FalseF)):
            return
        if isinstance(g, Cmp):
            if g.a.sort == VF:
                raise UnsupportedConstraint("VF equalities are not domain conditions")
            check_term(g.a)
            check_term(g.b)
            return
        if isinstance(g, Not):
            walk(g.f)
            return
        if isinstance(g, (And, Or, Implies)):
            walk(g.a)
            walk(g.b)
            return
        if isinstance(g, Quant):
            walk(g.body)
            return
        raise TypeError(g)

    walk(f)


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


def _frac_ac(x: Fraction, p: int) -> int:
    v = _frac_val(x, p)
    y = x / Fraction(p) ** v
    return y.numerator * pow(y.denominator, -1, p) % p


@dataclass(frozen=True)
class CState:
    """Residual constraint: per variable, a pinned (ord, ac) or a fresh
    valuation shift; pinned atoms evaluate, fresh ones stay unknown."""

    formula: Formula
    entries: tuple      # per variable: ("pin", ord, ac) | ("fresh", shift)
    modulus: int        # lcm of the ord-moduli appearing in the formula

    def key(self):
        ent = []
        for e in self.entries:
            if e[0] == "pin":
                ent.append(("pin",))
            else:
                ent.append(("fresh", e[1] % self.modulus if self.modulus else 0))
        return (id(self.formula), tuple(ent))


def _constraint_modulus(f: Formula) -> int:
    mod = 1

    def scan_term(t: Term):
        nonlocal mod
        if isinstance(t, OrdN):
            mod = mod * t.n // math.gcd(mod, t.n)
        for attr in ("a", "b"):
            child = getattr(t, attr, None)
            if isinstance(child, Term):
                scan_term(child)

    def walk(g: Formula):
        nonlocal mod
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
                mod = mod * g.var_sort.n // math.gcd(mod, g.var_sort.n)
            walk(g.body)

    walk(f)
    return mod


class _CEval:
    """Three-valued evaluation of a constraint under partial digit knowledge."""

    def __init__(self, names: Sequence[str], p: int):
        self.names = list(names)
        self.p = p

    def term_vgq(self, t: Term, entries, qenv):
        n = t.sort.n
        if isinstance(t, GroupZero):
            return 0
        if isinstance(t, Var):
            return qenv[t.name] % n
        if isinstance(t, OrdN):
            i, c = _simple_vf(t.a, self.names)
            base = _frac_val(c, self.p)
            if i is None:
                return base % n
            e = entries[i]
            if e[0] == "pin":
                return (base + e[1]) % n
            return _UNKNOWN
        if isinstance(t, Add):
            a = self.term_vgq(t.a, entries, qenv)
            b = self.term_vgq(t.b, entries, qenv)
            return _UNKNOWN if a is _UNKNOWN or b is _UNKNOWN else (a + b) % n
        if isinstance(t, Sub):
            a = self.term_vgq(t.a, entries, qenv)
            b = self.term_vgq(t.b, entries, qenv)
            return _UNKNOWN if a is _UNKNOWN or b is _UNKNOWN else (a - b) % n
        if isinstance(t, Neg):
            a = self.term_vgq(t.a, entries, qenv)
            return _UNKNOWN if a is _UNKNOWN else (-a) % n
        if isinstance(t, Smul):
            a = self.term_vgq(t.a, entries, qenv)
            return _UNKNOWN if a is _UNKNOWN else (t.k * a) % n
        if isinstance(t, ProjQ):
            a = self.term_vgq(t.a, entries, qenv)
            return _UNKNOWN if a is _UNKNOWN else a % t.m
        raise UnsupportedConstraint(f"quotient term {t!r}")

    def term_rf(self, t: Term, entries, rfenv):
        p = self.p
        if isinstance(t, ResLit):
            return t.value % p
        if isinstance(t, Var):
            return rfenv[t.name]
        if isinstance(t, Ac):
            i, c = _simple_vf(t.a, self.names)
            if c == 0:
                return 0
            if i is None:
                return _frac_ac(c, p)
            e = entries[i]
            if e[0] == "pin":
                return _frac_ac(c, p) * e[2] % p
            return _UNKNOWN
        if isinstance(t, (Add, Sub, Mul)):
            a = self.term_rf(t.a, entries, rfenv)
            b = self.term_rf(t.b, entries, rfenv)
            if a is _UNKNOWN or b is _UNKNOWN:
                return _UNKNOWN
            if isinstance(t, Add):
                return (a + b) % p
            if isinstance(t, Sub):
                return (a - b) % p
            return a * b % p
        if isinstance(t, Neg):
            a = self.term_rf(t.a, entries, rfenv)
            return _UNKNOWN if a is _UNKNOWN else (-a) % p
        raise UnsupportedConstraint(f"residue term {t!r}")

    def eval3(self, f: Formula, entries, rfenv=None, qenv=None):
        rfenv = rfenv or {}
        qenv = qenv or {}
        if isinstance(f, TrueF):
            return _TRUE
        if isinstance(f, FalseF):
            return _FALSE
        if isinstance(f, Cmp):
            if f.a.sort == RF:
                a = self.term_rf(f.a, entries, rfenv)
                b = self.term_rf(f.b, entries, rfenv)
            else:
                a = self.term_vgq(f.a, entries, qenv)
                b = self.term_vgq(f.b, entries, qenv)
            if a is _UNKNOWN or b is _UNKNOWN:
                return _UNKNOWN
            return a == b
        if isinstance(f, Not):
            v = self.eval3(f.f, entries, rfenv, qenv)
            return _UNKNOWN if v is _UNKNOWN else not v
        if isinstance(f, And):
            a = self.eval3(f.a, entries, rfenv, qenv)
            if a is _FALSE:
                return _FALSE
            b = self.eval3(f.b, entries, rfenv, qenv)
            if b is _FALSE:
                return _FALSE
            return _UNKNOWN if _UNKNOWN in (a, b) else _TRUE
        if isinstance(f, Or):
            a = self.eval3(f.a, entries, rfenv, qenv)
            if a is _TRUE:
                return _TRUE
            b = self.eval3(f.b, entries, rfenv, qenv)
            if b is _TRUE:
                return _TRUE
            return _UNKNOWN if _UNKNOWN in (a, b) else _FALSE
        if isinstance(f, Implies):
            return self.eval3(Or(Not(f.a), f.b), entries, rfenv, qenv)
        if isinstance(f, Quant):
            vals = []
            domain = range(self.p) if f.var_sort == RF else range(f.var_sort.n)
            for v in domain:
                envs = (dict(rfenv), dict(qenv))
                if f.var_sort == RF:
                    envs[0][f.var] = v
                else:
                    envs[1][f.var] = v
                vals.append(self.eval3(f.body, entries, envs[0], envs[1]))
            if f.q == "exists":
                if any(v is _TRUE for v in vals):
                    return _TRUE
                if all(v is _FALSE for v in vals):
                    return _FALSE
                return _UNKNOWN
            if any(v is _FALSE for v in vals):
                return _FALSE
            if all(v is _TRUE for v in vals):
                return _TRUE
            return _UNKNOWN
        raise TypeError(f)


# ---------------------------------------------------------------------------
# Canonical states
# ---------------------------------------------------------------------------

def _unit_normalise(poly: Poly, p: int) -> Poly:
    """Scale by the inverse of the first p-unit coefficient (|unit*f| = |f|)."""
    for _, c in poly.coeffs:
        if _frac_val(c, p) == 0:
            unit = c / Fraction(p) ** 0
            if unit != 1:
                return poly.scale(1 / unit)
            return poly
    return poly


def _used_vars(polys) -> tuple:
    n = polys[0].nvars
    used = [False] * n
    for poly in polys:
        if poly is None:
            continue
        for k, _ in poly.coeffs:
            for i, e in enumerate(k):
                if e:
                    used[i] = True
    return tuple(used)


@dataclass(frozen=True)
class _Node:
    F: Poly
    G: Optional[Poly]
    weights: tuple
    cstate: Optional[CState]

    def key(self):
        return (self.F, self.G, self.weights,
                self.cstate.key() if self.cstate else None)


def _nonvanishing(poly: Poly, p: int) -> bool:
    red = poly.reduce_mod(p)
    if not red:
        return False
    n = poly.nvars
    consts = [c for k, c in red.items() if not any(k)]
    if len(red) == 1 and consts:
        return True
    for point in itertools.product(range(p), repeat=n):
        total = 0
        for k, c in red.items():
            term = c
            for x, e in zip(point, k):
                if e:
                    term = term * pow(x, e, p) % p
            total = (total + term) % p
        if total == 0:
            return False
    return True


def _zeros_mod(poly: Poly, p: int) -> list:
    red = poly.reduce_mod(p)
    n = poly.nvars
    zeros = []
    for point in itertools.product(range(p), repeat=n):
        total = 0
        for k, c in red.items():
            term = c
            for x, e in zip(point, k):
                if e:
                    term = term * pow(x, e, p) % p
            total = (total + term) % p
        if total == 0:
            zeros.append(point)
    return zeros


def _all_zeros_smooth(poly: Poly, p: int, zeros) -> bool:
    derivs = [poly.derivative(i) for i in range(poly.nvars)]
    for z in zeros:
        if all(d.eval_mod(z, p) == 0 for d in derivs):
            return False
    return True


# closed forms ---------------------------------------------------------------

def _geo1(p: int) -> RatFunc:
    # integral of |x|^s over Z_p
    return RatFunc.make(pt(Fraction(p - 1, p)), pt_trim((Fraction(1), Fraction(-1, p))))


def _moment(r: int, a_exp: int, b_exp: int, p: int) -> RatFunc:
    """sum_{v>=0} (1 - 1/p) v^r z^v  with z = p^(-1-b) T^a."""
    zc = Fraction(1, p ** (1 + b_exp))
    z = RatFunc.make(pt_trim((Fraction(0),) * a_exp + (zc,)), pt(1))
    one = RatFunc.const(1)
    scale = RatFunc.const(Fraction(p - 1, p))
    base = one - z
    if r == 0:
        return scale / base
    if r == 1:
        return scale * z / (base * base)
    if r == 2:
        return scale * (z * (one + z)) / (base * base * base)
    raise ValueError("moments implemented for r <= 2")


# ---------------------------------------------------------------------------
# The exact engine
# ---------------------------------------------------------------------------

class _Engine:
    def __init__(self, p: int, names, max_depth: int, max_states: int):
        self.p = p
        self.names = names
        self.max_depth = max_depth
        self.max_states = max_states
        self.ceval = _CEval(names, p)
        self.nodes: dict = {}            # key -> (_Node, depth)
        self.expansions: dict = {}       # key -> list of branch records
        self.values: dict = {}           # (key, S) -> RatFunc
        self.edges: dict = {}            # (key, S) -> dict[(childkey,S')]: RatFunc
        self.order: list = []            # discovery order of (key, S)

    # -- state canonicalisation ------------------------------------------------
    def canonical(self, F, G, weights, cstate):
        p = self.p
        if G is not None and G.is_constant():
            G = None
        F = _unit_normalise(F, p)
        if G is not None:
            G = _unit_normalise(G, p)
        weights = tuple(weights)
        # project out unused coordinates when no constraint ties them
        if cstate is None:
            used = _used_vars((F, G) + tuple(weights))
            if not all(used):
                keep = [i for i, u in enumerate(used) if u]
                if keep:
                    F = _project(F, keep)
                    G = _project(G, keep) if G is not None else None
                    weights = tuple(_project(w, keep) for w in weights)
                else:
                    F = Poly.const(1, F.constant_value() if F.is_constant() else 1)
                    F = _unit_normalise(F, p)
                    G = None
                    weights = tuple(Poly.const(1, 1) for _ in weights)
        return _Node(F, G, weights, cstate)

    # -- leaf classification ----------------------------------------------------
    def leaf_value(self, node: _Node, S: frozenset) -> Optional[RatFunc]:
        p = self.p
        if node.cstate is not None:
            return None
        F, G = node.F, node.G
        if _nonvanishing(F, p) and (G is None or _nonvanishing(G, p)):
            if all(_nonvanishing(node.weights[j], p) for j in S):
                # everything is a unit: ord-weights vanish identically
                return RatFunc.const(0 if S else 1)
            # a weight is a non-unit: fall through to other leaves
        val = self._monomial_leaf(node, S)
        if val is not None:
            return val
        if not S:
            val = self._smooth_leaf(node)
            if val is not None:
                return val
            val = self._two_term_leaf(node)
            if val is not None:
                return val
        return None

    def _monomial_leaf(self, node: _Node, S: frozenset) -> Optional[RatFunc]:
        p = self.p
        parts = [node.F] + ([node.G] if node.G is not None else []) \
            + [node.weights[j] for j in S]
        expos = []
        for poly in parts:
            if poly.is_zero():
                return None
            mono, cof = poly.monomial_part()
            if not _nonvanishing(cof, p):
                return None
            expos.append(mono)
        A = expos[0]
        B = expos[1] if node.G is not None else (0,) * node.F.nvars
        Cs = expos[(2 if node.G is not None else 1):]
        n = node.F.nvars
        total = RatFunc.const(0)
        js = sorted(S)
        for assign in itertools.product(range(n), repeat=len(js)):
            coeff = 1
            for j_idx, i in zip(range(len(js)), assign):
                coeff *= Cs[j_idx][i]
            if coeff == 0:
                continue
            r = [0] * n
            for i in assign:
                r[i] += 1
            prod = RatFunc.const(coeff)
            for i in range(n):
                prod = prod * _moment(r[i], A[i], B[i], p)
            total = total + prod
        if not js:
            total = RatFunc.const(1)
            for i in range(n):
                total = total * _moment(0, A[i], B[i], p)
        return total

    def _smooth_leaf(self, node: _Node) -> Optional[RatFunc]:
        p = self.p
        if node.G is not None and not _nonvanishing(node.G, p):
            return None
        F = node.F
        try:
            zeros = _zeros_mod(F, p)
        except ValueError:
            return None
        if not zeros:
            return RatFunc.const(1) if node.G is None else RatFunc.const(1)
        if not _all_zeros_smooth(F, p, zeros):
            return None
        n = F.nvars
        cells = p ** n
        z = len(zeros)
        geo = _geo1(p)
        # nonvanishing cells contribute 1; each smooth zero cell contributes
        # T * geo (unit-derivative coordinate change)
        t = RatFunc.make(pt_pow_t(1), pt(1))
        val = RatFunc.const(Fraction(cells - z, cells)) \
            + RatFunc.const(Fraction(z, cells)) * t * geo
        return val

    def _two_term_leaf(self, node: _Node) -> Optional[RatFunc]:
        p = self.p
        F = node.F
        if F.nvars != 2 or len(F.coeffs) != 2:
            return None
        if node.G is not None and not _nonvanishing(node.G, p):
            return None
        (k1, c1), (k2, c2) = F.coeffs
        mono, cof = F.monomial_part()
        (ka, ca), (kb, cb) = cof.coeffs
        # F = x^mono * (ca x^ka + cb x^kb), componentwise min(ka, kb) = 0
        va, vb = _frac_val(ca, p), _frac_val(cb, p)
        ua = ca / Fraction(p) ** va
        ub = cb / Fraction(p) ** vb
        D = tuple(a - b for a, b in zip(ka, kb))
        if all(d % p == 0 for d in D):
            return None                      # torus zeros might be non-smooth
        k = vb - va
        # torus factor at the critical shells
        n0 = n1 = 0
        for u in range(1, p):
            for v in range(1, p):
                lhs = (ua.numerator * pow(ua.denominator, -1, p)
                       * pow(u, ka[0], p) * pow(v, ka[1], p)
                       + ub.numerator * pow(ub.denominator, -1, p)
                       * pow(u, kb[0], p) * pow(v, kb[1], p)) % p
                if lhs:
                    n0 += 1
                else:
                    n1 += 1
        t = RatFunc.make(pt_pow_t(1), pt(1))
        torus = RatFunc.const(Fraction(n0, p * p)) \
            + RatFunc.const(Fraction(n1, p * p)) * t * _geo1(p)
        torusT = torus                      # per-point integral on the shell
        # shell sums: X_i = p^-1 T^(mono_i + ka_i), Y_i = p^-1 T^(mono_i + kb_i)
        XA = tuple(1 * (mono[i] + ka[i]) for i in range(2))
        XB = tuple(1 * (mono[i] + kb[i]) for i in range(2))
        torus_mass = RatFunc.const(Fraction((p - 1) ** 2, p * p))
        tva = RatFunc.make(pt_pow_t(va), pt(1))
        tvb = RatFunc.make(pt_pow_t(vb), pt(1))
        s_lt = _halfplane_sum(XA, D, k, "<", p)
        s_gt = _halfplane_sum(XB, D, k, ">", p)
        s_eq = _halfplane_sum(XA, D, k, "=", p)
        return torus_mass * (tva * s_lt + tvb * s_gt) + tva * s_eq * torusT

    # -- expansion ---------------------------------------------------------------
    def expand(self, node: _Node):
        key = node.key()
        if key in self.expansions:
            return self.expansions[key]
        p = self.p
        n = node.F.nvars
        records = []
        cn = len(self.ceval.names)
        for c in itertools.product(range(p), repeat=n):
            shifts = [Fraction(ci) for ci in c]
            new_cstate = None
            if node.cstate is not None:
                entries = list(node.cstate.entries)
                # constrained variables live in the original frame; node
                # variables correspond to the still-fresh ones in order
                fresh_idx = [i for i, e in enumerate(entries) if e[0] == "fresh"]
                assert len(fresh_idx) == n
                for pos, ci in zip(fresh_idx, c):
                    shift = entries[pos][1]
                    if ci != 0:
                        entries[pos] = ("pin", shift, ci)
                    else:
                        entries[pos] = ("fresh", shift + 1)
                verdict = self.ceval.eval3(node.cstate.formula, tuple(entries))
                if verdict is _FALSE:
                    continue
                if verdict is _UNKNOWN:
                    new_cstate = CState(node.cstate.formula, tuple(entries),
                                        node.cstate.modulus)
                # _TRUE: constraint resolved, drops away
            Fc = node.F.subst_affine(shifts, p)
            if Fc.is_zero():
                continue
            eF, Fc = Fc.strip_content(p)
            Gc = None
            eG = 0
            if node.G is not None:
                Gc = node.G.subst_affine(shifts, p)
                if Gc.is_zero():
                    continue
                eG, Gc = Gc.strip_content(p)
            wlist = []
            evec = []
            dead = []
            for w in node.weights:
                wc = w.subst_affine(shifts, p)
                if wc.is_zero():
                    wlist.append(Poly.const(n, 1))
                    evec.append(None)      # ord extended by zero: factor dies
                    dead.append(True)
                    continue
                ew, wc = wc.strip_content(p)
                wlist.append(wc)
                evec.append(ew)
                dead.append(False)
            if new_cstate is not None:
                child = self.canonical(Fc, Gc, tuple(wlist), new_cstate)
            else:
                child = self.canonical(Fc, Gc, tuple(wlist), None)
            coef = Fraction(1, p ** (n + eG))
            records.append((coef, eF, tuple(evec), child))
        self.expansions[key] = records
        return records

    # -- discovery + solve --------------------------------------------------------
    def solve(self, node: _Node, S: frozenset) -> RatFunc:
        root = (node.key(), S)
        self.nodes.setdefault(node.key(), (node, 0))
        stack = [(node, S, 0)]
        seen = {root}
        while stack:
            cur, curS, depth = stack.pop()
            ck = (cur.key(), curS)
            if ck in self.values or ck in self.edges:
                continue
            if depth > self.max_depth:
                raise BudgetError(f"depth budget {self.max_depth} exceeded")
            if len(self.nodes) > self.max_states:
                raise BudgetError(f"state budget {self.max_states} exceeded")
            leaf = self.leaf_value(cur, curS)
            if leaf is not None:
                self.values[ck] = leaf
                self.order.append(ck)
                continue
            records = self.expand(cur)
            acc: dict = {}
            for coef, eF, evec, child in records:
                childkey = child.key()
                if childkey not in self.nodes:
                    self.nodes[childkey] = (child, depth + 1)
                base = RatFunc.make(pt_mul(pt(coef), pt_pow_t(eF)), pt(1))
                for Ssub in _subsets(curS):
                    if any(evec[j] is None for j in Ssub):
                        continue
                    skip = False
                    mult = 1
                    for j in curS - Ssub:
                        if evec[j] is None:
                            skip = True
                            break
                        mult *= evec[j]
                    if skip or mult == 0:
                        continue
                    edge = base.scale(mult)
                    tgt = (childkey, Ssub)
                    acc[tgt] = acc.get(tgt, RatFunc.const(0)) + edge
                    if tgt not in seen:
                        seen.add(tgt)
                        stack.append((child, Ssub, depth + 1))
            self.edges[ck] = acc
            self.order.append(ck)
        self._resolve()
        return self.values[root]

    def _resolve(self):
        unknowns = [k for k in self.order if k not in self.values]
        index = {k: i for i, k in enumerate(unknowns)}
        sccs = _tarjan(unknowns, lambda k: [t for t in self.edges.get(k, {})
                                            if t in index])
        for comp in sccs:
            if len(comp) == 1 and comp[0] not in self.edges.get(comp[0], {}):
                k = comp[0]
                total = RatFunc.const(0)
                for tgt, coefficient in self.edges[k].items():
                    total = total + coefficient * self.values[tgt]
                self.values[k] = total
                continue
            m = len(comp)
            pos = {k: i for i, k in enumerate(comp)}
            matrix = [[RatFunc.const(0)] * m for _ in range(m)]
            rhs = [RatFunc.const(0)] * m
            for k in comp:
                i = pos[k]
                matrix[i][i] = matrix[i][i] + RatFunc.const(1)
                for tgt, coefficient in self.edges[k].items():
                    if tgt in pos:
                        j = pos[tgt]
                        matrix[i][j] = matrix[i][j] - coefficient
                    else:
                        rhs[i] = rhs[i] + coefficient * self.values[tgt]
            sol = _gauss(matrix, rhs)
            for k in comp:
                self.values[k] = sol[pos[k]]


def _project(poly: Poly, keep: list) -> Poly:
    d = {}
    for k, c in poly.coeffs:
        d[tuple(k[i] for i in keep)] = c
    return Poly.from_dict(len(keep), d)


def _subsets(S: frozenset):
    items = sorted(S)
    for r in range(len(items) + 1):
        for combo in itertools.combinations(items, r):
            yield frozenset(combo)


def _tarjan(nodes, succ):
    """SCCs in reverse topological order (children before parents)."""
    indexmap = {}
    low = {}
    onstack = set()
    stack = []
    out = []
    counter = [0]

    def strongconnect(v):
        work = [(v, iter(succ(v)))]
        indexmap[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        onstack.add(v)
        while work:
            node, it = work[-1]
            advanced = False
            for w in it:
                if w not in indexmap:
                    indexmap[w] = low[w] = counter[0]
                    counter[0] += 1
                    stack.append(w)
                    onstack.add(w)
                    work.append((w, iter(succ(w))))
                    advanced = True
                    break
                elif w in onstack:
                    low[node] = min(low[node], indexmap[w])
            if advanced:
                continue
            work.pop()
            if low[node] == indexmap[node]:
                comp = []
                while True:
                    w = stack.pop()
                    onstack.discard(w)
                    comp.append(w)
                    if w == node:
                        break
                out.append(comp)
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])

    for v in nodes:
        if v not in indexmap:
            strongconnect(v)
    return out


def _gauss(matrix, rhs):
    m = len(matrix)
    a = [row[:] + [rhs[i]] for i, row in enumerate(matrix)]
    for col in range(m):
        piv = None
        for r in range(col, m):
            if not a[r][col].is_zero():
                piv = r
                break
        if piv is None:
            raise NormalFormError("singular linear system in the branch solve")
        a[col], a[piv] = a[piv], a[col]
        inv = RatFunc.const(1) / a[col][col]
        a[col] = [x * inv for x in a[col]]
        for r in range(m):
            if r != col and not a[r][col].is_zero():
                f = a[r][col]
                a[r] = [x - f * y for x, y in zip(a[r], a[col])]
    return [a[i][m] for i in range(m)]


# lattice sums for the two-term leaf ------------------------------------------

def _mono_rf(p: int, texp: int) -> RatFunc:
    """p^-1 T^texp as a rational function."""
    return RatFunc.make(pt_mul(pt(Fraction(1, p)), pt_pow_t(texp)), pt(1))


def _geom_from(X: RatFunc, start: int) -> RatFunc:
    """sum_{v >= start} X^v = X^start / (1 - X)."""
    one = RatFunc.const(1)
    return _rf_pow(X, start) / (one - X)


def _geom_range(X: RatFunc, start: int, count: int) -> RatFunc:
    """sum of count terms X^start + ... (count may be 0)."""
    total = RatFunc.const(0)
    for i in range(count):
        total = total + _rf_pow(X, start + i)
    return total


def _rf_pow(X: RatFunc, e: int) -> RatFunc:
    out = RatFunc.const(1)
    for _ in range(e):
        out = out * X
    return out


def _halfplane_sum(texps: tuple, D: tuple, k: int, rel: str, p: int) -> RatFunc:
    """sum over v in Z_{>=0}^2 with D . v  rel  k of X1^v1 X2^v2,
    where X_i = p^-1 T^texps[i]."""
    X1, X2 = _mono_rf(p, texps[0]), _mono_rf(p, texps[1])
    return _hp(X1, X2, D[0], D[1], k, rel)


def _hp(X1: RatFunc, X2: RatFunc, D1: int, D2: int, k: int, rel: str) -> RatFunc:
    one = RatFunc.const(1)
    if rel == "=":
        return _lattice_line_sum(X1, X2, D1, D2, k)
    if rel == ">":
        total = (one / (one - X1)) * (one / (one - X2))
        return total - _hp(X1, X2, D1, D2, k, "<") \
            - _lattice_line_sum(X1, X2, D1, D2, k)
    # rel == "<"
    if D1 == 0 and D2 == 0:
        if 0 < k:
            return (one / (one - X1)) * (one / (one - X2))
        return RatFunc.const(0)
    if D1 == 0:
        return (one / (one - X1)) * _ray_sum(X2, D2, k)
    if D2 == 0:
        return (one / (one - X2)) * _ray_sum(X1, D1, k)
    if D1 < 0 and D2 < 0:
        # D.v < k  ==  (-D).v > -k with positive coefficients
        return _hp(X1, X2, -D1, -D2, -k, ">")
    if D1 < 0:
        # swap axes so the first coefficient is positive
        return _hp(X2, X1, D2, D1, k, "<")
    # D1 > 0: for fixed v2, the count of v1 is max(0, ceil((k - D2 v2)/D1))
    total = RatFunc.const(0)
    if D2 > 0:
        vmax = max(0, _ceil_div(k, D2))      # beyond: no valid v1
        for v2 in range(vmax):
            cnt = max(0, _ceil_div(k - D2 * v2, D1))
            total = total + _rf_pow(X2, v2) * _geom_range(X1, 0, cnt)
        return total
    # D2 < 0: counts grow by |D2| when v2 grows by D1
    nD2 = -D2
    v2s = 0 if k >= 1 else _ceil_div(1 - k, nD2)
    first = _geom_from(X2, v2s)
    ratio = _rf_pow(X2, D1) * _rf_pow(X1, nD2)
    second = RatFunc.const(0)
    for r in range(v2s, v2s + D1):
        c_r = _ceil_div(k + nD2 * r, D1)
        second = second + _rf_pow(X2, r) * _rf_pow(X1, c_r)
    second = second / (one - ratio)
    return (first - second) / (one - X1)


def _ray_sum(X: RatFunc, d: int, k: int) -> RatFunc:
    """sum over v >= 0 with d*v < k of X^v (d != 0)."""
    if d > 0:
        cnt = max(0, _ceil_div(k, d))
        return _geom_range(X, 0, cnt)
    # d < 0: v > k/d; holds for v >= floor(k/d) + 1 (or all v if k >= 0)
    start = max(0, k // d + 1)
    return _geom_from(X, start)


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


def _lattice_line_sum(X1: RatFunc, X2: RatFunc, D1: int, D2: int, k: int) -> RatFunc:
    """sum over v >= 0 with D1 v1 + D2 v2 = k of X1^v1 X2^v2."""
    total = RatFunc.const(0)
    if D1 == 0 and D2 == 0:
        if k == 0:
            one = RatFunc.const(1)
            return (one / (one - X1)) * (one / (one - X2))
        return total
    if D1 == 0:
        if k % D2 == 0 and k // D2 >= 0:
            return _rf_pow(X2, k // D2) * (RatFunc.const(1) / (RatFunc.const(1) - X1))
        return total
    if D2 == 0:
        if k % D1 == 0 and k // D1 >= 0:
            return _rf_pow(X1, k // D1) * (RatFunc.const(1) / (RatFunc.const(1) - X2))
        return total
    g = math.gcd(D1, D2)
    if k % g != 0:
        return total
    if (D1 > 0) == (D2 > 0):
        # finitely many solutions on a simplex
        sign = 1 if D1 > 0 else -1
        D1s, D2s, ks = sign * D1, sign * D2, sign * k
        if ks < 0:
            return total
        for v1 in range(0, ks // D1s + 1):
            rem = ks - D1s * v1
            if rem % D2s == 0:
                total = total + _rf_pow(X1, v1) * _rf_pow(X2, rem // D2s)
        return total
    # mixed signs: one-parameter family v = v0 + t*(|D2|/g, |D1|/g)
    a1, a2 = abs(D2) // g, abs(D1) // g
    v0 = None
    for v1 in range(0, a1):
        if (k - D1 * v1) % D2 == 0 and (k - D1 * v1) // D2 >= 0:
            v0 = (v1, (k - D1 * v1) // D2)
            break
    if v0 is None:
        # first solution may need larger v1; search within one period after
        # the nonnegativity threshold
        for v1 in range(0, a1 * (abs(k) + 2)):
            if (k - D1 * v1) % D2 == 0 and (k - D1 * v1) // D2 >= 0:
                v0 = (v1, (k - D1 * v1) // D2)
                break
    if v0 is None:
        return total
    step = _rf_pow(X1, a1) * _rf_pow(X2, a2)
    # direction must keep both coordinates nonnegative and growing
    lead = _rf_pow(X1, v0[0]) * _rf_pow(X2, v0[1])
    one = RatFunc.const(1)
    return lead / (one - step)


# ---------------------------------------------------------------------------
# Public entry points
# ---------------------------------------------------------------------------

def _setup(spec: IntegralSpec, p: int):
    n = spec.nvars
    names = spec.names()
    boxes = spec.boxes or tuple(Box("O") for _ in range(n))
    F = spec.f
    G = None
    if spec.g is not None and spec.density is not None:
        G = spec.g * spec.density
    elif spec.g is not None:
        G = spec.g
    elif spec.density is not None:
        G = spec.density
    weights = tuple(spec.ord_weights)

    shifts = []
    scales = []
    n_ball = 0
    entries = []
    for box in boxes:
        if box.kind == "O":
            shifts.append(Fraction(0))
            scales.append(Fraction(1))
            entries.append(("fresh", 0))
        else:
            c = box.center % p
            shifts.append(Fraction(c))
            scales.append(Fraction(p))
            n_ball += 1
            entries.append(("pin", 0, c) if c else ("fresh", 1))

    cstate = None
    if spec.constraint is not None:
        _validate_constraint(spec.constraint, names)
        modulus = _constraint_modulus(spec.constraint)
        cstate = CState(spec.constraint, tuple(entries), modulus)
    return n, names, boxes, F, G, weights, shifts, scales, n_ball, cstate


def igusa_exact(spec: IntegralSpec, p: int, max_depth: int = 30,
                max_states: int = 100_000) -> TwoVarRational:
    """Exact value of the integral as a rational function of T = p^(-s),
    with measure normalised so the full box of each coordinate has mass 1
    for the ring and 1/p for a residue ball."""
    n, names, boxes, F, G, weights, shifts, scales, n_ball, cstate = _setup(spec, p)
    engine = _Engine(p, names, max_depth, max_states)
    ceval = engine.ceval

    if cstate is not None:
        verdict = ceval.eval3(cstate.formula, cstate.entries)
        if verdict is _FALSE:
            return TwoVarRational.from_ratfunc(p, RatFunc.const(0))
        if verdict is _TRUE:
            cstate = None

    F0 = F.subst_affine(shifts, scales)
    if F0.is_zero():
        return TwoVarRational.from_ratfunc(p, RatFunc.const(0))
    eF, F0 = F0.strip_content(p)
    G0 = None
    eG = 0
    if G is not None:
        G0 = G.subst_affine(shifts, scales)
        if G0.is_zero():
            return TwoVarRational.from_ratfunc(p, RatFunc.const(0))
        eG, G0 = G0.strip_content(p)
    wpolys = []
    offs = []
    for w in weights:
        wc = w.subst_affine(shifts, scales)
        if wc.is_zero():
            return TwoVarRational.from_ratfunc(p, RatFunc.const(0))
        e, wc = wc.strip_content(p)
        wpolys.append(wc)
        offs.append(e)

    node = engine.canonical(F0, G0, tuple(wpolys), cstate)
    full = frozenset(range(len(weights)))
    total = RatFunc.const(0)
    for Ssub in _subsets(full):
        mult = 1
        for j in full - Ssub:
            mult *= offs[j]
        if mult == 0:
            continue
        total = total + engine.solve(node, Ssub).scale(mult)
    prefactor = RatFunc.make(
        pt_mul(pt(Fraction(1, p ** (n_ball + eG))), pt_pow_t(eF)), pt(1))
    return TwoVarRational.from_ratfunc(p, prefactor * total)


def orbital_integral(spec: IntegralSpec, orbit: Formula, p: int,
                     max_depth: int = 30, max_states: int = 100_000) -> TwoVarRational:
    """Integral restricted to the set cut out by a tame orbit formula."""
    constraint = orbit if spec.constraint is None else And(spec.constraint, orbit)
    spec2 = IntegralSpec(spec.f, spec.g, spec.density, spec.ord_weights,
                         spec.boxes, constraint, spec.varnames)
    return igusa_exact(spec2, p, max_depth, max_states)


# ---------------------------------------------------------------------------
# Numeric cross-check
# ---------------------------------------------------------------------------

@dataclass
class NumericBracket:
    partial: Fraction
    tail: Fraction
    depth: int

    @property
    def lo(self):
        return self.partial

    @property
    def hi(self):
        return self.partial + self.tail

    def contains(self, value) -> bool:
        return self.lo <= value <= self.hi

    def rel_width(self) -> float:
        mid = (self.lo + self.hi) / 2
        if mid == 0:
            return float(self.tail)
        return float(self.tail / abs(mid))

    def to_json(self):
        return {"lo": float(self.lo), "hi": float(self.hi), "depth": self.depth}


def _numeric_canonical(F: Poly, p: int) -> Poly:
    mono, cof = F.monomial_part()
    if _nonvanishing(cof, p):
        d = {mono: Fraction(1)}
        F = Poly.from_dict(F.nvars, d)
    else:
        F = _unit_normalise(F, p)
    # everywhere-unit partial derivative: the coordinate map is an isometry,
    # so the state behaves as |x| in one variable
    if not F.is_constant():
        for i in range(F.nvars):
            try:
                if _nonvanishing(F.derivative(i), p):
                    return Poly.from_dict(1, {(1,): Fraction(1)})
            except ValueError:
                continue
    used = _used_vars((F,))
    if not all(used):
        keep = [i for i, u in enumerate(used) if u]
        F = _project(F, keep) if keep else Poly.const(1, 1)
    return F


def igusa_numeric(spec: IntegralSpec, p: int, s, depth: int = 12) -> NumericBracket:
    """Exact partial sum of the integral over the residue tree to the given
    depth, plus the remaining mass as a rigorous tail bound (|f|^s |g| <= 1).
    Integer s keeps all arithmetic exact."""
    if spec.ord_weights:
        raise ValueError("numeric bracketing covers weight-free integrands")
    n, names, boxes, F, G, weights, shifts, scales, n_ball, cstate = _setup(spec, p)
    ceval = _CEval(names, p)

    exact = isinstance(s, int)
    one = Fraction(1) if exact else 1.0

    def wexp(e: int):
        return (Fraction(1, p ** e) if e >= 0 else Fraction(p ** -e)) ** (1 if exact else 1) \
            if exact else float(p) ** (-e)

    def wpow_s(e: int):
        if exact:
            return Fraction(1, p ** (e * s)) if e * s >= 0 else Fraction(p ** (-e * s))
        return float(p) ** (-e * s)

    if cstate is not None:
        verdict = ceval.eval3(cstate.formula, cstate.entries)
        if verdict is _FALSE:
            return NumericBracket(0 * one, 0 * one, depth)
        if verdict is _TRUE:
            cstate = None

    F0 = F.subst_affine(shifts, scales)
    if F0.is_zero():
        return NumericBracket(0 * one, 0 * one, depth)
    eF, F0 = F0.strip_content(p)
    G0, eG = None, 0
    if G is not None:
        G0 = G.subst_affine(shifts, scales)
        if G0.is_zero():
            return NumericBracket(0 * one, 0 * one, depth)
        eG, G0 = G0.strip_content(p)

    w0 = one / (p ** n_ball) * wpow_s(eF) * wexp(eG)
    if cstate is None:
        F0 = _numeric_canonical(F0, p)

    # state: (F poly, G poly or None, cstate key or None) -> weight
    states = {(F0, G0, cstate): w0}
    cobjs = {cstate.key() if cstate else None: cstate}
    partial = 0 * one

    for level in range(depth):
        nxt: dict = {}
        for (Fs, Gs, cst), weight in states.items():
            if weight == 0:
                continue
            if cst is None and _nonvanishing(Fs, p) and (Gs is None or _nonvanishing(Gs, p)):
                partial += weight
                continue
            nn = Fs.nvars
            for c in itertools.product(range(p), repeat=nn):
                ncst = None
                if cst is not None:
                    entries = list(cst.entries)
                    fresh_idx = [i for i, e in enumerate(entries) if e[0] == "fresh"]
                    for pos, ci in zip(fresh_idx, c):
                        sh = entries[pos][1]
                        entries[pos] = ("pin", sh, ci) if ci else ("fresh", sh + 1)
                    verdict = ceval.eval3(cst.formula, tuple(entries))
                    if verdict is _FALSE:
                        continue
                    if verdict is _UNKNOWN:
                        ncst = CState(cst.formula, tuple(entries), cst.modulus)
                Fc = Fs.subst_affine([Fraction(ci) for ci in c], p)
                if Fc.is_zero():
                    continue
                e1, Fc = Fc.strip_content(p)
                Gc, e2 = None, 0
                if Gs is not None:
                    Gc = Gs.subst_affine([Fraction(ci) for ci in c], p)
                    if Gc.is_zero():
                        continue
                    e2, Gc = Gc.strip_content(p)
                if ncst is None:
                    Fc = _numeric_canonical(Fc, p)
                    if Gc is not None and _nonvanishing(Gc, p):
                        Gc = None
                wchild = weight * (one / p ** nn) * wpow_s(e1) * wexp(e2)
                key = (Fc, Gc, ncst)
                nxt[key] = nxt.get(key, 0 * one) + wchild
        states = nxt
        if not states:
            break

    tail = sum((w for w in states.values()), 0 * one)
    return NumericBracket(partial, tail, depth)


# ---------------------------------------------------------------------------
# Cross-prime denominator fitting
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    ok: bool
    t_power: int
    factors: tuple          # ((alpha, beta), mult) sorted
    detail: dict

    def to_json(self):
        return {
            "ok": self.ok,
            "t_power": self.t_power,
            "factors": [[a, b, m] for (a, b), m in self.factors],
            "detail": self.detail,
        }


def fit_uniform_denominator(results: dict) -> FitResult:
    """Find exponent data (a, {(alpha_i, beta_i)}) such that every per-prime
    denominator divides T^a prod (1 - p^alpha_i T^beta_i); the candidate is
    the pointwise max of the per-prime factorisations, then verified by exact
    division."""
    if len(results) < 3:
        raise ValueError("need results for at least three primes")
    factors: dict = {}
    t_power = 0
    for p, r in results.items():
        t_power = max(t_power, r.t_power)
        for (ab, mult) in r.factors:
            factors[ab] = max(factors.get(ab, 0), mult)
    detail = {}
    ok = True
    for p, r in results.items():
        num = pt_pow_t(t_power)
        for (alpha, beta), mult in sorted(factors.items()):
            f = pt_trim((Fraction(1),) + (Fraction(0),) * (beta - 1)
                        + (-Fraction(p) ** alpha,))
            for _ in range(mult):
                num = pt_mul(num, f)
        q, rem = pt_divmod(num, r.den_poly())
        good = not rem
        detail[p] = good
        ok = ok and good
    return FitResult(ok, t_power, tuple(sorted(factors.items())), detail)

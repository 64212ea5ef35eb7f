"""Evaluation of tame formulas on local fields, and orbit experiments.

Semantics (value group Z, so VGQ[n] is Z/n):

* VF terms evaluate to :class:`~tamelab.localfield.Elem`; precision loss
  raises :class:`~tamelab.localfield.PrecisionError` (retry with a larger
  working precision).
* ``ac`` gives the residue code; ``ord[n]`` gives ``ord mod n`` with
  ``ord[n](0) = 0``.
* RF quantifiers enumerate the residue field; VGQ[n] quantifiers enumerate
  Z/n.
* VF equality holds when the difference is the exact zero; certified-apart
  elements compare unequal; indistinguishable balls raise.

For testing non-tame inputs an optional bounded VG mode is provided:
VG quantifiers range over the integer window [-bound, bound], and a VG atom
compares the two product-form sides obtained by separating the positive and
negative multiplicities, matching the convention used by the tame rewriting
(each side is then finite or +infinity, never mixed).

The orbit side implements the multiplicative test family: scaling actions
``g . x = g^n x`` on nonzero points (n-th power classes) and coordinatewise
versions on affine tuples.  Same-orbit decisions use the exact criterion for
residue characteristic not dividing n: matching valuation mod n and an n-th
power residue class, with a Hensel-lifted witness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

from .formula import (
    VF, RF, VG, VGQ, Sort,
    Term, Var, RatLit, ResLit, GroupZero, Add, Sub, Neg, Mul, Smul,
    Ord, Ac, OrdN, Proj, ProjQ,
    Formula, TrueF, FalseF, Cmp, Not, And, Or, Implies, Quant,
    is_tame, free_vars,
)
from .localfield import FieldDesc, Elem, PrecisionError, sample
from .polys import Poly
from .vgqe import vg_linform


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Term evaluation
# ---------------------------------------------------------------------------

def _eval_vf(t: Term, env: dict, desc: FieldDesc) -> Elem:
    if isinstance(t, Var):
        try:
            return env[t.name]
        except KeyError:
            raise EvalError(f"unassigned VF variable {t.name}")
    if isinstance(t, RatLit):
        return Elem.from_rational(desc, t.value)
    if isinstance(t, Add):
        return _eval_vf(t.a, env, desc) + _eval_vf(t.b, env, desc)
    if isinstance(t, Sub):
        return _eval_vf(t.a, env, desc) - _eval_vf(t.b, env, desc)
    if isinstance(t, Neg):
        return -_eval_vf(t.a, env, desc)
    if isinstance(t, Mul):
        return _eval_vf(t.a, env, desc) * _eval_vf(t.b, env, desc)
    raise EvalError(f"not a VF term: {t!r}")


def _eval_rf(t: Term, env: dict, rf_env: dict, desc: FieldDesc) -> int:
    rf = desc.residue
    if isinstance(t, Var):
        try:
            return rf_env[t.name]
        except KeyError:
            raise EvalError(f"unassigned RF variable {t.name}")
    if isinstance(t, ResLit):
        return rf.from_int(t.value)
    if isinstance(t, Ac):
        return _eval_vf(t.a, env, desc).ac()
    if isinstance(t, Add):
        return rf.add(_eval_rf(t.a, env, rf_env, desc), _eval_rf(t.b, env, rf_env, desc))
    if isinstance(t, Sub):
        return rf.sub(_eval_rf(t.a, env, rf_env, desc), _eval_rf(t.b, env, rf_env, desc))
    if isinstance(t, Neg):
        return rf.neg(_eval_rf(t.a, env, rf_env, desc))
    if isinstance(t, Mul):
        return rf.mul(_eval_rf(t.a, env, rf_env, desc), _eval_rf(t.b, env, rf_env, desc))
    raise EvalError(f"not an RF term: {t!r}")


def _eval_vgq(t: Term, env: dict, q_env: dict, vg_env: dict, desc: FieldDesc) -> int:
    n = t.sort.n
    if isinstance(t, Var):
        try:
            return q_env[t.name] % n
        except KeyError:
            raise EvalError(f"unassigned quotient variable {t.name}")
    if isinstance(t, GroupZero):
        return 0
    if isinstance(t, OrdN):
        e = _eval_vf(t.a, env, desc)
        if e.zero:
            return 0
        return e.v % n
    if isinstance(t, Add):
        return (_eval_vgq(t.a, env, q_env, vg_env, desc)
                + _eval_vgq(t.b, env, q_env, vg_env, desc)) % n
    if isinstance(t, Sub):
        return (_eval_vgq(t.a, env, q_env, vg_env, desc)
                - _eval_vgq(t.b, env, q_env, vg_env, desc)) % n
    if isinstance(t, Neg):
        return -_eval_vgq(t.a, env, q_env, vg_env, desc) % n
    if isinstance(t, Smul):
        return t.k * _eval_vgq(t.a, env, q_env, vg_env, desc) % n
    if isinstance(t, Proj):
        # projection of a VG combination; zero valuations contribute 0
        total = 0
        for base, c in vg_linform(t.a).items():
            if isinstance(base, Ord):
                e = _eval_vf(base.a, env, desc)
                val = 0 if e.zero else e.v
            else:
                val = vg_env[base.name]
            total += c * val
        return total % n
    if isinstance(t, ProjQ):
        return _eval_vgq(t.a, env, q_env, vg_env, desc) % n
    raise EvalError(f"not a quotient term: {t!r}")


def _vg_side_value(lf_part: dict, env: dict, vg_env: dict, desc: FieldDesc):
    """Value of a positive combination of valuations: finite int or +inf."""
    total = 0
    for base, c in lf_part.items():
        if isinstance(base, Ord):
            e = _eval_vf(base.a, env, desc)
            if e.zero:
                return math.inf
            total += c * e.v
        else:
            total += c * vg_env[base.name]
    return total


# ---------------------------------------------------------------------------
# Formula evaluation
# ---------------------------------------------------------------------------

def eval_formula(f: Formula, assignment: dict[str, Elem], desc: FieldDesc,
                 vg_witness_bound: Optional[int] = None) -> bool:
    """Truth value of a tame formula at the given VF assignment.

    With ``vg_witness_bound`` set, VG quantifiers are additionally decided by
    searching integer witnesses in [-bound, bound] (testing aid for checking
    tame conversions; approximate for formulas whose witnesses can escape
    the window).
    """
    if vg_witness_bound is None and not is_tame(f):
        raise EvalError("formula is not tame; pass vg_witness_bound to force "
                        "bounded evaluation")
    for name, sort in free_vars(f):
        if sort != VF:
            raise EvalError(f"free {sort} variable {name}: only VF variables "
                            "may be free at evaluation time")
        if name not in assignment:
            raise EvalError(f"assignment misses VF variable {name}")
    return _eval(f, assignment, {}, {}, {}, desc, vg_witness_bound)


def _eval(f: Formula, env, rf_env, q_env, vg_env, desc, bound) -> bool:
    if isinstance(f, TrueF):
        return True
    if isinstance(f, FalseF):
        return False
    if isinstance(f, Cmp):
        s = f.a.sort
        if s == VF:
            if f.op != "=":
                raise EvalError("only equality exists on VF")
            diff = _eval_vf(f.a, env, desc) - _eval_vf(f.b, env, desc)
            return diff.zero
        if s == RF:
            return (_eval_rf(f.a, env, rf_env, desc)
                    == _eval_rf(f.b, env, rf_env, desc))
        if s.kind == "VGQ":
            return (_eval_vgq(f.a, env, q_env, vg_env, desc)
                    == _eval_vgq(f.b, env, q_env, vg_env, desc))
        # VG atom: product-form comparison (matches the tame rewriting)
        lf = {}
        for base, c in vg_linform(f.a).items():
            lf[base] = lf.get(base, 0) + c
        for base, c in vg_linform(f.b).items():
            lf[base] = lf.get(base, 0) - c
        pos = {k: v for k, v in lf.items() if v > 0}
        neg = {k: -v for k, v in lf.items() if v < 0}
        lhs = _vg_side_value(pos, env, vg_env, desc)
        rhs = _vg_side_value(neg, env, vg_env, desc)
        if f.op == "=":
            return lhs == rhs
        if f.op == "<":
            return lhs < rhs
        return lhs <= rhs
    if isinstance(f, Not):
        return not _eval(f.f, env, rf_env, q_env, vg_env, desc, bound)
    if isinstance(f, And):
        return (_eval(f.a, env, rf_env, q_env, vg_env, desc, bound)
                and _eval(f.b, env, rf_env, q_env, vg_env, desc, bound))
    if isinstance(f, Or):
        return (_eval(f.a, env, rf_env, q_env, vg_env, desc, bound)
                or _eval(f.b, env, rf_env, q_env, vg_env, desc, bound))
    if isinstance(f, Implies):
        return (not _eval(f.a, env, rf_env, q_env, vg_env, desc, bound)
                or _eval(f.b, env, rf_env, q_env, vg_env, desc, bound))
    if isinstance(f, Quant):
        want = f.q == "exists"
        if f.var_sort == RF:
            for code in range(desc.q):
                if _eval(f.body, env, {**rf_env, f.var: code}, q_env, vg_env,
                         desc, bound) == want:
                    return want
            return not want
        if f.var_sort.kind == "VGQ":
            for v in range(f.var_sort.n):
                if _eval(f.body, env, rf_env, {**q_env, f.var: v}, vg_env,
                         desc, bound) == want:
                    return want
            return not want
        if f.var_sort == VG:
            if bound is None:
                raise EvalError("VG quantifier in tame evaluation")
            for v in range(-bound, bound + 1):
                if _eval(f.body, env, rf_env, q_env, {**vg_env, f.var: v},
                         desc, bound) == want:
                    return want
            return not want
        raise EvalError("VF quantifiers are not supported")
    raise TypeError(f)


# ---------------------------------------------------------------------------
# Orbit invariants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InvariantSpec:
    """Regular functions plus a valuation modulus classifying orbits."""

    polys: tuple[Poly, ...]
    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("modulus must be >= 1")
        for poly in self.polys:
            if poly.is_zero():
                raise ValueError("invariant polynomials must be nonzero")


@dataclass(frozen=True)
class InvariantVector:
    entries: tuple[tuple[int, int], ...]   # (ac code, ord mod d) per polynomial
    d: int

    def __str__(self):
        body = ", ".join(f"(ac={a}, ord%{self.d}={o})" for a, o in self.entries)
        return f"[{body}]"


def _poly_at(poly: Poly, point: Sequence[Elem], desc: FieldDesc) -> Elem:
    out = poly.eval_general(
        point,
        one=lambda fr: Elem.from_rational(desc, fr),
        mul=lambda a, b: a * b,
        add=lambda a, b: a + b,
    )
    return out if out is not None else Elem.zero_of(desc)


def orbit_invariants(x: Sequence[Elem], spec: InvariantSpec, desc: FieldDesc) -> InvariantVector:
    entries = []
    for poly in spec.polys:
        val = _poly_at(poly, x, desc)
        if val.zero:
            entries.append((0, 0))          # ord(0) counts as 0 mod d
        else:
            entries.append((val.ac(), val.v % spec.d))
    return InvariantVector(tuple(entries), spec.d)


# ---------------------------------------------------------------------------
# Actions and same-orbit decisions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActionSpec:
    """Supported desk-scale actions.

    * kind "kummer": the multiplicative group scaling itself by n-th powers,
      one coordinate, ``g . x = g^n x``;
    * kind "diagonal": coordinatewise scaling of affine k-space with
      per-coordinate exponents (zero coordinates are fixed points);
    * kind "trivial": the identity action (sanity baseline).
    """

    kind: str
    exponents: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("kummer", "diagonal", "trivial"):
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.kind == "kummer":
            if len(self.exponents) != 1 or self.exponents[0] < 2:
                raise ValueError("kummer action takes one exponent >= 2")
        if self.kind == "diagonal":
            if not self.exponents or any(n < 1 for n in self.exponents):
                raise ValueError("diagonal action needs positive exponents")

    @property
    def arity(self) -> int:
        return max(1, len(self.exponents))

    def invariant_spec(self) -> InvariantSpec:
        k = self.arity
        polys = tuple(Poly.variable(k, i) for i in range(k))
        if self.kind == "kummer":
            return InvariantSpec(polys, self.exponents[0])
        if self.kind == "diagonal":
            d = 1
            for n in self.exponents:
                d = d * n // math.gcd(d, n)
            return InvariantSpec(polys, d)
        return InvariantSpec(polys, 1)

    @staticmethod
    def kummer(n: int) -> "ActionSpec":
        return ActionSpec("kummer", (n,))


@dataclass(frozen=True)
class OrbitDecision:
    kind: str                               # "same" | "different" | "unknown"
    witness: Optional[tuple] = None
    reason: str = ""


def is_nth_power_residue(code: int, n: int, desc: FieldDesc) -> bool:
    if code == 0:
        raise ValueError("0 is not in the unit group")
    g = math.gcd(n, desc.q - 1)
    return desc.residue.pow(code, (desc.q - 1) // g) == desc.residue.from_int(1)


def _nth_root_unit(u: Elem, n: int, desc: FieldDesc) -> Elem:
    """Some r with r^n = u, for a unit u whose residue is an n-th power and
    residue characteristic not dividing n."""
    if desc.p % n == 0 or math.gcd(n, desc.p) != 1:
        raise ValueError("residue characteristic divides the exponent")
    rf = desc.residue
    r0 = None
    for c in range(1, desc.q):
        if rf.pow(c, n) == u.ac():
            r0 = c
            break
    if r0 is None:
        raise ValueError("residue is not an n-th power")
    m = u.prec
    if desc.kind == "padic":
        p = desc.p
        target = u.unit % p ** m
        r = r0
        k = 1
        while k < m:
            k = min(2 * k, m)
            mod = p ** k
            fr = (pow(r, n, mod) - target) % mod
            dr = (n * pow(r, n - 1, mod)) % mod
            r = (r - fr * pow(dr, -1, mod)) % mod
        return Elem(desc, 0, r % p ** m, m)
    # laurent: solve digit by digit
    digits = [r0] + [0] * (m - 1)
    for k in range(1, m):
        r = Elem(desc, 0, tuple(digits), m)
        err = r.pow_int(n) - u                       # valuation >= k expected
        if err.zero or err.v >= m:
            break
        lead = err.unit[0]
        denom = rf.mul(rf.from_int(n), rf.pow(r0, n - 1))
        digits[err.v] = rf.sub(digits[err.v], rf.mul(lead, rf.inv(denom)))
    return Elem(desc, 0, tuple(digits), m)


def same_orbit(x: Sequence[Elem], y: Sequence[Elem], action: ActionSpec,
               desc: FieldDesc) -> OrbitDecision:
    if action.kind == "trivial":
        ok = len(x) == len(y) and all(a.same_ball(b) for a, b in zip(x, y))
        return OrbitDecision("same" if ok else "different",
                             witness=() if ok else None)
    if action.kind == "kummer":
        (a,), (b,) = tuple(x), tuple(y)
        if a.zero or b.zero:
            raise ValueError("multiplicative points must be nonzero")
        return _kummer_decide(a, b, action.exponents[0], desc)
    # diagonal
    if len(x) != len(action.exponents) or len(y) != len(action.exponents):
        raise ValueError("point arity does not match the action")
    witnesses = []
    for a, b, n in zip(x, y, action.exponents):
        if a.zero != b.zero:
            return OrbitDecision("different", reason="zero pattern differs")
        if a.zero:
            witnesses.append(Elem.from_rational(desc, 1))
            continue
        if n == 1:
            witnesses.append(b / a)
            continue
        dec = _kummer_decide(a, b, n, desc)
        if dec.kind != "same":
            return dec
        witnesses.append(dec.witness[0])
    return OrbitDecision("same", witness=tuple(witnesses))


def _kummer_decide(a: Elem, b: Elem, n: int, desc: FieldDesc) -> OrbitDecision:
    try:
        u = b / a
    except PrecisionError:
        return OrbitDecision("unknown", reason="quotient not certified")
    delta = u.v
    if delta % n != 0:
        return OrbitDecision("different", reason=f"valuation {delta} not 0 mod {n}")
    if not is_nth_power_residue(u.ac(), n, desc):
        return OrbitDecision("different",
                             reason=f"residue {u.ac()} is not an n-th power")
    try:
        pi = Elem.uniformizer(desc)
        unit = u * pi.pow_int(-delta)
        root = _nth_root_unit(unit, n, desc)
        g = root * pi.pow_int(delta // n)
    except PrecisionError:
        return OrbitDecision("unknown", reason="witness lift lost precision")
    return OrbitDecision("same", witness=(g,))


# ---------------------------------------------------------------------------
# Orbit membership formulas (tame, usable as integration domains)
# ---------------------------------------------------------------------------

def orbit_formula(action: ActionSpec, x0: Sequence[Elem], desc: FieldDesc,
                  varnames: Optional[Sequence[str]] = None) -> Formula:
    """Tame formula cutting out the orbit of x0 (nonzero coordinates)."""
    names = list(varnames or [f"x{i}" for i in range(action.arity)])
    if action.kind == "kummer":
        return _kummer_orbit_formula(action.exponents[0], x0[0], desc, names[0])
    if action.kind == "diagonal":
        parts = []
        for n, point, name in zip(action.exponents, x0, names):
            if point.zero:
                raise ValueError("orbit formulas cover nonzero coordinates only")
            if n == 1:
                continue
            parts.append(_kummer_orbit_formula(n, point, desc, name))
        out = TrueF()
        for part in parts:
            out = And(out, part) if not isinstance(out, TrueF) else part
        return out
    raise ValueError("trivial actions have no orbit formula")


def _kummer_orbit_formula(n: int, x0: Elem, desc: FieldDesc, name: str) -> Formula:
    if x0.zero:
        raise ValueError("base point must be nonzero")
    r = x0.v % n
    xvar = Var(name, VF)
    shifted = Mul(RatLit(Fraction(1, desc.p ** r)), xvar) if r else xvar
    val_part = Cmp("=", OrdN(n, shifted), GroupZero(VGQ(n)))
    c0 = x0.ac()
    xi = Var("xi_", RF)
    power = xi
    for _ in range(n - 1):
        power = Mul(power, xi)
    res_part = Quant("exists", "xi_", RF,
                     Cmp("=", Mul(power, ResLit(c0)), Ac(xvar)))
    return And(val_part, res_part)


# ---------------------------------------------------------------------------
# Census
# ---------------------------------------------------------------------------

@dataclass
class CensusReport:
    samples: int
    bucket_count: int
    class_count: int
    violations: list
    classes: list               # list of {"invariant": str, "size": int, "class": int}

    def to_json(self):
        return {
            "samples": self.samples,
            "bucket_count": self.bucket_count,
            "class_count": self.class_count,
            "violations": self.violations,
            "classes": self.classes,
        }


def class_census(spec: InvariantSpec, action: ActionSpec, desc: FieldDesc,
                 n_samples: int, rng, v_range=(-4, 4)) -> CensusReport:
    """Sample points, bucket by invariant vector, and cross-check buckets
    against the exact same-orbit decision."""
    pts = []
    for _ in range(n_samples):
        pts.append(tuple(sample(desc, v_range[0], v_range[1], rng)
                         for _ in range(action.arity)))
    buckets: dict = {}
    for pt in pts:
        key = orbit_invariants(pt, spec, desc).entries
        buckets.setdefault(key, []).append(pt)

    violations = []
    if action.kind != "trivial":
        for key, members in buckets.items():
            rep = members[0]
            for other in members[1:]:
                dec = same_orbit(rep, other, action, desc)
                if dec.kind != "same":
                    violations.append({
                        "invariant": str(InvariantVector(key, spec.d)),
                        "verdict": dec.kind,
                        "reason": dec.reason,
                    })

    # merge buckets into orbit classes via representatives
    keys = sorted(buckets)
    parent = {k: k for k in keys}

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    if action.kind != "trivial":
        for i, k1 in enumerate(keys):
            for k2 in keys[i + 1:]:
                if find(k1) == find(k2):
                    continue
                dec = same_orbit(buckets[k1][0], buckets[k2][0], action, desc)
                if dec.kind == "same":
                    parent[find(k2)] = find(k1)
        class_count = len({find(k) for k in keys})
    else:
        # identity action: each distinct stored point is its own class
        class_count = sum(
            len({tuple((e.zero, e.v if not e.zero else 0, e.unit) for e in m)
                 for m in members})
            for members in buckets.values())

    classes = [{
        "invariant": str(InvariantVector(k, spec.d)),
        "size": len(buckets[k]),
        "class": keys.index(find(k)),
    } for k in keys]
    return CensusReport(n_samples, len(buckets), class_count, violations, classes)


def count_power_classes(p: int, n: int, k: int = 3) -> int:
    """Independent enumeration: number of n-th power classes of the nonzero
    p-adic numbers, computed from units modulo p^k (valid for p not dividing
    n and k >= 2)."""
    mod = p ** k
    units = [u for u in range(1, mod) if u % p != 0]
    powers = {pow(u, n, mod) for u in units}
    # unit classes times valuation classes
    return n * (len(units) // len(powers))

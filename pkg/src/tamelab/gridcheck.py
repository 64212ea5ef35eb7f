"""Bounded-model agreement checking for VG formulas.

The model for parameter ``d`` interprets VG as the additive group of
rationals whose denominators use only primes coprime to d, densely ordered;
VGQ[n] is then cyclic of order ``n_d`` (the largest divisor of n whose prime
factors all divide d).  The check evaluates two formulas on every assignment
of their free variables from a finite grid of rationals, deciding VG
quantifiers by searching witnesses over a widened grid.  This is a bounded
check, not a proof: a true existential whose only witnesses lie outside the
widened grid would be scored false.  The widening factor (default
``4 * (1 + max |coefficient|)``) is a small-witness heuristic for the linear
fragment: witnesses produced by equalities are parameter combinations divided
by coefficients, and witnesses for order/coset constraints sit within a
coefficient-bounded multiple of the parameter range.

Free variables of either formula are assigned jointly; quotient-sort
variables range over the full (exactly enumerable) finite quotient.  Residue
field variables are not part of this fragment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .formula import (
    VG, VGQ, Sort,
    Term, Var, GroupZero, Add, Sub, Neg, Smul, Proj, ProjQ, Ord, OrdN,
    Formula, TrueF, FalseF, Cmp, Not, And, Or, Implies, Quant,
    free_vars, subterms,
)

TENSOR_LIMIT = 1 << 22


class GridEvalError(ValueError):
    pass


@dataclass(frozen=True)
class VGModel:
    """Value-group model parameter: denominators coprime to d."""

    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")

    def quotient_order(self, n: int) -> int:
        """Order of VGQ[n] in this model: the d-part of n."""
        out = 1
        m = n
        p = 2
        while p * p <= m:
            while m % p == 0:
                m //= p
                if self.d % p == 0:
                    out *= p
            p += 1
        if m > 1 and self.d % m == 0:
            out *= m
        return out

    def contains(self, x: Fraction) -> bool:
        den = x.denominator
        return math.gcd(den, self._d_radical_pow()) == 1 if den > 1 else True

    def _d_radical_pow(self) -> int:
        # any number with the same prime support as d
        return self.d if self.d > 1 else 1

    def allowed_primes(self) -> tuple[int, ...]:
        out = []
        for p in (2, 3, 5, 7, 11, 13):
            if math.gcd(p, self.d) == 1:
                out.append(p)
            if len(out) == 2:
                break
        return tuple(out)

    def proj(self, x: Fraction, n: int) -> int:
        nd = self.quotient_order(n)
        if nd == 1:
            return 0
        num, den = x.numerator, x.denominator
        return num * pow(den % nd, -1, nd) % nd


def rational_grid(bound: int, primes: tuple[int, ...]) -> list[Fraction]:
    """All a/b with |a| <= bound and b <= bound a product of the primes."""
    dens = {1}
    frontier = [1]
    while frontier:
        b = frontier.pop()
        for p in primes:
            nb = b * p
            if nb <= bound and nb not in dens:
                dens.add(nb)
                frontier.append(nb)
    vals = {Fraction(a, b) for b in dens for a in range(-bound, bound + 1)}
    return sorted(vals, key=lambda x: (x.denominator, abs(x), x < 0))


def max_abs_coeff(f: Formula) -> int:
    best = 1

    def scan_term(t: Term):
        nonlocal best
        for s in subterms(t):
            if isinstance(s, Smul):
                best = max(best, abs(s.k))

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
            walk(g.body)

    walk(f)
    return best


# ---------------------------------------------------------------------------
# Vectorised evaluation
#
# Values: VG -> pair (num, den) of ints or 2-D int64 arrays with den > 0;
#         VGQ[n] -> int or 2-D int64 array of residues mod n_d.
# Arrays are shaped (A, 1) for assignment-indexed data and (1, W) for the
# single vectorised witness axis of an innermost quantifier.
# ---------------------------------------------------------------------------

def _reduce(num, den):
    if isinstance(num, int) and isinstance(den, int):
        g = math.gcd(num, den)
        return (num // g, den // g) if g > 1 else (num, den)
    g = np.gcd(num, den)
    return num // g, den // g


def _pair_add(a, b, sign=1):
    n1, d1 = a
    n2, d2 = b
    return _reduce(n1 * d2 + sign * n2 * d1, d1 * d2)


def _eval_vg(t: Term, env: dict):
    if isinstance(t, Var):
        return env[t.name]
    if isinstance(t, GroupZero):
        return (0, 1)
    if isinstance(t, Add):
        return _pair_add(_eval_vg(t.a, env), _eval_vg(t.b, env))
    if isinstance(t, Sub):
        return _pair_add(_eval_vg(t.a, env), _eval_vg(t.b, env), sign=-1)
    if isinstance(t, Neg):
        n, d = _eval_vg(t.a, env)
        return (-n, d)
    if isinstance(t, Smul):
        n, d = _eval_vg(t.a, env)
        return _reduce(t.k * n, d)
    if isinstance(t, Ord):
        raise GridEvalError("ord-terms have no meaning in the pure VG model")
    raise GridEvalError(f"unsupported VG term {t!r}")


def _mod_inv_vec(den, nd: int):
    if isinstance(den, int):
        return pow(den % nd, -1, nd)
    table = np.array([pow(i, -1, nd) if math.gcd(i, nd) == 1 else 0
                      for i in range(nd)], dtype=np.int64)
    return table[den % nd]


def _eval_q(t: Term, env: dict, model: VGModel):
    """Value of a quotient-sort term, as residues mod quotient_order(n)."""
    nd = model.quotient_order(t.sort.n)
    if nd == 1:
        return 0
    if isinstance(t, Var):
        return env[t.name]
    if isinstance(t, GroupZero):
        return 0
    if isinstance(t, Add):
        return (_eval_q(t.a, env, model) + _eval_q(t.b, env, model)) % nd
    if isinstance(t, Sub):
        return (_eval_q(t.a, env, model) - _eval_q(t.b, env, model)) % nd
    if isinstance(t, Neg):
        return (-_eval_q(t.a, env, model)) % nd
    if isinstance(t, Smul):
        return (t.k * _eval_q(t.a, env, model)) % nd
    if isinstance(t, Proj):
        num, den = _eval_vg(t.a, env)
        return (num % nd) * _mod_inv_vec(den, nd) % nd
    if isinstance(t, ProjQ):
        return _eval_q(t.a, env, model) % nd
    if isinstance(t, OrdN):
        raise GridEvalError("ord[n]-terms have no meaning in the pure VG model")
    raise GridEvalError(f"unsupported quotient term {t!r}")


def _has_vg_quant(f: Formula) -> bool:
    if isinstance(f, Quant):
        return f.var_sort == VG or _has_vg_quant(f.body)
    if isinstance(f, Not):
        return _has_vg_quant(f.f)
    if isinstance(f, (And, Or, Implies)):
        return _has_vg_quant(f.a) or _has_vg_quant(f.b)
    return False


class _Evaluator:
    def __init__(self, model: VGModel, witnesses: list[Fraction], n_assign: int):
        self.model = model
        self.witnesses = witnesses
        self.n_assign = n_assign
        wn = np.array([w.numerator for w in witnesses], dtype=np.int64)
        wd = np.array([w.denominator for w in witnesses], dtype=np.int64)
        self.wit_vec = (wn.reshape(1, -1), wd.reshape(1, -1))

    def run(self, f: Formula, env: dict):
        out = self.eval(f, env)
        if isinstance(out, (bool, np.bool_)):
            return np.full(self.n_assign, bool(out))
        return np.broadcast_to(out, (max(out.shape[0], self.n_assign), out.shape[1]))[:, 0] \
            if out.shape[1] == 1 else out[:, 0]

    def eval(self, f: Formula, env: dict):
        if isinstance(f, TrueF):
            return True
        if isinstance(f, FalseF):
            return False
        if isinstance(f, Cmp):
            s = f.a.sort
            if s == VG:
                n1, d1 = _eval_vg(f.a, env)
                n2, d2 = _eval_vg(f.b, env)
                lhs = n1 * d2
                rhs = n2 * d1
                if f.op == "=":
                    return lhs == rhs
                if f.op == "<":
                    return lhs < rhs
                return lhs <= rhs
            if s.kind == "VGQ":
                return _eval_q(f.a, env, self.model) == _eval_q(f.b, env, self.model)
            raise GridEvalError(f"sort {s} not supported by the grid checker")
        if isinstance(f, Not):
            return np.logical_not(self.eval(f.f, env))
        if isinstance(f, And):
            return np.logical_and(self.eval(f.a, env), self.eval(f.b, env))
        if isinstance(f, Or):
            return np.logical_or(self.eval(f.a, env), self.eval(f.b, env))
        if isinstance(f, Implies):
            return np.logical_or(np.logical_not(self.eval(f.a, env)), self.eval(f.b, env))
        if isinstance(f, Quant):
            return self._eval_quant(f, env)
        raise TypeError(f)

    def _eval_quant(self, f: Quant, env: dict):
        want_any = f.q == "exists"
        if f.var_sort.kind == "VGQ":
            nd = self.model.quotient_order(f.var_sort.n)
            acc = None
            for v in range(nd):
                val = self.eval(f.body, {**env, f.var: v})
                acc = val if acc is None else (
                    np.logical_or(acc, val) if want_any else np.logical_and(acc, val))
            if acc is None:   # nd == 0 cannot happen; quotient always has 0
                acc = not want_any
            return acc
        if f.var_sort != VG:
            raise GridEvalError(f"quantifier over {f.var_sort} not supported here")
        if not _has_vg_quant(f.body) and self.n_assign * len(self.witnesses) <= TENSOR_LIMIT:
            # innermost VG quantifier: vectorise the witness axis
            val = self.eval(f.body, {**env, f.var: self.wit_vec})
            if isinstance(val, (bool, np.bool_)):
                return bool(val)
            reduced = np.any(val, axis=1) if want_any else np.all(val, axis=1)
            return reduced.reshape(-1, 1)
        # outer quantifier: scalar loop with an early-exit mask
        acc = None
        for w in self.witnesses:
            val = self.eval(f.body, {**env, f.var: (w.numerator, w.denominator)})
            acc = val if acc is None else (
                np.logical_or(acc, val) if want_any else np.logical_and(acc, val))
            if isinstance(acc, (bool, np.bool_)):
                if bool(acc) == want_any:
                    return acc
            elif (np.all(acc) if want_any else not np.any(acc)):
                return acc
        return acc if acc is not None else (not want_any)


# ---------------------------------------------------------------------------
# bounded_check
# ---------------------------------------------------------------------------

@dataclass
class CheckReport:
    d: int
    window: int
    widen: int
    denominators: tuple[int, ...]
    assignments: int
    disagreements: int
    first_cases: list = field(default_factory=list)

    @property
    def agree(self) -> bool:
        return self.disagreements == 0

    def to_json(self):
        return {
            "d": self.d,
            "window": self.window,
            "widen": self.widen,
            "denominators": list(self.denominators),
            "assignments": self.assignments,
            "disagreements": self.disagreements,
            "first_cases": self.first_cases,
        }


def bounded_check(f: Formula, g: Formula, model: VGModel, window: int = 20,
                  denominators: Optional[tuple[int, ...]] = None,
                  widen: Optional[int] = None, max_report: int = 3) -> CheckReport:
    """Evaluate f and g on the grid and report disagreements.

    Free variables of both formulas are assigned jointly from the window-B
    grid; VG quantifier witnesses are searched over the widened grid.
    """
    primes = denominators if denominators is not None else model.allowed_primes()
    if widen is None:
        widen = 4 * (1 + max(max_abs_coeff(f), max_abs_coeff(g)))
    grid = rational_grid(window, primes)
    witnesses = rational_grid(window * widen, primes)

    frees: dict[str, Sort] = {}
    for name, sort in free_vars(f) + free_vars(g):
        if name in frees:
            if frees[name] != sort:
                raise GridEvalError(f"free variable {name} with conflicting sorts")
        else:
            frees[name] = sort
    names = sorted(frees)

    axes: list[list] = []
    for name in names:
        s = frees[name]
        if s == VG:
            axes.append(grid)
        elif s.kind == "VGQ":
            axes.append(list(range(model.quotient_order(s.n))))
        else:
            raise GridEvalError(f"free variable {name} of sort {s} not supported")

    n_assign = 1
    for ax in axes:
        n_assign *= len(ax)

    # materialise the assignment axis
    env: dict = {}
    reps = n_assign
    for name, ax in zip(names, axes):
        reps //= len(ax)
        tile = n_assign // (len(ax) * reps)
        col = np.repeat(np.array(
            [x.numerator if isinstance(x, Fraction) else x for x in ax],
            dtype=np.int64), reps)
        col = np.tile(col, tile).reshape(-1, 1)
        if frees[name] == VG:
            den = np.repeat(np.array([x.denominator for x in ax], dtype=np.int64), reps)
            den = np.tile(den, tile).reshape(-1, 1)
            env[name] = (col, den)
        else:
            env[name] = col

    ev = _Evaluator(model, witnesses, n_assign)
    fv = ev.run(f, env)
    gv = ev.run(g, env)
    mism = fv != gv
    count = int(np.count_nonzero(mism))

    report = CheckReport(model.d, window, widen, primes, n_assign, count)
    if count:
        idxs = np.flatnonzero(mism)[:max_report]
        for i in idxs:
            case = {}
            rem = int(i)
            # decode assignment index
            sizes = [len(ax) for ax in axes]
            coords = []
            for size in reversed(sizes):
                coords.append(rem % size)
                rem //= size
            coords.reverse()
            for name, ax, c in zip(names, axes, coords):
                val = ax[c]
                case[name] = str(val)
            case["f"] = bool(fv[i])
            case["g"] = bool(gv[i])
            report.first_cases.append(case)
    return report

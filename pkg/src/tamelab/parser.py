"""Text grammar for formulas.

::

    formula := impl
    impl    := orf ('->' impl)?
    orf     := andf ('|' andf)*
    andf    := notf ('&' notf)*
    notf    := '!' notf | quantified | 'true' | 'false' | atom | '(' formula ')'
    quantified := '(' ('exists'|'forall') IDENT ':' sort ')' notf
    atom    := term OP term        with OP in  =  !=  <=  <
    sort    := 'VF' | 'RF' | 'VG' | 'VGQ' '[' INT ']'
    term    := prod (('+'|'-') prod)*
    prod    := unary ('*' unary)*
    unary   := '-' unary | primary
    primary := INT ('/' INT)? | IDENT (':' sort)? | func | '(' term ')'
    func    := 'ord' '(' term ')' | 'ord' '[' INT ']' '(' term ')'
             | 'ac' '(' term ')'
             | 'pi' '[' INT ']' '(' term ')' | 'pi' '[' INT ',' INT ']' '(' term ')'

``!=`` desugars to a negated equality.  ``<=`` and ``<`` live on the value
group sort only.  Free variables take their sort from context (argument
positions of ``ord``/``ac``/``pi``, the opposite side of a comparison, an
inline ``x:SORT`` annotation); anything still undetermined defaults to VF.
Integer literals are rational VF constants, residue-field constants, or the
group constant 0, depending on the sort forced by context.
"""

from __future__ import annotations

import re
from fractions import Fraction

from .formula import (
    VF, RF, VG, VGQ, Sort, SortError,
    Term, Var, RatLit, ResLit, GroupZero, Add, Sub, Neg, Mul, Smul,
    Ord, Ac, OrdN, Proj, ProjQ,
    Formula, TrueF, FalseF, Cmp, Not, And, Or, Implies, Quant,
    check_well_sorted,
)


class ParseError(ValueError):
    def __init__(self, msg: str, pos: int):
        super().__init__(f"{msg} (at position {pos})")
        self.pos = pos


_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>\d+)
  | (?P<name>[A-Za-z_][A-Za-z_0-9']*)
  | (?P<op>->|<=|!=|[()\[\]:,=<&|!+\-*/])
""", re.VERBOSE)

_KEYWORDS = {"exists", "forall", "true", "false", "ord", "ac", "pi", "VF", "RF", "VG", "VGQ"}


def _tokenize(text: str):
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            toks.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    toks.append(("eof", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    # -- token plumbing ----------------------------------------------------
    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, value: str):
        kind, val, pos = self.peek()
        if val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", pos)
        return self.next()

    def at(self, value: str) -> bool:
        return self.peek()[1] == value

    # -- sorts -------------------------------------------------------------
    def parse_sort(self) -> Sort:
        kind, val, pos = self.next()
        if val == "VF":
            return VF
        if val == "RF":
            return RF
        if val == "VG":
            return VG
        if val == "VGQ":
            self.expect("[")
            n = self._int()
            self.expect("]")
            try:
                return VGQ(n)
            except SortError as e:
                raise ParseError(str(e), pos)
        raise ParseError(f"expected a sort, found {val!r}", pos)

    def _int(self) -> int:
        kind, val, pos = self.next()
        if kind != "num":
            raise ParseError(f"expected an integer, found {val!r}", pos)
        return int(val)

    # -- raw terms (tuples) -------------------------------------------------
    def parse_term_raw(self):
        node = self.parse_prod_raw()
        while self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            rhs = self.parse_prod_raw()
            node = ("add" if op == "+" else "sub", node, rhs)
        return node

    def parse_prod_raw(self):
        node = self.parse_unary_raw()
        while self.at("*"):
            self.next()
            rhs = self.parse_unary_raw()
            node = ("mul", node, rhs)
        return node

    def parse_unary_raw(self):
        if self.at("-"):
            pos = self.peek()[2]
            self.next()
            inner = self.parse_unary_raw()
            if inner[0] == "num":          # fold the sign into the literal
                return ("num", -inner[1], inner[2], pos)
            return ("neg", inner, pos)
        return self.parse_primary_raw()

    def parse_primary_raw(self):
        kind, val, pos = self.peek()
        if kind == "num":
            self.next()
            num = int(val)
            den = None
            if self.at("/"):
                self.next()
                den = self._int()
                if den == 0:
                    raise ParseError("zero denominator", pos)
            return ("num", num, den, pos)
        if val == "(":
            self.next()
            inner = self.parse_term_raw()
            self.expect(")")
            return inner
        if kind == "name":
            if val == "ord":
                self.next()
                if self.at("["):
                    self.next()
                    n = self._int()
                    self.expect("]")
                    self.expect("(")
                    a = self.parse_term_raw()
                    self.expect(")")
                    return ("ordn", n, a, pos)
                self.expect("(")
                a = self.parse_term_raw()
                self.expect(")")
                return ("ord", a, pos)
            if val == "ac":
                self.next()
                self.expect("(")
                a = self.parse_term_raw()
                self.expect(")")
                return ("ac", a, pos)
            if val == "pi":
                self.next()
                self.expect("[")
                n = self._int()
                m = None
                if self.at(","):
                    self.next()
                    m = self._int()
                self.expect("]")
                self.expect("(")
                a = self.parse_term_raw()
                self.expect(")")
                if m is None:
                    return ("proj", n, a, pos)
                return ("projq", n, m, a, pos)
            if val in _KEYWORDS:
                raise ParseError(f"keyword {val!r} cannot start a term", pos)
            self.next()
            if self.at(":"):
                self.next()
                s = self.parse_sort()
                return ("annot", ("var", val, pos), s, pos)
            return ("var", val, pos)
        raise ParseError(f"expected a term, found {val or 'end of input'!r}", pos)

    # -- raw formulas --------------------------------------------------------
    def parse_formula_raw(self):
        lhs = self.parse_or_raw()
        if self.at("->"):
            self.next()
            rhs = self.parse_formula_raw()
            return ("implies", lhs, rhs)
        return lhs

    def parse_or_raw(self):
        node = self.parse_and_raw()
        while self.at("|"):
            self.next()
            node = ("or", node, self.parse_and_raw())
        return node

    def parse_and_raw(self):
        node = self.parse_not_raw()
        while self.at("&"):
            self.next()
            node = ("and", node, self.parse_not_raw())
        return node

    def parse_not_raw(self):
        kind, val, pos = self.peek()
        if val == "!":
            self.next()
            return ("not", self.parse_not_raw())
        if val == "true":
            self.next()
            return ("true",)
        if val == "false":
            self.next()
            return ("false",)
        if val == "(":
            # quantifier?
            nxt = self.toks[self.i + 1][1] if self.i + 1 < len(self.toks) else ""
            if nxt in ("exists", "forall"):
                self.next()
                q = self.next()[1]
                vkind, vname, vpos = self.next()
                if vkind != "name" or vname in _KEYWORDS:
                    raise ParseError(f"expected a variable name, found {vname!r}", vpos)
                self.expect(":")
                s = self.parse_sort()
                self.expect(")")
                body = self.parse_not_raw()
                return ("quant", q, vname, s, body)
            # try an atom first (its left term may itself be parenthesized)
            save = self.i
            try:
                return self.parse_atom_raw()
            except ParseError:
                self.i = save
            self.next()
            inner = self.parse_formula_raw()
            self.expect(")")
            return inner
        return self.parse_atom_raw()

    def parse_atom_raw(self):
        a = self.parse_term_raw()
        kind, val, pos = self.peek()
        if val not in ("=", "!=", "<=", "<"):
            raise ParseError(f"expected a comparison, found {val or 'end of input'!r}", pos)
        self.next()
        b = self.parse_term_raw()
        return ("cmp", val, a, b)


# ---------------------------------------------------------------------------
# Sort resolution
# ---------------------------------------------------------------------------

class _Sorter:
    """Fixpoint propagation of variable sorts over the raw tree."""

    def __init__(self):
        self.var_sorts: dict[str, Sort] = {}
        self.changed = False

    def bind(self, name: str, s: Sort, pos: int):
        old = self.var_sorts.get(name)
        if old is None:
            self.var_sorts[name] = s
            self.changed = True
        elif old != s:
            raise ParseError(f"variable {name!r} used at sorts {old} and {s}", pos)

    def infer(self, t) -> Sort | None:
        tag = t[0]
        if tag == "num":
            return None
        if tag == "var":
            return self.var_sorts.get(t[1])
        if tag == "annot":
            return t[2]
        if tag in ("add", "sub"):
            return self.infer(t[1]) or self.infer(t[2])
        if tag == "neg":
            return self.infer(t[1])
        if tag == "mul":
            return self.infer(t[1]) or self.infer(t[2])
        if tag == "ord":
            return VG
        if tag == "ac":
            return RF
        if tag == "ordn":
            return VGQ(t[1])
        if tag == "proj":
            return VGQ(t[1])
        if tag == "projq":
            return VGQ(t[2])
        raise AssertionError(tag)

    def push(self, t, expected: Sort | None):
        tag = t[0]
        if tag == "num":
            return
        if tag == "var":
            if expected is not None:
                self.bind(t[1], expected, t[2])
            return
        if tag == "annot":
            self.bind(t[1][1], t[2], t[3])
            if expected is not None and expected != t[2]:
                raise ParseError(f"annotation {t[2]} conflicts with expected {expected}", t[3])
            return
        if tag in ("add", "sub"):
            got = expected or self.infer(t)
            self.push(t[1], got)
            self.push(t[2], got)
            return
        if tag == "neg":
            self.push(t[1], expected or self.infer(t))
            return
        if tag == "mul":
            got = expected or self.infer(t)
            if got is not None and got.is_group:
                # integer scaling: exactly one side is a bare integer
                for side, other in ((t[1], t[2]), (t[2], t[1])):
                    if side[0] == "num":
                        self.push(other, got)
                        return
                raise ParseError(f"* on {got} needs an integer scalar", t[1][-1])
            self.push(t[1], got)
            self.push(t[2], got)
            return
        if tag in ("ord", "ac"):
            self.push(t[1], VF)
            return
        if tag == "ordn":
            self.push(t[2], VF)
            return
        if tag == "proj":
            self.push(t[2], VG)
            return
        if tag == "projq":
            self.push(t[3], VGQ(t[1]))
            return
        raise AssertionError(tag)

    def visit_formula(self, f, bound: dict[str, Sort]):
        tag = f[0]
        if tag in ("true", "false"):
            return
        if tag == "cmp":
            op = f[1]
            if op in ("<=", "<"):
                self.push(f[2], VG)
                self.push(f[3], VG)
            else:
                sa = self.infer(f[2])
                sb = self.infer(f[3])
                s = sa or sb
                self.push(f[2], s)
                self.push(f[3], s)
            return
        if tag == "not":
            self.visit_formula(f[1], bound)
            return
        if tag in ("and", "or", "implies"):
            self.visit_formula(f[1], bound)
            self.visit_formula(f[2], bound)
            return
        if tag == "quant":
            self.bind(f[2], f[3], 0)
            self.visit_formula(f[4], bound)
            return
        raise AssertionError(tag)


def _build_term(t, sort: Sort | None, var_sorts: dict[str, Sort]) -> Term:
    tag = t[0]
    if tag == "num":
        num, den = t[1], t[2]
        target = sort or VF
        if target == VF:
            return RatLit(Fraction(num, den or 1))
        if target == RF:
            if den is not None:
                raise ParseError("residue-field literals are integers", t[3])
            return ResLit(num)
        if num == 0 and den is None:
            return GroupZero(target)
        raise ParseError(f"sort {target} has no constant {num}" + (f"/{den}" if den else ""), t[3])
    if tag == "var":
        return Var(t[1], var_sorts.get(t[1], VF))
    if tag == "annot":
        return _build_term(t[1], t[2], var_sorts)
    if tag in ("add", "sub"):
        # infer a concrete sort for the children (literals need it)
        child_sort = sort
        for side in (t[1], t[2]):
            got = _raw_sort(side, var_sorts)
            if got is not None:
                child_sort = got
                break
        a = _build_term(t[1], child_sort, var_sorts)
        b = _build_term(t[2], child_sort or a.sort, var_sorts)
        return Add(a, b) if tag == "add" else Sub(a, b)
    if tag == "neg":
        return Neg(_build_term(t[1], sort, var_sorts))
    if tag == "mul":
        child_sort = sort
        for side in (t[1], t[2]):
            got = _raw_sort(side, var_sorts)
            if got is not None:
                child_sort = got
                break
        if child_sort is not None and child_sort.is_group:
            for scalar, body in ((t[1], t[2]), (t[2], t[1])):
                if scalar[0] == "num" and scalar[2] is None:
                    return Smul(scalar[1], _build_term(body, child_sort, var_sorts))
            raise ParseError(f"* on {child_sort} needs an integer scalar", t[1][-1])
        a = _build_term(t[1], child_sort, var_sorts)
        b = _build_term(t[2], a.sort, var_sorts)
        return Mul(a, b)
    if tag == "ord":
        return Ord(_build_term(t[1], VF, var_sorts))
    if tag == "ac":
        return Ac(_build_term(t[1], VF, var_sorts))
    if tag == "ordn":
        return OrdN(t[1], _build_term(t[2], VF, var_sorts))
    if tag == "proj":
        return Proj(t[1], _build_term(t[2], VG, var_sorts))
    if tag == "projq":
        try:
            return ProjQ(t[1], t[2], _build_term(t[3], VGQ(t[1]), var_sorts))
        except SortError as e:
            raise ParseError(str(e), t[4])
    raise AssertionError(tag)


def _raw_sort(t, var_sorts) -> Sort | None:
    tag = t[0]
    if tag == "num":
        return None
    if tag == "var":
        return var_sorts.get(t[1])
    if tag == "annot":
        return t[2]
    if tag in ("add", "sub", "mul"):
        return _raw_sort(t[1], var_sorts) or _raw_sort(t[2], var_sorts)
    if tag == "neg":
        return _raw_sort(t[1], var_sorts)
    if tag == "ord":
        return VG
    if tag == "ac":
        return RF
    if tag == "ordn":
        return VGQ(t[1])
    if tag == "proj":
        return VGQ(t[1])
    if tag == "projq":
        return VGQ(t[2])
    raise AssertionError(tag)


def _build_formula(f, var_sorts) -> Formula:
    tag = f[0]
    if tag == "true":
        return TrueF()
    if tag == "false":
        return FalseF()
    if tag == "cmp":
        op = f[1]
        if op in ("<=", "<"):
            a = _build_term(f[2], VG, var_sorts)
            b = _build_term(f[3], VG, var_sorts)
            return Cmp(op, a, b)
        s = _raw_sort(f[2], var_sorts) or _raw_sort(f[3], var_sorts) or VF
        a = _build_term(f[2], s, var_sorts)
        b = _build_term(f[3], a.sort, var_sorts)
        atom = Cmp("=", a, b)
        return Not(atom) if op == "!=" else atom
    if tag == "not":
        return Not(_build_formula(f[1], var_sorts))
    if tag == "and":
        return And(_build_formula(f[1], var_sorts), _build_formula(f[2], var_sorts))
    if tag == "or":
        return Or(_build_formula(f[1], var_sorts), _build_formula(f[2], var_sorts))
    if tag == "implies":
        return Implies(_build_formula(f[1], var_sorts), _build_formula(f[2], var_sorts))
    if tag == "quant":
        return Quant(f[1], f[2], f[3], _build_formula(f[4], var_sorts))
    raise AssertionError(tag)


def parse_formula(text: str) -> Formula:
    """Parse and sort-check a formula; raises ParseError / SortError."""
    p = _Parser(text)
    raw = p.parse_formula_raw()
    kind, val, pos = p.peek()
    if kind != "eof":
        raise ParseError(f"trailing input {val!r}", pos)

    sorter = _Sorter()
    # fixpoint: sorts flow through shared variables
    for _ in range(64):
        sorter.changed = False
        sorter.visit_formula(raw, {})
        if not sorter.changed:
            break

    try:
        built = _build_formula(raw, sorter.var_sorts)
    except SortError as e:
        raise
    check_well_sorted(built)
    return built


def parse_term(text: str) -> Term:
    """Parse a standalone term (defaulting free variables to VF)."""
    p = _Parser(text)
    raw = p.parse_term_raw()
    kind, val, pos = p.peek()
    if kind != "eof":
        raise ParseError(f"trailing input {val!r}", pos)
    sorter = _Sorter()
    for _ in range(64):
        sorter.changed = False
        sorter.push(raw, None)
        if not sorter.changed:
            break
    return _build_term(raw, _raw_sort(raw, sorter.var_sorts), sorter.var_sorts)

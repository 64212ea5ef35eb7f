"""tamelab: valued-field formulas, exact p-adic integrals, finite cohomology."""

__version__ = "0.1.0"

from .formula import (  # noqa: F401
    VF, RF, VG, VGQ, Sort, SortError,
    Term, Var, RatLit, ResLit, GroupZero, Add, Sub, Neg, Mul, Smul,
    Ord, Ac, OrdN, Proj, ProjQ,
    Formula, TrueF, FalseF, Cmp, Not, And, Or, Implies, Quant,
    conj, disj, free_vars, is_tame, to_text, term_to_text,
    formula_to_json, formula_from_json, check_well_sorted,
)
from .parser import parse_formula, parse_term, ParseError  # noqa: F401
from .localfield import (  # noqa: F401
    FieldDesc, Elem, ResidueField, residue_field, PrecisionError,
    sample, parse_elem,
)
from .polys import Poly, parse_poly, poly_to_text  # noqa: F401
